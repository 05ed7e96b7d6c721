import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from refop.datagen import GenConfig, generate_pairs  # noqa: E402
from refop.pairing import prepare_pairs  # noqa: E402


@pytest.fixture(scope="session")
def tiny_dataset():
    """Six small pairs on a coarse grid: enough for plumbing tests."""
    cfg = GenConfig(n_pairs=6, grid=16, seed=2, holes_max=2)
    samples, pm = generate_pairs(cfg)
    return cfg, samples, pm


@pytest.fixture(scope="session")
def tiny_examples(tiny_dataset):
    _, samples, pm = tiny_dataset
    return prepare_pairs(samples, pm)


_VERDICTS = {}


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    if report.when == "call" or (report.when == "setup" and report.failed):
        _VERDICTS[props["criterion"]] = ("PASS" if report.passed else "FAIL", props.get("detail", ""))


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_VERDICTS):
        status, detail = _VERDICTS[n]
        terminalreporter.write_line(f"CRITERION {n:2d} {status}  {detail}")
