import json

import numpy as np
import pytest
import torch

from refop import io as rio
from refop.model import ModelConfig, ReferenceNeuralOperator, forward, ForwardInput
from refop.training import TrainConfig, evaluate, fit_scales, new_state, train_steps

SMALL = dict(hidden_dim=16, mlp_hidden=16, heads=2, layers=2)


def test_sample_roundtrip_bitwise(tmp_path, tiny_dataset):
    for s in tiny_dataset[1]:
        p = tmp_path / f"{s.id}.rsmp"
        rio.write_sample(p, s)
        r = rio.read_sample(p)
        assert r.id == s.id and r.pair_tag == s.pair_tag
        assert r.nodes.tobytes() == s.nodes.tobytes()
        assert r.values.tobytes() == s.values.tobytes()
        assert r.geometry.boundary_points.tobytes() == s.geometry.boundary_points.tobytes()
        assert r.params.tobytes() == s.params.tobytes()
        assert r.geometry.kinds == s.geometry.kinds


def test_truncated_file(tmp_path, tiny_dataset):
    p = tmp_path / "s.rsmp"
    rio.write_sample(p, tiny_dataset[1][0])
    data = p.read_bytes()
    p.write_bytes(data[:-8])
    with pytest.raises(rio.FormatError, match="payload"):
        rio.read_sample(p)


def test_empty_sample_rejected(tmp_path):
    p = tmp_path / "e.rsmp"
    header = {"id": 0, "pair_tag": 0, "K": 64, "domain": {"lo": [0, 0], "hi": [1, 1]}, "components": []}
    rio.write_record(p, "sample", header, {"nodes": np.zeros((0, 2)), "values": np.zeros((0, 1)),
                                           "boundary": np.zeros((0, 2))})
    with pytest.raises(rio.FormatError, match="empty"):
        rio.read_sample(p)


def test_version_and_kind_mismatch(tmp_path, tiny_dataset):
    p = tmp_path / "s.rsmp"
    rio.write_sample(p, tiny_dataset[1][0])
    data = p.read_bytes()
    p.write_bytes(data.replace(b"REFOP sample 1", b"REFOP sample 9", 1))
    with pytest.raises(rio.FormatError, match="version"):
        rio.read_sample(p)
    p.write_bytes(data)
    with pytest.raises(rio.FormatError):
        rio.read_checkpoint(p)


def test_non_finite_payload(tmp_path):
    p = tmp_path / "bad.rsmp"
    rio.write_record(p, "sample", {}, {"nodes": np.array([[0.5, np.nan]])})
    with pytest.raises(rio.FormatError, match="non-finite"):
        rio.read_record(p, "sample")


def test_dataset_roundtrip(tmp_path, tiny_dataset):
    cfg, samples, pm = tiny_dataset
    manifest = rio.write_dataset(tmp_path / "ds", samples, pm, cfg)
    got, pm2, m2 = rio.read_dataset(tmp_path / "ds")
    assert pm2 == pm
    assert m2 == json.loads(json.dumps(manifest))
    assert m2["generator"]["seed"] == cfg.seed
    for a, b in zip(samples, got):
        assert a.values.tobytes() == b.values.tobytes()


def test_dataset_missing_file(tmp_path, tiny_dataset):
    cfg, samples, pm = tiny_dataset
    rio.write_dataset(tmp_path / "ds", samples, pm, cfg)
    next((tmp_path / "ds" / "samples").iterdir()).unlink()
    with pytest.raises(FileNotFoundError):
        rio.read_dataset(tmp_path / "ds")


def _state(examples, epochs=2, seed=0):
    mc = fit_scales(examples, ModelConfig(**SMALL, seed=seed))
    return new_state(ReferenceNeuralOperator(mc), TrainConfig(epochs=epochs, train_nodes=30, seed=seed))


@pytest.mark.parametrize("attention", ["quadratic", "linear"])
def test_checkpoint_forward_identical(tmp_path, tiny_examples, attention):
    mc = fit_scales(tiny_examples, ModelConfig(**SMALL, attention=attention, rfm_features=8))
    state = train_steps(new_state(ReferenceNeuralOperator(mc), TrainConfig(epochs=1)), tiny_examples)
    p = tmp_path / "m.ckpt"
    rio.write_checkpoint(p, state)
    loaded = rio.read_checkpoint(p)
    inp = ForwardInput.from_example(tiny_examples[0])
    with torch.no_grad():
        a = forward(inp, state.model)[0]
        b = forward(inp, loaded.model)[0]
    assert torch.equal(a, b)
    assert torch.equal(state.model.rfm_omegas, loaded.model.rfm_omegas)
    assert loaded.step == state.step and loaded.history == state.history


def test_resume_matches_continuous(tmp_path, tiny_examples):
    full = _state(tiny_examples)
    log_full = []
    train_steps(full, tiny_examples, log_fn=log_full.append)

    part = _state(tiny_examples)
    log_part = []
    # stop mid-epoch: 6 pairs / batch 4 = 2 steps per epoch
    train_steps(part, tiny_examples, until_step=3, log_fn=log_part.append)
    p = tmp_path / "mid.ckpt"
    rio.write_checkpoint(p, part)
    resumed = rio.read_checkpoint(p)
    train_steps(resumed, tiny_examples, log_fn=log_part.append)

    assert log_part == log_full
    assert resumed.history == full.history
    for k, v in full.model.state_dict().items():
        assert torch.equal(v, resumed.model.state_dict()[k]), k


def test_corrupted_key_set(tmp_path, tiny_examples):
    state = _state(tiny_examples)
    p = tmp_path / "m.ckpt"
    rio.write_checkpoint(p, state)
    header, arrays = rio.read_record(p, "checkpoint")
    arrays["model/extra.weight"] = arrays.pop("model/decoder.2.weight")
    del header["arrays"]
    rio.write_record(p, "checkpoint", header, arrays)
    with pytest.raises(rio.SchemaError, match="key set"):
        rio.read_checkpoint(p)


def test_bad_config_in_checkpoint(tmp_path, tiny_examples):
    state = _state(tiny_examples)
    p = tmp_path / "m.ckpt"
    rio.write_checkpoint(p, state)
    header, arrays = rio.read_record(p, "checkpoint")
    header["model_config"]["bogus"] = 1
    del header["arrays"]
    rio.write_record(p, "checkpoint", header, arrays)
    with pytest.raises(rio.SchemaError):
        rio.read_checkpoint(p)


def test_report_roundtrip(tmp_path, tiny_examples):
    rep = evaluate(ReferenceNeuralOperator(ModelConfig(**SMALL)), tiny_examples, seeds={"train": 0},
                   cfg_hash="abc")
    rio.write_report(tmp_path / "r.json", rep)
    assert rio.read_report(tmp_path / "r.json") == rep
    rio.write_records_csv(tmp_path / "r.csv", rep.records)
    lines = (tmp_path / "r.csv").read_text().strip().splitlines()
    assert len(lines) == 1 + len(tiny_examples)


def test_jsonl_log(tmp_path):
    with rio.JsonlLog(tmp_path / "log.jsonl") as log:
        log({"step": 0, "loss": 0.5})
        log({"step": 1, "loss": 0.25})
    rows = [json.loads(x) for x in (tmp_path / "log.jsonl").read_text().splitlines()]
    assert rows[1] == {"step": 1, "loss": 0.25}


def test_format_gamma():
    assert rio.format_gamma(float("inf")) == "inf"
    assert rio.format_gamma(0.3) == "0.3"
