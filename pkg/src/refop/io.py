"""On-disk formats: samples, dataset manifests, checkpoints, reports.

Record files (samples and checkpoints) share one layout::

    REFOP <kind> <version>\\n
    <header: one line of JSON>\\n
    <payload: little-endian float64 arrays, back to back>

The header lists every array as ``{"name": ..., "shape": [...]}`` in
payload order; the payload length must match exactly.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np
import torch

from .datagen import GenConfig, Sample
from .geometry import BoundaryComponent, BoxDomain, Geometry
from .model import ModelConfig, ReferenceNeuralOperator
from .pairing import PairMap
from .training import EvalReport, TrainConfig, TrainState, config_hash, new_state

FORMAT_VERSION = 1
_LE_F64 = np.dtype("<f8")


class FormatError(ValueError):
    pass


class SchemaError(FormatError):
    pass


# ---------------------------------------------------------------------------
# generic record container
# ---------------------------------------------------------------------------

def write_record(path, kind: str, header: dict, arrays: dict[str, np.ndarray]):
    header = dict(header)
    header["arrays"] = [{"name": k, "shape": list(np.shape(v))} for k, v in arrays.items()]
    with open(path, "wb") as fh:
        fh.write(f"REFOP {kind} {FORMAT_VERSION}\n".encode())
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for a in arrays.values():
            fh.write(np.ascontiguousarray(a, dtype=_LE_F64).tobytes())


def read_record(path, kind: str):
    data = Path(path).read_bytes()
    try:
        first, rest = data.split(b"\n", 1)
        head, payload = rest.split(b"\n", 1)
        magic, got_kind, version = first.decode().split(" ")
        header = json.loads(head)
    except ValueError as exc:
        raise FormatError(f"{path}: malformed header ({exc})") from None
    if magic != "REFOP" or got_kind != kind:
        raise FormatError(f"{path}: expected a {kind} record, found {first!r}")
    if int(version) != FORMAT_VERSION:
        raise FormatError(f"{path}: format version {version} != {FORMAT_VERSION}")
    specs = header.get("arrays", [])
    sizes = [int(np.prod(s["shape"], dtype=np.int64)) for s in specs]
    if sum(sizes) * 8 != len(payload):
        raise FormatError(f"{path}: payload is {len(payload)} bytes, header declares {sum(sizes) * 8}")
    flat = np.frombuffer(payload, dtype=_LE_F64).astype(np.float64)
    if not np.isfinite(flat).all():
        raise FormatError(f"{path}: non-finite values in payload")
    arrays = {}
    offset = 0
    for spec, n in zip(specs, sizes):
        arrays[spec["name"]] = flat[offset:offset + n].reshape(spec["shape"])
        offset += n
    return header, arrays


# ---------------------------------------------------------------------------
# samples and datasets
# ---------------------------------------------------------------------------

def write_sample(path, s: Sample):
    g = s.geometry
    if s.nodes.shape[0] == 0:
        raise FormatError("refusing to write an empty sample")
    K = g.components[0].K if g.components else 0
    header = {
        "id": int(s.id), "pair_tag": int(s.pair_tag), "K": K,
        "domain": {"lo": list(g.domain.lo), "hi": list(g.domain.hi)},
        "components": [{"kind": c.kind, "params": list(c.params)} for c in g.components],
    }
    arrays = {"nodes": s.nodes, "values": s.values,
              "boundary": g.boundary_points if g.components else np.zeros((0, 2))}
    write_record(path, "sample", header, arrays)


def read_sample(path) -> Sample:
    header, arrays = read_record(path, "sample")
    for name in ("nodes", "values", "boundary"):
        if name not in arrays:
            raise FormatError(f"{path}: missing array {name!r}")
    nodes, values = arrays["nodes"], arrays["values"]
    if nodes.shape[0] == 0:
        raise FormatError(f"{path}: empty sample")
    if values.shape[0] != nodes.shape[0]:
        raise FormatError(f"{path}: {values.shape[0]} values for {nodes.shape[0]} nodes")
    K = int(header["K"])
    comps = header["components"]
    boundary = arrays["boundary"]
    if boundary.shape[0] != K * len(comps):
        raise FormatError(f"{path}: boundary length does not match K x components")
    domain = BoxDomain(tuple(header["domain"]["lo"]), tuple(header["domain"]["hi"]))
    components = tuple(
        BoundaryComponent(c["kind"], tuple(float(p) for p in c["params"]),
                          boundary[i * K:(i + 1) * K].copy())
        for i, c in enumerate(comps))
    return Sample(int(header["id"]), nodes, values, Geometry(domain, components), int(header["pair_tag"]))


def write_dataset(root, samples, pairmap: PairMap, gen_cfg: GenConfig | None = None) -> dict:
    root = Path(root)
    (root / "samples").mkdir(parents=True, exist_ok=True)
    index = []
    for s in samples:
        rel = f"samples/sample_{int(s.id):06d}.rsmp"
        write_sample(root / rel, s)
        index.append({"id": int(s.id), "file": rel, "n_nodes": int(s.nodes.shape[0]),
                      "params": [float(p) for p in s.params], "pair_tag": int(s.pair_tag)})
    gen = gen_cfg.to_dict() if gen_cfg is not None else {}
    manifest = {
        "format_version": FORMAT_VERSION,
        "generator": gen,
        "seed": gen.get("seed"),
        "samples": index,
        "pairing": pairmap.to_dict(),
    }
    manifest["config_hash"] = config_hash(gen)
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return manifest


def read_dataset(root):
    """Load ``(samples, pairmap, manifest)`` from a dataset directory."""
    root = Path(root)
    mpath = root / "manifest.json"
    if not mpath.exists():
        raise FileNotFoundError(f"no manifest at {mpath}")
    manifest = json.loads(mpath.read_text())
    if manifest.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"manifest version {manifest.get('format_version')} != {FORMAT_VERSION}")
    ids = [e["id"] for e in manifest["samples"]]
    if len(set(ids)) != len(ids):
        raise FormatError("duplicate sample ids in manifest")
    samples = []
    for entry in manifest["samples"]:
        s = read_sample(root / entry["file"])
        if s.id != entry["id"] or s.nodes.shape[0] != entry["n_nodes"]:
            raise FormatError(f"sample file {entry['file']} disagrees with the manifest")
        samples.append(s)
    return samples, PairMap.from_dict(manifest["pairing"]), manifest


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def _expected_keys(model: ReferenceNeuralOperator) -> set[str]:
    keys = {f"model/{k}" for k in model.state_dict()}
    for i, _ in enumerate(model.parameters()):
        keys |= {f"opt/{i}/exp_avg", f"opt/{i}/exp_avg_sq", f"opt/{i}/step"}
    return keys


def write_checkpoint(path, state: TrainState):
    model = state.model
    arrays = {f"model/{k}": v.detach().double().numpy() for k, v in model.state_dict().items()}
    opt_state = state.optimizer.state_dict()["state"]
    for i, p in enumerate(model.parameters()):
        st = opt_state.get(i)
        if st is None:
            st = {"exp_avg": torch.zeros_like(p), "exp_avg_sq": torch.zeros_like(p),
                  "step": torch.tensor(0.0)}
        arrays[f"opt/{i}/exp_avg"] = st["exp_avg"].double().numpy()
        arrays[f"opt/{i}/exp_avg_sq"] = st["exp_avg_sq"].double().numpy()
        arrays[f"opt/{i}/step"] = np.array([float(st["step"])])
    header = {
        "format_version": FORMAT_VERSION,
        "model_config": model.cfg.to_dict(),
        "train_config": state.train_cfg.to_dict(),
        "step": state.step,
        # hex floats round-trip exactly through json
        "epoch_loss_sum": float(state.epoch_loss_sum).hex(),
        "history": [float(h).hex() for h in state.history],
        "config_hash": config_hash(model.cfg.to_dict(), state.train_cfg.to_dict()),
    }
    write_record(path, "checkpoint", header, arrays)


def read_checkpoint(path) -> TrainState:
    header, arrays = read_record(path, "checkpoint")
    try:
        mcfg = ModelConfig.from_dict(header["model_config"])
        tcfg = TrainConfig.from_dict(header["train_config"])
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"{path}: bad config ({exc})") from None
    model = ReferenceNeuralOperator(mcfg)
    expected = _expected_keys(model)
    if set(arrays) != expected:
        missing = sorted(expected - set(arrays))[:5]
        extra = sorted(set(arrays) - expected)[:5]
        raise SchemaError(f"{path}: key set mismatch (missing {missing}, unexpected {extra})")
    dtype = mcfg.torch_dtype
    sd = model.state_dict()
    loaded = {}
    for k, v in sd.items():
        a = arrays[f"model/{k}"]
        if tuple(a.shape) != tuple(v.shape):
            raise SchemaError(f"{path}: shape mismatch for {k}")
        loaded[k] = torch.as_tensor(a, dtype=v.dtype)
    model.load_state_dict(loaded)
    state = new_state(model, tcfg)
    opt_sd = state.optimizer.state_dict()
    for i, p in enumerate(model.parameters()):
        step = float(arrays[f"opt/{i}/step"][0])
        if step == 0:
            continue
        opt_sd["state"][i] = {
            "step": torch.tensor(step),
            "exp_avg": torch.as_tensor(arrays[f"opt/{i}/exp_avg"], dtype=dtype),
            "exp_avg_sq": torch.as_tensor(arrays[f"opt/{i}/exp_avg_sq"], dtype=dtype),
        }
    state.optimizer.load_state_dict(opt_sd)
    state.step = int(header["step"])
    state.epoch_loss_sum = float.fromhex(header["epoch_loss_sum"])
    state.history = [float.fromhex(h) for h in header["history"]]
    return state


# ---------------------------------------------------------------------------
# logs and reports
# ---------------------------------------------------------------------------

class JsonlLog:
    """Append-only line-delimited JSON log; usable as a ``log_fn``."""

    def __init__(self, path):
        self.path = Path(path)
        self._fh = open(self.path, "a")

    def __call__(self, record: dict):
        self._fh.write(json.dumps(record, sort_keys=True) + "\n")

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_report(path, report: EvalReport):
    Path(path).write_text(json.dumps(report.to_dict(), indent=1, sort_keys=True) + "\n")


def read_report(path) -> EvalReport:
    return EvalReport.from_dict(json.loads(Path(path).read_text()))


def write_records_csv(path, records: list[dict]):
    cols = ["query_id", "ref_id", "distance", "model_rel_l2", "baseline_rel_l2"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for r in records:
            w.writerow({c: r[c] for c in cols})


def format_gamma(g: float) -> str:
    return "inf" if math.isinf(g) else repr(float(g))
