"""Command line entry point: ``refop gen|train|eval|sweep-gamma``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import io as rio
from .datagen import MAX_HOLES, GenConfig, GenerationError, SolverError, generate_pairs
from .geometry import GeometryError
from .meshinterp import MeshError
from .model import AttentionError, ConfigError, ModelConfig
from .pairing import PairingError, PairMap, pair_knn, pair_natural, prepare_pairs
from .training import (TrainConfig, TrainingError, config_hash, evaluate, fit_scales, new_state,
                       split_by_pair, train_steps)

log = logging.getLogger("refop")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(ValueError):
    pass


def apply_thread_limit():
    """Honour REFOP_THREADS for torch and numba."""
    raw = os.environ.get("REFOP_THREADS")
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"REFOP_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise UsageError("REFOP_THREADS must be >= 1")
    import torch
    torch.set_num_threads(n)
    try:
        import numba
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    except ImportError:  # pragma: no cover
        pass
    return n


# ---------------------------------------------------------------------------
# argument helpers
# ---------------------------------------------------------------------------

def parse_holes(text: str) -> tuple[int, int]:
    try:
        if "-" in text:
            lo, hi = (int(t) for t in text.split("-", 1))
        else:
            lo = hi = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"holes must be N or LO-HI, got {text!r}") from None
    if not 1 <= lo <= hi <= MAX_HOLES:
        raise argparse.ArgumentTypeError(f"holes must lie in 1..{MAX_HOLES}, got {text!r}")
    return lo, hi


def parse_gammas(text: str) -> list[float]:
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        try:
            g = float(tok)
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad gamma {tok!r}") from None
        if not g > 0:
            raise argparse.ArgumentTypeError(f"gamma must be positive, got {tok!r}")
        out.append(g)
    if not out:
        raise argparse.ArgumentTypeError("empty gamma list")
    return out


def load_run_config(path) -> tuple[ModelConfig, TrainConfig]:
    """Read ``{"model": {...}, "train": {...}}``; unknown keys are rejected."""
    if path is None:
        return ModelConfig(), TrainConfig()
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise UsageError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(raw) - {"model", "train"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    mcfg = ModelConfig.from_dict(raw.get("model", {}))
    tcfg = TrainConfig.from_dict(raw.get("train", {}))
    return mcfg, tcfg


def _load_dataset(root):
    if not Path(root).is_dir():
        raise FileNotFoundError(f"dataset directory {root} does not exist")
    return rio.read_dataset(root)


def _split(samples, seed):
    train, test = split_by_pair(samples, 0.8, seed)
    if not train:
        raise PairingError("training split is empty")
    return train, test


def _natural(samples) -> PairMap:
    return pair_natural(samples, [s.pair_tag for s in samples])


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen(args) -> int:
    cfg = GenConfig(problem=args.problem, grid=args.grid, holes_min=args.holes[0],
                    holes_max=args.holes[1], kind=args.kind, n_pairs=args.pairs, seed=args.seed,
                    boundary=args.boundary)
    try:
        cfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    samples, pairmap = generate_pairs(cfg)
    manifest = rio.write_dataset(args.out, samples, pairmap, cfg)
    print(f"wrote {len(samples)} samples, {len(pairmap)} pairs to {args.out} "
          f"(config {manifest['config_hash']})")
    return EXIT_OK


def _train_model(train_samples, mcfg, tcfg, log_fn=None, resume_state=None):
    examples = prepare_pairs(train_samples, _natural(train_samples), tcfg.gamma_phi)
    if resume_state is None:
        from .model import ReferenceNeuralOperator
        model = ReferenceNeuralOperator(fit_scales(examples, mcfg))
        state = new_state(model, tcfg)
    else:
        state = resume_state
    return train_steps(state, examples, log_fn=log_fn)


def cmd_train(args) -> int:
    samples, _, manifest = _load_dataset(args.data)
    resume = None
    if args.resume:
        resume = rio.read_checkpoint(args.resume)
        mcfg, tcfg = resume.model.cfg, resume.train_cfg
    else:
        mcfg, tcfg = load_run_config(args.config)
        if args.seed is not None:
            tcfg.seed = args.seed
            mcfg.seed = args.seed
        if args.epochs is not None:
            tcfg.epochs = args.epochs
        tcfg.validate()
    train_samples, _ = _split(samples, tcfg.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    chash = config_hash(mcfg.to_dict(), tcfg.to_dict(), manifest.get("config_hash"))
    log_path = out / "train_log.jsonl"
    if resume is None and log_path.exists():
        log_path.unlink()
    with rio.JsonlLog(log_path) as jl:
        if resume is None:
            jl({"config_hash": chash, "model": mcfg.to_dict(), "train": tcfg.to_dict(),
                "dataset": manifest.get("config_hash")})
        state = _train_model(train_samples, mcfg, tcfg, jl, resume)
    ckpt = out / "model.ckpt"
    rio.write_checkpoint(ckpt, state)
    final = state.history[-1] if state.history else float("nan")
    print(f"trained {state.step} steps, final epoch loss {final:.6e}; checkpoint {ckpt} "
          f"(config {chash})")
    return EXIT_OK


def _eval_pairs(samples, train_cfg, pairing, k):
    train, test = _split(samples, train_cfg.seed)
    if not test:
        # a dataset too small to split is evaluated as a whole
        test = samples
    if pairing == "natural":
        pm = _natural(test)
        pool = test
    else:
        pm = pair_knn(test, train, k=k, exclude_self=True)
        pool = train + test
    return prepare_pairs(pool, pm, train_cfg.gamma_phi)


def cmd_eval(args) -> int:
    samples, _, manifest = _load_dataset(args.data)
    state = rio.read_checkpoint(args.checkpoint)
    examples = _eval_pairs(samples, state.train_cfg, args.pairing, args.k)
    chash = config_hash(state.model.cfg.to_dict(), state.train_cfg.to_dict(),
                        manifest.get("config_hash"), args.pairing, args.k)
    report = evaluate(state.model, examples, seeds={"train": state.train_cfg.seed,
                                                    "model": state.model.cfg.seed,
                                                    "data": manifest.get("seed")},
                      cfg_hash=chash)
    report_path = Path(args.report)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    rio.write_report(report_path, report)
    csv_path = report_path.with_suffix(".csv")
    rio.write_records_csv(csv_path, report.records)
    print(f"model rel-l2 {report.mean_model_error:.4e}  pushforward rel-l2 "
          f"{report.mean_baseline_error:.4e}  pairs {len(report.records)} (config {chash})")
    return EXIT_OK


def sort_gammas(gammas):
    # finite values ascending, inf last
    return sorted(set(gammas), key=lambda g: (math.isinf(g), g))


def cmd_sweep_gamma(args) -> int:
    samples, _, manifest = _load_dataset(args.data)
    mcfg, tcfg = load_run_config(args.config)
    if args.seed is not None:
        tcfg.seed = mcfg.seed = args.seed
    if args.epochs is not None:
        tcfg.epochs = args.epochs
    tcfg.validate()
    train_samples, _ = _split(samples, tcfg.seed)
    eval_examples = _eval_pairs(samples, tcfg, "natural", 1)
    rows = []
    for g in sort_gammas(args.gammas):
        cfg = ModelConfig.from_dict({**mcfg.to_dict(), "gamma": g})
        state = _train_model(train_samples, cfg, tcfg)
        chash = config_hash(cfg.to_dict(), tcfg.to_dict(), manifest.get("config_hash"))
        rep = evaluate(state.model, eval_examples, cfg_hash=chash)
        rows.append({"gamma": rio.format_gamma(g), "model_rel_l2": rep.mean_model_error,
                     "baseline_rel_l2": rep.mean_baseline_error,
                     "final_train_loss": state.history[-1] if state.history else float("nan"),
                     "config_hash": chash})
        log.info("gamma %s: model %.4e", rio.format_gamma(g), rep.mean_model_error)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    print(f"wrote {len(rows)} rows to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser and dispatch
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="refop", description="Reference neural operator toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a paired Poisson dataset")
    g.add_argument("--problem", choices=["poisson-holes", "annulus"], default="poisson-holes")
    g.add_argument("--pairs", type=int, default=10)
    g.add_argument("--grid", type=int, default=64)
    g.add_argument("--holes", type=parse_holes, default=(1, 3), help="N or LO-HI (max %d)" % MAX_HOLES)
    g.add_argument("--kind", choices=["circle", "square"], default="circle")
    g.add_argument("--boundary", choices=["ghost", "mask"], default="ghost")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train on the training split of a dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--config", help='JSON file {"model": {...}, "train": {...}}')
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--resume", help="continue from a checkpoint")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on the held-out split")
    e.add_argument("--data", required=True)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--pairing", choices=["natural", "knn"], default="natural")
    e.add_argument("--k", type=int, default=1)
    e.add_argument("--report", required=True)
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep-gamma", help="train and evaluate one model per gamma")
    s.add_argument("--data", required=True)
    s.add_argument("--gammas", type=parse_gammas, required=True, help='e.g. "0.1,0.3,inf"')
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--epochs", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sweep_gamma)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        apply_thread_limit()
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"refop: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, rio.FormatError, PairingError, GeometryError, MeshError,
            GenerationError) as exc:
        print(f"refop: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingError, SolverError, AttentionError, FloatingPointError) as exc:
        print(f"refop: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
