"""Objective, metric, learning-rate schedule, training loop and evaluation."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import torch

from .model import ConfigError, ForwardInput, ModelConfig, ReferenceNeuralOperator, forward

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_pairs: int = 4
    base_lr: float = 1e-4
    max_lr: float = 1e-3
    cycle_len: int = 400
    weight_decay: float = 1e-4
    loss_p: int = 2
    seed: int = 0
    # random query nodes per pair and step; None trains on every node
    train_nodes: int | None = 512
    gamma_phi: float = 0.1
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8

    def validate(self):
        if self.epochs < 0 or not 1 <= self.batch_pairs:
            raise ConfigError("epochs >= 0 and batch_pairs >= 1 required")
        if not 0 < self.base_lr <= self.max_lr:
            raise ConfigError("need 0 < base_lr <= max_lr")
        if self.cycle_len < 2:
            raise ConfigError("cycle_len must be >= 2")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.loss_p not in (1, 2):
            raise ConfigError("loss_p must be 1 or 2")
        if self.train_nodes is not None and self.train_nodes < 1:
            raise ConfigError("train_nodes must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        d = dict(d)
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        cfg = cls(**d)
        cfg.validate()
        return cfg


def config_hash(*dicts) -> str:
    blob = json.dumps(dicts, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


# ---------------------------------------------------------------------------
# objective and metric
# ---------------------------------------------------------------------------

def loss(u_hat, u_q, p: int = 2):
    """Mean over nodes of the p-norm of the per-node error vector."""
    if u_hat.shape != u_q.shape:
        raise ValueError(f"shape mismatch {tuple(u_hat.shape)} vs {tuple(u_q.shape)}")
    diff = u_hat - u_q
    if isinstance(diff, np.ndarray):
        return float(np.linalg.norm(diff.reshape(diff.shape[0], -1), ord=p, axis=1).mean())
    return torch.linalg.vector_norm(diff.reshape(diff.shape[0], -1), ord=p, dim=1).mean()


def rel_l2(u, u_hat) -> np.ndarray:
    """Relative l2 error per target component (columns of a 2-D array)."""
    u = np.asarray(u, dtype=np.float64)
    u_hat = np.asarray(u_hat, dtype=np.float64)
    if u.shape != u_hat.shape:
        raise ValueError(f"shape mismatch {u.shape} vs {u_hat.shape}")
    u2 = u.reshape(u.shape[0], -1)
    e2 = (u2 - u_hat.reshape(u2.shape))
    denom = (u2 ** 2).sum(axis=0)
    if (denom == 0).any():
        raise ValueError("ground truth has zero norm")
    out = np.sqrt((e2 ** 2).sum(axis=0) / denom)
    return out if u.ndim > 1 else out[0]


def cyclical_lr(step: int, cfg: TrainConfig) -> float:
    """Triangular schedule: base -> max over half a cycle, then back."""
    if step < 0:
        raise ValueError("step must be >= 0")
    pos = (step % cfg.cycle_len) / cfg.cycle_len
    frac = 1.0 - abs(2.0 * pos - 1.0)
    return cfg.base_lr + (cfg.max_lr - cfg.base_lr) * frac


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def fit_scales(examples, cfg: ModelConfig) -> ModelConfig:
    """Copy of ``cfg`` with input/output scales taken from training pairs."""
    def rms(arrays):
        cat = np.concatenate([np.asarray(a, dtype=np.float64).ravel() for a in arrays])
        v = float(np.sqrt(np.mean(cat ** 2)))
        return v if v > 0 and math.isfinite(v) else 1.0

    d = asdict(cfg)
    d.update(
        u_scale=rms(ex.u_interp for ex in examples),
        shift_scale=rms(ex.shifts for ex in examples),
        param_scale=rms(ex.param_diff for ex in examples),
        out_scale=rms(ex.target - ex.u_interp for ex in examples),
    )
    return ModelConfig(**d)


@dataclass
class TrainState:
    model: ReferenceNeuralOperator
    optimizer: torch.optim.Optimizer
    train_cfg: TrainConfig
    step: int = 0
    epoch_loss_sum: float = 0.0
    history: list = field(default_factory=list)


def new_state(model: ReferenceNeuralOperator, train_cfg: TrainConfig) -> TrainState:
    train_cfg.validate()
    opt = torch.optim.AdamW(model.parameters(), lr=train_cfg.base_lr, betas=train_cfg.betas,
                            eps=train_cfg.eps, weight_decay=train_cfg.weight_decay)
    return TrainState(model, opt, train_cfg)


def _epoch_order(seed, epoch, n):
    return np.random.default_rng([seed, epoch, 0]).permutation(n)


def _node_subset(seed, step, slot, n, size):
    if size is None or size >= n:
        return None
    rng = np.random.default_rng([seed, step, slot + 1])
    return np.sort(rng.choice(n, size=size, replace=False))


def train_steps(state: TrainState, examples, until_step: int | None = None, log_fn=None) -> TrainState:
    """Run optimisation steps from ``state.step`` up to ``until_step``.

    Batch composition, node subsets and the learning rate depend only on
    (seed, step), so stopping and resuming reproduces an uninterrupted run.
    """
    cfg = state.train_cfg
    model = state.model
    if not examples:
        raise TrainingError("no training pairs")
    dtype = model.cfg.torch_dtype
    n = len(examples)
    per_epoch = math.ceil(n / cfg.batch_pairs)
    total = per_epoch * cfg.epochs
    until = total if until_step is None else min(until_step, total)
    tensors = [ForwardInput.from_example(ex, dtype) for ex in examples]
    targets = [torch.as_tensor(ex.target, dtype=dtype) for ex in examples]

    model.train()
    order = None
    order_epoch = -1
    while state.step < until:
        epoch, b = divmod(state.step, per_epoch)
        if epoch != order_epoch:
            order = _epoch_order(cfg.seed, epoch, n)
            order_epoch = epoch
        batch = order[b * cfg.batch_pairs:(b + 1) * cfg.batch_pairs]
        lr = cyclical_lr(state.step, cfg)
        for group in state.optimizer.param_groups:
            group["lr"] = lr
        state.optimizer.zero_grad(set_to_none=True)
        total_loss = 0.0
        # pairs have different node counts: accumulate per-pair gradients
        for slot, i in enumerate(batch):
            inp, tgt = tensors[i], targets[i]
            rows = _node_subset(cfg.seed, state.step, slot, inp.x_q.shape[0], cfg.train_nodes)
            if rows is not None:
                rows = torch.as_tensor(rows)
                inp = ForwardInput(inp.x_q[rows], inp.u_interp[rows], inp.shifts[rows], inp.param_diff)
                tgt = tgt[rows]
            _, u_hat = forward(inp, model)
            l = loss(u_hat, tgt, cfg.loss_p) / len(batch)
            if not torch.isfinite(l):
                raise TrainingError(
                    f"non-finite loss at step {state.step} (pair {examples[i].query_id}<-{examples[i].ref_id})")
            l.backward()
            total_loss += float(l.detach())
        state.optimizer.step()
        state.epoch_loss_sum += total_loss
        rec = {"step": state.step, "epoch": epoch, "lr": lr, "loss": total_loss}
        state.step += 1
        if log_fn:
            log_fn(rec)
        if state.step % per_epoch == 0:
            ep = {"epoch": epoch, "mean_loss": state.epoch_loss_sum / per_epoch}
            state.history.append(ep["mean_loss"])
            state.epoch_loss_sum = 0.0
            if log_fn:
                log_fn(ep)
            log.info("epoch %d mean loss %.4e", epoch, ep["mean_loss"])
    return state


def train(examples, model_cfg: ModelConfig, train_cfg: TrainConfig, log_fn=None,
          fit_input_scales: bool = True):
    """Train a fresh model; returns ``(model, per-epoch mean losses)``."""
    if not examples:
        raise TrainingError("no training pairs")
    train_cfg.validate()
    if fit_input_scales:
        model_cfg = fit_scales(examples, model_cfg)
    model = ReferenceNeuralOperator(model_cfg)
    state = train_steps(new_state(model, train_cfg), examples, log_fn=log_fn)
    return state.model, state.history


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    model_error: list[float]
    baseline_error: list[float]
    records: list[dict]
    seeds: dict = field(default_factory=dict)
    config_hash: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(**d)

    @property
    def mean_model_error(self) -> float:
        return float(np.mean(self.model_error))

    @property
    def mean_baseline_error(self) -> float:
        return float(np.mean(self.baseline_error))


@torch.no_grad()
def predict(model: ReferenceNeuralOperator, ex, chunk: int = 1024) -> np.ndarray:
    """Full-resolution prediction u_hat for one preprocessed pair (float64)."""
    model.eval()
    inp = ForwardInput.from_example(ex, model.cfg.torch_dtype)
    n = inp.x_q.shape[0]
    delta, _ = forward(inp, model, chunk=chunk if n > chunk else None)
    return ex.u_interp + delta.double().numpy()


def evaluate(model: ReferenceNeuralOperator, examples, chunk: int = 1024,
             seeds: dict | None = None, cfg_hash: str = "") -> EvalReport:
    model_errs, base_errs, records = [], [], []
    for ex in examples:
        u_hat = predict(model, ex, chunk)
        e_model = np.atleast_1d(rel_l2(ex.target, u_hat))
        e_base = np.atleast_1d(rel_l2(ex.target, ex.u_interp))
        model_errs.append(e_model)
        base_errs.append(e_base)
        records.append({
            "query_id": ex.query_id, "ref_id": ex.ref_id, "distance": ex.distance,
            "model_rel_l2": float(e_model.mean()), "baseline_rel_l2": float(e_base.mean()),
        })
    return EvalReport(
        model_error=np.mean(model_errs, axis=0).tolist() if records else [],
        baseline_error=np.mean(base_errs, axis=0).tolist() if records else [],
        records=records, seeds=seeds or {}, config_hash=cfg_hash,
    )


def split_by_pair(samples, train_fraction: float = 0.8, seed: int = 0):
    """Split sample ids into train/test keeping both members of a pair together."""
    tags = sorted({s.pair_tag for s in samples})
    perm = np.random.default_rng(seed).permutation(len(tags))
    n_train = int(round(train_fraction * len(tags)))
    train_tags = {tags[i] for i in perm[:n_train]}
    train = [s for s in samples if s.pair_tag in train_tags]
    test = [s for s in samples if s.pair_tag not in train_tags]
    return train, test


def spearman(a, b) -> float:
    from scipy.stats import spearmanr
    return float(spearmanr(a, b).statistic)
