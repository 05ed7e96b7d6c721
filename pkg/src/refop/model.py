"""Reference neural operator: encoder, distance-aware attention layers, decoder.

The network maps (query nodes, pushforward values, node shifts, per-hole
parameter differences) to a correction ``delta_u``; the prediction is the
pushforward plus that correction.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import torch
from torch import nn

ATTENTION_KINDS = ("quadratic", "linear", "none")
NORM_FLOOR = 1e-12


class ConfigError(ValueError):
    pass


class AttentionError(FloatingPointError):
    pass


@dataclass
class ModelConfig:
    hidden_dim: int = 64
    layers: int = 3
    heads: int = 4
    gamma: float = 0.3
    attention: str = "quadratic"
    rfm_features: int = 256
    target_dim: int = 1
    spatial_dim: int = 2
    param_dim: int = 3
    mlp_hidden: int = 64
    seed: int = 0
    dtype: str = "float32"
    zero_init_decoder: bool = True
    # fixed scalings of inputs and output, fitted on training data
    u_scale: float = 1.0
    shift_scale: float = 1.0
    param_scale: float = 1.0
    out_scale: float = 1.0

    def validate(self):
        if self.hidden_dim % self.heads:
            raise ConfigError(f"hidden_dim {self.hidden_dim} not divisible by heads {self.heads}")
        if self.layers < 1 or self.rfm_features < 1:
            raise ConfigError("layers >= 1 and rfm_features >= 1 required")
        if not self.gamma > 0:
            raise ConfigError("gamma must be positive (or inf)")
        if self.attention not in ATTENTION_KINDS:
            raise ConfigError(f"attention must be one of {ATTENTION_KINDS}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"unsupported dtype {self.dtype!r}")

    @property
    def torch_dtype(self):
        return torch.float64 if self.dtype == "float64" else torch.float32

    def to_dict(self) -> dict:
        d = asdict(self)
        # json has no infinity literal
        d["gamma"] = "inf" if math.isinf(self.gamma) else self.gamma
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        d = dict(d)
        if "gamma" in d:
            d["gamma"] = float(d["gamma"])
        cfg = cls(**d)
        cfg.validate()
        return cfg


# ---------------------------------------------------------------------------
# attention kernels
# ---------------------------------------------------------------------------

def _split_heads(x, heads):
    n, s = x.shape
    return x.reshape(n, heads, s // heads).transpose(0, 1)


def _merge_heads(x):
    h, n, d = x.shape
    return x.transpose(0, 1).reshape(n, h * d)


def squared_distances(a, b):
    d2 = (a * a).sum(-1)[:, None] + (b * b).sum(-1)[None, :] - 2.0 * a @ b.T
    return d2.clamp_min(0.0)


def distance_bias(pos_q, pos_k, gamma: float):
    """Log of the Gaussian distance weight, -|x - y|^2 / gamma^2."""
    if math.isinf(gamma):
        return None
    return -squared_distances(pos_q, pos_k) / (gamma * gamma)


def daca_quadratic(q, k, values, pos_q, pos_k, gamma: float, heads: int = 1,
                   chunk: int | None = None, bias=None):
    """Softmax attention reweighted by exp(-|x - y|^2 / gamma^2) and renormalised.

    ``values`` is a list of value streams sharing one attention kernel.  The
    weight for query a and key i is softmax_i(q_a.k_i) * h(|x_a - y_i|),
    normalised over i and over the streams; multiplying a softmax by h and
    renormalising equals a softmax of the logits minus d^2/gamma^2, which is
    how it is computed.  A precomputed ``bias`` (see ``distance_bias``)
    replaces the positions when given.
    """
    if not all(torch.isfinite(t).all() for t in (q, k, *values)):
        raise AttentionError("non-finite attention input")
    n_streams = len(values)
    v = values[0]
    for extra in values[1:]:
        v = v + extra
    qh = _split_heads(q, heads)
    kh = _split_heads(k, heads)
    vh = _split_heads(v, heads)
    scale = 1.0 / math.sqrt(qh.shape[-1])
    chunk = chunk or q.shape[0]
    outs = []
    for start in range(0, q.shape[0], chunk):
        sl = slice(start, start + chunk)
        logits = (qh[:, sl] @ kh.transpose(-1, -2)) * scale
        if bias is not None:
            logits = logits + bias[sl][None]
        elif not math.isinf(gamma):
            logits = logits - squared_distances(pos_q[sl], pos_k)[None] / (gamma * gamma)
        attn = torch.softmax(logits, dim=-1)
        outs.append(attn @ vh)
    out = torch.cat(outs, dim=1) / n_streams
    return _merge_heads(out)


def rfm_features(x, omegas):
    """Random Fourier features whose inner products estimate a Gaussian kernel."""
    proj = x @ omegas.T
    return torch.cat([torch.sin(proj), torch.cos(proj)], dim=-1) / math.sqrt(omegas.shape[0])


def daca_linear(q, k, values, phi_q, phi_k, heads: int = 1, feature_map=torch.exp):
    """Linear-cost distance-aware attention.

    With f = ``feature_map`` applied elementwise to q and k, computes
    w_a = sum_j (f(q_a).f(k_j)) (phi_a.phi_j) v_j / sum_j (f(q_a).f(k_j)) (phi_a.phi_j)
    without forming the N x N matrix: the keys are first contracted into
    H[m, l, b] = sum_j f(k)_jm phi_jl v_jb.
    """
    n_streams = len(values)
    v = values[0]
    for extra in values[1:]:
        v = v + extra
    qh = _split_heads(q, heads)
    kh = _split_heads(k, heads)
    vh = _split_heads(v, heads)
    if feature_map is torch.exp:
        # per-row / global shifts cancel between numerator and normaliser
        fq = torch.exp(qh - qh.amax(dim=-1, keepdim=True).detach())
        fk = torch.exp(kh - kh.amax(dim=(-2, -1), keepdim=True).detach())
    else:
        fq = feature_map(qh)
        fk = feature_map(kh)
    H = torch.einsum("hjm,jl,hjb->hmlb", fk, phi_k, vh)
    Hn = torch.einsum("hjm,jl->hml", fk, phi_k)
    nh, n, dh = fq.shape
    z = (fq[..., :, None] * phi_q[None, :, None, :]).reshape(nh, n, -1)
    num = z @ H.reshape(nh, -1, dh)
    den = z @ Hn.reshape(nh, -1, 1)
    if (den <= NORM_FLOOR).any():
        raise AttentionError("linear attention normaliser collapsed (degenerate features)")
    return _merge_heads(num / den) / n_streams


# ---------------------------------------------------------------------------
# network
# ---------------------------------------------------------------------------

class MLP(nn.Sequential):
    def __init__(self, n_in, n_hidden, n_out):
        super().__init__(nn.Linear(n_in, n_hidden), nn.GELU(), nn.Linear(n_hidden, n_out))


class GeometryEncoder(nn.Module):
    """Shared per-component MLP on (x, u, p_q - p_r), summed over components."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.param_dim = cfg.param_dim
        self.mlp = MLP(cfg.spatial_dim + cfg.target_dim + cfg.param_dim, cfg.mlp_hidden, cfg.hidden_dim)

    def forward(self, x, u, param_diff):
        if param_diff.shape[-1] != self.param_dim:
            raise ConfigError(f"param diff has {param_diff.shape[-1]} entries, expected {self.param_dim}")
        n, m = x.shape[0], param_diff.shape[0]
        pointwise = torch.cat([x, u], dim=-1)
        feats = torch.cat([pointwise[:, None, :].expand(n, m, -1),
                           param_diff[None, :, :].expand(n, m, -1)], dim=-1)
        return self.mlp(feats).sum(dim=1)


class OperatorLayer(nn.Module):
    """v <- v + MLP(LayerNorm(w)), w = attention over (v, P1(u), P2(dx))."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        s = cfg.hidden_dim
        self.cfg = cfg
        if cfg.attention == "none":
            self.mix = nn.Linear(3 * s, s)
        else:
            self.q = nn.Linear(s, s)
            self.k = nn.Linear(s, s)
            self.v = nn.ModuleList([nn.Linear(s, s) for _ in range(3)])
        self.norm = nn.LayerNorm(s)
        self.mlp = MLP(s, cfg.mlp_hidden, s)

    def attend(self, v, u_lift, dx_lift, pos, phi=None, chunk=None, bias=None):
        cfg = self.cfg
        streams = (v, u_lift, dx_lift)
        if cfg.attention == "none":
            return self.mix(torch.cat(streams, dim=-1))
        q = self.q(v)
        k = self.k(v)
        vals = [proj(t) for proj, t in zip(self.v, streams)]
        if cfg.attention == "quadratic":
            return daca_quadratic(q, k, vals, pos, pos, cfg.gamma, cfg.heads, chunk=chunk, bias=bias)
        return daca_linear(q, k, vals, phi, phi, cfg.heads)

    def forward(self, v, u_lift, dx_lift, pos, phi=None, chunk=None, bias=None):
        w = self.attend(v, u_lift, dx_lift, pos, phi, chunk, bias)
        return v + self.mlp(self.norm(w))


class ReferenceNeuralOperator(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        gen = torch.Generator().manual_seed(cfg.seed)
        # initialisation depends only on cfg.seed, not on global RNG state
        # or on the global default dtype: weights are drawn in float32, then cast
        prev_dtype = torch.get_default_dtype()
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(cfg.seed)
            torch.set_default_dtype(torch.float32)
            self.encoder = GeometryEncoder(cfg)
            self.lift_u = MLP(cfg.target_dim, cfg.mlp_hidden, cfg.hidden_dim)
            self.lift_dx = MLP(cfg.spatial_dim, cfg.mlp_hidden, cfg.hidden_dim)
            self.layers = nn.ModuleList([OperatorLayer(cfg) for _ in range(cfg.layers)])
            self.decoder = MLP(cfg.hidden_dim, cfg.mlp_hidden, cfg.target_dim)
            torch.set_default_dtype(prev_dtype)
        if cfg.zero_init_decoder:
            nn.init.zeros_(self.decoder[-1].weight)
            nn.init.zeros_(self.decoder[-1].bias)
        if cfg.attention == "linear" and not math.isinf(cfg.gamma):
            sigma = math.sqrt(2.0) / cfg.gamma
            omegas = torch.randn(cfg.rfm_features, cfg.spatial_dim, generator=gen,
                                 dtype=torch.float64) * sigma
        else:
            omegas = torch.zeros(0, cfg.spatial_dim, dtype=torch.float64)
        # a buffer: saved with the state dict, never seen by the optimizer
        self.register_buffer("rfm_omegas", omegas)
        self.to(cfg.torch_dtype)

    def position_features(self, x):
        if self.cfg.attention != "linear":
            return None
        if self.rfm_omegas.shape[0] == 0:
            return torch.ones(x.shape[0], 1, dtype=x.dtype)
        return rfm_features(x, self.rfm_omegas)

    def forward(self, x, u_interp, shifts, param_diff, chunk=None):
        cfg = self.cfg
        u = u_interp / cfg.u_scale
        dx = shifts / cfg.shift_scale
        dp = param_diff / cfg.param_scale
        v = self.encoder(x, u, dp)
        u_lift = self.lift_u(u)
        dx_lift = self.lift_dx(dx)
        phi = self.position_features(x)
        bias = None
        if cfg.attention == "quadratic" and chunk is None:
            # shared by every layer; chunked inference recomputes per block
            bias = distance_bias(x, x, cfg.gamma)
        for layer in self.layers:
            v = layer(v, u_lift, dx_lift, x, phi, chunk, bias)
        return self.decoder(v) * cfg.out_scale


@dataclass
class ForwardInput:
    x_q: torch.Tensor
    u_interp: torch.Tensor
    shifts: torch.Tensor
    param_diff: torch.Tensor

    def __post_init__(self):
        n = self.x_q.shape[0]
        if self.u_interp.shape[0] != n or self.shifts.shape[0] != n:
            raise ConfigError("row counts of x_q, u_interp and shifts differ")
        if self.param_diff.ndim != 2 or self.param_diff.shape[0] < 1:
            raise ConfigError("need at least one component parameter difference")

    @property
    def m(self) -> int:
        return self.param_diff.shape[0]

    @classmethod
    def from_example(cls, ex, dtype=torch.float32, rows=None) -> "ForwardInput":
        sel = slice(None) if rows is None else rows
        t = lambda a: torch.as_tensor(a[sel], dtype=dtype)
        return cls(t(ex.nodes), t(ex.u_interp), t(ex.shifts),
                   torch.as_tensor(ex.param_diff, dtype=dtype))


def forward(inp: ForwardInput, model: ReferenceNeuralOperator, chunk=None):
    """Return ``(delta_u, u_hat)`` with ``u_hat = u_interp + delta_u``."""
    cfg = model.cfg
    if inp.x_q.shape[1] != cfg.spatial_dim or inp.u_interp.shape[1] != cfg.target_dim:
        raise ConfigError("input dimensions do not match the model config")
    delta = model(inp.x_q, inp.u_interp, inp.shifts, inp.param_diff, chunk=chunk)
    return delta, inp.u_interp + delta
