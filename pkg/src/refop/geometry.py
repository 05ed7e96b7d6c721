"""Domains with holes, boundary sampling and the discrete inverse deformation.

A domain is an axis-aligned box with circular or square holes.  Each hole
is sampled with ``K`` boundary points in a canonical order, so the i-th
point of a reference hole matches the i-th point of the perturbed hole.
Those matched pairs define the shift field handed to the network.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels

KINDS = ("circle", "square")
PARAMS_PER_COMPONENT = 3
DEFAULT_K = 64


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class BoxDomain:
    lo: tuple[float, ...] = (0.0, 0.0)
    hi: tuple[float, ...] = (1.0, 1.0)

    def __post_init__(self):
        if len(self.lo) != len(self.hi):
            raise GeometryError("lo and hi must have the same dimension")
        if any(a >= b for a, b in zip(self.lo, self.hi)):
            raise GeometryError(f"degenerate box {self.lo} -> {self.hi}")

    @property
    def dim(self) -> int:
        return len(self.lo)

    def wall_distance(self, x) -> np.ndarray:
        """Signed distance to the box walls, positive inside."""
        x = np.asarray(x, dtype=np.float64)
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        return np.minimum(x - lo, hi - x).min(axis=-1)


@dataclass(frozen=True)
class BoundaryComponent:
    kind: str
    params: tuple[float, float, float]
    points: np.ndarray = field(repr=False, compare=False)

    @property
    def K(self) -> int:
        return self.points.shape[0]

    def signed_distance(self, x) -> np.ndarray:
        """Distance to this component, negative inside it."""
        x = np.asarray(x, dtype=np.float64)
        cx, cy, r = self.params
        if self.kind == "circle":
            return np.hypot(x[..., 0] - cx, x[..., 1] - cy) - r
        # exact SDF of an axis-aligned square with half side r
        qx = np.abs(x[..., 0] - cx) - r
        qy = np.abs(x[..., 1] - cy) - r
        outside = np.hypot(np.maximum(qx, 0.0), np.maximum(qy, 0.0))
        return outside + np.minimum(np.maximum(qx, qy), 0.0)

    def wall_clearance(self, domain: BoxDomain) -> float:
        """Shortest distance between this component and the box walls."""
        cx, cy, r = self.params
        return min(cx - r - domain.lo[0], domain.hi[0] - cx - r,
                   cy - r - domain.lo[1], domain.hi[1] - cy - r)


def sample_boundary(kind: str, params, K: int = DEFAULT_K, min_points: int = 8) -> BoundaryComponent:
    """Sample ``K`` points on a circle or axis-aligned square.

    Circles start on the positive x-axis and advance by angle 2*pi/K.
    Squares start at the lower-left corner and advance counterclockwise by
    equal arclength.  Both orders are fixed, so two components of the same
    kind and ``K`` are matched index to index.
    """
    if kind not in KINDS:
        raise GeometryError(f"unsupported boundary kind {kind!r}")
    if K < min_points:
        raise GeometryError(f"need at least {min_points} boundary points, got {K}")
    params = tuple(float(p) for p in params)
    return BoundaryComponent(kind, params, _sample_points(kind, params, K))


def _sample_points(kind, params, K):
    cx, cy, r = params
    i = np.arange(K, dtype=np.float64)
    if kind == "circle":
        theta = 2.0 * np.pi * i / K
        return np.stack([cx + r * np.cos(theta), cy + r * np.sin(theta)], axis=1)
    if kind == "square":
        side = 2.0 * r
        s = 4.0 * side * i / K
        seg = np.minimum((s // side).astype(int), 3)
        t = s - seg * side
        # corners counterclockwise from (cx-r, cy-r)
        corners = np.array([[-r, -r], [r, -r], [r, r], [-r, r]])
        dirs = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
        pts = corners[seg] + dirs[seg] * t[:, None]
        return pts + np.array([cx, cy])
    raise GeometryError(f"unsupported boundary kind {kind!r}")


@dataclass(frozen=True)
class Geometry:
    domain: BoxDomain
    components: tuple[BoundaryComponent, ...]

    @classmethod
    def from_params(cls, kinds, params, K: int = DEFAULT_K,
                    domain: BoxDomain | None = None, check: bool = True) -> "Geometry":
        domain = domain or BoxDomain()
        params = np.asarray(params, dtype=np.float64).reshape(-1, PARAMS_PER_COMPONENT)
        if isinstance(kinds, str):
            kinds = [kinds] * len(params)
        if len(kinds) != len(params):
            raise GeometryError("one kind per component required")
        comps = tuple(sample_boundary(k, p, K) for k, p in zip(kinds, params))
        g = cls(domain, comps)
        if check:
            g.validate()
        return g

    @property
    def kinds(self) -> tuple[str, ...]:
        return tuple(c.kind for c in self.components)

    @property
    def param_vector(self) -> np.ndarray:
        if not self.components:
            return np.zeros(0)
        return np.concatenate([np.asarray(c.params) for c in self.components])

    @property
    def boundary_points(self) -> np.ndarray:
        return np.concatenate([c.points for c in self.components], axis=0)

    def validate(self, margin: float = 0.0):
        """Raise unless components sit strictly inside the box and apart."""
        for c in self.components:
            if c.wall_clearance(self.domain) <= margin:
                raise GeometryError(f"component {c.params} touches the walls")
        for i, a in enumerate(self.components):
            for b in self.components[i + 1:]:
                if _component_gap(a, b) <= margin:
                    raise GeometryError(f"components {a.params} and {b.params} overlap")

    def d_max(self) -> float:
        """Shortest distance from any component to the walls."""
        return min(c.wall_clearance(self.domain) for c in self.components)


def _component_gap(a: BoundaryComponent, b: BoundaryComponent) -> float:
    if a.kind == b.kind == "circle":
        return math.dist(a.params[:2], b.params[:2]) - a.params[2] - b.params[2]
    if a.kind == b.kind == "square":
        gx = abs(a.params[0] - b.params[0]) - a.params[2] - b.params[2]
        gy = abs(a.params[1] - b.params[1]) - a.params[2] - b.params[2]
        if gx > 0 and gy > 0:
            return math.hypot(gx, gy)
        return max(gx, gy)
    # mixed kinds: conservative check on the sampled outline
    return float(min(b.signed_distance(a.points).min(), a.signed_distance(b.points).min()))


def signed_distance(g: Geometry, x) -> np.ndarray:
    """Positive inside the box and outside every hole; zero on boundaries."""
    d = g.domain.wall_distance(x)
    for c in g.components:
        d = np.minimum(d, c.signed_distance(x))
    return d


def gaussian_weight(t, gamma: float):
    """exp(-t^2 / gamma^2); ``gamma=inf`` gives 1 everywhere."""
    t = np.asarray(t, dtype=np.float64)
    if math.isinf(gamma):
        return np.ones_like(t)
    return np.exp(-(t * t) / (gamma * gamma))


def cutoff_eta(d, d_max: float):
    """Smooth wall cutoff: 0 at d=0, exp(1 - d_max^2/d^2) below d_max, 1 beyond."""
    d = np.asarray(d, dtype=np.float64)
    out = np.ones_like(d)
    inner = (d > 0.0) & (d < d_max)
    di = np.where(inner, d, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        # d*d can underflow to 0 for tiny d; exp(-inf) = 0 is the right limit
        out = np.where(inner, np.exp(1.0 - d_max * d_max / (di * di)), out)
    return np.where(d <= 0.0, 0.0, out)


@dataclass(frozen=True)
class DeformationField:
    shifts: np.ndarray
    gamma_phi: float
    d_max: float

    def norm(self) -> float:
        """RMS shift length, a parameter-free geometric distance."""
        return float(np.sqrt((self.shifts ** 2).sum(axis=1).mean()))


def check_matching(ref: Geometry, query: Geometry):
    if len(ref.components) != len(query.components):
        raise GeometryError(
            f"component count mismatch: {len(ref.components)} vs {len(query.components)}")
    for i, (a, b) in enumerate(zip(ref.components, query.components)):
        if a.kind != b.kind or a.K != b.K:
            raise GeometryError(
                f"component {i} mismatch: {a.kind}/{a.K} vs {b.kind}/{b.K}")


def construct_phi(ref: Geometry, query: Geometry, query_nodes, gamma_phi: float = 0.1) -> DeformationField:
    """Shift every query node toward where it sits in the reference domain.

    Each node copies the shift (reference point minus query point) of its
    nearest sampled query boundary point, damped by a Gaussian of the
    distance to that point and by the wall cutoff.
    """
    check_matching(ref, query)
    if not query.components:
        x = np.asarray(query_nodes, dtype=np.float64)
        return DeformationField(np.zeros_like(x), gamma_phi, math.inf)
    d_max = query.d_max()
    if d_max <= 0.0:
        raise GeometryError("a query component touches the walls (d_max <= 0)")
    x = np.asarray(query_nodes, dtype=np.float64)
    bq = query.boundary_points
    br = ref.boundary_points
    idx, dist = _kernels.nearest_point(x, bq)
    s = br[idx] - bq[idx]
    wall = np.maximum(query.domain.wall_distance(x), 0.0)
    scale = gaussian_weight(dist, gamma_phi) * cutoff_eta(wall, d_max)
    return DeformationField(s * scale[:, None], gamma_phi, d_max)


def geometric_distance(p_r, p_q) -> float:
    """Euclidean distance between two geometry parameter vectors."""
    p_r = np.asarray(p_r, dtype=np.float64).ravel()
    p_q = np.asarray(p_q, dtype=np.float64).ravel()
    if p_r.shape != p_q.shape:
        raise GeometryError(f"parameter length mismatch: {p_r.size} vs {p_q.size}")
    return float(np.linalg.norm(p_q - p_r))
