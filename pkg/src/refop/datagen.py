"""Finite-difference Poisson data for reference/query training pairs.

Solves -lap(u) = f on a uniform grid over the unit box minus circular or
square holes, u = 0 on the walls and hole boundaries.  Grid links that cross
a hole boundary use the symmetric ghost-fluid treatment: the neighbour is
replaced by the boundary value at the exact crossing, which keeps the
matrix SPD (so CG applies) and the solution second-order accurate.  The
first-order alternative (``boundary="mask"``) zeroes masked neighbours.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, cg

from . import _kernels
from .geometry import BoxDomain, Geometry, GeometryError, signed_distance

log = logging.getLogger(__name__)

MAX_HOLES = 3
# crossings closer than this fraction of a cell are clamped
THETA_MIN = 1e-3


class SolverError(RuntimeError):
    pass


class GenerationError(RuntimeError):
    pass


@dataclass
class Sample:
    id: int
    nodes: np.ndarray
    values: np.ndarray
    geometry: Geometry
    pair_tag: int = -1

    @property
    def params(self) -> np.ndarray:
        return self.geometry.param_vector

    @property
    def n_components(self) -> int:
        return len(self.geometry.components)


@dataclass
class GenConfig:
    problem: str = "poisson-holes"
    grid: int = 64
    holes_min: int = 1
    holes_max: int = 3
    kind: str = "circle"
    radius_min: float = 0.05
    radius_max: float = 0.15
    center_shift: float = 0.05
    radius_shift: float = 0.02
    source: str = "one"
    n_pairs: int = 10
    seed: int = 0
    solver_tol: float = 1e-8
    K: int = 64
    boundary: str = "ghost"
    # annulus mode: inner radius is the perturbed parameter
    annulus_outer: float = 0.45
    annulus_inner: float = 0.2
    extra: dict = field(default_factory=dict)

    def validate(self):
        if self.problem not in ("poisson-holes", "annulus"):
            raise ValueError(f"unknown problem {self.problem!r}")
        if not 1 <= self.holes_min <= self.holes_max <= MAX_HOLES:
            raise ValueError(f"holes must lie in 1..{MAX_HOLES}, got {self.holes_min}..{self.holes_max}")
        if self.kind not in ("circle", "square"):
            raise ValueError(f"unknown hole kind {self.kind!r}")
        if self.source not in ("one", "zero"):
            raise ValueError(f"unknown source {self.source!r}")
        if self.boundary not in ("ghost", "mask"):
            raise ValueError(f"unknown boundary treatment {self.boundary!r}")
        if self.grid < 8 or self.n_pairs < 1 or self.K < 8:
            raise ValueError("grid >= 8, n_pairs >= 1 and K >= 8 required")
        if not 0 < self.radius_min <= self.radius_max:
            raise ValueError("bad radius range")

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# solver
# ---------------------------------------------------------------------------

def grid_nodes(grid: int, domain: BoxDomain | None = None):
    domain = domain or BoxDomain()
    xs = np.linspace(domain.lo[0], domain.hi[0], grid + 1)
    ys = np.linspace(domain.lo[1], domain.hi[1], grid + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    return X, Y


def _assemble(X, Y, unknown, groups, f, boundary):
    """Sparse 5-point operator and right-hand side on the unknown nodes.

    ``groups`` is a list of (kinds, params, value) boundary pieces; a link
    leaving the unknown set ends at the first crossing found among them, or
    at the neighbouring node itself if none is found (box walls).
    """
    n1, n2 = X.shape
    hx = X[1, 0] - X[0, 0]
    hy = Y[0, 1] - Y[0, 0]
    ids = -np.ones(X.shape, dtype=np.int64)
    ii, jj = np.nonzero(unknown)
    n = ii.size
    ids[ii, jj] = np.arange(n)

    diag = np.zeros(n)
    rhs = np.full(n, float(f))
    rows, cols = [], []
    for di, dj, h in ((1, 0, hx), (-1, 0, hx), (0, 1, hy), (0, -1, hy)):
        ni = ii + di
        nj = jj + dj
        valid = (ni >= 0) & (ni < n1) & (nj >= 0) & (nj < n2)
        nbr = np.full(n, -1, dtype=np.int64)
        nbr[valid] = ids[ni[valid], nj[valid]]
        inner = nbr >= 0
        rows.append(np.nonzero(inner)[0])
        cols.append(nbr[inner])
        diag[inner] += 1.0 / h ** 2

        cut = np.nonzero(~inner)[0]
        theta = np.ones(cut.size)
        value = np.zeros(cut.size)
        if cut.size:
            px = X[ii[cut], jj[cut]]
            py = Y[ii[cut], jj[cut]]
            for kinds, params, g in groups:
                if len(kinds) == 0:
                    continue
                t = _kernels.link_fraction(px, py, di * hx, dj * hy, kinds, params)
                closer = t < theta
                theta = np.where(closer, t, theta)
                value = np.where(closer, g, value)
            # mask mode keeps the boundary value but places it on the neighbour
            theta = np.maximum(theta, THETA_MIN) if boundary == "ghost" else np.ones(cut.size)
        diag[cut] += 1.0 / (theta * h ** 2)
        rhs[cut] += value / (theta * h ** 2)

    r = np.concatenate(rows)
    c = np.concatenate(cols)
    off = np.full(r.size, -1.0 / (hx * hy))
    if hx != hy:
        raise GeometryError("non-square grid cells are not supported")
    A = sp.csr_matrix((off, (r, c)), shape=(n, n)) + sp.diags(diag)
    return A.tocsr(), rhs, (ii, jj)


def _solve_spd(A, b, tol, maxiter=None):
    n = b.size
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), 0.0
    dinv = 1.0 / A.diagonal()
    M = LinearOperator((n, n), matvec=lambda v: dinv * v, dtype=np.float64)
    maxiter = maxiter or 20 * n
    x = np.zeros(n)
    # cg stops on the recursive residual; restart until the true one passes
    for _ in range(4):
        x, info = cg(A, b, x0=x, rtol=tol, atol=0.0, maxiter=maxiter, M=M)
        res = np.linalg.norm(b - A @ x) / bnorm
        if res <= tol:
            return x, res
    raise SolverError(f"CG did not reach relative residual {tol:g} (got {res:.3g}, info={info})")


def _kinds_params(geometry: Geometry):
    kinds = np.array([_kernels.KIND_CIRCLE if k == "circle" else _kernels.KIND_SQUARE
                      for k in geometry.kinds], dtype=np.int64)
    params = np.array([c.params for c in geometry.components], dtype=np.float64).reshape(-1, 3)
    return kinds, params


def solve_poisson(geometry: Geometry, grid: int = 64, f: float = 1.0, tol: float = 1e-8,
                  boundary: str = "ghost", id: int = -1, pair_tag: int = -1) -> Sample:
    """Solve -lap(u) = f with zero Dirichlet data; return the interior nodes."""
    X, Y = grid_nodes(grid, geometry.domain)
    pts = np.stack([X.ravel(), Y.ravel()], axis=1)
    unknown = (signed_distance(geometry, pts) > 0.0).reshape(X.shape)
    if not unknown.any():
        raise SolverError("no interior grid nodes")
    kinds, params = _kinds_params(geometry)
    A, b, (ii, jj) = _assemble(X, Y, unknown, [(kinds, params, 0.0)], f, boundary)
    u, res = _solve_spd(A, b, tol)
    nodes = np.stack([X[ii, jj], Y[ii, jj]], axis=1)
    return Sample(id, nodes, u[:, None], geometry, pair_tag)


def solve_annulus(grid: int = 128, inner: float = 0.2, outer: float = 0.45,
                  center=(0.5, 0.5), inner_value: float = 1.0, tol: float = 1e-10,
                  boundary: str = "ghost"):
    """Laplace problem between concentric circles: u=inner_value inside, 0 outside.

    Returns ``(nodes, values)``; the exact solution is
    ``inner_value * log(outer/r) / log(outer/inner)``.
    """
    X, Y = grid_nodes(grid)
    r = np.hypot(X - center[0], Y - center[1])
    unknown = (r > inner) & (r < outer)
    kind = np.array([_kernels.KIND_CIRCLE], dtype=np.int64)
    groups = [
        (kind, np.array([[center[0], center[1], inner]]), inner_value),
        (kind, np.array([[center[0], center[1], outer]]), 0.0),
    ]
    A, b, (ii, jj) = _assemble(X, Y, unknown, groups, 0.0, boundary)
    u, _ = _solve_spd(A, b, tol)
    nodes = np.stack([X[ii, jj], Y[ii, jj]], axis=1)
    return nodes, u


def annulus_exact(nodes, inner=0.2, outer=0.45, center=(0.5, 0.5), inner_value=1.0):
    r = np.hypot(nodes[:, 0] - center[0], nodes[:, 1] - center[1])
    return inner_value * np.log(outer / r) / np.log(outer / inner)


# ---------------------------------------------------------------------------
# paired generation
# ---------------------------------------------------------------------------

def _random_geometry(rng, cfg: GenConfig, margin: float, tries: int = 1000) -> Geometry:
    m = int(rng.integers(cfg.holes_min, cfg.holes_max + 1))
    for _ in range(tries):
        radii = rng.uniform(cfg.radius_min, cfg.radius_max, size=m)
        lo = radii + margin
        centers = rng.uniform(lo[:, None], 1.0 - lo[:, None], size=(m, 2))
        params = np.column_stack([centers, radii])
        g = Geometry.from_params(cfg.kind, params, cfg.K, check=False)
        try:
            g.validate(margin)
        except GeometryError:
            continue
        return g
    raise GenerationError(f"could not place {m} holes after {tries} tries")


def _perturb(rng, base: Geometry, cfg: GenConfig, margin: float, tries: int = 1000) -> Geometry:
    p = base.param_vector.reshape(-1, 3)
    for _ in range(tries):
        q = p.copy()
        q[:, :2] += rng.uniform(-cfg.center_shift, cfg.center_shift, size=(len(p), 2))
        q[:, 2] += rng.uniform(-cfg.radius_shift, cfg.radius_shift, size=len(p))
        if (q[:, 2] <= 0).any():
            continue
        g = Geometry.from_params(base.kinds, q, cfg.K, check=False)
        try:
            g.validate(margin)
        except GeometryError:
            continue
        return g
    raise GenerationError("could not perturb geometry within bounds")


def generate_pairs(cfg: GenConfig):
    """Solve ``cfg.n_pairs`` base geometries and their perturbed twins.

    Returns ``(samples, pairmap)``; samples ``2t`` and ``2t+1`` share pair
    tag ``t``.
    """
    from .pairing import pair_natural

    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    f = 1.0 if cfg.source == "one" else 0.0
    samples = []
    if cfg.problem == "annulus":
        return _generate_annulus(cfg, rng, f)
    margin = 2.0 / cfg.grid
    for t in range(cfg.n_pairs):
        base = _random_geometry(rng, cfg, margin)
        twin = _perturb(rng, base, cfg, margin)
        for k, g in enumerate((base, twin)):
            samples.append(solve_poisson(g, cfg.grid, f, cfg.solver_tol, cfg.boundary,
                                         id=2 * t + k, pair_tag=t))
        log.debug("pair %d: %d holes", t, len(base.components))
    return samples, pair_natural(samples, [s.pair_tag for s in samples])


def _generate_annulus(cfg: GenConfig, rng, f):
    # concentric Laplace pairs: the inner radius (value 1) is perturbed,
    # the outer circle (value 0) stays fixed and is not a sampled component
    from .pairing import pair_natural

    samples = []
    for t in range(cfg.n_pairs):
        r0 = cfg.annulus_inner + rng.uniform(-cfg.radius_shift, cfg.radius_shift)
        r1 = r0 + rng.uniform(-cfg.radius_shift, cfg.radius_shift)
        for k, r in enumerate((r0, r1)):
            nodes, u = solve_annulus(cfg.grid, r, cfg.annulus_outer, tol=cfg.solver_tol,
                                     boundary=cfg.boundary)
            g = Geometry.from_params("circle", [[0.5, 0.5, r]], cfg.K)
            samples.append(Sample(2 * t + k, nodes, u[:, None], g, t))
    return samples, pair_natural(samples, [s.pair_tag for s in samples])


def pair_distance_bound(holes: int, center_shift: float = 0.05, radius_shift: float = 0.02) -> float:
    return math.sqrt(holes * (2 * center_shift ** 2 + radius_shift ** 2))
