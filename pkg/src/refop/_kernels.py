"""Hot preprocessing loops, compiled with numba when available.

Every kernel has two implementations with identical results: a numba
``@njit`` version and a vectorised numpy version.  The active one is
picked at import time; set ``REFOP_DISABLE_NUMBA=1`` to force numpy.
Both stay importable as ``NUMBA_KERNELS`` / ``NUMPY_KERNELS`` so tests
and ``benchmarks/bench_kernels.py`` can compare them directly.
"""

import math
import os

import numpy as np

try:
    import numba
    from numba import njit, prange
    HAVE_NUMBA = True
    if "NUMBA_THREADING_LAYER" not in os.environ:
        numba.config.THREADING_LAYER = "workqueue"
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("REFOP_DISABLE_NUMBA", "0") not in ("1", "true", "yes")

KIND_CIRCLE = 0
KIND_SQUARE = 1

# rows of the distance matrix handled at once by the numpy path
_CHUNK = 2048


# ---------------------------------------------------------------------------
# nearest boundary point
# ---------------------------------------------------------------------------

def _nearest_point_np(nodes, points):
    n = nodes.shape[0]
    idx = np.empty(n, dtype=np.int64)
    dist = np.empty(n, dtype=np.float64)
    for start in range(0, n, _CHUNK):
        block = nodes[start:start + _CHUNK]
        d2 = ((block[:, None, :] - points[None, :, :]) ** 2).sum(axis=-1)
        # argmin returns the first minimum: lowest index wins ties
        j = np.argmin(d2, axis=1)
        idx[start:start + _CHUNK] = j
        dist[start:start + _CHUNK] = np.sqrt(d2[np.arange(block.shape[0]), j])
    return idx, dist


def _nearest_point_nb_impl(nodes, points):
    n = nodes.shape[0]
    m = points.shape[0]
    dim = nodes.shape[1]
    idx = np.empty(n, dtype=np.int64)
    dist = np.empty(n, dtype=np.float64)
    for i in prange(n):
        best = np.inf
        best_j = 0
        for j in range(m):
            d2 = 0.0
            for c in range(dim):
                t = nodes[i, c] - points[j, c]
                d2 += t * t
            if d2 < best:
                best = d2
                best_j = j
        idx[i] = best_j
        dist[i] = math.sqrt(best)
    return idx, dist


# ---------------------------------------------------------------------------
# first boundary crossing along a grid link
# ---------------------------------------------------------------------------

def _link_fraction_np(px, py, dx, dy, kinds, params):
    """Smallest t in (0, 1] with p + t*d on a component boundary, else inf."""
    n = px.shape[0]
    best = np.full(n, np.inf)
    for c in range(kinds.shape[0]):
        cx, cy, r = params[c]
        if kinds[c] == KIND_CIRCLE:
            ox = px - cx
            oy = py - cy
            a = dx * dx + dy * dy
            b = 2.0 * (dx * ox + dy * oy)
            cc = ox * ox + oy * oy - r * r
            disc = b * b - 4.0 * a * cc
            ok = disc >= 0.0
            sq = np.sqrt(np.where(ok, disc, 0.0))
            t1 = (-b - sq) / (2.0 * a)
            t2 = (-b + sq) / (2.0 * a)
            for t in (t1, t2):
                hit = ok & (t > 0.0) & (t <= 1.0)
                best = np.where(hit & (t < best), t, best)
        else:
            t_enter = np.full(n, -np.inf)
            t_exit = np.full(n, np.inf)
            inside = np.ones(n, dtype=bool)
            for p, d, cen in ((px, dx, cx), (py, dy, cy)):
                lo = cen - r
                hi = cen + r
                if d == 0.0:
                    inside &= (p >= lo) & (p <= hi)
                else:
                    ta = (lo - p) / d
                    tb = (hi - p) / d
                    t_enter = np.maximum(t_enter, np.minimum(ta, tb))
                    t_exit = np.minimum(t_exit, np.maximum(ta, tb))
            hit = inside & (t_enter <= t_exit) & (t_enter > 0.0) & (t_enter <= 1.0)
            best = np.where(hit & (t_enter < best), t_enter, best)
            # node inside a square (annulus-style domains never use squares)
            hit2 = inside & (t_enter <= 0.0) & (t_exit > 0.0) & (t_exit <= 1.0)
            best = np.where(hit2 & (t_exit < best), t_exit, best)
    return best


def _link_fraction_nb_impl(px, py, dx, dy, kinds, params):
    n = px.shape[0]
    best = np.full(n, np.inf)
    for i in prange(n):
        b_i = np.inf
        for c in range(kinds.shape[0]):
            cx = params[c, 0]
            cy = params[c, 1]
            r = params[c, 2]
            if kinds[c] == KIND_CIRCLE:
                ox = px[i] - cx
                oy = py[i] - cy
                a = dx * dx + dy * dy
                b = 2.0 * (dx * ox + dy * oy)
                cc = ox * ox + oy * oy - r * r
                disc = b * b - 4.0 * a * cc
                if disc >= 0.0:
                    sq = math.sqrt(disc)
                    t1 = (-b - sq) / (2.0 * a)
                    t2 = (-b + sq) / (2.0 * a)
                    if t1 > 0.0 and t1 <= 1.0 and t1 < b_i:
                        b_i = t1
                    if t2 > 0.0 and t2 <= 1.0 and t2 < b_i:
                        b_i = t2
            else:
                t_enter = -np.inf
                t_exit = np.inf
                inside = True
                for axis in range(2):
                    if axis == 0:
                        p = px[i]
                        d = dx
                        cen = cx
                    else:
                        p = py[i]
                        d = dy
                        cen = cy
                    lo = cen - r
                    hi = cen + r
                    if d == 0.0:
                        if p < lo or p > hi:
                            inside = False
                    else:
                        ta = (lo - p) / d
                        tb = (hi - p) / d
                        t_enter = max(t_enter, min(ta, tb))
                        t_exit = min(t_exit, max(ta, tb))
                if inside and t_enter <= t_exit:
                    if t_enter > 0.0 and t_enter <= 1.0 and t_enter < b_i:
                        b_i = t_enter
                    elif t_enter <= 0.0 and t_exit > 0.0 and t_exit <= 1.0 and t_exit < b_i:
                        b_i = t_exit
        best[i] = b_i
    return best


# ---------------------------------------------------------------------------
# barycentric gather
# ---------------------------------------------------------------------------

def _barycentric_gather_np(simplices, weights, values):
    # weights: M x 3, simplices: M x 3 vertex ids, values: N x d
    return np.einsum("mk,mkd->md", weights, values[simplices])


def _barycentric_gather_nb_impl(simplices, weights, values):
    m = simplices.shape[0]
    d = values.shape[1]
    out = np.zeros((m, d))
    for i in prange(m):
        for k in range(3):
            w = weights[i, k]
            v = simplices[i, k]
            for c in range(d):
                out[i, c] += w * values[v, c]
    return out


NUMPY_KERNELS = {
    "nearest_point": _nearest_point_np,
    "link_fraction": _link_fraction_np,
    "barycentric_gather": _barycentric_gather_np,
}

if HAVE_NUMBA:
    _jit = njit(cache=True, parallel=True)
    NUMBA_KERNELS = {
        "nearest_point": _jit(_nearest_point_nb_impl),
        "link_fraction": _jit(_link_fraction_nb_impl),
        "barycentric_gather": _jit(_barycentric_gather_nb_impl),
    }
else:  # pragma: no cover
    NUMBA_KERNELS = dict(NUMPY_KERNELS)

_ACTIVE = NUMBA_KERNELS if USE_NUMBA else NUMPY_KERNELS


def nearest_point(nodes, points):
    """Index of and distance to the nearest row of ``points`` for each node.

    Ties go to the lowest index.
    """
    nodes = np.ascontiguousarray(nodes, dtype=np.float64)
    points = np.ascontiguousarray(points, dtype=np.float64)
    return _ACTIVE["nearest_point"](nodes, points)


def link_fraction(px, py, dx, dy, kinds, params):
    return _ACTIVE["link_fraction"](
        np.ascontiguousarray(px, dtype=np.float64),
        np.ascontiguousarray(py, dtype=np.float64),
        float(dx), float(dy),
        np.ascontiguousarray(kinds, dtype=np.int64),
        np.ascontiguousarray(params, dtype=np.float64).reshape(-1, 3),
    )


def barycentric_gather(simplices, weights, values):
    return _ACTIVE["barycentric_gather"](
        np.ascontiguousarray(simplices, dtype=np.int64),
        np.ascontiguousarray(weights, dtype=np.float64),
        np.ascontiguousarray(values, dtype=np.float64),
    )
