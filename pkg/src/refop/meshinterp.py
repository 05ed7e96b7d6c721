"""Pushforward of a reference solution by piecewise-linear interpolation.

The reference nodes are triangulated (Delaunay) and values are carried to
shifted query positions with barycentric weights.  Queries outside the
convex hull take the value of the nearest reference node.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import ConvexHull, Delaunay, QhullError, cKDTree

from . import _kernels

BARY_TOL = 1e-10


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class TriMesh:
    points: np.ndarray
    triangles: np.ndarray
    _tri: Delaunay
    _tree: cKDTree

    def areas(self) -> np.ndarray:
        p = self.points[self.triangles]
        a = p[:, 1] - p[:, 0]
        b = p[:, 2] - p[:, 0]
        return 0.5 * (a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])


def triangulate(points) -> TriMesh:
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 2:
        raise MeshError(f"expected an N x 2 array, got shape {points.shape}")
    if points.shape[0] < 3:
        raise MeshError("need at least 3 points")
    if np.unique(points, axis=0).shape[0] != points.shape[0]:
        raise MeshError("duplicate points")
    try:
        tri = Delaunay(points)
    except QhullError as exc:
        raise MeshError(f"degenerate point set: {exc}") from None
    simplices = tri.simplices.astype(np.int64)
    # orient every triangle counterclockwise
    p = points[simplices]
    cross = ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
             - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0]))
    flip = cross < 0
    simplices[flip] = simplices[flip][:, [0, 2, 1]]
    return TriMesh(points, simplices, tri, cKDTree(points))


def hull_area(points) -> float:
    return float(ConvexHull(np.asarray(points, dtype=np.float64)).volume)


def interpolate(mesh: TriMesh, values, queries) -> np.ndarray:
    """Barycentric-linear interpolation with nearest-node fallback."""
    values = np.asarray(values, dtype=np.float64)
    squeeze = values.ndim == 1
    if squeeze:
        values = values[:, None]
    if values.shape[0] != mesh.points.shape[0]:
        raise MeshError(f"{values.shape[0]} values for {mesh.points.shape[0]} mesh points")
    queries = np.asarray(queries, dtype=np.float64).reshape(-1, 2)

    tri = mesh._tri
    dist, nearest = mesh._tree.query(queries)
    simplex = tri.find_simplex(queries, tol=BARY_TOL)
    # nodal hits are copied so values at the data points are exact
    on_node = dist == 0.0
    inside = (simplex >= 0) & ~on_node
    fallback = (simplex < 0) | on_node
    out = np.empty((queries.shape[0], values.shape[1]))

    if inside.any():
        s = simplex[inside]
        T = tri.transform[s]
        b = np.einsum("mij,mj->mi", T[:, :2], queries[inside] - T[:, 2])
        w = np.column_stack([b, 1.0 - b.sum(axis=1)])
        # barycentric coords can leave [0, 1] by the find_simplex tolerance
        w = np.clip(w, 0.0, 1.0)
        w /= w.sum(axis=1, keepdims=True)
        out[inside] = _kernels.barycentric_gather(tri.simplices[s], w, values)
    out[fallback] = values[nearest[fallback]]
    return out[:, 0] if squeeze else out


def pushforward(ref_nodes, ref_values, query_nodes, shifts, mesh: TriMesh | None = None) -> np.ndarray:
    """Evaluate the reference field at ``query_nodes + shifts``."""
    query_nodes = np.asarray(query_nodes, dtype=np.float64)
    shifts = np.asarray(shifts, dtype=np.float64)
    if shifts.shape != query_nodes.shape:
        raise MeshError(f"shift shape {shifts.shape} != node shape {query_nodes.shape}")
    mesh = mesh if mesh is not None else triangulate(ref_nodes)
    return interpolate(mesh, ref_values, query_nodes + shifts)
