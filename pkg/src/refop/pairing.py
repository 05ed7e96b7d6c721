"""Reference/query pairing and per-pair preprocessing."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .geometry import DeformationField, construct_phi, geometric_distance
from .meshinterp import pushforward, triangulate


class PairingError(ValueError):
    pass


@dataclass
class PairMap:
    entries: list[tuple[int, int, float]] = field(default_factory=list)
    mode: str = "natural"
    k: int = 1

    def __len__(self):
        return len(self.entries)

    def to_dict(self) -> dict:
        return {"mode": self.mode, "k": self.k,
                "entries": [[int(q), int(r), float(d)] for q, r, d in self.entries]}

    @classmethod
    def from_dict(cls, d: dict) -> "PairMap":
        return cls([(int(q), int(r), float(dist)) for q, r, dist in d["entries"]],
                   d.get("mode", "natural"), int(d.get("k", 1)))


def _signature(sample):
    return tuple(sample.geometry.kinds)


def pair_natural(samples, pair_tags) -> PairMap:
    """Pair the two samples sharing each tag, in both directions."""
    if len(samples) != len(pair_tags):
        raise PairingError("one pair tag per sample required")
    groups = defaultdict(list)
    for s, tag in zip(samples, pair_tags):
        groups[tag].append(s)
    entries = []
    for tag in sorted(groups):
        members = groups[tag]
        if len(members) != 2:
            raise PairingError(f"pair tag {tag} has {len(members)} samples, expected 2")
        a, b = members
        d = geometric_distance(a.params, b.params)
        entries.append((a.id, b.id, d))
        entries.append((b.id, a.id, d))
    return PairMap(entries, "natural", 1)


def pair_knn(queries, pool, k: int = 1, exclude_self: bool = True) -> PairMap:
    """Pair every query with its ``k`` nearest pool samples by parameter distance.

    Only samples with the same component kinds (hence the same parameter
    length) are eligible.  Ties go to the lower sample id.
    """
    if not pool:
        raise PairingError("empty reference pool")
    if k < 1:
        raise PairingError("k must be >= 1")
    by_sig = defaultdict(list)
    for s in pool:
        by_sig[_signature(s)].append(s)
    stacked = {sig: (np.array([s.id for s in group]), np.stack([s.params for s in group]))
               for sig, group in by_sig.items()}

    entries = []
    for q in queries:
        sig = _signature(q)
        if sig not in stacked:
            raise PairingError(f"no reference with components {sig} for query {q.id}")
        ids, params = stacked[sig]
        d = np.linalg.norm(params - q.params, axis=1)
        keep = ids != q.id if exclude_self else np.ones(ids.size, dtype=bool)
        if not keep.any():
            raise PairingError(f"no eligible reference for query {q.id}")
        ids_k, d_k = ids[keep], d[keep]
        order = np.lexsort((ids_k, d_k))[:k]
        entries.extend((int(q.id), int(ids_k[j]), float(d_k[j])) for j in order)
    return PairMap(entries, "knn", k)


@dataclass
class PairedExample:
    """One preprocessed (reference, query) pair, ready for the network."""
    query_id: int
    ref_id: int
    nodes: np.ndarray        # query nodes, N x n
    target: np.ndarray       # query solution, N x d_s
    u_interp: np.ndarray     # pushforward of the reference, N x d_s
    shifts: np.ndarray       # phi^{-1}(x) - x, N x n
    param_diff: np.ndarray   # m x p, query minus reference per component
    distance: float

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]


def prepare_pair(ref, query, gamma_phi: float = 0.1, mesh=None) -> PairedExample:
    field_: DeformationField = construct_phi(ref.geometry, query.geometry, query.nodes, gamma_phi)
    mesh = mesh if mesh is not None else triangulate(ref.nodes)
    u_interp = pushforward(ref.nodes, ref.values, query.nodes, field_.shifts, mesh=mesh)
    m = len(query.geometry.components)
    diff = (query.params - ref.params).reshape(m, -1)
    return PairedExample(
        query_id=int(query.id), ref_id=int(ref.id),
        nodes=np.asarray(query.nodes, dtype=np.float64),
        target=np.asarray(query.values, dtype=np.float64).reshape(query.nodes.shape[0], -1),
        u_interp=u_interp.reshape(query.nodes.shape[0], -1),
        shifts=field_.shifts, param_diff=diff,
        distance=geometric_distance(ref.params, query.params),
    )


def prepare_pairs(samples, pairmap: PairMap, gamma_phi: float = 0.1) -> list[PairedExample]:
    """Preprocess every entry of ``pairmap``; reference meshes are reused."""
    by_id = {s.id: s for s in samples}
    meshes = {}
    out = []
    for q, r, _ in pairmap.entries:
        if q not in by_id or r not in by_id:
            raise PairingError(f"pair ({q}, {r}) references an unknown sample")
        if r not in meshes:
            meshes[r] = triangulate(by_id[r].nodes)
        out.append(prepare_pair(by_id[r], by_id[q], gamma_phi, mesh=meshes[r]))
    return out
