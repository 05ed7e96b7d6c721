from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from refop.datagen import GenConfig, generate_pairs
from refop.geometry import geometric_distance
from refop.pairing import PairingError, PairMap, pair_knn, pair_natural, prepare_pair, prepare_pairs


def stub(i, params, kinds=("circle",)):
    return SimpleNamespace(id=i, params=np.asarray(params, dtype=float),
                           geometry=SimpleNamespace(kinds=tuple(kinds)))


def brute_knn(q, pool, k, exclude_self):
    cands = [(float(np.linalg.norm(p.params - q.params)), p.id) for p in pool
             if tuple(p.geometry.kinds) == tuple(q.geometry.kinds) and not (exclude_self and p.id == q.id)]
    return [(q.id, i, d) for d, i in sorted(cands)[:k]]


class TestNatural:
    def test_one_tag_two_entries(self):
        pm = pair_natural([stub(0, [0, 0, 1]), stub(1, [0.3, 0.4, 1])], [5, 5])
        assert pm.entries == [(0, 1, pytest.approx(0.5)), (1, 0, pytest.approx(0.5))]

    def test_involution_and_distance(self):
        rng = np.random.default_rng(0)
        samples = [stub(i, rng.uniform(size=3)) for i in range(20)]
        pm = pair_natural(samples, [i // 2 for i in range(20)])
        assert len(pm) == 20
        got = {(q, r) for q, r, _ in pm.entries}
        assert all((r, q) in got for q, r in got)
        by_id = {s.id: s for s in samples}
        for q, r, d in pm.entries:
            assert d == geometric_distance(by_id[r].params, by_id[q].params)

    def test_unmatched_tag(self):
        with pytest.raises(PairingError):
            pair_natural([stub(0, [0]), stub(1, [1]), stub(2, [2])], [0, 0, 1])


class TestKnn:
    def test_simple_nearest(self):
        pool = [stub(0, [0]), stub(1, [1]), stub(2, [3])]
        pm = pair_knn([pool[1]], pool, k=1, exclude_self=True)
        assert pm.entries == [(1, 0, 1.0)]

    def test_self_when_allowed(self):
        pool = [stub(0, [0]), stub(1, [1])]
        assert pair_knn([pool[1]], pool, k=1, exclude_self=False).entries == [(1, 1, 0.0)]

    def test_tie_lower_id(self):
        pool = [stub(7, [2.0]), stub(3, [0.0]), stub(5, [1.0])]
        pm = pair_knn([pool[2]], pool, k=1)
        assert pm.entries[0][1] == 3

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.integers(1, 4), st.booleans())
    def test_matches_brute_force(self, seed, k, excl):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(5, 60))
        # coarse grid values make ties common
        pool = [stub(int(i), rng.integers(0, 4, size=3) / 4, kinds=("circle",) * int(rng.integers(1, 3)))
                for i in rng.permutation(1000)[:n]]
        queries = pool[: n // 2]
        try:
            pm = pair_knn(queries, pool, k, excl)
        except PairingError:
            assert any(not brute_knn(q, pool, k, excl) for q in queries)
            return
        expect = [e for q in queries for e in brute_knn(q, pool, k, excl)]
        assert [(q, r) for q, r, _ in pm.entries] == [(q, r) for q, r, _ in expect]
        np.testing.assert_allclose([d for *_, d in pm.entries], [d for *_, d in expect], rtol=1e-15)

    def test_large_pool_brute_force(self):
        rng = np.random.default_rng(1)
        pool = [stub(i, rng.uniform(size=3)) for i in range(1000)]
        queries = pool[::50]
        pm = pair_knn(queries, pool, k=3)
        expect = [e for q in queries for e in brute_knn(q, pool, 3, True)]
        assert [(q, r) for q, r, _ in pm.entries] == [(q, r) for q, r, _ in expect]

    def test_no_eligible(self):
        with pytest.raises(PairingError):
            pair_knn([stub(0, [0])], [stub(0, [0])], k=1, exclude_self=True)
        with pytest.raises(PairingError):
            pair_knn([stub(0, [0, 0, 1], ("square",))], [stub(1, [0, 0, 1])], k=1)
        with pytest.raises(PairingError):
            pair_knn([stub(0, [0])], [], k=1)


def test_pairmap_roundtrip():
    pm = PairMap([(1, 2, 0.125), (2, 1, 0.125)], "knn", 2)
    assert PairMap.from_dict(pm.to_dict()) == pm


@pytest.fixture(scope="module")
def small_set():
    return generate_pairs(GenConfig(n_pairs=3, grid=24, seed=5))


def test_prepare_pairs(small_set):
    samples, pm = small_set
    exs = prepare_pairs(samples, pm)
    assert len(exs) == len(pm)
    for ex in exs:
        assert ex.u_interp.shape == ex.target.shape == (ex.n_nodes, 1)
        assert ex.shifts.shape == (ex.n_nodes, 2)
        assert ex.param_diff.shape[1] == 3


def test_identical_pair_has_zero_baseline_error(small_set):
    s = small_set[0][0]
    ex = prepare_pair(s, s)
    assert np.all(ex.shifts == 0) and np.array_equal(ex.u_interp, ex.target)
    assert ex.distance == 0.0


def test_unknown_sample_in_pairmap(small_set):
    with pytest.raises(PairingError):
        prepare_pairs(small_set[0], PairMap([(0, 99, 0.0)]))
