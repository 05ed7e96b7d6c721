"""The numba and numpy kernel paths must agree."""

import numpy as np
import pytest

from refop import _kernels as K


@pytest.fixture(scope="module")
def rng():
    return np.random.default_rng(0)


def test_nearest_point_agree(rng):
    nodes = rng.uniform(0, 1, (3000, 2))
    pts = rng.uniform(0, 1, (190, 2))
    i1, d1 = K.NUMPY_KERNELS["nearest_point"](nodes, pts)
    i2, d2 = K.NUMBA_KERNELS["nearest_point"](nodes, pts)
    assert np.array_equal(i1, i2)
    np.testing.assert_allclose(d1, d2, rtol=0, atol=1e-15)
    brute = np.linalg.norm(nodes[:, None] - pts[None], axis=-1)
    assert np.array_equal(i1, brute.argmin(axis=1))


def test_nearest_point_ties_lowest():
    pts = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]])
    for impl in (K.NUMPY_KERNELS, K.NUMBA_KERNELS):
        idx, dist = impl["nearest_point"](np.zeros((1, 2)), pts)
        assert idx[0] == 0 and dist[0] == 1.0


def test_link_fraction_agree(rng):
    kinds = np.array([K.KIND_CIRCLE, K.KIND_SQUARE, K.KIND_CIRCLE], dtype=np.int64)
    params = np.array([[0.3, 0.3, 0.1], [0.7, 0.6, 0.08], [0.4, 0.75, 0.06]])
    px, py = rng.uniform(0, 1, (2, 4000))
    for dx, dy in [(1 / 64, 0), (-1 / 64, 0), (0, 1 / 64), (0, -1 / 64)]:
        a = K.NUMPY_KERNELS["link_fraction"](px, py, dx, dy, kinds, params)
        b = K.NUMBA_KERNELS["link_fraction"](px, py, dx, dy, kinds, params)
        fin = np.isfinite(a)
        assert np.array_equal(fin, np.isfinite(b))
        np.testing.assert_allclose(a[fin], b[fin], rtol=1e-12, atol=1e-15)


def test_link_fraction_circle_exact():
    # from (0.5, 0.5) moving +x by 0.1 toward a circle of radius 0.05 at (0.6, 0.5)
    kinds = np.array([K.KIND_CIRCLE])
    params = np.array([[0.6, 0.5, 0.05]])
    for impl in (K.NUMPY_KERNELS, K.NUMBA_KERNELS):
        t = impl["link_fraction"](np.array([0.5]), np.array([0.5]), 0.1, 0.0, kinds, params)
        assert t[0] == pytest.approx(0.5, abs=1e-14)
        t = impl["link_fraction"](np.array([0.5]), np.array([0.5]), -0.1, 0.0, kinds, params)
        assert np.isinf(t[0])


def test_barycentric_gather_agree(rng):
    simplices = rng.integers(0, 500, (2000, 3))
    w = rng.dirichlet(np.ones(3), 2000)
    v = rng.normal(size=(500, 2))
    a = K.NUMPY_KERNELS["barycentric_gather"](simplices, w, v)
    b = K.NUMBA_KERNELS["barycentric_gather"](simplices, w, v)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-14)


def test_env_flag_selects_numpy():
    import subprocess
    import sys
    code = "from refop import _kernels as K; print(K.USE_NUMBA, K._ACTIVE is K.NUMPY_KERNELS)"
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True,
                         env={"REFOP_DISABLE_NUMBA": "1", "PATH": "/usr/bin:/bin"}, check=True)
    assert out.stdout.split() == ["False", "True"]
