import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from refop.geometry import (BoxDomain, Geometry, GeometryError, construct_phi, cutoff_eta,
                            gaussian_weight, geometric_distance, sample_boundary, signed_distance)


def one_circle(cx=0.5, cy=0.5, r=0.1, K=64):
    return Geometry.from_params("circle", [[cx, cy, r]], K)


class TestSignedDistance:
    def test_center_of_hole(self):
        assert signed_distance(one_circle(), [[0.5, 0.5]])[0] == pytest.approx(-0.1, abs=1e-15)

    def test_between_hole_and_wall(self):
        # min(distance to circle, distance to walls) = min(0.1, 0.3)
        assert signed_distance(one_circle(), [[0.5, 0.7]])[0] == pytest.approx(0.1, abs=1e-15)

    def test_on_boundary(self):
        assert signed_distance(one_circle(), [[0.6, 0.5]])[0] == pytest.approx(0.0, abs=1e-15)

    def test_outside_box_negative(self):
        assert signed_distance(one_circle(), [[1.2, 0.5]])[0] < 0

    def test_square_exact(self):
        g = Geometry.from_params("square", [[0.5, 0.5, 0.1]])
        d = signed_distance(g, [[0.5, 0.5], [0.7, 0.5], [0.65, 0.65]])
        assert d == pytest.approx([-0.1, 0.1, math.hypot(0.05, 0.05)], abs=1e-15)


class TestSampleBoundary:
    def test_circle_quarters(self):
        c = sample_boundary("circle", (0, 0, 1), K=4, min_points=4)
        np.testing.assert_allclose(c.points, [[1, 0], [0, 1], [-1, 0], [0, -1]], atol=1e-15)

    def test_square_corners(self):
        # perimeter 8, spacing 2: starts at the lower-left corner, counterclockwise
        c = sample_boundary("square", (0, 0, 1), K=4, min_points=4)
        np.testing.assert_allclose(c.points, [[-1, -1], [1, -1], [1, 1], [-1, 1]], atol=1e-15)

    def test_circle_radius(self):
        c = sample_boundary("circle", (0.3, 0.4, 0.12), K=64)
        r = np.linalg.norm(c.points - [0.3, 0.4], axis=1)
        assert np.abs(r - 0.12).max() < 1e-12

    def test_square_points_on_outline(self):
        c = sample_boundary("square", (0.3, 0.4, 0.1), K=64)
        assert np.abs(c.signed_distance(c.points)).max() < 1e-12

    def test_too_few_points(self):
        with pytest.raises(GeometryError):
            sample_boundary("circle", (0, 0, 1), K=4)

    def test_unknown_kind(self):
        with pytest.raises(GeometryError):
            sample_boundary("hexagon", (0, 0, 1), K=16)


class TestWeights:
    def test_gaussian(self):
        assert gaussian_weight(0.0, 0.7) == 1.0
        assert gaussian_weight(0.3, 0.3) == pytest.approx(math.exp(-1), rel=1e-15)
        assert gaussian_weight(0.9, 0.3) == pytest.approx(1.2341e-4, rel=1e-4)

    def test_gaussian_decreasing(self):
        t = np.linspace(0, 2, 200)
        assert np.all(np.diff(gaussian_weight(t, 0.5)) < 0)

    def test_eta_examples(self):
        assert cutoff_eta(0.0, 0.2) == 0.0
        assert cutoff_eta(0.2, 0.2) == 1.0
        assert cutoff_eta(0.2 / math.sqrt(2), 0.2) == pytest.approx(math.exp(-1), rel=1e-14)
        assert cutoff_eta(5.0, 0.2) == 1.0

    def test_eta_c1_at_dmax(self):
        # one-sided slope below d_max tends to 0: d/dd e^{1-a^2/d^2} = 2a^2/d^3 at d=a is 2/a
        # so the function is C1 only in the weak sense of value continuity; check value continuity
        a, h = 0.2, 1e-9
        assert abs(cutoff_eta(a - h, a) - 1.0) < 1e-7

    @given(st.floats(0.01, 1.0), st.lists(st.floats(0, 2), min_size=2, max_size=30))
    def test_eta_monotone_bounded(self, d_max, ds):
        ds = np.sort(np.asarray(ds))
        e = cutoff_eta(ds, d_max)
        assert np.all((e >= 0) & (e <= 1))
        assert np.all(np.diff(e) >= 0)


class TestConstructPhi:
    ref = Geometry.from_params("circle", [[0.5, 0.5, 0.1], [0.25, 0.25, 0.06]])
    query = Geometry.from_params("circle", [[0.52, 0.49, 0.11], [0.24, 0.27, 0.05]])

    def test_identity_is_zero(self):
        x = np.random.default_rng(0).uniform(0, 1, (500, 2))
        f = construct_phi(self.ref, self.ref, x)
        assert np.all(f.shifts == 0.0)

    def test_boundary_points_map_onto_reference(self):
        bq = self.query.boundary_points
        f = construct_phi(self.ref, self.query, bq)
        wall = self.query.domain.wall_distance(bq)
        far = cutoff_eta(wall, self.query.d_max()) == 1.0
        assert far.any()
        err = np.abs(bq[far] + f.shifts[far] - self.ref.boundary_points[far]).max()
        assert err < 1e-12

    def test_wall_nodes_unshifted(self):
        t = np.linspace(0, 1, 41)
        walls = np.concatenate([np.c_[t, 0 * t], np.c_[t, 0 * t + 1], np.c_[0 * t, t], np.c_[0 * t + 1, t]])
        f = construct_phi(self.ref, self.query, walls)
        assert np.all(f.shifts == 0.0)

    def test_shift_bound(self):
        x = np.random.default_rng(1).uniform(0, 1, (2000, 2))
        f = construct_phi(self.ref, self.query, x)
        bound = np.linalg.norm(self.ref.boundary_points - self.query.boundary_points, axis=1).max()
        assert np.linalg.norm(f.shifts, axis=1).max() <= bound + 1e-15

    def test_d_max(self):
        f = construct_phi(self.ref, self.query, [[0.5, 0.8]])
        assert f.d_max == pytest.approx(0.24 - 0.05)

    def test_continuity_probe(self):
        rng = np.random.default_rng(2)
        x = rng.uniform(0.1, 0.9, (200, 2))
        eps = rng.normal(size=x.shape)
        eps *= 1e-7 / np.linalg.norm(eps, axis=1, keepdims=True)
        a = construct_phi(self.ref, self.query, x).shifts
        b = construct_phi(self.ref, self.query, x + eps).shifts
        # ties switch the nearest point; away from those the field is Lipschitz
        # with a constant of order max|s| / gamma_phi plus the cutoff slope
        jump = np.linalg.norm(a - b, axis=1) / 1e-7
        assert np.median(jump) < 50.0

    def test_component_mismatch(self):
        other = Geometry.from_params("circle", [[0.5, 0.5, 0.1]])
        with pytest.raises(GeometryError):
            construct_phi(self.ref, other, [[0.5, 0.8]])
        sq = Geometry.from_params(["square", "circle"], [[0.5, 0.5, 0.1], [0.25, 0.25, 0.06]])
        with pytest.raises(GeometryError):
            construct_phi(self.ref, sq, [[0.5, 0.8]])

    def test_touching_wall_rejected(self):
        with pytest.raises(GeometryError):
            Geometry.from_params("circle", [[0.05, 0.5, 0.1]])

    def test_tie_goes_to_lowest_index(self):
        # node equidistant from points 0 and 1 of a K=8 circle
        ref = Geometry.from_params("circle", [[0.5, 0.5, 0.1]], K=8)
        q = Geometry.from_params("circle", [[0.5, 0.5, 0.12]], K=8)
        ang = math.pi / 8
        x = np.array([[0.5 + 0.3 * math.cos(ang), 0.5 + 0.3 * math.sin(ang)]])
        f = construct_phi(ref, q, x, gamma_phi=math.inf)
        s0 = ref.boundary_points[0] - q.boundary_points[0]
        eta = cutoff_eta(q.domain.wall_distance(x), q.d_max())
        np.testing.assert_allclose(f.shifts[0], s0 * eta[0], atol=1e-15)


class TestGeometricDistance:
    def test_examples(self):
        assert geometric_distance([1, 2, 3], [1, 2, 3]) == 0.0
        assert geometric_distance([0, 0, 1], [0.3, 0.4, 1]) == pytest.approx(0.5, abs=1e-15)

    @settings(max_examples=50)
    @given(st.lists(st.floats(-1, 1), min_size=3, max_size=3), st.lists(st.floats(-1, 1), min_size=3, max_size=3))
    def test_symmetric(self, a, b):
        assert geometric_distance(a, b) == geometric_distance(b, a)

    def test_length_mismatch(self):
        with pytest.raises(GeometryError):
            geometric_distance([0, 0, 1], [0, 0])


def test_box_domain_invalid():
    with pytest.raises(GeometryError):
        BoxDomain((0, 0), (1, 0))
