"""Isotropic divergence-free noise on the unit sphere."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stochtrans.sphere_s2 import (
    FULL_TRACE,
    SphereNoiseSpec,
    SphereSpecError,
    empirical_sphere_covariance,
    exp_map,
    geodesic_distance,
    normalize_points,
    pair_correlation_at_angle,
    parallel_transport,
    random_rotation,
    sphere_band_family,
    sphere_covariance_kernel,
    sphere_diagonal_covariance,
    sphere_diffusivity,
    sphere_flow,
    sphere_sample_increment,
    sphere_uniformity_test,
    tangent_frame,
    uniform_sphere_points,
)

unit_vectors = st.tuples(*[st.floats(-1, 1, allow_nan=False)] * 3).filter(
    lambda v: np.linalg.norm(v) > 0.1).map(lambda v: normalize_points(np.array(v)))


class TestSpecOracles:
    def test_single_degree_constant(self):
        """[DERIVED] theta_1 = 1 only: c = 3 / (8 pi)."""
        spec = SphereNoiseSpec([0.0, 1.0])
        assert sphere_diagonal_covariance(spec) == pytest.approx(3 / (8 * np.pi), rel=1e-14)

    def test_band_normalization(self):
        """[TRIVIAL]"""
        spec = sphere_band_family(2, 8)
        assert sphere_diagonal_covariance(spec) == pytest.approx(1.0, rel=1e-14)
        assert spec.trace_sum() == pytest.approx(FULL_TRACE, rel=1e-14)
        assert spec.to_json()["L_max"] == 8

    def test_invalid(self):
        with pytest.raises(SphereSpecError):
            SphereNoiseSpec([0.0])
        with pytest.raises(SphereSpecError):
            SphereNoiseSpec([0.0, -1.0])
        with pytest.raises(SphereSpecError):
            sphere_band_family(3, 2)
        with pytest.raises(SphereSpecError):
            SphereNoiseSpec([0.0, 0.0]).normalized()


class TestKernelOracles:
    def test_diagonal_is_projector(self):
        """[DERIVED] Q(x, x) = c (I - x x^T)."""
        spec = sphere_band_family(1, 5)
        for x in uniform_sphere_points(5, np.random.default_rng(0)):
            np.testing.assert_allclose(sphere_covariance_kernel(spec, x, x), np.eye(3) - np.outer(x, x), atol=1e-12)

    def test_two_routes_agree(self):
        """[DERIVED] basis sum against the differentiated addition theorem."""
        spec = sphere_band_family(2, 8)
        pts = uniform_sphere_points(8, np.random.default_rng(1))
        for x, y in zip(pts[:4], pts[4:]):
            np.testing.assert_allclose(sphere_covariance_kernel(spec, x, y, "sum"),
                                       sphere_covariance_kernel(spec, x, y, "legendre"), atol=1e-12)

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            sphere_covariance_kernel(sphere_band_family(1, 2), [0, 0, 1], [0, 1, 0], "fft")

    def test_pair_correlation_at_zero(self):
        """[TRIVIAL] ||P_x||_F = sqrt(2) when c = 1."""
        assert pair_correlation_at_angle(sphere_band_family(2, 8), 0.0) == pytest.approx(np.sqrt(2), rel=1e-12)

    @settings(max_examples=15, deadline=None)
    @given(unit_vectors, unit_vectors, st.integers(0, 2**31))
    def test_rotation_equivariance(self, x, y, seed):
        spec = sphere_band_family(1, 4)
        R = random_rotation(np.random.default_rng(seed))
        lhs = sphere_covariance_kernel(spec, R @ x, R @ y)
        np.testing.assert_allclose(lhs, R @ sphere_covariance_kernel(spec, x, y) @ R.T, atol=1e-11)

    @pytest.mark.parametrize("point", [(0, 0, 1), (1, 0, 0), (0.3, -0.5, 0.8)])
    def test_empirical_covariance(self, point):
        """[PAPER] A(x) = c P_x at every point."""
        chk = empirical_sphere_covariance(sphere_band_family(2, 8), point, 40000, np.random.default_rng(2))
        assert chk.within(4.0) and chk.c == pytest.approx(1.0)


class TestGeometry:
    @settings(max_examples=30, deadline=None)
    @given(unit_vectors)
    def test_tangent_frame_orthonormal(self, x):
        F = tangent_frame(x)
        np.testing.assert_allclose(F @ F.T, np.eye(2), atol=1e-12)
        np.testing.assert_allclose(F @ x, 0.0, atol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(unit_vectors, st.floats(0.0, 3.0), st.floats(0, 2 * np.pi))
    def test_exp_map_distance(self, x, r, ang):
        e1, e2 = tangent_frame(x)
        v = r * (np.cos(ang) * e1 + np.sin(ang) * e2)
        y = exp_map(x, v)
        assert np.linalg.norm(y) == pytest.approx(1.0, abs=1e-14)
        assert geodesic_distance(x, y) == pytest.approx(r, abs=1e-6)

    @settings(max_examples=30, deadline=None)
    @given(unit_vectors, unit_vectors, st.floats(-1, 1), st.floats(-1, 1))
    def test_parallel_transport_isometry(self, a, b, s, t):
        if a @ b < -0.99:
            return
        e1, e2 = tangent_frame(a)
        w = s * e1 + t * e2
        wb = parallel_transport(w, a, b)
        assert wb @ b == pytest.approx(0.0, abs=1e-10)
        assert np.linalg.norm(wb) == pytest.approx(np.linalg.norm(w), abs=1e-10)


class TestFlow:
    def test_increments_tangent(self):
        """[TRIVIAL]"""
        pts = uniform_sphere_points(200, np.random.default_rng(3))
        v = sphere_sample_increment(sphere_band_family(2, 8), 0.01, np.random.default_rng(4)).at_points(pts)
        np.testing.assert_allclose(np.sum(v * pts, axis=1), 0.0, atol=1e-12)

    def test_rotated_increment(self):
        """[TRIVIAL] the rotated field is R dW(R^T x)."""
        inc = sphere_sample_increment(sphere_band_family(1, 4), 0.01, np.random.default_rng(5))
        R = random_rotation(np.random.default_rng(6))
        pts = uniform_sphere_points(10, np.random.default_rng(7))
        np.testing.assert_allclose(inc.rotated(R).at_points(pts), inc.at_points(pts @ R) @ R.T, atol=1e-12)

    def test_flow_stays_on_sphere_and_uniform(self):
        """[PAPER] the flow keeps points on the sphere and preserves the uniform law."""
        pts = uniform_sphere_points(10000, np.random.default_rng(8))
        out = sphere_flow(pts, sphere_band_family(2, 8), 1e-2, 20, np.random.default_rng(9))
        np.testing.assert_allclose(np.linalg.norm(out, axis=1), 1.0, atol=1e-12)
        assert sphere_uniformity_test(out).pass_fraction >= 0.9

    def test_uniformity_detects_cap(self):
        pts = uniform_sphere_points(5000, np.random.default_rng(10))
        pts[:, 2] = np.abs(pts[:, 2])
        rep = sphere_uniformity_test(pts)
        assert not rep.passed and rep.to_json()["pass_fraction"] < 1.0

    def test_diffusivity(self):
        """[DERIVED] E d(X_t, X_0)^2 / t -> 2 c for short times."""
        est = sphere_diffusivity(sphere_band_family(2, 8), 1e-4, 10, 4000, np.random.default_rng(11))
        assert abs(est.value - est.target) <= 4 * est.stderr + 0.02 * est.target
