"""Spectral fields: norms, differential operators, transport term, time-Hoelder estimate."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stochtrans.fields import (
    InvalidFieldError,
    SpectralField,
    SpectralVectorField,
    constant_field,
    cosine_mode,
    dealias_kmax,
    divergence,
    evaluate_at_points,
    from_physical,
    gradient,
    half_lattice,
    holder_norm_estimate,
    l2_inner,
    laplacian,
    lattice_box,
    leray_project,
    sine_mode,
    sobolev_norm,
    to_physical,
    transport_term,
    white_noise,
)


def random_field(dim, M, rng, band=None):
    band = dealias_kmax(M) if band is None else band
    vals = rng.standard_normal((M,) * dim)
    c = from_physical(vals).coeffs.copy()
    k = np.indices((M,) * dim)
    k = np.where(k > M // 2, k - M, k)
    c[np.any(np.abs(k) > band, axis=0)] = 0.0
    return SpectralField(c)


def random_vector(dim, M, rng):
    comps = [random_field(dim, M, rng).coeffs for _ in range(dim)]
    return SpectralVectorField(np.stack(comps))


# ---------------------------------------------------------------------------
# oracle examples
# ---------------------------------------------------------------------------


class TestSobolevNormOracles:
    def test_constant_field_any_s(self):
        """[TRIVIAL] u = 1 has only the k = 0 term, weight 1."""
        u = constant_field(2, 16)
        for s in (-3.0, -1.0, 0.0, 2.5):
            assert sobolev_norm(u, s) == pytest.approx(1.0, rel=1e-14)

    def test_single_mode_negative_index(self):
        """[TRIVIAL] sqrt(2) cos(2 pi x1) has H^{-1} norm (1 + 4 pi^2)^{-1/2}."""
        u = cosine_mode(2, 16, (1, 0))
        assert sobolev_norm(u, -1.0) == pytest.approx((1 + 4 * np.pi**2) ** -0.5, rel=1e-13)
        assert sobolev_norm(u, -1.0) == pytest.approx(0.1570, abs=5e-4)

    def test_white_noise_expected_norm(self):
        """[DERIVED] E||xi||^2_{H^s} equals the brute-force lattice sum of weights."""
        dim, M, s = 2, 16, -1.5
        rng = np.random.default_rng(0)
        kmax = dealias_kmax(M)
        lattice = lattice_box(dim, kmax)
        expected = np.sum((1 + 4 * np.pi**2 * (lattice**2).sum(axis=1)) ** s)
        samples = np.array([sobolev_norm(white_noise(dim, M, rng), s) ** 2 for _ in range(4000)])
        se = samples.std(ddof=1) / np.sqrt(len(samples))
        assert abs(samples.mean() - expected) <= 4 * se

    def test_non_finite_rejected(self):
        c = np.zeros((8, 8), dtype=complex)
        c[1, 0] = np.nan
        with pytest.raises(InvalidFieldError):
            sobolev_norm(SpectralField(c), 0.0)


class TestDifferentialOperatorOracles:
    def test_gradient_of_constant(self):
        """[TRIVIAL]"""
        g = gradient(constant_field(3, 8, 2.0))
        assert np.abs(g.coeffs).max() == 0.0

    def test_divergence_of_projected_field(self):
        """[TRIVIAL] Leray projection kills k.v per mode."""
        v = random_vector(2, 16, np.random.default_rng(1))
        assert np.abs(divergence(leray_project(v)).coeffs).max() < 1e-12

    def test_div_grad_eigenfunction(self):
        """[TRIVIAL] div grad of sqrt(2) cos(2 pi k.x) is -4 pi^2 |k|^2 times itself."""
        u = cosine_mode(2, 16, (1, 2))
        out = divergence(gradient(u))
        np.testing.assert_allclose(out.coeffs, -4 * np.pi**2 * 5 * u.coeffs, atol=1e-12)

    def test_div_grad_equals_laplacian(self):
        u = random_field(3, 8, np.random.default_rng(2))
        np.testing.assert_allclose(divergence(gradient(u)).coeffs, laplacian(u).coeffs, atol=1e-10)

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidFieldError):
            transport_term(constant_field(2, 8), random_vector(2, 16, np.random.default_rng(0)))


class TestTransportTermOracles:
    def test_constant_scalar(self):
        """[TRIVIAL] div X = 0 so div(1 X) = 0."""
        X = leray_project(random_vector(2, 16, np.random.default_rng(3)))
        assert np.abs(transport_term(constant_field(2, 16), X).coeffs).max() < 1e-12

    def test_no_dependence_on_second_axis(self):
        """[TRIVIAL] u = sqrt(2) cos(2 pi x1), X = (0, sqrt(2) cos(2 pi x1))."""
        u = cosine_mode(2, 16, (1, 0))
        X = SpectralVectorField(np.stack([np.zeros((16, 16)), cosine_mode(2, 16, (1, 0)).coeffs]))
        assert np.abs(transport_term(u, X).coeffs).max() < 1e-13

    def test_oversampled_product_oracle(self):
        """[DERIVED] Compare with a dense physical product on a 3M/2 grid."""
        dim, M = 2, 32
        rng = np.random.default_rng(4)
        u = random_field(dim, M, rng)
        X = leray_project(random_vector(dim, M, rng))
        big = 3 * M // 2

        def pad(c):
            out = np.zeros((big,) * dim, dtype=complex)
            k = np.arange(M)
            k = np.where(k >= M // 2, k - M, k) % big
            out[np.ix_(k, k)] = c
            return out

        up = np.fft.ifftn(pad(u.coeffs)).real * big**dim
        Xp = [np.fft.ifftn(pad(X.coeffs[i])).real * big**dim for i in range(dim)]
        kb = np.fft.fftfreq(big, 1.0 / big)
        KX, KY = np.meshgrid(kb, kb, indexing="ij")
        prod = [np.fft.fftn(up * Xp[i]) / big**dim for i in range(dim)]
        div_big = 2j * np.pi * (KX * prod[0] + KY * prod[1])
        got = transport_term(u, X).coeffs
        kmax = dealias_kmax(M)
        for k in lattice_box(dim, kmax):
            assert abs(got[tuple(k % M)] - div_big[tuple(k % big)]) < 1e-10


class TestHolderOracles:
    def test_constant_trajectory(self):
        """[TRIVIAL]"""
        u = cosine_mode(2, 8, (1, 1))
        assert holder_norm_estimate([(0.0, u), (0.5, u), (1.0, u)], 0.5, -1.0) == 0.0

    def test_single_pair(self):
        """[TRIVIAL] two snapshots u and u + delta e with ||e||_{H^s} = 1."""
        s = -1.0
        e = cosine_mode(2, 8, (1, 0), 1.0 / sobolev_norm(cosine_mode(2, 8, (1, 0)), s))
        u = cosine_mode(2, 8, (0, 1))
        val = holder_norm_estimate([(0.0, u), (1.0, u + e * 0.3)], 0.7, s)
        assert val == pytest.approx(0.3, rel=1e-12)

    def test_heat_flow_all_pairs(self):
        """[DERIVED] closed-form heat decay; estimator equals the brute-force pair max."""
        s, alpha = -0.5, 0.4
        u0 = cosine_mode(2, 8, (1, 1))
        lam = 4 * np.pi**2 * 2
        n0 = sobolev_norm(u0, s)
        times = np.linspace(0.0, 0.2, 40)
        snaps = [(t, u0 * np.exp(-0.5 * lam * t)) for t in times]
        brute = max(n0 * abs(np.exp(-0.5 * lam * a) - np.exp(-0.5 * lam * b)) / abs(a - b) ** alpha
                    for i, a in enumerate(times) for b in times[i + 1:])
        assert holder_norm_estimate(snaps, alpha, s) == pytest.approx(brute, rel=1e-12)

    def test_errors(self):
        u = constant_field(2, 8)
        with pytest.raises(ValueError):
            holder_norm_estimate([(0.0, u)], 0.5, 0.0)
        with pytest.raises(ValueError):
            holder_norm_estimate([(0.0, u), (0.0, u)], 0.5, 0.0)

    def test_thinning_cap(self):
        u = cosine_mode(2, 8, (1, 0))
        snaps = [(0.01 * i, u * (1 + 0.001 * i)) for i in range(300)]
        assert np.isfinite(holder_norm_estimate(snaps, 0.5, 0.0))


# ---------------------------------------------------------------------------
# structural checks
# ---------------------------------------------------------------------------


class TestSpectralField:
    def test_nyquist_zeroed(self):
        c = np.ones((8, 8), dtype=complex)
        f = SpectralField(c)
        assert f.coeffs[4, 0] == 0 and f.coeffs[0, 4] == 0

    def test_read_only(self):
        f = constant_field(2, 8)
        with pytest.raises(ValueError):
            f.coeffs[0, 0] = 2.0

    @pytest.mark.parametrize("shape", [(8, 6), (7, 7), (2, 2), (8,)])
    def test_bad_shapes(self, shape):
        with pytest.raises(InvalidFieldError):
            SpectralField(np.zeros(shape))

    def test_sine_and_cosine_real(self):
        for f in (cosine_mode(3, 8, (1, -1, 2)), sine_mode(2, 16, (2, 3))):
            assert f.hermitian_defect() == 0.0
            assert sobolev_norm(f, 0.0) == pytest.approx(1.0)

    def test_divergence_free_flag_rejects(self):
        g = gradient(cosine_mode(2, 8, (1, 0))).coeffs
        with pytest.raises(InvalidFieldError):
            SpectralVectorField(g, divergence_free=True)

    def test_point_evaluation_matches_grid(self):
        u = random_field(2, 16, np.random.default_rng(5))
        grid = np.stack(np.meshgrid(np.arange(16) / 16, np.arange(16) / 16, indexing="ij"), axis=-1).reshape(-1, 2)
        np.testing.assert_allclose(evaluate_at_points(u, grid), u.to_physical().ravel(), atol=1e-10)

    def test_half_lattice_pairs(self):
        h = half_lattice(3, 2)
        assert len(h) == (5**3 - 1) // 2
        s = {tuple(k) for k in h}
        assert all(tuple(-np.array(k)) not in s for k in s)


@st.composite
def field_params(draw):
    dim = draw(st.sampled_from([2, 3]))
    M = draw(st.sampled_from([4, 8, 16] if dim == 3 else [4, 8, 16, 32, 64, 128]))
    seed = draw(st.integers(0, 2**32 - 1))
    return dim, M, seed


class TestProperties:
    @settings(max_examples=30, deadline=None)
    @given(field_params())
    def test_round_trip(self, p):
        dim, M, seed = p
        u = random_field(dim, M, np.random.default_rng(seed), band=M // 2 - 1)
        back = from_physical(to_physical(u.coeffs)).coeffs
        assert np.abs(back - u.coeffs).max() <= 1e-12 * max(1.0, np.abs(u.coeffs).max())

    @settings(max_examples=30, deadline=None)
    @given(field_params())
    def test_parseval(self, p):
        dim, M, seed = p
        u = random_field(dim, M, np.random.default_rng(seed), band=M // 2 - 1)
        ms = np.mean(u.to_physical() ** 2)
        assert ms == pytest.approx(np.sum(np.abs(u.coeffs) ** 2), rel=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(field_params(), st.floats(-3, 3), st.floats(0.01, 2))
    def test_sobolev_monotone_in_s(self, p, s, ds):
        dim, M, seed = p
        c = random_field(dim, M, np.random.default_rng(seed)).coeffs.copy()
        c[(0,) * dim] = 0.0
        if not np.any(c):
            return
        u = SpectralField(c / np.sqrt(np.sum(np.abs(c) ** 2)))
        assert sobolev_norm(u, s) <= sobolev_norm(u, s + ds) * (1 + 1e-12)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sampled_from([8, 16, 32]))
    def test_integration_by_parts(self, seed, M):
        rng = np.random.default_rng(seed)
        u = random_field(2, M, rng)
        X = leray_project(random_vector(2, M, rng))
        phi = random_field(2, M, rng, band=2)
        t = transport_term(u, X)
        assert abs(t.coeffs[0, 0]) < 1e-12
        lhs = l2_inner(t, phi)
        uX = SpectralVectorField(from_physical(u.to_physical()[None] * X.to_physical(), leading=1))
        gphi = gradient(phi)
        rhs = -sum(l2_inner(uX.component(i), gphi.component(i)) for i in range(2))
        assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))
