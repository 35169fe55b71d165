"""Heat semigroups, the transport SPDE schemes and the stochastic heat equation."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from stochtrans.fields import (
    SpectralField,
    constant_field,
    cosine_mode,
    flat_index,
    sine_mode,
    sobolev_norm,
    white_noise_coeffs,
)
from stochtrans.noise import NoiseSpec, cutoff_family, diagonal_covariance, mollified_family
from stochtrans.rng import stream
from stochtrans.solver import (
    SolverConfig,
    StepError,
    Trajectory,
    deterministic_error_w,
    exp_euler_pairing_variance,
    exp_euler_second_moment,
    heat_multiplier,
    heat_semigroup_apply,
    run_she_ensemble,
    run_transport_ensemble,
    simulate_she,
    simulate_transport,
    spde_step,
)


def empty_spec(dim=2, M=16):
    return NoiseSpec(dim, M, np.zeros((0, dim)), [])


def poly(M=16):
    return cosine_mode(2, M, (1, 0)) + sine_mode(2, M, (1, 2), 0.5) + cosine_mode(2, M, (2, -1), 0.3)


# ---------------------------------------------------------------------------
# heat semigroup
# ---------------------------------------------------------------------------


class TestHeatSemigroupOracles:
    def test_identity_at_zero(self):
        """[TRIVIAL]"""
        u = poly()
        np.testing.assert_array_equal(heat_semigroup_apply(u, np.eye(2), 0.0).coeffs, u.coeffs)

    def test_unit_mode_decay(self):
        """[TRIVIAL] A = I, |k| = 1, t = 1 gives exp(-2 pi^2)."""
        u = cosine_mode(2, 16, (0, 1))
        out = heat_semigroup_apply(u, np.eye(2), 1.0)
        np.testing.assert_allclose(out.coeffs, np.exp(-2 * np.pi**2) * u.coeffs, rtol=1e-13, atol=0)

    def test_anisotropic_matrix_exponential(self):
        """[DERIVED] A = diag(2, 1), mode (1, 1), t = 0.1, against expm on a small mode set."""
        A = np.diag([2.0, 1.0])
        modes = np.array([[1, 1], [1, 0], [0, 1], [2, -1]])
        gen = np.diag([-0.5 * 4 * np.pi**2 * k @ A @ k for k in modes])
        factors = np.diag(expm(0.1 * gen))
        assert factors[0] == pytest.approx(np.exp(-0.1 * 4 * np.pi**2 * 3 / 2), rel=1e-12)
        mult = heat_multiplier(2, 16, A, 0.1)
        np.testing.assert_allclose(mult[flat_index(modes, 16)], factors, rtol=1e-12)

    def test_rejects_non_spd(self):
        with pytest.raises(ValueError):
            heat_semigroup_apply(poly(), np.array([[1.0, 0.0], [0.0, -1.0]]), 0.1)
        with pytest.raises(ValueError):
            heat_semigroup_apply(poly(), np.array([[1.0, 0.5], [0.0, 1.0]]), 0.1)

    def test_negative_time(self):
        with pytest.raises(ValueError):
            heat_semigroup_apply(poly(), np.eye(2), -1.0)


class TestDeterministicErrorOracles:
    def test_identity_matrix(self):
        """[TRIVIAL] identical semigroups."""
        assert deterministic_error_w(poly(), np.eye(2), 0.3, 1.0) == 0.0

    def test_scalar_matrix(self):
        """[TRIVIAL] A = c I on one mode: |exp(-t c 2 pi^2 |k|^2) - exp(-t 2 pi^2 |k|^2)|."""
        u = cosine_mode(2, 16, (1, 1))
        c, t, kappa = 1.3, 0.05, 0.5
        expect = abs(np.exp(-t * c * 2 * np.pi**2 * 2) - np.exp(-t * 2 * np.pi**2 * 2)) * sobolev_norm(u, -kappa)
        assert deterministic_error_w(u, c * np.eye(2), t, kappa) == pytest.approx(expect, rel=1e-12)

    def test_mollified_family_bound(self):
        """[PAPER] sup_t ||w_t|| / ||u0|| <= C |c_h - 1| with |c_h - 1| ~ h^2."""
        u = poly(32)
        hs = np.array([0.4, 0.28, 0.2, 0.14, 0.1])
        ratios, gaps = [], []
        for h in hs:
            A = diagonal_covariance(mollified_family(2, h, 128)).A
            gap = abs(A[0, 0] - 1)
            sup = max(deterministic_error_w(u, A, t, 0.5) for t in np.linspace(0, 0.5, 26))
            ratios.append(sup / sobolev_norm(u, 0) / gap)
            gaps.append(gap)
        assert np.all(np.isfinite(ratios)) and max(ratios) < 1.0
        slope = np.polyfit(np.log(hs), np.log(gaps), 1)[0]
        assert slope >= 1.7


# ---------------------------------------------------------------------------
# one step of the SPDE
# ---------------------------------------------------------------------------


class TestSpdeStepOracles:
    @pytest.mark.parametrize("scheme", ["frozen_flow", "exp_euler"])
    def test_zero_noise_is_heat_step(self, scheme):
        """[TRIVIAL] all theta = 0 with background diffusion I."""
        u = poly()
        out = spde_step(u, empty_spec(), 0.01, np.random.default_rng(0), scheme, background=np.eye(2))
        np.testing.assert_allclose(out.coeffs, heat_semigroup_apply(u, np.eye(2), 0.01).coeffs, atol=1e-14)

    @pytest.mark.parametrize("scheme", ["frozen_flow", "exp_euler"])
    def test_constant_stays_constant(self, scheme):
        """[TRIVIAL] transport of constants."""
        u = constant_field(2, 16, 1.7)
        rng = np.random.default_rng(1)
        for _ in range(5):
            u = spde_step(u, cutoff_family(2, 3, 16), 0.01, rng, scheme)
        np.testing.assert_allclose(u.coeffs, constant_field(2, 16, 1.7).coeffs, atol=1e-13)

    def test_second_moment_trace_formula(self):
        """[DERIVED] exp Euler: E||u_1||^2 from the exact basis expansion against 10^4 samples."""
        spec = cutoff_family(2, 2, 16)
        u0, dt = poly(), 0.01
        exact = exp_euler_second_moment(u0, spec, dt)
        cfg = SolverConfig(dt, dt, "exp_euler", 16)
        out = run_transport_ensemble(u0, spec, cfg, list(range(10000)), chunk_size=2000,
                                     probe=lambda c: np.sum(np.abs(c) ** 2, axis=(1, 2)))
        vals = out.values[:, -1].real
        se = vals.std(ddof=1) / np.sqrt(len(vals))
        assert abs(vals.mean() - exact) <= 3 * se

    def test_pairing_ito_isometry(self):
        """[DERIVED] Var (u_1, phi) = dt (u0 grad psi, Q u0 grad psi) within 3 stderr."""
        spec = mollified_family(2, 0.3, 16)
        u0, phi, dt = poly(), cosine_mode(2, 16, (1, 1)), 0.02
        exact = exp_euler_pairing_variance(u0, phi, spec, dt)
        cfg = SolverConfig(dt, dt, "exp_euler", 16)
        out = run_transport_ensemble(u0, spec, cfg, list(range(10000)), chunk_size=2000,
                                     probe=lambda c: np.einsum("rij,ij->r", c, phi.coeffs.conj()).real)
        x = out.values[:, -1]
        var = x.var(ddof=1)
        se = var * np.sqrt(2.0 / (len(x) - 1))
        assert abs(var - exact) <= 3 * se

    def test_frozen_flow_is_unitary(self):
        u = SpectralField(white_noise_coeffs(2, 24, np.random.default_rng(3)))
        v = spde_step(u, cutoff_family(2, 4, 24), 0.05, np.random.default_rng(4))
        assert sobolev_norm(v, 0) == pytest.approx(sobolev_norm(u, 0), rel=1e-12)
        assert v.mean() == pytest.approx(u.mean(), abs=1e-14)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_rejected(self):
        c = poly().coeffs.copy()
        c[1, 0] = np.inf
        with pytest.raises((StepError, ValueError)):
            spde_step(SpectralField(c), cutoff_family(2, 2, 16), 0.01, np.random.default_rng(0), "exp_euler")


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------


class TestSimulateTransportOracles:
    def test_zero_noise_closed_form(self):
        """[TRIVIAL] single mode under background diffusion decays exactly."""
        u0 = cosine_mode(2, 16, (1, 2))
        times = (0.0, 0.01, 0.05, 0.1)
        cfg = SolverConfig(0.01, 0.1, resolution=16, snapshot_times=times, background_diffusivity=((1, 0), (0, 1)))
        traj = simulate_transport(u0, empty_spec(), cfg)
        for t, f in traj.snapshots():
            np.testing.assert_allclose(f.coeffs, np.exp(-0.5 * t * 4 * np.pi**2 * 5) * u0.coeffs, atol=1e-14)

    def test_l2_drift_small(self):
        """[DERIVED] conservation up to scheme error (reduced size of the acceptance run)."""
        u0 = poly(32)
        cfg = SolverConfig(1e-3, 0.1, resolution=32, seed=5)
        traj = simulate_transport(u0, cutoff_family(2, 4, 32), cfg)
        drift = abs(sobolev_norm(traj.fields[-1], 0) - sobolev_norm(u0, 0)) / sobolev_norm(u0, 0)
        assert drift <= 0.05

    def test_deterministic_given_seed(self):
        cfg = SolverConfig(0.01, 0.05, resolution=16, seed=11, snapshot_times=(0.0, 0.02, 0.05))
        a = simulate_transport(poly(), cutoff_family(2, 3, 16), cfg)
        b = simulate_transport(poly(), cutoff_family(2, 3, 16), cfg)
        for x, y in zip(a.fields, b.fields):
            np.testing.assert_array_equal(x.coeffs, y.coeffs)
        assert a.manifest["stream_ids"][0][0] == "transport"

    def test_mean_conserved(self):
        u0 = poly() + constant_field(2, 16, 0.4)
        cfg = SolverConfig(0.01, 0.2, resolution=16, seed=1, snapshot_times=tuple(np.arange(0, 21) * 0.01))
        traj = simulate_transport(u0, mollified_family(2, 0.4, 16), cfg)
        assert max(abs(f.mean() - 0.4) for f in traj.fields) < 1e-14

    def test_weak_mean_follows_heat(self):
        """E (u_T)_k approaches P_T u0 for a small-N_cut spec."""
        spec = cutoff_family(2, 2, 16)
        u0 = cosine_mode(2, 16, (1, 0))
        idx = flat_index([[1, 0]], 16)
        cfg = SolverConfig(1e-3, 0.05, resolution=16, snapshot_times=(0.05,))
        out = run_transport_ensemble(u0, spec, cfg, list(range(200)), probe=lambda c: c[(slice(None),) + idx][:, 0].real)
        x = out.values[:, -1]
        target = u0.coeffs[1, 0].real * np.exp(-0.5 * 0.05 * 4 * np.pi**2)
        assert abs(x.mean() - target) <= 4 * x.std(ddof=1) / np.sqrt(len(x)) + 0.01

    @settings(max_examples=6, deadline=None)
    @given(st.integers(1, 7), st.integers(1, 3))
    def test_batching_and_threads_invariant(self, chunk, threads):
        spec = cutoff_family(2, 2, 16)
        cfg = SolverConfig(0.01, 0.03, resolution=16)
        ref = run_transport_ensemble(poly(), spec, cfg, [3, 4, 5, 6, 7], chunk_size=5)
        got = run_transport_ensemble(poly(), spec, cfg, [3, 4, 5, 6, 7], chunk_size=chunk, threads=threads)
        np.testing.assert_array_equal(ref.values, got.values)


class TestSolverConfig:
    @pytest.mark.parametrize("kw", [dict(dt=0.0, T_final=1.0), dict(dt=2.0, T_final=1.0),
                                    dict(dt=0.3, T_final=1.0), dict(dt=0.1, T_final=1.0, scheme="rk4"),
                                    dict(dt=0.1, T_final=1.0, snapshot_times=(0.05,)),
                                    dict(dt=0.1, T_final=1.0, snapshot_times=(0.5, 0.2))])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            SolverConfig(**kw)

    def test_default_snapshots(self):
        cfg = SolverConfig(0.1, 1.0)
        assert cfg.snapshot_times == (0.0, 1.0) and cfg.n_steps == 10

    def test_trajectory_order(self):
        with pytest.raises(ValueError):
            Trajectory(SolverConfig(0.1, 1.0), (0.5, 0.1), (poly(), poly()))


# ---------------------------------------------------------------------------
# stochastic heat equation
# ---------------------------------------------------------------------------


class TestSheOracles:
    def test_stationary_variance(self):
        """[DERIVED] OU stationary variance 1 per mode from a white-noise start."""
        M, R = 12, 2000
        init = np.stack([white_noise_coeffs(2, M, stream(1000 + r)) for r in range(R)])
        cfg = SolverConfig(0.05, 0.5, resolution=M, snapshot_times=(0.5,))
        modes = np.array([[1, 0], [1, 1], [0, 2], [3, -1]])
        idx = flat_index(modes, M)
        out = run_she_ensemble(init, cfg, 2, range(R), probe=lambda c: c[(slice(None),) + idx])
        z = np.abs(out.values[:, -1]) ** 2
        se = z.std(axis=0, ddof=1) / np.sqrt(R)
        assert np.all(np.abs(z.mean(axis=0) - 1) <= 3.5 * se)

    def test_autocorrelation(self):
        """[DERIVED] E[u_k(t) conj u_k(s)] = exp(-lam |t - s| / 2) over 10^4 replicas."""
        M, R, tau = 8, 10000, 0.01
        init = np.stack([white_noise_coeffs(2, M, stream(r)) for r in range(R)])
        cfg = SolverConfig(tau, tau, resolution=M, snapshot_times=(0.0, tau))
        idx = flat_index([[1, 0]], M)
        out = run_she_ensemble(init, cfg, 2, range(R, 2 * R), probe=lambda c: c[(slice(None),) + idx][:, 0])
        prod = (out.values[:, 1] * out.values[:, 0].conj()).real
        lam = 4 * np.pi**2
        assert abs(prod.mean() - np.exp(-0.5 * lam * tau)) <= 3 * prod.std(ddof=1) / np.sqrt(R)

    def test_zero_noise_heat(self):
        """[TRIVIAL] noise_scale = 0 is heat decay exp(t Laplacian / 2)."""
        u0 = poly()
        cfg = SolverConfig(0.01, 0.05, resolution=16)
        out = run_she_ensemble(u0, cfg, 2, [0], noise_scale=0.0)
        np.testing.assert_allclose(out.values[0, -1], heat_semigroup_apply(u0, np.eye(2), 0.05).coeffs, atol=1e-14)

    def test_simulate_she_keeps_mean(self):
        u0 = SpectralField(white_noise_coeffs(2, 16, np.random.default_rng(0)))
        traj = simulate_she(u0, SolverConfig(0.01, 0.1, resolution=16, seed=3))
        assert traj.fields[-1].mean() == u0.mean()
        assert traj.fields[-1].hermitian_defect() == 0.0
