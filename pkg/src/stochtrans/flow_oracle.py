"""Particle characteristics driven by the solver's noise realisation.

Particles follow the Stratonovich flow ``dX = -dW(X)`` discretised by Heun's
predictor-corrector. Because the transported field satisfies
``u_t(X_t(x)) = u_0(x)`` and the flow preserves Lebesgue measure, weak
pairings ``(u_t, phi) = (u_0, phi o X_t)`` can be estimated by Monte Carlo
over initial positions and compared against the spectral solver on the same
increments.
"""

from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

from .fields import evaluate_at_points, half_lattice
from .noise import NoiseIncrement, covariance_kernel, diagonal_covariance, draw_amplitudes, sample_increment

TWO_PI = 2.0 * np.pi


def wrap(x):
    """Map positions into ``[0, 1)`` (guards the ``-0.0 % 1 == 1.0`` edge)."""
    y = x - np.floor(x)
    y[y >= 1.0] = 0.0
    return y


@dataclass(frozen=True, eq=False)
class ParticleCloud:
    """Wrapped positions, their starting points and unwrapped displacements."""

    positions: np.ndarray
    origin: np.ndarray
    displacement: np.ndarray
    weights: np.ndarray = None

    def __post_init__(self):
        pos = np.array(self.positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[0] < 1:
            raise ValueError("cloud needs at least one particle")
        if np.any(pos < 0) or np.any(pos >= 1):
            raise ValueError("positions must be wrapped into [0, 1)^d")
        for name in ("origin", "displacement"):
            if np.shape(getattr(self, name)) != pos.shape:
                raise ValueError(f"{name} must match positions")

    @property
    def count(self):
        return self.positions.shape[0]

    @property
    def dim(self):
        return self.positions.shape[1]


def uniform_cloud(count, dim, rng, stratified=True):
    """Uniform cloud; stratified puts one jittered particle per sub-cell.

    With ``n = floor(count^(1/d))`` the first ``n^d`` particles are stratified
    and any remainder is drawn independently.
    """
    if count < 1:
        raise ValueError("count must be positive")
    if stratified:
        n = int(np.floor(count ** (1.0 / dim) + 1e-9))
        grids = np.meshgrid(*([np.arange(n)] * dim), indexing="ij")
        cells = np.stack([g.ravel() for g in grids], axis=1).astype(np.float64)
        strat = (cells + rng.random(cells.shape)) / n
        extra = rng.random((count - len(strat), dim))
        pos = wrap(np.vstack([strat, extra]))
    else:
        pos = wrap(rng.random((count, dim)))
    return ParticleCloud(pos, pos.copy(), np.zeros_like(pos))


def advect_cloud(cloud, increment):
    """One Heun step of ``dX = -dW(X)`` with a given increment realisation."""
    x = cloud.positions
    v1 = increment.at_points(x)
    x_pred = wrap(x - v1)
    v2 = increment.at_points(x_pred)
    step = -0.5 * (v1 + v2)
    return ParticleCloud(wrap(x + step), cloud.origin, cloud.displacement + step, cloud.weights)


def heun_flow_step(cloud, spec, dt, rng):
    """Sample one increment from ``rng`` and advance the cloud by Heun's rule."""
    return advect_cloud(cloud, sample_increment(spec, dt, rng))


def flow_cloud(cloud, spec, dt, n_steps, rng):
    """``n_steps`` Heun steps; draws increments in the solver's order."""
    for _ in range(n_steps):
        cloud = heun_flow_step(cloud, spec, dt, rng)
    return cloud


def weak_pairing(u0, phi, cloud):
    """Monte Carlo ``(u_t, phi) ~ mean_i u0(x_i) phi(X_t(x_i))``."""
    a = evaluate_at_points(u0, cloud.origin)
    b = evaluate_at_points(phi, cloud.positions)
    w = np.ones(cloud.count) if cloud.weights is None else np.asarray(cloud.weights)
    return float(np.sum(w * a * b) / np.sum(w))


@dataclass(frozen=True)
class UniformityReport:
    modes: np.ndarray
    amplitudes: np.ndarray
    threshold: float
    mode_pass: np.ndarray
    ks_statistic: np.ndarray
    ks_pvalue: np.ndarray

    @property
    def pass_fraction(self):
        return float(np.mean(self.mode_pass))

    @property
    def passed(self):
        return bool(np.all(self.mode_pass))

    def to_json(self):
        return {
            "modes": self.modes.tolist(),
            "amplitudes": self.amplitudes.tolist(),
            "threshold": self.threshold,
            "mode_pass": self.mode_pass.tolist(),
            "ks_statistic": self.ks_statistic.tolist(),
            "ks_pvalue": self.ks_pvalue.tolist(),
            "pass_fraction": self.pass_fraction,
            "passed": self.passed,
        }


def uniformity_test(cloud, radius=4):
    """Empirical Fourier coefficients for ``0 < |k| <= radius`` plus per-axis KS.

    A mode passes when ``|P^{-1} sum_i exp(-2 pi i k.X_i)| <= 3 / sqrt(P)``.
    """
    P = cloud.count
    if P < 1000:
        raise ValueError("uniformity test needs at least 1000 particles")
    modes = half_lattice(cloud.dim, radius)
    modes = modes[(modes**2).sum(axis=1) <= radius**2]
    phase = TWO_PI * cloud.positions @ modes.T
    amp = np.abs(np.exp(-1j * phase).mean(axis=0))
    thr = 3.0 / np.sqrt(P)
    ks = [sps.kstest(cloud.positions[:, i], "uniform") for i in range(cloud.dim)]
    return UniformityReport(
        modes=modes,
        amplitudes=amp,
        threshold=thr,
        mode_pass=amp <= thr,
        ks_statistic=np.array([r.statistic for r in ks]),
        ks_pvalue=np.array([r.pvalue for r in ks]),
    )


def _increment_values(spec, cos_amp, sin_amp, const, x):
    phase = TWO_PI * (spec.modes @ np.asarray(x, dtype=np.float64))
    return const + np.einsum("k,...kd->...d", np.cos(phase), cos_amp) + np.einsum(
        "k,...kd->...d", np.sin(phase), sin_amp
    )


@dataclass(frozen=True)
class PairCovariance:
    empirical: np.ndarray
    stderr: np.ndarray
    exact: np.ndarray

    def within(self, n_sigma=3.0):
        return bool(np.all(np.abs(self.empirical - self.exact) <= n_sigma * self.stderr + 1e-15))


def pair_decorrelation(spec, x, y, samples, rng, dt=1.0, chunk=20000):
    """Empirical ``Cov[dW(x), dW(y)] / dt`` over independent increments."""
    prods = []
    left = samples
    while left > 0:
        n = min(chunk, left)
        c, s, k0 = draw_amplitudes(spec, dt, rng, size=n)
        wx = _increment_values(spec, c, s, k0, x)
        wy = _increment_values(spec, c, s, k0, y)
        prods.append(wx[:, :, None] * wy[:, None, :] / dt)
        left -= n
    prods = np.concatenate(prods)
    return PairCovariance(
        empirical=prods.mean(axis=0),
        stderr=prods.std(axis=0, ddof=1) / np.sqrt(samples),
        exact=covariance_kernel(spec, np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)),
    )


@dataclass(frozen=True)
class DiffusivityEstimate:
    value: float
    stderr: float
    target: float


def single_particle_diffusivity(spec, dt, n_steps, replicas, rng, start=None):
    """``E |X_t - X_0|^2 / t`` over independent realisations, one particle each.

    The target is ``trace(A)``.
    """
    d = spec.dim
    x = np.full((replicas, d), 0.5) if start is None else np.tile(np.asarray(start, float), (replicas, 1))
    disp = np.zeros_like(x)

    def field_at(c, s, k0, pts):
        phase = TWO_PI * pts @ spec.modes.T  # (R, K)
        return k0 + np.einsum("rk,rkd->rd", np.cos(phase), c) + np.einsum("rk,rkd->rd", np.sin(phase), s)

    for _ in range(n_steps):
        c, s, k0 = draw_amplitudes(spec, dt, rng, size=replicas)
        v1 = field_at(c, s, k0, x)
        v2 = field_at(c, s, k0, wrap(x - v1))
        step = -0.5 * (v1 + v2)
        disp += step
        x = wrap(x + step)
    t = n_steps * dt
    sq = (disp**2).sum(axis=1) / t
    return DiffusivityEstimate(float(sq.mean()), float(sq.std(ddof=1) / np.sqrt(replicas)),
                               float(np.trace(diagonal_covariance(spec).A)))


def increment_from_draw(spec, dt, amplitudes):
    """Wrap a ``(cos, sin, const)`` draw as a :class:`NoiseIncrement`."""
    c, s, k0 = amplitudes
    return NoiseIncrement(spec, float(dt), c, s, k0)
