"""Time integration of the transport SPDE, the heat semigroup and the limiting SHE.

The transport equation in Ito form reads

    du = div(u dW) + 1/2 div(A grad u) dt,

with ``A`` the one-point noise covariance. Two schemes are available:

``exp_euler``
    ``u_{n+1} = P_dt [u_n + div(u_n dW_n)]`` with ``P_t = exp(t L / 2)``,
    ``L = div(A grad)``. Ito-consistent at weak order one.
``frozen_flow``
    ``u_{n+1} = exp(B_n) u_n`` with ``B_n u = div(u dW_n)`` restricted to the
    dealiased band. ``B_n`` is skew-adjoint there, so every step is an exact
    rotation of the retained coefficients: the L2 norm and the law of white
    noise are preserved, and the expansion ``E exp(B_n) = I + E[B_n^2]/2 + ...``
    reproduces the Ito corrector. This is the transport of ``u`` by the
    time-one flow of the frozen velocity ``-dW_n``, i.e. the field-level twin
    of the particle scheme in :mod:`stochtrans.flow_oracle`.

Both run batched over replicas; every replica draws from its own stream, so
results do not depend on batching or thread count.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .fields import (
    SpectralField,
    dealias_kmax,
    dealias_mask,
    flat_index,
    half_lattice,
    sobolev_weights,
    wavenumbers,
)
from .noise import amplitudes_to_coeffs, covariance_form, diagonal_covariance, draw_amplitudes
from .rng import derive_seed, stream

TWO_PI = 2.0 * np.pi
SCHEMES = ("frozen_flow", "exp_euler")


class StepError(FloatingPointError):
    """A time step produced non-finite values."""


class KrylovError(RuntimeError):
    """The Krylov exponential failed to converge."""


# ---------------------------------------------------------------------------
# configuration and results
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SolverConfig:
    """Time grid and scheme options.

    ``background_diffusivity`` adds a deterministic ``1/2 div(A_bg grad)``
    term (exact semigroup factor each step); it defaults to none, so the
    diffusion seen by the solver is always the one computed from the noise.
    """

    dt: float
    T_final: float
    scheme: str = "frozen_flow"
    resolution: int = None
    seed: int = 0
    snapshot_times: tuple = ()
    background_diffusivity: tuple = None
    krylov_tol: float = 1e-12

    def __post_init__(self):
        if not (self.dt > 0 and self.T_final > 0 and self.dt <= self.T_final * (1 + 1e-12)):
            raise ValueError(f"need 0 < dt <= T_final, got dt={self.dt}, T_final={self.T_final}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")
        n = self.T_final / self.dt
        if abs(n - round(n)) > 1e-6 * max(1.0, n):
            raise ValueError("T_final must be an integer multiple of dt")
        times = tuple(float(t) for t in self.snapshot_times) or (0.0, float(self.T_final))
        steps = []
        for t in times:
            s = t / self.dt
            if t < 0 or t > self.T_final * (1 + 1e-12) or abs(s - round(s)) > 1e-6 * max(1.0, s):
                raise ValueError(f"snapshot time {t} is not a grid multiple of dt in [0, T_final]")
            steps.append(int(round(s)))
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ValueError("snapshot times must be strictly increasing")
        object.__setattr__(self, "snapshot_times", times)
        if self.background_diffusivity is not None:
            bg = np.asarray(self.background_diffusivity, dtype=np.float64)
            object.__setattr__(self, "background_diffusivity", tuple(map(tuple, bg)))

    @property
    def n_steps(self):
        return int(round(self.T_final / self.dt))

    @property
    def snapshot_steps(self):
        return tuple(int(round(t / self.dt)) for t in self.snapshot_times)

    def to_json(self):
        return {
            "dt": self.dt,
            "T_final": self.T_final,
            "scheme": self.scheme,
            "resolution": self.resolution,
            "seed": self.seed,
            "snapshot_times": list(self.snapshot_times),
            "background_diffusivity": None if self.background_diffusivity is None
            else [list(r) for r in self.background_diffusivity],
            "krylov_tol": self.krylov_tol,
        }


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Snapshots of one realisation."""

    config: SolverConfig
    times: tuple
    fields: tuple
    manifest: dict = field(default_factory=dict)

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("times must be strictly increasing")
        shapes = {(f.dim, f.resolution) for f in self.fields}
        if len(shapes) > 1:
            raise ValueError("snapshots must share d and M")

    def snapshots(self):
        return list(zip(self.times, self.fields))


@dataclass(frozen=True, eq=False)
class EnsembleOutput:
    """Probe values ``values[r][s]`` for replica ``r`` at ``times[s]``."""

    times: tuple
    values: np.ndarray
    seeds: tuple


# ---------------------------------------------------------------------------
# heat semigroups
# ---------------------------------------------------------------------------


def _check_matrix(A, dim, require_definite):
    A = np.asarray(A, dtype=np.float64)
    if A.shape != (dim, dim) or not np.all(np.isfinite(A)):
        raise ValueError(f"A must be a finite {dim}x{dim} matrix")
    if not np.allclose(A, A.T, atol=1e-12 * max(1.0, np.abs(A).max())):
        raise ValueError("A must be symmetric")
    lam = np.linalg.eigvalsh(A)
    if require_definite and lam.min() <= 0:
        raise ValueError(f"A must be positive definite (min eigenvalue {lam.min():.3e})")
    if lam.min() < -1e-12 * max(1.0, abs(lam).max()):
        raise ValueError("A must be positive semidefinite")
    return A


def quadratic_symbol(dim, M, A):
    """``4 pi^2 k^T A k`` on the FFT grid."""
    k = wavenumbers(dim, M).astype(np.float64)
    return 4.0 * np.pi**2 * np.einsum("i...,ij,j...->...", k, np.asarray(A, dtype=np.float64), k)


def heat_multiplier(dim, M, A, t):
    """Multiplier of ``P_t = exp(t div(A grad) / 2)``."""
    return np.exp(-0.5 * t * quadratic_symbol(dim, M, A))


def heat_semigroup_apply(field_, A, t):
    """``P_t u`` for a symmetric positive definite constant matrix ``A``."""
    A = _check_matrix(A, field_.dim, require_definite=True)
    if t < 0:
        raise ValueError("t must be nonnegative")
    return SpectralField(heat_multiplier(field_.dim, field_.resolution, A, t) * field_.coeffs)


def deterministic_error_w(u0, A, t, kappa):
    """``||P_t u0 - exp(t Delta / 2) u0||_{H^{-kappa}}`` by exact per-mode sums."""
    A = _check_matrix(A, u0.dim, require_definite=True)
    dim, M = u0.dim, u0.resolution
    diff = heat_multiplier(dim, M, A, t) - heat_multiplier(dim, M, np.eye(dim), t)
    w = sobolev_weights(dim, M, -kappa)
    return float(np.sqrt(np.sum(w * np.abs(diff * u0.coeffs) ** 2)))


# ---------------------------------------------------------------------------
# Krylov exponential of a skew-adjoint operator
# ---------------------------------------------------------------------------


def _expm_skew_first_column(T):
    """``exp(T) e_1`` for a batch of real skew matrices."""
    w, U = np.linalg.eigh(1j * T)
    return np.einsum("rij,rj->ri", U, np.exp(-1j * w) * U[:, 0, :].conj()).real


def expm_skew_apply(matvec, u, tol=1e-12, m_max=48, _scale=1.0, _rows=None, _depth=0):
    """``exp(B) u`` row by row for a skew-adjoint ``B`` given by ``matvec``.

    ``matvec(v, rows)`` applies ``B`` to the stacked vectors ``v`` belonging to
    batch rows ``rows``. The Lanczos recurrence builds a skew tridiagonal
    ``T`` whose exponential is exactly orthogonal; each row keeps
    the first iterate whose residual estimate is below ``tol``, so a row's
    result does not depend on the other rows in the batch. Rows that do not
    converge within ``m_max`` vectors are split as ``exp(B) = exp(B/2)^2``.
    """
    r = u.shape[0]
    rows = np.arange(r) if _rows is None else _rows
    flat = u.reshape(r, -1)
    n = flat.shape[1]
    beta0 = np.sqrt(np.einsum("ij,ij->i", flat, flat))
    out = flat.copy()
    pending = beta0 > 0
    if not pending.any():
        return out.reshape(u.shape)
    V = np.zeros((r, m_max + 1, n))
    V[:, 0] = flat / np.where(pending, beta0, 1.0)[:, None]
    betas = np.zeros((r, m_max))
    for j in range(m_max):
        w = _scale * matvec(V[:, j].reshape(u.shape), rows).reshape(r, n)
        if j > 0:
            w += betas[:, j - 1, None] * V[:, j - 1]
        b = np.sqrt(np.einsum("ij,ij->i", w, w))
        betas[:, j] = b
        V[:, j + 1] = w / np.where(b > 0, b, 1.0)[:, None]
        if j < 4 or (j % 2 and j != m_max - 1):
            continue
        idx = np.flatnonzero(pending)
        m = j + 1
        T = np.zeros((len(idx), m, m))
        ar = np.arange(j)
        T[:, ar + 1, ar] = betas[idx, :j]
        T[:, ar, ar + 1] = -betas[idx, :j]
        y = _expm_skew_first_column(T)
        done = b[idx] * np.abs(y[:, -1]) <= tol
        if np.any(done):
            sel = idx[done]
            out[sel] = beta0[sel, None] * np.matmul(y[done][:, None, :], V[sel, : j + 1])[:, 0]
            pending[sel] = False
        if not pending.any():
            return out.reshape(u.shape)
    if _depth > 12:
        raise KrylovError("Krylov exponential did not converge")
    idx = np.flatnonzero(pending)
    sub = flat[idx].reshape((len(idx),) + u.shape[1:])
    for _ in range(2):
        sub = expm_skew_apply(matvec, sub, tol, m_max, 0.5 * _scale, rows[idx], _depth + 1)
    out[idx] = sub.reshape(len(idx), n)
    return out.reshape(u.shape)


# ---------------------------------------------------------------------------
# batched transport engine
# ---------------------------------------------------------------------------


class _HalfGrid:
    """Real-FFT helpers on the ``(M,)*d`` grid."""

    def __init__(self, dim, M):
        self.dim, self.M = dim, M
        self.axes = tuple(range(-dim, 0))
        self.shape = (M,) * dim
        cut = (slice(None),) * (dim - 1) + (slice(0, M // 2 + 1),)
        self.mask = dealias_mask(dim, M)[cut]
        k = wavenumbers(dim, M)[(slice(None),) + cut].astype(np.float64)
        self.ik = TWO_PI * 1j * k * self.mask
        self.k = k
        self.cut = cut

    def rfft(self, x):
        return np.fft.rfftn(x, axes=self.axes)

    def irfft(self, c):
        return np.fft.irfftn(c, s=self.shape, axes=self.axes)

    def coeffs_to_phys(self, c):
        """Masked full coefficients ``(..., M..M)`` to physical values."""
        half = c[(Ellipsis,) + self.cut] * self.mask
        return self.irfft(half) * self.M**self.dim

    def phys_to_coeffs(self, x):
        return np.fft.fftn(x, axes=self.axes) / self.M**self.dim

    def symbol(self, A):
        return 4.0 * np.pi**2 * np.einsum("i...,ij,j...->...", self.k, np.asarray(A, dtype=np.float64), self.k)


class TransportEngine:
    """One-step maps of the transport SPDE for batches of physical fields."""

    def __init__(self, spec, dt, scheme="frozen_flow", background=None, tol=1e-12, m_max=48):
        if scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {scheme!r}")
        self.spec, self.dt, self.scheme = spec, float(dt), scheme
        self.grid = _HalfGrid(spec.dim, spec.resolution)
        self.tol, self.m_max = tol, m_max
        d = spec.dim
        bg = np.zeros((d, d)) if background is None else _check_matrix(background, d, False)
        self.A_noise = diagonal_covariance(spec).A
        if scheme == "exp_euler":
            A_heat = self.A_noise + bg
        else:
            A_heat = bg
        self.heat = None
        if np.any(A_heat != 0):
            self.heat = np.exp(-0.5 * self.dt * self.grid.symbol(A_heat))

    def draw(self, rng):
        return draw_amplitudes(self.spec, self.dt, rng)

    def increments_physical(self, amps):
        """Physical ``dW`` of shape ``(r, d, M..M)`` from per-replica amplitude tuples."""
        cos_amp = np.stack([a[0] for a in amps])
        sin_amp = np.stack([a[1] for a in amps])
        const = np.stack([a[2] for a in amps])
        c = amplitudes_to_coeffs(self.spec, cos_amp, sin_amp, const)
        return self.grid.coeffs_to_phys(c)

    def transport(self, u, W):
        """Dealiased ``div(u W)`` for physical batches ``u (r, M..M)``, ``W (r, d, M..M)``."""
        g = self.grid
        acc = 0.0
        for i in range(self.spec.dim):
            acc = acc + g.ik[i] * g.rfft(u * W[:, i])
        return g.irfft(acc)

    def step(self, u, W):
        """Advance physical fields ``u (r, M..M)`` by one step with increments ``W``."""
        if self.scheme == "exp_euler":
            v = u + self.transport(u, W)
        else:
            axes = self.grid.axes
            mean = u.mean(axis=axes, keepdims=True)

            def matvec(x, rows):
                return self.transport(x, W[rows])

            v = expm_skew_apply(matvec, u - mean, self.tol, self.m_max) + mean
        if self.heat is not None:
            v = self.grid.irfft(self.heat * self.grid.rfft(v))
        if not np.all(np.isfinite(v)):
            raise StepError("non-finite values after transport step")
        return v


def _project_band(coeffs, dim, M):
    return np.asarray(coeffs, dtype=np.complex128) * dealias_mask(dim, M)


def run_transport_ensemble(u0, spec, config, seeds, probe=None, chunk_size=16, threads=1):
    """Run one trajectory per seed and collect ``probe`` at the snapshot times.

    ``u0`` is a :class:`SpectralField` shared by all replicas or an array of
    per-replica coefficients ``(R, M..M)``. ``probe`` maps a batch of
    coefficient arrays ``(r, M..M)`` to an array ``(r, ...)``; by default the
    coefficients themselves are stored.
    """
    dim, M = spec.dim, spec.resolution
    seeds = tuple(int(s) for s in seeds)
    R = len(seeds)
    if isinstance(u0, SpectralField):
        if (u0.dim, u0.resolution) != (dim, M):
            raise ValueError("initial field and noise spec use different grids")
        init = np.broadcast_to(u0.coeffs, (R,) + u0.coeffs.shape)
    else:
        init = np.asarray(u0)
        if init.shape != (R,) + (M,) * dim:
            raise ValueError(f"initial coefficients must have shape {(R,) + (M,) * dim}")
    probe = probe or (lambda c: c)
    engine = TransportEngine(spec, config.dt, config.scheme, config.background_diffusivity, config.krylov_tol)
    snap_steps = config.snapshot_steps

    def run_chunk(lo):
        hi = min(R, lo + chunk_size)
        rngs = [stream(s) for s in seeds[lo:hi]]
        u = engine.grid.coeffs_to_phys(_project_band(init[lo:hi], dim, M))
        recorded = []
        for n in range(config.n_steps + 1):
            if n in snap_steps:
                recorded.append(np.asarray(probe(engine.grid.phys_to_coeffs(u))))
            if n == config.n_steps:
                break
            W = engine.increments_physical([engine.draw(g) for g in rngs])
            u = engine.step(u, W)
        return np.stack(recorded, axis=1)

    starts = list(range(0, R, chunk_size))
    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run_chunk, starts))
    else:
        parts = [run_chunk(s) for s in starts]
    return EnsembleOutput(config.snapshot_times, np.concatenate(parts, axis=0), seeds)


def transport_stream_seed(seed, index=0):
    return derive_seed(seed, "transport", index)


def simulate_transport(u0, spec, config):
    """Single trajectory of the transport SPDE with snapshots at ``config.snapshot_times``.

    The noise stream is keyed by ``(config.seed, "transport", 0)``, the same
    stream as replica 0 of an ensemble with that master seed.
    """
    if config.resolution is not None and config.resolution != spec.resolution:
        raise ValueError("config resolution differs from the noise spec resolution")
    seed = transport_stream_seed(config.seed, 0)
    out = run_transport_ensemble(u0, spec, config, [seed])
    fields = tuple(SpectralField(c) for c in out.values[0])
    manifest = {"seed": config.seed, "stream_ids": [["transport", 0, seed]], "scheme": config.scheme}
    return Trajectory(config, config.snapshot_times, fields, manifest)


def spde_step(u, spec, dt, rng, scheme="frozen_flow", background=None):
    """One step of the transport SPDE for a single field."""
    engine = TransportEngine(spec, dt, scheme, background)
    x = engine.grid.coeffs_to_phys(_project_band(u.coeffs, u.dim, u.resolution))[None]
    W = engine.increments_physical([engine.draw(rng)])
    return SpectralField(engine.grid.phys_to_coeffs(engine.step(x, W))[0])


# ---------------------------------------------------------------------------
# exact one-step moments of the exponential Euler scheme
# ---------------------------------------------------------------------------


def exp_euler_pairing_variance(u0, phi, spec, dt):
    """``Var (u_1, phi) = dt (u0 grad psi, Q (u0 grad psi))`` with ``psi = P_dt phi``.

    ``psi`` is restricted to the dealiased band, matching the scheme.
    """
    dim, M = spec.dim, spec.resolution
    mask = dealias_mask(dim, M)
    A = diagonal_covariance(spec).A
    psi = heat_multiplier(dim, M, A, dt) * phi.coeffs * mask
    k = wavenumbers(dim, M)
    grad_psi = np.fft.ifftn(TWO_PI * 1j * k * psi, axes=tuple(range(1, dim + 1))).real * M**dim
    u_phys = np.fft.ifftn(u0.coeffs * mask).real * M**dim
    g = np.fft.fftn(u_phys[None] * grad_psi, axes=tuple(range(1, dim + 1))) / M**dim
    return float(dt * covariance_form(spec, g))


def exp_euler_second_moment(u0, spec, dt):
    """``E ||u_1||^2 = ||P_dt u0||^2 + dt sum_j theta_j^2 ||P_dt div(u0 sigma_j)||^2``.

    The sum runs over the orthonormal noise basis fields ``sigma_j``.
    """
    dim, M = spec.dim, spec.resolution
    mask = dealias_mask(dim, M)
    A = diagonal_covariance(spec).A
    heat = heat_multiplier(dim, M, A, dt)
    u = u0.coeffs * mask
    base = float(np.sum(np.abs(heat * u) ** 2))
    u_phys = np.fft.ifftn(u).real * M**dim
    k = wavenumbers(dim, M)
    x = np.stack(np.meshgrid(*([np.arange(M) / M] * dim), indexing="ij"))
    extra = 0.0
    fields = []
    for kk, t, basis in zip(spec.modes, spec.thetas, spec.basis):
        phase = TWO_PI * np.tensordot(kk, x, axes=1)
        for e in basis:
            for trig in (np.cos(phase), np.sin(phase)):
                fields.append((t, np.sqrt(2.0) * e.reshape((dim,) + (1,) * dim) * trig))
    for a in range(dim if spec.theta0 > 0 else 0):
        e = np.zeros(dim)
        e[a] = 1.0
        fields.append((spec.theta0, e.reshape((dim,) + (1,) * dim) * np.ones((M,) * dim)))
    for t, sigma in fields:
        prod = np.fft.fftn(u_phys * sigma, axes=tuple(range(1, dim + 1))) / M**dim
        div = (TWO_PI * 1j * k * prod).sum(axis=0) * mask
        extra += t * t * float(np.sum(np.abs(heat * div) ** 2))
    return base + dt * extra


# ---------------------------------------------------------------------------
# stochastic heat equation
# ---------------------------------------------------------------------------


def she_modes(dim, M):
    """Upper-half modes of the dealiased band (the SHE noise support)."""
    return half_lattice(dim, dealias_kmax(M))


def run_she_ensemble(u0, config, dim, seeds, probe=None, noise_scale=1.0):
    """Exact per-mode OU updates of ``du = 1/2 Delta u dt + (-Delta)^{1/2} dxi``.

    Mode ``k != 0`` in the dealiased band evolves as
    ``u_k <- e^{-lam dt/2} u_k + sqrt(1 - e^{-lam dt}) eta``, ``lam = 4 pi^2 |k|^2``,
    with ``eta`` a unit complex Gaussian paired Hermitian; ``k = 0`` is frozen.
    ``noise_scale = 0`` gives plain heat decay ``exp(t Delta / 2)``.
    """
    M = config.resolution
    if M is None:
        raise ValueError("SHE runs need config.resolution")
    seeds = tuple(int(s) for s in seeds)
    R = len(seeds)
    if isinstance(u0, SpectralField):
        init = np.broadcast_to(u0.coeffs, (R,) + u0.coeffs.shape)
    else:
        init = np.asarray(u0)
    probe = probe or (lambda c: c)
    modes = she_modes(dim, M)
    pos, neg = flat_index(modes, M), flat_index(-modes, M)
    lam = 4.0 * np.pi**2 * (modes**2).sum(axis=1)
    decay = np.exp(-0.5 * lam * config.dt)
    kick = noise_scale * np.sqrt(1.0 - np.exp(-lam * config.dt))
    out = []
    for r in range(R):
        rng = stream(seeds[r])
        c = _project_band(init[r], dim, M).copy()
        rec = []
        for n in range(config.n_steps + 1):
            if n in config.snapshot_steps:
                rec.append(np.asarray(probe(c[None]))[0])
            if n == config.n_steps:
                break
            xi = rng.standard_normal((len(modes), 2))
            eta = (xi[:, 0] + 1j * xi[:, 1]) / np.sqrt(2.0)
            z = decay * c[pos] + kick * eta
            c[pos] = z
            c[neg] = z.conj()
        out.append(np.stack(rec))
    return EnsembleOutput(config.snapshot_times, np.stack(out), seeds)


def simulate_she(u0, config):
    """Single SHE trajectory keyed by ``(config.seed, "she", 0)``."""
    cfg = config if config.resolution is not None else SolverConfig(
        config.dt, config.T_final, config.scheme, u0.resolution, config.seed, config.snapshot_times)
    seed = derive_seed(config.seed, "she", 0)
    out = run_she_ensemble(u0, cfg, u0.dim, [seed])
    fields = tuple(SpectralField(c) for c in out.values[0])
    manifest = {"seed": config.seed, "stream_ids": [["she", 0, seed]]}
    return Trajectory(cfg, cfg.snapshot_times, fields, manifest)

