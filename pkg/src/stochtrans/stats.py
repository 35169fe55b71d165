"""Ensemble orchestration, rate fits, second-chaos pairings and law comparisons."""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from .fields import (
    dealias_kmax,
    flat_index,
    wavenumbers,
    white_noise_coeffs,
)
from .noise import diagonal_covariance
from .rng import derive_seed

TWO_PI = 2.0 * np.pi


class ReplicaError(RuntimeError):
    """A replica raised; ``seed`` reproduces it."""

    def __init__(self, seed, param, cause):
        super().__init__(f"replica with seed {seed} failed at parameter {param!r}: {cause!r}")
        self.seed, self.param, self.cause = seed, param, cause


class UnderpoweredError(ValueError):
    """Too few usable points for a rate fit."""


class TruncationError(ValueError):
    """The white-noise truncation misses too much of the kernel."""


def mean_and_stderr(samples, axis=0):
    """Sample mean and standard error along ``axis`` (replicas)."""
    x = np.asarray(samples, dtype=np.float64)
    n = x.shape[axis]
    if n < 2:
        raise ValueError("need at least two replicas for a standard error")
    return x.mean(axis=axis), x.std(axis=axis, ddof=1) / np.sqrt(n)


# ---------------------------------------------------------------------------
# ensembles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    slope_stderr: float
    ci_low: float
    ci_high: float
    n_used: int
    dropped: tuple = ()
    reduced_chi2: float = 0.0

    def to_json(self):
        return {
            "slope": self.slope,
            "intercept": self.intercept,
            "slope_stderr": self.slope_stderr,
            "ci95": [self.ci_low, self.ci_high],
            "n_used": self.n_used,
            "dropped": list(self.dropped),
            "reduced_chi2": self.reduced_chi2,
        }


@dataclass
class EnsembleSummary:
    """Per-parameter means and standard errors of named statistics."""

    experiment_id: str
    params: tuple
    replicas: int
    means: dict
    stderrs: dict
    fits: dict = field(default_factory=dict)
    wall_time: float = 0.0
    master_seed: int = 0

    def points(self, name):
        """``(param, mean, stderr)`` triples for :func:`rate_fit`."""
        return list(zip(self.params, self.means[name], self.stderrs[name]))

    def fit(self, name, **kwargs):
        self.fits[name] = rate_fit(self.points(name), **kwargs)
        return self.fits[name]

    def rows(self):
        """CSV rows ``(param, statistic, mean, stderr, replicas)``."""
        out = []
        for i, p in enumerate(self.params):
            for name in sorted(self.means):
                out.append((p, name, float(self.means[name][i]), float(self.stderrs[name][i]), self.replicas))
        return out

    def to_json(self):
        return {
            "experiment_id": self.experiment_id,
            "master_seed": self.master_seed,
            "params": list(self.params),
            "replicas": self.replicas,
            "means": {k: np.asarray(v).tolist() for k, v in self.means.items()},
            "stderrs": {k: np.asarray(v).tolist() for k, v in self.stderrs.items()},
            "fits": {k: v.to_json() for k, v in self.fits.items()},
            "wall_time": self.wall_time,
        }


def replica_seeds(master_seed, experiment_id, replicas):
    return [derive_seed(master_seed, experiment_id, r) for r in range(replicas)]


def ensemble_run(experiment, params, replicas, master_seed, experiment_id, threads=1, batched=False):
    """Run ``experiment`` for every parameter and replica and reduce to means.

    Per replica, ``experiment(param, seed)`` returns ``{name: float}``; with
    ``batched=True`` it is called once per parameter as
    ``experiment(param, seeds)`` and returns ``{name: array (R,)}``. Replica
    seeds depend only on ``(master_seed, experiment_id, index)``, so every
    parameter sees the same seeds and results do not depend on ``threads``.
    """
    if replicas < 2:
        raise ValueError("an ensemble needs at least two replicas")
    params = tuple(params)
    seeds = replica_seeds(master_seed, experiment_id, replicas)
    t0 = time.perf_counter()

    def run_single(p, s):
        try:
            return experiment(p, s)
        except Exception as exc:
            raise ReplicaError(s, p, exc) from exc

    def run_param(p):
        if not batched:
            rows = [run_single(p, s) for s in seeds]
            return {k: np.array([r[k] for r in rows], dtype=np.float64) for k in rows[0]}
        try:
            res = experiment(p, seeds)
        except Exception:
            for s in seeds:  # locate the failing replica
                run_single(p, [s])
            raise
        return {k: np.asarray(v, dtype=np.float64) for k, v in res.items()}

    if threads > 1 and len(params) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run_param, params))
    else:
        results = [run_param(p) for p in params]
    names = sorted(results[0])
    means, errs = {}, {}
    for name in names:
        stacked = np.stack([r[name] for r in results])  # (params, R)
        means[name], errs[name] = mean_and_stderr(stacked, axis=1)
    return EnsembleSummary(experiment_id, params, replicas, means, errs,
                           wall_time=time.perf_counter() - t0, master_seed=master_seed)


# ---------------------------------------------------------------------------
# rate fits
# ---------------------------------------------------------------------------


def rate_fit(points, level=0.95, min_points=4):
    """Weighted least squares of ``log y`` on ``log x``.

    ``points`` holds ``(x, y, stderr)``. Points whose stderr exceeds half the
    estimate are dropped; fewer than ``min_points`` survivors is an error.
    Weights are ``(y / stderr)^2`` (delta method); the slope error is scaled
    by the reduced chi-square when that exceeds one, and the interval uses a
    t quantile with ``n - 2`` degrees of freedom.
    """
    pts = [(float(x), float(y), float(s)) for x, y, s in points]
    if any(x <= 0 for x, _, _ in pts):
        raise ValueError("rate fits need positive abscissae")
    keep, dropped = [], []
    for p in pts:
        x, y, s = p
        if y <= 0 or s > 0.5 * y:
            dropped.append(x)
        else:
            keep.append(p)
    if len(keep) < min_points:
        raise UnderpoweredError(
            f"only {len(keep)} usable points (need {min_points}); dropped x = {dropped}")
    x = np.log([p[0] for p in keep])
    y = np.log([p[1] for p in keep])
    rel = np.array([p[2] / p[1] for p in keep])
    w = np.ones_like(x) if np.all(rel == 0) else 1.0 / np.maximum(rel, 1e-300) ** 2
    if np.any(rel == 0) and not np.all(rel == 0):
        w = np.where(rel == 0, w[rel > 0].max(), w)
    X = np.column_stack([np.ones_like(x), x])
    cov = np.linalg.inv(X.T @ (w[:, None] * X))
    beta = cov @ (X.T @ (w * y))
    resid = y - X @ beta
    dof = len(x) - 2
    chi2 = float(np.sum(w * resid**2) / dof)
    scale = chi2 if np.all(rel == 0) else max(1.0, chi2)
    se = float(np.sqrt(cov[1, 1] * scale))
    q = float(sps.t.ppf(0.5 + level / 2, dof))
    slope = float(beta[1])
    return RateFit(slope, float(beta[0]), se, slope - q * se, slope + q * se, len(keep), tuple(dropped), chi2)


# ---------------------------------------------------------------------------
# second Wiener chaos
# ---------------------------------------------------------------------------


def _full_noise_modes(spec):
    """All modes ``+k, -k`` (and 0 when harmonic) with weights and projectors."""
    d = spec.dim
    modes = [spec.modes, -spec.modes]
    theta2 = [spec.thetas**2, spec.thetas**2]
    k = np.asarray(spec.modes, dtype=np.float64)
    P = np.eye(d) - k[:, :, None] * k[:, None, :] / (k**2).sum(axis=1)[:, None, None]
    proj = [P, P]
    if spec.theta0 > 0:
        modes.append(np.zeros((1, d), dtype=np.int64))
        theta2.append(np.array([spec.theta0**2]))
        proj.append(np.eye(d)[None])
    return np.concatenate(modes), np.concatenate(theta2), np.concatenate(proj)


def _gradient_support(phi, tol=1e-14):
    """Nonzero modes ``s`` of ``phi`` and the coefficients of ``grad phi`` there."""
    c = phi.coeffs
    k = wavenumbers(phi.dim, phi.resolution)
    idx = np.argwhere(np.abs(c) > tol * max(1.0, np.abs(c).max()))
    s = np.array([[k[(a,) + tuple(i)] for a in range(phi.dim)] for i in idx], dtype=np.int64).reshape(-1, phi.dim)
    a = TWO_PI * 1j * s * np.array([c[tuple(i)] for i in idx])[:, None]
    keep = np.any(s != 0, axis=1)
    return s[keep], a[keep]


@dataclass(frozen=True)
class ChaosKernel:
    """Sparse Fourier matrix ``K_{jl}`` of ``u -> grad phi . Q(u grad phi)``."""

    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray
    band: int

    @property
    def hs_norm_sq(self):
        return float(np.sum(np.abs(self.values) ** 2))

    def trace(self):
        return float(np.sum(self.values[np.all(self.rows == self.cols, axis=1)]).real)


def chaos_kernel(spec, phi, band=None, tolerance=1e-8):
    """Fourier entries of the chaos kernel restricted to ``|j_i|, |l_i| <= band``.

    ``K_{jl} = sum_{k} theta_k^2 conj(a_{k-j})^T P_k a_{k-l}`` where ``a`` are
    the Fourier coefficients of ``grad phi``. Raises :class:`TruncationError`
    when the entries outside the band carry more than ``tolerance`` of the
    squared Hilbert-Schmidt norm.
    """
    band = dealias_kmax(spec.resolution) if band is None else int(band)
    s, a = _gradient_support(phi)
    if len(s) == 0:
        return ChaosKernel(np.zeros((0, spec.dim), int), np.zeros((0, spec.dim), int), np.zeros(0, complex), band)
    modes, theta2, proj = _full_noise_modes(spec)
    # entries for every (k, s, t): j = k - s, l = k - t
    Pa = np.einsum("kij,tj->kti", proj, a)  # (K, S, d)
    vals = theta2[:, None, None] * np.einsum("si,kti->kst", a.conj(), Pa)
    j = modes[:, None, None, :] - s[None, :, None, :]
    l = modes[:, None, None, :] - s[None, None, :, :]
    j = np.broadcast_to(j, vals.shape + (spec.dim,)).reshape(-1, spec.dim)
    l = np.broadcast_to(l, vals.shape + (spec.dim,)).reshape(-1, spec.dim)
    vals = vals.reshape(-1)
    key = np.concatenate([j, l], axis=1)
    uniq, inv = np.unique(key, axis=0, return_inverse=True)
    summed = np.zeros(len(uniq), dtype=np.complex128)
    np.add.at(summed, inv.reshape(-1), vals)
    rows, cols = uniq[:, : spec.dim], uniq[:, spec.dim:]
    inside = np.all(np.abs(rows) <= band, axis=1) & np.all(np.abs(cols) <= band, axis=1)
    total = np.sum(np.abs(summed) ** 2)
    outside = np.sum(np.abs(summed[~inside]) ** 2)
    if total > 0 and outside > tolerance * total:
        raise TruncationError(f"kernel mass outside the band is {outside / total:.2e} of the HS norm")
    return ChaosKernel(rows[inside], cols[inside], summed[inside], band)


def chaos_target(spec, phi):
    """``(grad phi, A grad phi)`` computed spectrally."""
    _, a = _gradient_support(phi)
    A = diagonal_covariance(spec).A
    return float(np.einsum("si,ij,sj->", a.conj(), A, a).real)


def chaos_samples(spec, phi, samples, rng, chunk=2000):
    """Draws of ``(eta, K eta)`` for truncated white noise ``eta``.

    With ``g = eta grad phi`` the pairing is ``sum_k theta_k^2 conj(g_k) P_k g_k``.
    """
    d, M = spec.dim, spec.resolution
    s, a = _gradient_support(phi)
    if len(s) == 0:
        return np.zeros(samples)
    modes, theta2, proj = _full_noise_modes(spec)
    out = []
    left = samples
    while left > 0:
        n = min(chunk, left)
        eta = white_noise_coeffs(d, M, rng, size=n)  # (n, M..M)
        g = np.zeros((n, len(modes), d), dtype=np.complex128)
        kmax = dealias_kmax(M)
        for si, ai in zip(s, a):
            src = modes - si
            ok = np.all(np.abs(src) <= kmax, axis=1)
            idx = flat_index(src[ok], M)
            g[:, ok, :] += eta[(slice(None),) + idx][:, :, None] * ai[None, None, :]
        Pg = np.einsum("kij,nkj->nki", proj, g)
        out.append(np.einsum("k,nki,nki->n", theta2, g.conj(), Pg).real)
        left -= n
    return np.concatenate(out)


@dataclass(frozen=True)
class ChaosPairingResult:
    estimate: float
    stderr: float
    target: float
    variance: float
    variance_stderr: float
    hs_bound: float
    samples: int

    def mean_ok(self, n_sigma=3.0):
        return abs(self.estimate - self.target) <= n_sigma * self.stderr

    def variance_ok(self, factor=1.2, n_sigma=3.0):
        return self.variance <= factor * self.hs_bound + n_sigma * self.variance_stderr

    def to_json(self):
        return {
            "estimate": self.estimate,
            "stderr": self.stderr,
            "target": self.target,
            "variance": self.variance,
            "variance_stderr": self.variance_stderr,
            "hs_bound": self.hs_bound,
            "samples": self.samples,
        }


def chaos_pairing(spec, phi, samples, rng):
    """Monte Carlo mean and variance of ``(eta, K eta)`` with exact references."""
    x = chaos_samples(spec, phi, samples, rng)
    kern = chaos_kernel(spec, phi)
    mean, se = float(x.mean()), float(x.std(ddof=1) / np.sqrt(samples))
    var = float(x.var(ddof=1))
    m4 = float(np.mean((x - mean) ** 4))
    var_se = float(np.sqrt(max(m4 - var**2, 0.0) / samples))
    return ChaosPairingResult(mean, se, chaos_target(spec, phi), var, var_se, 2.0 * kern.hs_norm_sq, samples)


# ---------------------------------------------------------------------------
# stationary law comparisons
# ---------------------------------------------------------------------------


def lag_autocovariance(series, lags):
    """Per-replica lag covariances ``Re <c(t+lag) conj c(t)>`` averaged over origins.

    ``series`` is ``(R, n_times)`` complex on a uniform time grid; ``lags``
    are integer offsets. Returns ``(R, len(lags))``.
    """
    z = np.asarray(series)
    n = z.shape[1]
    out = np.empty((z.shape[0], len(lags)))
    for i, lag in enumerate(lags):
        if not 0 <= lag < n:
            raise ValueError(f"lag {lag} outside the snapshot grid")
        out[:, i] = np.mean((z[:, lag:] * z[:, : n - lag].conj()).real, axis=1)
    return out


@dataclass(frozen=True)
class LawComparison:
    lags: np.ndarray
    exact: np.ndarray
    acf: np.ndarray
    acf_stderr: np.ndarray
    reference_acf: np.ndarray
    reference_stderr: np.ndarray
    variance: float
    variance_stderr: float
    discrepancy: float
    reference_discrepancy: float

    def to_json(self):
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.__dict__.items()}


def she_law_compare(transport_series, she_series, times, mode, lag_steps):
    """Compare one Fourier mode of stationary transport and SHE ensembles.

    Both series are ``(R, n_times)`` complex coefficients of ``mode`` on the
    same uniform snapshot grid ``times``. Reports the stationary variance of
    the transport mode (target 1) and, for each lag, the replica-averaged
    autocovariance of both ensembles against ``exp(-lam |t - s| / 2)``.
    ``discrepancy`` is the largest absolute deviation of the transport
    autocovariance from that formula; ``reference_discrepancy`` is the same
    for the SHE ensemble.
    """
    a, b = np.asarray(transport_series), np.asarray(she_series)
    if a.shape[1] != b.shape[1] or a.shape[1] != len(times):
        raise ValueError("transport and SHE series must share the snapshot grid")
    dt = np.diff(times)
    if not np.allclose(dt, dt[0]):
        raise ValueError("snapshot grid must be uniform")
    lam = 4.0 * np.pi**2 * float(np.sum(np.asarray(mode) ** 2))
    lags = np.asarray(lag_steps, dtype=int)
    tau = lags * dt[0]
    exact = np.exp(-0.5 * lam * tau)
    ca, sa = mean_and_stderr(lag_autocovariance(a, lags))
    cb, sb = mean_and_stderr(lag_autocovariance(b, lags))
    var, var_se = mean_and_stderr(np.mean(np.abs(a) ** 2, axis=1))
    return LawComparison(
        lags=tau,
        exact=exact,
        acf=ca,
        acf_stderr=sa,
        reference_acf=cb,
        reference_stderr=sb,
        variance=float(var),
        variance_stderr=float(var_se),
        discrepancy=float(np.max(np.abs(ca - exact))),
        reference_discrepancy=float(np.max(np.abs(cb - exact))),
    )


def self_comparison_band(series_a, series_b, lag_steps):
    """Largest lag-wise gap between two independent SHE ensembles."""
    ca = lag_autocovariance(series_a, lag_steps).mean(axis=0)
    cb = lag_autocovariance(series_b, lag_steps).mean(axis=0)
    return float(np.max(np.abs(ca - cb)))


def non_increasing_within(values, tolerance):
    """``values[i+1] <= values[i] + tolerance`` for all consecutive pairs."""
    v = np.asarray(values, dtype=np.float64)
    return bool(np.all(v[1:] <= v[:-1] + tolerance))


# ---------------------------------------------------------------------------
# moments of increments and weak bounds
# ---------------------------------------------------------------------------


def increment_moment_curve(series, lag_steps):
    """``E ||x(t + lag) - x(t)||^2`` from ``(R, n_times, n_coeffs)`` weighted series.

    Each replica averages over all available time origins; the standard
    error comes from the replica-level averages.
    """
    z = np.asarray(series)
    n = z.shape[1]
    per_rep = np.empty((z.shape[0], len(lag_steps)))
    for i, lag in enumerate(lag_steps):
        diff = z[:, lag:] - z[:, : n - lag]
        per_rep[:, i] = np.mean(np.sum(np.abs(diff) ** 2, axis=-1), axis=1)
    return mean_and_stderr(per_rep)


def sup_norm_estimate(field_, oversample=8):
    """``max |u|`` of a trigonometric polynomial on an oversampled grid."""
    d, M = field_.dim, field_.resolution
    big = M * oversample
    c = np.zeros((big,) * d, dtype=np.complex128)
    k = wavenumbers(d, M)
    idx = tuple(np.mod(k[a], big) for a in range(d))
    c[idx] = field_.coeffs
    return float(np.abs(np.fft.ifftn(c).real * big**d).max())


@dataclass(frozen=True)
class WeakBoundResult:
    lhs: float
    lhs_stderr: float
    bound: float
    passed: bool

    @property
    def margin(self):
        return self.bound - self.lhs

    def to_json(self):
        return {"lhs": self.lhs, "lhs_stderr": self.lhs_stderr, "bound": self.bound,
                "margin": self.margin, "passed": self.passed}


def weak_bound_value(spec, u0, phi, sup_norm=None):
    """``C(A)/2 ||Q||_op ||u0||_inf^2 ||phi||^2`` with ``C(A) = 1/lambda_min(A)``."""
    diag = diagonal_covariance(spec)
    if diag.op_norm == 0:
        return 0.0
    sup = sup_norm_estimate(u0) if sup_norm is None else float(sup_norm)
    phi_l2 = float(np.sum(np.abs(phi.coeffs) ** 2))
    return 0.5 / diag.min_eigenvalue() * diag.op_norm * sup**2 * phi_l2


def weak_bound_from_samples(pairings, bound):
    """Check ``E[(v_t, phi)^2] <= bound (1 + 3 rel_stderr)`` from replica pairings."""
    sq = np.asarray(pairings, dtype=np.float64) ** 2
    lhs, se = mean_and_stderr(sq)
    lhs, se = float(lhs), float(se)
    rel = se / lhs if lhs > 0 else 0.0
    return WeakBoundResult(lhs, se, float(bound), bool(lhs <= bound * (1.0 + 3.0 * rel)))


def weak_bound_check(u0, phi, spec, t, replicas, dt=1e-3, master_seed=0, sup_norm=None, threads=1):
    """Simulate ``(v_t, phi)`` over replicas and compare with the weak bound."""
    from .solver import SolverConfig, heat_semigroup_apply, run_transport_ensemble

    A = diagonal_covariance(spec).A
    n = max(1, int(round(t / dt)))
    cfg = SolverConfig(t / n, t, resolution=spec.resolution, snapshot_times=(t,))
    if not np.any(A):
        return WeakBoundResult(0.0, 0.0, 0.0, True)
    mean_part = float(np.vdot(phi.coeffs, heat_semigroup_apply(u0, A, t).coeffs).real)
    phi_c = phi.coeffs

    def probe(c):
        return (c * phi_c.conj()).reshape(len(c), -1).sum(axis=1).real

    seeds = replica_seeds(master_seed, "weak-bound", replicas)
    out = run_transport_ensemble(u0, spec, cfg, seeds, probe=probe, threads=threads)
    return weak_bound_from_samples(out.values[:, -1] - mean_part, weak_bound_value(spec, u0, phi, sup_norm))
