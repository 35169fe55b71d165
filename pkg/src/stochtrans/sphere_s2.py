"""Divergence-free transport noise and particle flow on the unit sphere.

Noise fields are ``W = sum_{l,m} theta_l Psi_lm B^lm`` with
``Psi_lm = (l(l+1))^{-1/2} x cross grad Y_lm`` built from real spherical
harmonics. For degree-radial multipliers the diagonal covariance is
``c`` times the tangent-plane identity with ``c = sum_l theta_l^2 (2l+1)/(8 pi)``.
"""

from dataclasses import dataclass

import numpy as np
from numpy.polynomial import legendre as npleg

from .kernels import lm_index, sphere_basis

FULL_TRACE = 8.0 * np.pi  # |S^2| * 2, the trace giving c = 1


class SphereSpecError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SphereNoiseSpec:
    """Degree multipliers ``thetas[l]`` for ``l = 0..L_max`` (``thetas[0]`` unused)."""

    thetas: np.ndarray
    family: str = "custom"
    params: dict = None

    def __post_init__(self):
        th = np.array(self.thetas, dtype=np.float64).reshape(-1)
        if len(th) < 2:
            raise SphereSpecError("need at least degree 1")
        if np.any(th < 0) or not np.all(np.isfinite(th)):
            raise SphereSpecError("thetas must be finite and non-negative")
        th[0] = 0.0
        th.setflags(write=False)
        object.__setattr__(self, "thetas", th)
        object.__setattr__(self, "params", dict(self.params or {}))

    @property
    def l_max(self):
        return len(self.thetas) - 1

    @property
    def degree_weights(self):
        """``theta_l`` repeated over the ``2l+1`` orders, in ``lm_index`` order."""
        l = np.repeat(np.arange(self.l_max + 1), 2 * np.arange(self.l_max + 1) + 1)
        return self.thetas[l]

    def trace_sum(self):
        """``sum_l theta_l^2 (2l+1)`` (the trace of ``Q``)."""
        l = np.arange(self.l_max + 1)
        return float(np.sum(self.thetas**2 * (2 * l + 1)))

    def normalized(self):
        """Rescaled so that ``sum_l theta_l^2 (2l+1) = 8 pi``, i.e. ``c = 1``."""
        t = self.trace_sum()
        if t == 0:
            raise SphereSpecError("cannot normalize a zero spec")
        return SphereNoiseSpec(self.thetas * np.sqrt(FULL_TRACE / t), self.family, {**self.params, "normalized": True})

    def op_norm(self):
        """``max_l theta_l^2``, the operator norm of ``Q``."""
        return float(np.max(self.thetas**2))

    def to_json(self):
        return {"L_max": self.l_max, "family": self.family, "params": self.params,
                "theta_table": [{"l": int(l), "theta": float(t)} for l, t in enumerate(self.thetas) if l > 0]}


def sphere_band_family(l_min, l_max, normalize=True):
    """Constant ``theta_l`` on ``l_min <= l <= l_max``."""
    if not 1 <= l_min <= l_max:
        raise SphereSpecError("need 1 <= l_min <= l_max")
    th = np.zeros(l_max + 1)
    th[l_min:] = 1.0
    spec = SphereNoiseSpec(th, "band", {"l_min": l_min, "l_max": l_max})
    return spec.normalized() if normalize else spec


def sphere_diagonal_covariance(spec):
    """``c`` in ``A(x) = c P_x``: ``sum_l theta_l^2 (2l+1) / (8 pi)``."""
    return spec.trace_sum() / FULL_TRACE


# ---------------------------------------------------------------------------
# geometry helpers
# ---------------------------------------------------------------------------


def normalize_points(points):
    p = np.asarray(points, dtype=np.float64)
    return p / np.linalg.norm(p, axis=-1, keepdims=True)


def uniform_sphere_points(count, rng):
    """Uniform points from normalized Gaussian vectors."""
    return normalize_points(rng.standard_normal((count, 3)))


def tangent_frame(x):
    """Orthonormal ``(e1, e2)`` spanning the tangent plane at unit ``x``."""
    x = np.asarray(x, dtype=np.float64)
    helper = np.array([1.0, 0.0, 0.0]) if abs(x[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(x, helper)
    e1 /= np.linalg.norm(e1)
    return np.stack([e1, np.cross(x, e1)])


def exp_map(x, v):
    """Geodesic endpoint ``cos|v| x + sin|v| v/|v|``, renormalized."""
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    small = n < 1e-8
    sinc = np.where(small, 1.0 - n**2 / 6.0, np.sin(n) / np.where(small, 1.0, n))
    return normalize_points(np.cos(n) * x + sinc * v)


def parallel_transport(w, a, b):
    """Transport tangent ``w`` at ``a`` to ``b`` along the shortest geodesic."""
    c = np.sum(a * b, axis=-1, keepdims=True)
    wb = np.sum(w * b, axis=-1, keepdims=True)
    return w - wb / (1.0 + c) * (a + b)


def geodesic_distance(a, b):
    c = np.clip(np.sum(a * b, axis=-1), -1.0, 1.0)
    return np.arccos(c)


def random_rotation(rng):
    """Haar-distributed rotation matrix."""
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


# ---------------------------------------------------------------------------
# increments
# ---------------------------------------------------------------------------


def _field_values(points, coeffs, l_max):
    """``sum_k coeffs[k] Psi_k(x)``; ``coeffs`` is ``(n_lm,)`` or per point ``(P, n_lm)``."""
    _, psi = sphere_basis(points, l_max)
    c = np.asarray(coeffs)
    if c.ndim == 1:
        return np.einsum("pkj,k->pj", psi, c)
    return np.einsum("pkj,pk->pj", psi, c)


@dataclass(frozen=True, eq=False)
class SphereIncrement:
    """One realisation ``dW`` of the sphere noise, optionally in a rotated frame.

    With ``rotation`` ``R`` the field is ``x -> R dW(R^T x)``, which has the
    same law as ``dW``.
    """

    spec: SphereNoiseSpec
    dt: float
    coeffs: np.ndarray
    rotation: np.ndarray = None

    def at_points(self, points):
        pts = normalize_points(np.asarray(points, dtype=np.float64).reshape(-1, 3))
        if self.rotation is None:
            return _field_values(pts, self.coeffs, self.spec.l_max)
        R = np.asarray(self.rotation)
        return _field_values(pts @ R, self.coeffs, self.spec.l_max) @ R.T

    def rotated(self, rotation):
        R = np.asarray(rotation, dtype=np.float64)
        base = np.eye(3) if self.rotation is None else self.rotation
        return SphereIncrement(self.spec, self.dt, self.coeffs, R @ base)


def sphere_draw_coeffs(spec, dt, rng, size=None):
    """``sqrt(dt) theta_l xi_lm`` with ``xi`` standard normal in ``lm_index`` order."""
    shape = () if size is None else (int(size),)
    xi = rng.standard_normal(shape + ((spec.l_max + 1) ** 2,))
    return np.sqrt(dt) * spec.degree_weights * xi


def sphere_sample_increment(spec, dt, rng):
    if dt <= 0:
        raise ValueError("dt must be positive")
    return SphereIncrement(spec, float(dt), sphere_draw_coeffs(spec, dt, rng))


def sphere_sample_increment_at_points(spec, dt, points, rng):
    """Tangent increments at ``points`` from one fresh realisation."""
    return sphere_sample_increment(spec, dt, rng).at_points(points)


# ---------------------------------------------------------------------------
# covariance kernels
# ---------------------------------------------------------------------------


def _cross_matrix(x):
    return np.array([[0.0, -x[2], x[1]], [x[2], 0.0, -x[0]], [-x[1], x[0], 0.0]])


def sphere_covariance_kernel(spec, x, y, method="sum"):
    """``Q(x, y) = sum_l theta_l^2 sum_m Psi_lm(x) Psi_lm(y)^T``.

    ``method="sum"`` evaluates the basis fields directly; ``"legendre"`` uses
    the addition theorem ``sum_m Y_lm(x) Y_lm(y) = (2l+1)/(4 pi) P_l(x.y)`` and
    differentiates it on both factors.
    """
    x = normalize_points(np.asarray(x, dtype=np.float64))
    y = normalize_points(np.asarray(y, dtype=np.float64))
    w = spec.degree_weights**2
    if method == "sum":
        _, px = sphere_basis(x[None], spec.l_max)
        _, py = sphere_basis(y[None], spec.l_max)
        return np.einsum("k,ki,kj->ij", w, px[0], py[0])
    if method != "legendre":
        raise ValueError(f"unknown method {method!r}")
    mu = float(np.clip(x @ y, -1.0, 1.0))
    Px = np.eye(3) - np.outer(x, x)
    Py = np.eye(3) - np.outer(y, y)
    out = np.zeros((3, 3))
    for l in range(1, spec.l_max + 1):
        t2 = spec.thetas[l] ** 2
        if t2 == 0:
            continue
        coef = np.zeros(l + 1)
        coef[l] = (2 * l + 1) / (4.0 * np.pi)
        d1 = npleg.legval(mu, npleg.legder(coef, 1))
        d2 = npleg.legval(mu, npleg.legder(coef, 2)) if l >= 2 else 0.0
        G = d2 * np.outer(Px @ y, Py @ x) + d1 * Px @ Py
        out += t2 / (l * (l + 1.0)) * _cross_matrix(x) @ G @ _cross_matrix(y).T
    return out


@dataclass(frozen=True)
class SphereCovarianceCheck:
    point: np.ndarray
    empirical: np.ndarray  # 2x2 in the tangent frame
    stderr: np.ndarray
    c: float

    def within(self, n_sigma=3.0):
        return bool(np.all(np.abs(self.empirical - self.c * np.eye(2)) <= n_sigma * self.stderr))


def empirical_sphere_covariance(spec, point, samples, rng, chunk=50000):
    """Monte Carlo ``A(x) = E[dW(x) dW(x)^T] / dt`` in a tangent frame at ``point``."""
    x = normalize_points(np.asarray(point, dtype=np.float64))
    _, psi = sphere_basis(x[None], spec.l_max)
    frame = tangent_frame(x)
    comp = psi[0] @ frame.T  # (n_lm, 2)
    prods = []
    left = samples
    while left > 0:
        n = min(chunk, left)
        v = sphere_draw_coeffs(spec, 1.0, rng, size=n) @ comp
        prods.append(v[:, :, None] * v[:, None, :])
        left -= n
    prods = np.concatenate(prods)
    return SphereCovarianceCheck(x, prods.mean(axis=0), prods.std(axis=0, ddof=1) / np.sqrt(samples),
                                 sphere_diagonal_covariance(spec))


# ---------------------------------------------------------------------------
# flow
# ---------------------------------------------------------------------------


def sphere_advect(points, increment):
    """Tangent-plane Heun step for ``dX = -dW(X)`` followed by the exponential map.

    The corrector velocity evaluated at the predicted point is parallel
    transported back to the base point before averaging.
    """
    x = normalize_points(points)
    v1 = -increment.at_points(x)
    x_pred = exp_map(x, v1)
    v2 = parallel_transport(-increment.at_points(x_pred), x_pred, x)
    return exp_map(x, 0.5 * (v1 + v2))


def _advect_per_point(points, coeffs, l_max):
    x = normalize_points(points)
    v1 = -_field_values(x, coeffs, l_max)
    x_pred = exp_map(x, v1)
    v2 = parallel_transport(-_field_values(x_pred, coeffs, l_max), x_pred, x)
    return exp_map(x, 0.5 * (v1 + v2))


def sphere_flow_step(points, spec, dt, rng):
    """Advance all points with one shared realisation drawn from ``rng``."""
    return sphere_advect(points, sphere_sample_increment(spec, dt, rng))


def sphere_flow(points, spec, dt, n_steps, rng, rotation=None):
    """``n_steps`` flow steps; ``rotation`` evaluates every increment in a rotated frame."""
    x = normalize_points(points)
    for _ in range(n_steps):
        inc = sphere_sample_increment(spec, dt, rng)
        if rotation is not None:
            inc = inc.rotated(rotation)
        x = sphere_advect(x, inc)
    return x


@dataclass(frozen=True)
class SphereDiffusivity:
    value: float
    stderr: float
    target: float


def sphere_diffusivity(spec, dt, n_steps, replicas, rng, start=(0.0, 0.0, 1.0)):
    """``E d(X_t, X_0)^2 / t`` over independent realisations; target ``2c``."""
    x0 = np.tile(normalize_points(np.asarray(start, dtype=np.float64)), (replicas, 1))
    x = x0.copy()
    for _ in range(n_steps):
        x = _advect_per_point(x, sphere_draw_coeffs(spec, dt, rng, size=replicas), spec.l_max)
    sq = geodesic_distance(x, x0) ** 2 / (n_steps * dt)
    return SphereDiffusivity(float(sq.mean()), float(sq.std(ddof=1) / np.sqrt(replicas)),
                             2.0 * sphere_diagonal_covariance(spec))


@dataclass(frozen=True)
class SphereUniformityReport:
    degrees: np.ndarray
    orders: np.ndarray
    moments: np.ndarray
    threshold: float
    mode_pass: np.ndarray

    @property
    def passed(self):
        return bool(np.all(self.mode_pass))

    @property
    def pass_fraction(self):
        return float(np.mean(self.mode_pass))

    def to_json(self):
        return {"degrees": self.degrees.tolist(), "orders": self.orders.tolist(),
                "moments": self.moments.tolist(), "threshold": self.threshold,
                "pass_fraction": self.pass_fraction, "passed": self.passed}


def sphere_uniformity_test(points, l_max=3):
    """Moments ``P^{-1} sum_i Y_lm(X_i)`` for ``1 <= l <= l_max`` against ``3/sqrt(4 pi P)``."""
    x = normalize_points(points)
    P = len(x)
    ylm, _ = sphere_basis(x, l_max)
    deg = np.array([l for l in range(1, l_max + 1) for _ in range(-l, l + 1)])
    order = np.array([m for l in range(1, l_max + 1) for m in range(-l, l + 1)])
    idx = np.array([lm_index(l, m) for l, m in zip(deg, order)])
    mom = ylm[:, idx].mean(axis=0)
    thr = 3.0 / np.sqrt(4.0 * np.pi * P)
    return SphereUniformityReport(deg, order, mom, thr, np.abs(mom) <= thr)


def pair_correlation_at_angle(spec, angle):
    """``||Q(x, y)||_F`` for two points separated by ``angle`` (rotation invariant)."""
    x = np.array([0.0, 0.0, 1.0])
    y = np.array([np.sin(angle), 0.0, np.cos(angle)])
    return float(np.linalg.norm(sphere_covariance_kernel(spec, x, y, method="legendre")))
