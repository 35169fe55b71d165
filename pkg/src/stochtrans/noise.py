"""Divergence-free Gaussian transport noise on the torus.

A noise is fixed by multipliers ``theta_k`` on the upper half lattice ``K+``
(first nonzero component positive, ``theta_{-k} = theta_k`` implied) and an
optional weight ``theta_0`` on constant fields. A sample over a time step is

    dW = sum_{k in K+} theta_k sum_a e_k^a (sqrt2 cos(2 pi k.x) B_c + sqrt2 sin(2 pi k.x) B_s)
         + theta_0 sum_a e_a B_0,

with ``{e_k^a}`` an orthonormal basis of the plane orthogonal to ``k`` and the
``B`` independent ``N(0, dt)`` variables. The one-point covariance is
``A = sum_{k != 0} theta_k^2 (I - k k^T / |k|^2) + theta_0^2 I``.
"""

from dataclasses import dataclass, field
from math import comb

import numpy as np

from .fields import (
    SpectralVectorField,
    dealias_kmax,
    flat_index,
    half_lattice,
    is_upper_half,
)
from .kernels import trig_eval

TWO_PI = 2.0 * np.pi


class NoiseSpecError(ValueError):
    """Invalid noise specification."""


class TailTooLargeError(NoiseSpecError):
    """The multiplier family is not resolved at the requested grid size."""


def perpendicular_basis(k):
    """Orthonormal basis of ``k^perp`` from a Householder reflection.

    The reflection maps the last unit axis onto ``k/|k|``; the images of the
    first ``d - 1`` axes span the orthogonal complement. When ``k`` points
    along the last axis the identity is used.
    """
    k = np.asarray(k, dtype=np.float64)
    d = k.size
    khat = k / np.linalg.norm(k)
    e_last = np.zeros(d)
    e_last[-1] = 1.0
    v = e_last - khat
    vv = v @ v
    if vv < 1e-28:
        H = np.eye(d)
    else:
        H = np.eye(d) - 2.0 * np.outer(v, v) / vv
    return H[:, : d - 1].T.copy()


@dataclass(frozen=True, eq=False)
class NoiseSpec:
    """Multiplier table of a torus transport noise.

    ``modes`` holds the upper-half wave vectors with nonzero multiplier,
    ``thetas`` their multipliers and ``theta0`` the constant-field weight.
    """

    dim: int
    resolution: int
    modes: np.ndarray
    thetas: np.ndarray
    theta0: float = 0.0
    family: str = "custom"
    params: dict = field(default_factory=dict)
    normalize: bool = False

    def __post_init__(self):
        dim, M = int(self.dim), int(self.resolution)
        if dim not in (2, 3):
            raise NoiseSpecError(f"dimension must be 2 or 3, got {dim}")
        modes = np.array(self.modes, dtype=np.int64).reshape(-1, dim)
        thetas = np.array(self.thetas, dtype=np.float64).reshape(-1)
        if len(modes) != len(thetas):
            raise NoiseSpecError("modes and thetas differ in length")
        if not np.all(np.isfinite(thetas)) or np.any(thetas < 0):
            raise NoiseSpecError("multipliers must be finite and nonnegative")
        if not np.isfinite(self.theta0) or self.theta0 < 0:
            raise NoiseSpecError("theta0 must be finite and nonnegative")
        kmax = dealias_kmax(M)
        for k in modes:
            if not is_upper_half(k):
                raise NoiseSpecError(f"mode {tuple(k)} is not in the upper half lattice")
            if np.max(np.abs(k)) > kmax:
                raise NoiseSpecError(f"mode {tuple(k)} exceeds the dealiased band |k_i| <= {kmax} at M={M}")
        if len({tuple(k) for k in modes}) != len(modes):
            raise NoiseSpecError("duplicate modes")
        keep = thetas > 0
        modes, thetas = modes[keep], thetas[keep]
        basis = np.array([perpendicular_basis(k) for k in modes]).reshape(len(modes), dim - 1, dim)
        for name, value in (("dim", dim), ("resolution", M), ("modes", modes), ("thetas", thetas),
                            ("theta0", float(self.theta0)), ("basis", basis), ("params", dict(self.params))):
            if isinstance(value, np.ndarray):
                value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def n_modes(self):
        return len(self.thetas)

    @property
    def include_harmonic(self):
        return self.theta0 > 0

    def is_radial(self):
        """True when ``theta_k`` depends only on ``|k|^2``."""
        k2 = (self.modes**2).sum(axis=1)
        table = {}
        for a, t in zip(k2, self.thetas):
            if table.setdefault(int(a), t) != t:
                return False
        return True

    def theta_table(self):
        """Sorted ``[(k2, theta)]`` for a radial spec; ``k2 = 0`` is the harmonic weight."""
        if not self.is_radial():
            raise NoiseSpecError("theta table exists only for radial specs")
        k2 = (self.modes**2).sum(axis=1)
        table = {int(a): float(t) for a, t in zip(k2, self.thetas)}
        if self.theta0 > 0:
            table[0] = self.theta0
        return sorted(table.items())

    def at_resolution(self, M):
        """Same multipliers on another grid (all modes must stay resolved)."""
        return NoiseSpec(self.dim, M, self.modes, self.thetas, self.theta0,
                         self.family, self.params, self.normalize)

    def scaled(self, factor):
        """Multipliers scaled by ``factor`` (covariance by ``factor**2``)."""
        return NoiseSpec(self.dim, self.resolution, self.modes, self.thetas * factor,
                         self.theta0 * factor, self.family, self.params, self.normalize)

    def to_json(self):
        """Serialisable description (radial specs use the shell table)."""
        out = {
            "dim": self.dim,
            "M": self.resolution,
            "family": self.family,
            "params": dict(self.params),
            "normalize": bool(self.normalize),
            "include_harmonic": bool(self.include_harmonic),
        }
        if self.is_radial():
            out["theta_table"] = [{"k2": k2, "theta": t} for k2, t in self.theta_table()]
        else:
            table = [{"k": [int(v) for v in k], "theta": float(t)} for k, t in zip(self.modes, self.thetas)]
            if self.theta0 > 0:
                table.append({"k2": 0, "theta": self.theta0})
            out["theta_table"] = table
        return out

    @classmethod
    def from_json(cls, data):
        dim, M = int(data["dim"]), int(data["M"])
        theta0 = 0.0
        per_mode = {}
        shells = {}
        for row in data["theta_table"]:
            if "k" in row:
                per_mode[tuple(int(v) for v in row["k"])] = float(row["theta"])
            elif int(row["k2"]) == 0:
                theta0 = float(row["theta"])
            else:
                shells[int(row["k2"])] = float(row["theta"])
        if not data.get("include_harmonic", theta0 > 0):
            theta0 = 0.0
        modes, thetas = [], []
        if shells:
            for k in half_lattice(dim, dealias_kmax(M)):
                t = shells.get(int((k**2).sum()))
                if t:
                    modes.append(k)
                    thetas.append(t)
        for k, t in per_mode.items():
            modes.append(np.array(k))
            thetas.append(t)
        return cls(dim, M, np.array(modes, dtype=np.int64).reshape(-1, dim), thetas, theta0,
                   data.get("family", "custom"), data.get("params", {}), bool(data.get("normalize", False)))

    @classmethod
    def from_shells(cls, dim, M, shells, theta0=0.0, family="custom", params=None, normalize=False):
        """Radial spec from ``{k2: theta}``; every resolved mode of each shell is used."""
        modes, thetas = [], []
        for k in half_lattice(dim, dealias_kmax(M)):
            t = shells.get(int((k**2).sum()), 0.0)
            if t > 0:
                modes.append(k)
                thetas.append(t)
        return cls(dim, M, np.array(modes, dtype=np.int64).reshape(-1, dim), thetas, theta0,
                   family, params or {}, normalize)


@dataclass(frozen=True)
class CovarianceDiagnostics:
    """One-point covariance ``A`` and norms of the covariance operator."""

    A: np.ndarray
    trace_Q: float
    hs_norm: float
    op_norm: float

    def distance_to_identity(self):
        """Spectral norm ``||A - I||``."""
        return float(np.linalg.norm(self.A - np.eye(len(self.A)), 2))

    def min_eigenvalue(self):
        return float(np.linalg.eigvalsh(self.A).min())


def projectors(modes):
    """``I - k k^T / |k|^2`` for each row of ``modes``."""
    k = np.asarray(modes, dtype=np.float64)
    d = k.shape[1]
    k2 = (k**2).sum(axis=1)
    return np.eye(d)[None] - k[:, :, None] * k[:, None, :] / k2[:, None, None]


def diagonal_covariance(spec):
    """Exact finite sums for ``A``, ``tr Q``, ``||Q||_HS`` and ``||Q||_op``.

    Each upper-half mode stands for the pair ``+-k``, hence the factors of two.
    """
    d = spec.dim
    t2 = spec.thetas**2
    A = 2.0 * np.einsum("k,kij->ij", t2, projectors(spec.modes)) + spec.theta0**2 * np.eye(d)
    A = 0.5 * (A + A.T)
    trace_q = 2.0 * (d - 1) * t2.sum() + d * spec.theta0**2
    hs2 = 2.0 * (d - 1) * (t2**2).sum() + d * spec.theta0**4
    op = max(float(t2.max()) if len(t2) else 0.0, spec.theta0**2)
    return CovarianceDiagnostics(A=A, trace_Q=float(trace_q), hs_norm=float(np.sqrt(hs2)), op_norm=op)


def covariance_kernel(spec, r):
    """``Q(x, y)`` for ``x - y = r`` by direct summation over modes."""
    r = np.asarray(r, dtype=np.float64).reshape(spec.dim)
    phase = np.cos(TWO_PI * (spec.modes @ r))
    K = 2.0 * np.einsum("k,kij->ij", spec.thetas**2 * phase, projectors(spec.modes))
    return K + spec.theta0**2 * np.eye(spec.dim)


def covariance_form(spec, g_coeffs):
    """``(g, Q g)`` for vector-field coefficients of shape ``(..., d, M, ..., M)``.

    ``g`` need not be real; the sum runs over ``k`` and ``-k`` separately.
    """
    d, M = spec.dim, spec.resolution
    g = np.asarray(g_coeffs)
    total = 0.0
    if spec.n_modes:
        P = projectors(spec.modes)
        t2 = spec.thetas**2
        for sign in (1, -1):
            idx = flat_index(sign * spec.modes, M)
            gk = g[(Ellipsis, slice(None)) + idx]  # (..., d, K)
            quad = np.einsum("...ik,kij,...jk->...k", gk.conj(), P, gk).real
            total = total + (quad * t2).sum(axis=-1)
    if spec.theta0 > 0:
        g0 = g[(Ellipsis, slice(None)) + (0,) * d]
        total = total + spec.theta0**2 * (np.abs(g0) ** 2).sum(axis=-1)
    return total


# ---------------------------------------------------------------------------
# families
# ---------------------------------------------------------------------------


def cutoff_family(dim, n_cut, M, normalize=True):
    """Constant multiplier on all modes with ``0 < |k| <= n_cut``.

    Full shells are invariant under the lattice symmetry group, so ``A = c I``;
    with ``normalize`` the multipliers are divided by ``sqrt(c)`` giving ``A = I``.
    """
    if n_cut < 1:
        raise NoiseSpecError("n_cut must be at least 1")
    kmax = dealias_kmax(M)
    if n_cut > kmax:
        raise NoiseSpecError(f"n_cut={n_cut} exceeds the dealiased band |k_i| <= {kmax} at M={M}")
    modes = half_lattice(dim, kmax)
    modes = modes[(modes**2).sum(axis=1) <= n_cut**2]
    if len(modes) == 0:
        raise NoiseSpecError("empty shell set")
    thetas = np.ones(len(modes))
    spec = NoiseSpec(dim, M, modes, thetas, 0.0, "cutoff", {"N_cut": int(n_cut)}, bool(normalize))
    if normalize:
        c = np.trace(diagonal_covariance(spec).A) / dim
        spec = NoiseSpec(dim, M, modes, thetas / np.sqrt(c), 0.0, "cutoff", {"N_cut": int(n_cut)}, True)
    return spec


TAIL_TOLERANCE = 1e-10


def mollified_prefactor(dim, h):
    """``(4 pi h^2)^{d/4} sqrt(d / (d - 1))``, also the harmonic weight."""
    return (4.0 * np.pi * h * h) ** (dim / 4.0) * np.sqrt(dim / (dim - 1.0))


def mollified_family(dim, h, M):
    """Heat-kernel mollified multipliers ``theta_k = C_h exp(-2 pi^2 h^2 |k|^2)``.

    ``C_h = (4 pi h^2)^{d/4} sqrt(d/(d-1))`` and the harmonic weight is ``C_h``.
    Raises :class:`TailTooLargeError` when the squared multipliers outside the
    dealiased band exceed ``1e-10`` of their total.
    """
    if not h > 0:
        raise NoiseSpecError("h must be positive")
    kmax = dealias_kmax(M)
    frac = mollified_tail_fraction(dim, h, kmax)
    if frac > TAIL_TOLERANCE:
        raise TailTooLargeError(
            f"h={h} is under-resolved at M={M}: tail fraction {frac:.2e} > {TAIL_TOLERANCE:g}"
        )
    modes = half_lattice(dim, kmax)
    pref = mollified_prefactor(dim, h)
    thetas = pref * np.exp(-2.0 * np.pi**2 * h * h * (modes**2).sum(axis=1))
    return NoiseSpec(dim, M, modes, thetas, pref, "mollified", {"h": float(h)}, False)


def mollified_tail_fraction(dim, h, kmax):
    """Share of ``sum_k theta_k^2`` (all of Z^d) carried by modes with some ``|k_i| > kmax``."""
    a = 4.0 * np.pi**2 * h * h
    n_far = int(np.ceil(np.sqrt(80.0 / a))) + kmax + 2
    n = np.arange(1, n_far + 1)
    terms = np.exp(-a * n * n)
    s_in = 1.0 + 2.0 * terms[:kmax].sum()
    s_out = 2.0 * terms[kmax:].sum()
    tail = sum(comb(dim, j) * s_in ** (dim - j) * s_out**j for j in range(1, dim + 1))
    return float(tail / (s_in + s_out) ** dim)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def draw_amplitudes(spec, dt, rng, size=None):
    """Cosine, sine and constant amplitude vectors of one increment.

    Returns arrays of shape ``(..., K, d)``, ``(..., K, d)`` and ``(..., d)``.
    Draw order: per mode (lattice order), per basis vector, cosine then sine;
    then the harmonic components.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    shape = () if size is None else (int(size),)
    d, K = spec.dim, spec.n_modes
    xi = rng.standard_normal(shape + (K, d - 1, 2))
    scale = np.sqrt(2.0 * dt) * spec.thetas
    vec = np.einsum("...kac,kai->...kci", xi, spec.basis) * scale[:, None, None]
    cos_amp, sin_amp = vec[..., 0, :], vec[..., 1, :]
    if spec.theta0 > 0:
        const = np.sqrt(dt) * spec.theta0 * rng.standard_normal(shape + (d,))
    else:
        const = np.zeros(shape + (d,))
    return cos_amp, sin_amp, const


def amplitudes_to_coeffs(spec, cos_amp, sin_amp, const):
    """Spectral coefficients ``(..., d, M, ..., M)`` of an increment."""
    d, M = spec.dim, spec.resolution
    lead = const.shape[:-1]
    c = np.zeros(lead + (d,) + (M,) * d, dtype=np.complex128)
    half = 0.5 * (cos_amp - 1j * sin_amp)  # (..., K, d)
    half = np.moveaxis(half, -1, -2)  # (..., d, K)
    pos = flat_index(spec.modes, M)
    neg = flat_index(-spec.modes, M)
    c[(Ellipsis, slice(None)) + pos] = half
    c[(Ellipsis, slice(None)) + neg] = half.conj()
    c[(Ellipsis, slice(None)) + (0,) * d] = const
    return c


@dataclass(frozen=True, eq=False)
class NoiseIncrement:
    """One realised increment ``dW`` over a step of length ``dt``."""

    spec: NoiseSpec
    dt: float
    cos_amp: np.ndarray
    sin_amp: np.ndarray
    const: np.ndarray

    @property
    def field(self):
        coeffs = amplitudes_to_coeffs(self.spec, self.cos_amp, self.sin_amp, self.const)
        return SpectralVectorField(coeffs, divergence_free=True)

    def on_grid(self):
        """Physical grid values, shape ``(d, M, ..., M)``."""
        return self.field.to_physical()

    def at_points(self, points):
        return evaluate_increment_at_points(self, points)


def sample_increment(spec, dt, rng):
    """Sample one increment from ``rng`` (a ``numpy.random.Generator``)."""
    cos_amp, sin_amp, const = draw_amplitudes(spec, dt, rng)
    return NoiseIncrement(spec, float(dt), cos_amp, sin_amp, const)


def evaluate_increment_at_points(increment, points):
    """Values of the realised increment at arbitrary points in ``[0, 1)^d``."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, increment.spec.dim)
    if np.any(points < 0) or np.any(points >= 1):
        raise ValueError("points must lie in [0, 1)^d")
    return trig_eval(points, increment.spec.modes, increment.cos_amp, increment.sin_amp, increment.const)

