"""Spectral scalar and vector fields on the unit-period torus.

Coefficients use the orthonormal exponential basis

    u(x) = sum_k u_k exp(2 pi i k.x),    u_k = int u(x) exp(-2 pi i k.x) dx,

stored as full complex arrays in numpy FFT ordering, so ``u_k = fftn(u) / M^d``.
The Laplacian eigenvalue of mode ``k`` is ``4 pi^2 |k|^2`` and
``||u||_{H^s}^2 = sum_k (1 + 4 pi^2 |k|^2)^s |u_k|^2``.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .kernels import trig_eval

TWO_PI = 2.0 * np.pi


class InvalidFieldError(ValueError):
    """Raised for malformed or non-finite field data."""


# ---------------------------------------------------------------------------
# lattice helpers
# ---------------------------------------------------------------------------


def dealias_kmax(M):
    """Largest retained per-axis wavenumber under the two-thirds rule.

    The product of two fields with ``|k_i| <= kmax`` is alias-free on the
    retained modes exactly when ``3 kmax < M``.
    """
    return -(-int(M) // 3) - 1


@lru_cache(maxsize=32)
def _wavenumbers(dim, M):
    k1 = np.fft.fftfreq(M, d=1.0 / M).round().astype(np.int64)
    grids = np.meshgrid(*([k1] * dim), indexing="ij")
    out = np.stack(grids)
    out.setflags(write=False)
    return out


def wavenumbers(dim, M):
    """Integer wave vectors, shape ``(dim, M, ..., M)``, in FFT ordering."""
    return _wavenumbers(int(dim), int(M))


@lru_cache(maxsize=32)
def _k_squared(dim, M):
    k = _wavenumbers(dim, M)
    out = (k.astype(np.float64) ** 2).sum(axis=0)
    out.setflags(write=False)
    return out


def k_squared(dim, M):
    """``|k|^2`` on the FFT grid."""
    return _k_squared(int(dim), int(M))


@lru_cache(maxsize=32)
def _dealias_mask(dim, M):
    kmax = dealias_kmax(M)
    k = _wavenumbers(dim, M)
    out = np.all(np.abs(k) <= kmax, axis=0)
    out.setflags(write=False)
    return out


def dealias_mask(dim, M):
    """Boolean mask of the modes kept by the two-thirds rule."""
    return _dealias_mask(int(dim), int(M))


@lru_cache(maxsize=32)
def _nyquist_mask(dim, M):
    k = _wavenumbers(dim, M)
    out = np.any(k == -(M // 2), axis=0)
    out.setflags(write=False)
    return out


def is_upper_half(k):
    """True when the first nonzero component of ``k`` is positive."""
    for c in k:
        if c != 0:
            return c > 0
    return False


def lattice_box(dim, kmax):
    """All integer vectors with ``|k_i| <= kmax``, lexicographic order."""
    r = np.arange(-kmax, kmax + 1)
    grids = np.meshgrid(*([r] * dim), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def half_lattice(dim, kmax):
    """Wave vectors of the box ``|k_i| <= kmax`` whose first nonzero entry is positive."""
    box = lattice_box(dim, kmax)
    keep = np.zeros(len(box), dtype=bool)
    for i in range(dim):
        earlier_zero = np.all(box[:, :i] == 0, axis=1)
        keep |= earlier_zero & (box[:, i] > 0)
    return box[keep]


def flat_index(modes, M):
    """Map wave vectors to indices into a ``(M,)*d`` FFT-ordered array."""
    modes = np.asarray(modes, dtype=np.int64)
    return tuple((modes % M).T)


# ---------------------------------------------------------------------------
# field types
# ---------------------------------------------------------------------------


def _check_shape(coeffs, leading):
    shape = coeffs.shape[leading:]
    if len(shape) not in (2, 3) or len(set(shape)) != 1:
        raise InvalidFieldError(f"coefficient array must be (M,)*d with d in (2, 3), got {coeffs.shape}")
    M = shape[0]
    if M % 2 or M < 4:
        raise InvalidFieldError(f"resolution must be even and >= 4, got {M}")
    return len(shape), M


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Real scalar field stored by its Fourier coefficients.

    Nyquist modes are zeroed on construction; the array is read-only.
    """

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=np.complex128, copy=True)
        dim, M = _check_shape(c, 0)
        c[_nyquist_mask(dim, M)] = 0.0
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def dim(self):
        return self.coeffs.ndim

    @property
    def resolution(self):
        return self.coeffs.shape[0]

    def hermitian_defect(self):
        """Largest ``|c(-k) - conj(c(k))|``; zero for a real field."""
        c = self.coeffs
        flipped = np.roll(np.flip(c), 1, axis=tuple(range(c.ndim)))
        return float(np.max(np.abs(flipped - np.conj(c))))

    def to_physical(self):
        """Grid values at ``x_j = j / M``."""
        return to_physical(self.coeffs)

    def mean(self):
        return float(self.coeffs[(0,) * self.dim].real)

    def __add__(self, other):
        _same_grid(self, other)
        return SpectralField(self.coeffs + other.coeffs)

    def __sub__(self, other):
        _same_grid(self, other)
        return SpectralField(self.coeffs - other.coeffs)

    def __mul__(self, scalar):
        return SpectralField(self.coeffs * float(scalar))

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class SpectralVectorField:
    """Vector field with ``dim`` scalar components in one ``(dim, M, ..., M)`` array.

    With ``divergence_free=True`` construction asserts ``sum_i k_i c_i(k) = 0``.
    """

    coeffs: np.ndarray
    divergence_free: bool = False

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=np.complex128, copy=True)
        dim, M = _check_shape(c, 1)
        if c.shape[0] != dim:
            raise InvalidFieldError(f"need {dim} components, got {c.shape[0]}")
        c[:, _nyquist_mask(dim, M)] = 0.0
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)
        if self.divergence_free:
            k = wavenumbers(dim, M)
            div = np.abs((k * c).sum(axis=0)).max()
            scale = max(1.0, float(np.abs(c).max()) * M)
            if div > 1e-12 * scale:
                raise InvalidFieldError(f"field is not divergence-free (defect {div:.3e})")

    @property
    def dim(self):
        return self.coeffs.shape[0]

    @property
    def resolution(self):
        return self.coeffs.shape[1]

    def component(self, i):
        return SpectralField(self.coeffs[i])

    def to_physical(self):
        return to_physical(self.coeffs, leading=1)


def _same_grid(a, b):
    if a.dim != b.dim or a.resolution != b.resolution:
        raise InvalidFieldError(
            f"grid mismatch: d={a.dim}, M={a.resolution} vs d={b.dim}, M={b.resolution}"
        )


# ---------------------------------------------------------------------------
# transforms
# ---------------------------------------------------------------------------


def to_physical(coeffs, leading=0):
    """Inverse transform of coefficient arrays (extra leading axes allowed)."""
    coeffs = np.asarray(coeffs)
    axes = tuple(range(leading, coeffs.ndim))
    n = np.prod([coeffs.shape[a] for a in axes])
    return np.fft.ifftn(coeffs, axes=axes).real * n


def from_physical(values, leading=0):
    """Coefficients of real grid data; returns a raw array when ``leading > 0``."""
    values = np.asarray(values, dtype=np.float64)
    axes = tuple(range(leading, values.ndim))
    n = np.prod([values.shape[a] for a in axes])
    c = np.fft.fftn(values, axes=axes) / n
    if leading == 0:
        return SpectralField(c)
    dim = len(axes)
    M = values.shape[-1]
    c[..., _nyquist_mask(dim, M)] = 0.0
    return c


def field_from_modes(dim, M, terms):
    """Build a real field from ``{k: complex amplitude}`` on the upper half lattice.

    Each entry ``k -> a`` contributes ``a e^{2 pi i k.x} + conj(a) e^{-2 pi i k.x}``;
    the zero vector contributes ``a.real`` once.
    """
    c = np.zeros((M,) * dim, dtype=np.complex128)
    for k, a in terms.items():
        k = tuple(int(v) for v in k)
        if len(k) != dim:
            raise InvalidFieldError(f"wave vector {k} has wrong dimension")
        if max(abs(v) for v in k) >= M // 2:
            raise InvalidFieldError(f"wave vector {k} not resolved at M={M}")
        if all(v == 0 for v in k):
            c[(0,) * dim] += complex(a).real
            continue
        idx = tuple(v % M for v in k)
        nidx = tuple((-v) % M for v in k)
        c[idx] += a
        c[nidx] += np.conj(a)
    return SpectralField(c)


def cosine_mode(dim, M, k, amplitude=1.0):
    """``amplitude * sqrt(2) cos(2 pi k.x)``, unit L2 norm for amplitude 1."""
    return field_from_modes(dim, M, {tuple(k): amplitude / np.sqrt(2.0)})


def sine_mode(dim, M, k, amplitude=1.0):
    """``amplitude * sqrt(2) sin(2 pi k.x)``."""
    return field_from_modes(dim, M, {tuple(k): -1j * amplitude / np.sqrt(2.0)})


def constant_field(dim, M, value=1.0):
    c = np.zeros((M,) * dim, dtype=np.complex128)
    c[(0,) * dim] = value
    return SpectralField(c)


def evaluate_at_points(field, points):
    """Evaluate a scalar field at arbitrary points by direct summation."""
    dim, M = field.dim, field.resolution
    modes = half_lattice(dim, M // 2 - 1)
    c = field.coeffs[flat_index(modes, M)]
    keep = c != 0
    modes, c = modes[keep], c[keep]
    vals = trig_eval(
        np.asarray(points, dtype=np.float64).reshape(-1, dim),
        modes,
        (2.0 * c.real)[:, None],
        (-2.0 * c.imag)[:, None],
        np.array([field.coeffs[(0,) * dim].real]),
    )
    return vals[:, 0]


# ---------------------------------------------------------------------------
# norms and differential operators
# ---------------------------------------------------------------------------


def sobolev_weights(dim, M, s):
    """Bessel-potential weights ``(1 + 4 pi^2 |k|^2)^s``."""
    return (1.0 + 4.0 * np.pi**2 * k_squared(dim, M)) ** s


def sobolev_norm(field, s):
    """Truncated Bessel-potential norm ``||u||_{H^s}``; ``s = 0`` is the L2 norm."""
    c = field.coeffs
    if not np.all(np.isfinite(c)):
        raise InvalidFieldError("field has non-finite coefficients")
    w = sobolev_weights(field.dim, field.resolution, s)
    return float(np.sqrt(np.sum(w * np.abs(c) ** 2)))


def l2_inner(f, g):
    """Real L2 pairing ``(f, g)``."""
    _same_grid(f, g)
    return float(np.sum(np.conj(f.coeffs) * g.coeffs).real)


def laplacian(field):
    """Spectral Laplacian, multiplier ``-4 pi^2 |k|^2``."""
    return SpectralField(-4.0 * np.pi**2 * k_squared(field.dim, field.resolution) * field.coeffs)


def gradient(field):
    """Spectral gradient, multiplier ``2 pi i k``."""
    k = wavenumbers(field.dim, field.resolution)
    return SpectralVectorField(TWO_PI * 1j * k * field.coeffs[None])


def divergence(vfield):
    """Spectral divergence, ``sum_i 2 pi i k_i v_i``."""
    k = wavenumbers(vfield.dim, vfield.resolution)
    return SpectralField((TWO_PI * 1j * k * vfield.coeffs).sum(axis=0))


def leray_project(vfield):
    """Per-mode projection onto divergence-free fields (constant part kept)."""
    dim, M = vfield.dim, vfield.resolution
    k = wavenumbers(dim, M).astype(np.float64)
    k2 = k_squared(dim, M).copy()
    k2[(0,) * dim] = 1.0
    c = vfield.coeffs
    kc = (k * c).sum(axis=0) / k2
    return SpectralVectorField(c - k * kc[None], divergence_free=True)


def _transport_coeffs(u_phys, x_phys, dim, M):
    """Dealiased coefficients of div(u X) from physical arrays (batch axes allowed)."""
    k = wavenumbers(dim, M)
    mask = dealias_mask(dim, M)
    axes = tuple(range(-dim, 0))
    out = 0.0
    for i in range(dim):
        prod = np.fft.fftn(u_phys * np.take(x_phys, i, axis=-dim - 1), axes=axes)
        out = out + TWO_PI * 1j * k[i] * prod
    return out * mask / M**dim


def transport_term(u, X):
    """Dealiased pseudo-spectral ``div(u X)``.

    Inputs are truncated to the two-thirds band before the product and the
    output is truncated again, so the retained modes are alias-free.
    """
    if X.dim != u.dim or X.resolution != u.resolution:
        raise InvalidFieldError(
            f"resolution mismatch: u has d={u.dim}, M={u.resolution}; X has d={X.dim}, M={X.resolution}"
        )
    dim, M = u.dim, u.resolution
    mask = dealias_mask(dim, M)
    u_phys = to_physical(u.coeffs * mask)
    x_phys = to_physical(X.coeffs * mask, leading=1)
    return SpectralField(_transport_coeffs(u_phys, x_phys, dim, M))


# ---------------------------------------------------------------------------
# time-Hoelder estimate
# ---------------------------------------------------------------------------

HOLDER_MAX_SNAPSHOTS = 200


def holder_norm_estimate(snapshots, alpha, s):
    """Max over snapshot pairs of ``||u_ti - u_tj||_{H^s} / |ti - tj|^alpha``.

    More than 200 snapshots are thinned to 200 evenly spaced ones first.
    """
    if len(snapshots) < 2:
        raise ValueError("need at least two snapshots")
    times = np.array([t for t, _ in snapshots], dtype=np.float64)
    if np.any(np.diff(times) <= 0):
        raise ValueError("snapshot times must be strictly increasing")
    if len(snapshots) > HOLDER_MAX_SNAPSHOTS:
        keep = np.unique(np.linspace(0, len(snapshots) - 1, HOLDER_MAX_SNAPSHOTS).round().astype(int))
        snapshots = [snapshots[i] for i in keep]
        times = times[keep]
    first = snapshots[0][1]
    w = np.sqrt(sobolev_weights(first.dim, first.resolution, s)).ravel()
    vecs = np.stack([f.coeffs.ravel() * w for _, f in snapshots])
    best = 0.0
    for i in range(len(times) - 1):
        dist = np.sqrt(np.sum(np.abs(vecs[i + 1:] - vecs[i]) ** 2, axis=1))
        best = max(best, float(np.max(dist / (times[i + 1:] - times[i]) ** alpha)))
    return best


def white_noise_coeffs(dim, M, rng, size=None):
    """Coefficients of truncated spatial white noise on the dealiased band.

    Modes in the band get independent unit complex Gaussians (real and
    imaginary parts of variance 1/2), paired Hermitian; ``k = 0`` is real
    ``N(0, 1)``. Draw order follows the upper half lattice, then ``k = 0``.
    """
    shape = () if size is None else (int(size),)
    modes = half_lattice(dim, dealias_kmax(M))
    xi = rng.standard_normal(shape + (len(modes), 2))
    z = (xi[..., 0] + 1j * xi[..., 1]) / np.sqrt(2.0)
    zero = rng.standard_normal(shape)
    c = np.zeros(shape + (M,) * dim, dtype=np.complex128)
    c[(Ellipsis,) + flat_index(modes, M)] = z
    c[(Ellipsis,) + flat_index(-modes, M)] = z.conj()
    c[(Ellipsis,) + (0,) * dim] = zero
    return c


def white_noise(dim, M, rng):
    """Truncated white noise as a :class:`SpectralField`."""
    return SpectralField(white_noise_coeffs(dim, M, rng))
