"""Hot evaluation kernels with numba and pure-numpy implementations.

Two kernels dominate particle work:

* ``trig_eval`` evaluates a real trigonometric series on the torus at
  scattered points (used for noise increments and for fields).
* ``sphere_basis`` evaluates real spherical harmonics and the rotated
  gradient fields built from them at points on the unit sphere.

Each has a loop implementation compiled with numba and a vectorised numpy
implementation. The public entry points pick one according to
:mod:`stochtrans._accel`; both are importable for testing and benchmarks.
"""

import math

import numpy as np

from ._accel import HAVE_NUMBA, njit

TWO_PI = 2.0 * np.pi
_NUMPY_BLOCK = 1 << 21


# ---------------------------------------------------------------------------
# torus: real trigonometric series at points
# ---------------------------------------------------------------------------


@njit(cache=True)
def _trig_eval_loop(points, modes, cos_amp, sin_amp, const):
    n_pts, dim = points.shape
    n_modes = modes.shape[0]
    n_out = cos_amp.shape[1]
    kmax = 0
    for q in range(n_modes):
        for i in range(dim):
            a = abs(modes[q, i])
            if a > kmax:
                kmax = a
    width = 2 * kmax + 1
    cos_tab = np.empty((dim, width))
    sin_tab = np.empty((dim, width))
    out = np.empty((n_pts, n_out))
    for p in range(n_pts):
        for i in range(dim):
            for j in range(width):
                ang = TWO_PI * (j - kmax) * points[p, i]
                cos_tab[i, j] = math.cos(ang)
                sin_tab[i, j] = math.sin(ang)
        for c in range(n_out):
            out[p, c] = const[c]
        for q in range(n_modes):
            re = 1.0
            im = 0.0
            for i in range(dim):
                j = modes[q, i] + kmax
                cr = cos_tab[i, j]
                ci = sin_tab[i, j]
                re, im = re * cr - im * ci, re * ci + im * cr
            for c in range(n_out):
                out[p, c] += cos_amp[q, c] * re + sin_amp[q, c] * im
    return out


def _trig_eval_numpy(points, modes, cos_amp, sin_amp, const):
    n_pts = points.shape[0]
    n_modes = max(modes.shape[0], 1)
    out = np.empty((n_pts, cos_amp.shape[1]))
    step = max(1, _NUMPY_BLOCK // n_modes)
    mf = modes.astype(np.float64)
    for start in range(0, n_pts, step):
        block = points[start:start + step]
        phase = TWO_PI * (block @ mf.T)
        out[start:start + step] = const + np.cos(phase) @ cos_amp + np.sin(phase) @ sin_amp
    return out


def trig_eval(points, modes, cos_amp, sin_amp, const, use_numba=None):
    """Evaluate ``const + sum_q cos_amp[q] cos(2 pi k_q.x) + sin_amp[q] sin(2 pi k_q.x)``.

    Parameters
    ----------
    points : (P, d) array of positions.
    modes : (K, d) integer wave vectors.
    cos_amp, sin_amp : (K, m) real amplitudes.
    const : (m,) constant term.
    use_numba : force a backend; default follows the environment flag.

    Returns
    -------
    (P, m) array of values.
    """
    points = np.ascontiguousarray(points, dtype=np.float64)
    modes = np.ascontiguousarray(modes, dtype=np.int64).reshape(-1, points.shape[1])
    const = np.ascontiguousarray(const, dtype=np.float64).reshape(-1)
    cos_amp = np.ascontiguousarray(cos_amp, dtype=np.float64).reshape(modes.shape[0], const.size)
    sin_amp = np.ascontiguousarray(sin_amp, dtype=np.float64).reshape(modes.shape[0], const.size)
    if use_numba is None:
        use_numba = HAVE_NUMBA
    if use_numba and HAVE_NUMBA:
        return _trig_eval_loop(points, modes, cos_amp, sin_amp, const)
    return _trig_eval_numpy(points, modes, cos_amp, sin_amp, const)


# ---------------------------------------------------------------------------
# sphere: real spherical harmonics and rotated gradients
# ---------------------------------------------------------------------------


def lm_index(l, m):
    """Flat index of degree ``l``, order ``m`` in the ``(l, m)`` iteration order."""
    return l * l + l + m


@njit(cache=True)
def _sphere_basis_loop(points, lmax):
    n_pts = points.shape[0]
    n_lm = (lmax + 1) * (lmax + 1)
    ylm = np.zeros((n_pts, n_lm))
    psi = np.zeros((n_pts, n_lm, 3))
    pb = np.zeros((lmax + 2, lmax + 2))
    qb = np.zeros((lmax + 2, lmax + 2))
    dp = np.zeros((lmax + 2, lmax + 2))
    root2 = math.sqrt(2.0)
    for p in range(n_pts):
        x = points[p, 0]
        y = points[p, 1]
        z = points[p, 2]
        s = math.hypot(x, y)
        mu = z
        phi = math.atan2(y, x)
        for a in range(lmax + 2):
            for b in range(lmax + 2):
                pb[a, b] = 0.0
                qb[a, b] = 0.0
                dp[a, b] = 0.0
        pb[0, 0] = 1.0 / math.sqrt(4.0 * math.pi)
        for m in range(1, lmax + 1):
            f = math.sqrt((2.0 * m + 1.0) / (2.0 * m))
            qb[m, m] = f * pb[m - 1, m - 1]
            pb[m, m] = s * qb[m, m]
        for m in range(0, lmax + 1):
            if m + 1 <= lmax:
                f = math.sqrt(2.0 * m + 3.0)
                pb[m + 1, m] = f * mu * pb[m, m]
                qb[m + 1, m] = f * mu * qb[m, m]
            for l in range(m + 2, lmax + 1):
                a = math.sqrt((4.0 * l * l - 1.0) / (l * l - m * m))
                b = math.sqrt(((l - 1.0) ** 2 - m * m) / (4.0 * (l - 1.0) ** 2 - 1.0))
                pb[l, m] = a * (mu * pb[l - 1, m] - b * pb[l - 2, m])
                qb[l, m] = a * (mu * qb[l - 1, m] - b * qb[l - 2, m])
        for l in range(1, lmax + 1):
            dp[l, 0] = -math.sqrt(l * (l + 1.0)) * pb[l, 1]
            for m in range(1, l + 1):
                dp[l, m] = 0.5 * (
                    math.sqrt((l + m) * (l - m + 1.0)) * pb[l, m - 1]
                    - math.sqrt((l + m + 1.0) * (l - m)) * pb[l, m + 1]
                )
        cphi = math.cos(phi)
        sphi = math.sin(phi)
        et0 = mu * cphi
        et1 = mu * sphi
        et2 = -s
        ep0 = -sphi
        ep1 = cphi
        for l in range(0, lmax + 1):
            norm = 1.0 / math.sqrt(l * (l + 1.0)) if l > 0 else 0.0
            for m in range(-l, l + 1):
                k = l * l + l + m
                am = abs(m)
                if m == 0:
                    yv = pb[l, 0]
                    dth = dp[l, 0]
                    dph = 0.0
                elif m > 0:
                    cm = math.cos(m * phi)
                    sm = math.sin(m * phi)
                    yv = root2 * pb[l, m] * cm
                    dth = root2 * dp[l, m] * cm
                    dph = -root2 * m * qb[l, m] * sm
                else:
                    cm = math.cos(am * phi)
                    sm = math.sin(am * phi)
                    yv = root2 * pb[l, am] * sm
                    dth = root2 * dp[l, am] * sm
                    dph = root2 * am * qb[l, am] * cm
                ylm[p, k] = yv
                psi[p, k, 0] = norm * (dth * ep0 - dph * et0)
                psi[p, k, 1] = norm * (dth * ep1 - dph * et1)
                psi[p, k, 2] = norm * (-dph * et2)
    return ylm, psi


def _sphere_basis_numpy(points, lmax):
    n_pts = points.shape[0]
    n_lm = (lmax + 1) ** 2
    x, y, mu = points[:, 0], points[:, 1], points[:, 2]
    s = np.hypot(x, y)
    phi = np.arctan2(y, x)
    pb = np.zeros((lmax + 2, lmax + 2, n_pts))
    qb = np.zeros((lmax + 2, lmax + 2, n_pts))
    dp = np.zeros((lmax + 2, lmax + 2, n_pts))
    pb[0, 0] = 1.0 / np.sqrt(4.0 * np.pi)
    for m in range(1, lmax + 1):
        qb[m, m] = np.sqrt((2.0 * m + 1.0) / (2.0 * m)) * pb[m - 1, m - 1]
        pb[m, m] = s * qb[m, m]
    for m in range(lmax + 1):
        if m + 1 <= lmax:
            f = np.sqrt(2.0 * m + 3.0)
            pb[m + 1, m] = f * mu * pb[m, m]
            qb[m + 1, m] = f * mu * qb[m, m]
        for l in range(m + 2, lmax + 1):
            a = np.sqrt((4.0 * l * l - 1.0) / (l * l - m * m))
            b = np.sqrt(((l - 1.0) ** 2 - m * m) / (4.0 * (l - 1.0) ** 2 - 1.0))
            pb[l, m] = a * (mu * pb[l - 1, m] - b * pb[l - 2, m])
            qb[l, m] = a * (mu * qb[l - 1, m] - b * qb[l - 2, m])
    for l in range(1, lmax + 1):
        dp[l, 0] = -np.sqrt(l * (l + 1.0)) * pb[l, 1]
        for m in range(1, l + 1):
            dp[l, m] = 0.5 * (
                np.sqrt((l + m) * (l - m + 1.0)) * pb[l, m - 1]
                - np.sqrt((l + m + 1.0) * (l - m)) * pb[l, m + 1]
            )
    e_theta = np.stack([mu * np.cos(phi), mu * np.sin(phi), -s], axis=-1)
    e_phi = np.stack([-np.sin(phi), np.cos(phi), np.zeros_like(phi)], axis=-1)
    ylm = np.zeros((n_pts, n_lm))
    psi = np.zeros((n_pts, n_lm, 3))
    root2 = np.sqrt(2.0)
    for l in range(lmax + 1):
        norm = 1.0 / np.sqrt(l * (l + 1.0)) if l > 0 else 0.0
        for m in range(-l, l + 1):
            am = abs(m)
            if m == 0:
                yv, dth, dph = pb[l, 0], dp[l, 0], np.zeros(n_pts)
            elif m > 0:
                cm, sm = np.cos(m * phi), np.sin(m * phi)
                yv = root2 * pb[l, m] * cm
                dth = root2 * dp[l, m] * cm
                dph = -root2 * m * qb[l, m] * sm
            else:
                cm, sm = np.cos(am * phi), np.sin(am * phi)
                yv = root2 * pb[l, am] * sm
                dth = root2 * dp[l, am] * sm
                dph = root2 * am * qb[l, am] * cm
            k = lm_index(l, m)
            ylm[:, k] = yv
            psi[:, k] = norm * (dth[:, None] * e_phi - dph[:, None] * e_theta)
    return ylm, psi


def sphere_basis(points, lmax, use_numba=None):
    """Real spherical harmonics and divergence-free basis fields at points.

    Returns ``(ylm, psi)`` with ``ylm[p, lm_index(l, m)] = Y_lm(x_p)`` and
    ``psi[p, lm_index(l, m)] = (l(l+1))^{-1/2} x_p x grad Y_lm(x_p)``, a
    tangent 3-vector. The ``l = 0`` field is identically zero.
    """
    points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    if use_numba is None:
        use_numba = HAVE_NUMBA
    if use_numba and HAVE_NUMBA:
        return _sphere_basis_loop(points, int(lmax))
    return _sphere_basis_numpy(points, int(lmax))
