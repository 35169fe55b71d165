"""Compiled and vectorised kernels agree; spherical harmonics are orthonormal."""

import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stochtrans._accel import HAVE_NUMBA, backend
from stochtrans.kernels import (
    _sphere_basis_loop,
    _sphere_basis_numpy,
    _trig_eval_loop,
    _trig_eval_numpy,
    lm_index,
    sphere_basis,
    trig_eval,
)


def gauss_sphere_grid(n):
    """Gauss-Legendre in cos(theta) times uniform phi; exact for degree < 2n."""
    mu, w = np.polynomial.legendre.leggauss(n)
    phi = np.arange(2 * n) * np.pi / n
    mu_g, phi_g = np.meshgrid(mu, phi, indexing="ij")
    s = np.sqrt(1 - mu_g**2)
    pts = np.stack([s * np.cos(phi_g), s * np.sin(phi_g), mu_g], axis=-1).reshape(-1, 3)
    weights = (w[:, None] * np.full(2 * n, np.pi / n)[None]).reshape(-1)
    return pts, weights


class TestTrigEval:
    def test_single_mode(self):
        """[TRIVIAL] cos(2 pi x) + 2 sin(2 pi (x + y)) + 0.5."""
        pts = np.random.default_rng(0).random((50, 2))
        modes = np.array([[1, 0], [1, 1]])
        out = trig_eval(pts, modes, [[1.0], [0.0]], [[0.0], [2.0]], [0.5])
        expect = 0.5 + np.cos(2 * np.pi * pts[:, 0]) + 2 * np.sin(2 * np.pi * pts.sum(axis=1))
        np.testing.assert_allclose(out[:, 0], expect, atol=1e-12)

    def test_empty_mode_set(self):
        out = trig_eval(np.zeros((3, 2)), np.zeros((0, 2)), np.zeros((0, 2)), np.zeros((0, 2)), [1.0, 2.0])
        np.testing.assert_array_equal(out, [[1.0, 2.0]] * 3)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(2, 3), st.integers(1, 30), st.integers(0, 2**31))
    def test_backends_agree(self, dim, K, seed):
        rng = np.random.default_rng(seed)
        pts = rng.random((40, dim))
        modes = rng.integers(-6, 7, size=(K, dim))
        c, s, k0 = rng.standard_normal((K, dim)), rng.standard_normal((K, dim)), rng.standard_normal(dim)
        a = _trig_eval_loop(pts, modes, c, s, k0)
        b = _trig_eval_numpy(pts, modes, c, s, k0)
        np.testing.assert_allclose(a, b, atol=1e-10)


class TestSphereBasis:
    def test_orthonormal(self):
        """[DERIVED] exact quadrature of Y_lm Y_l'm' gives the identity."""
        L = 6
        pts, w = gauss_sphere_grid(L + 2)
        ylm, _ = sphere_basis(pts, L)
        np.testing.assert_allclose(ylm.T @ (w[:, None] * ylm), np.eye((L + 1) ** 2), atol=1e-12)

    def test_addition_theorem_for_fields(self):
        """[DERIVED] sum_m |Psi_lm|^2 = (2l + 1) / (4 pi) at every point."""
        pts = np.random.default_rng(1).standard_normal((30, 3))
        pts /= np.linalg.norm(pts, axis=1, keepdims=True)
        _, psi = sphere_basis(pts, 7)
        for l in range(1, 8):
            idx = [lm_index(l, m) for m in range(-l, l + 1)]
            np.testing.assert_allclose((psi[:, idx] ** 2).sum(axis=(1, 2)), (2 * l + 1) / (4 * np.pi), rtol=1e-11)

    def test_tangent_and_degree_zero(self):
        pts = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, -1.0], [0.6, 0.0, 0.8]])
        ylm, psi = sphere_basis(pts, 4)
        np.testing.assert_allclose(np.einsum("pkj,pj->pk", psi, pts), 0.0, atol=1e-12)
        np.testing.assert_array_equal(psi[:, 0], 0.0)
        np.testing.assert_allclose(ylm[:, 0], 1 / np.sqrt(4 * np.pi))
        assert np.all(np.isfinite(psi))

    @settings(max_examples=10, deadline=None)
    @given(st.integers(1, 10), st.integers(0, 2**31))
    def test_backends_agree(self, L, seed):
        pts = np.random.default_rng(seed).standard_normal((25, 3))
        pts /= np.linalg.norm(pts, axis=1, keepdims=True)
        ya, pa = _sphere_basis_loop(pts, L)
        yb, pb = _sphere_basis_numpy(pts, L)
        np.testing.assert_allclose(ya, yb, atol=1e-11)
        np.testing.assert_allclose(pa, pb, atol=1e-11)


class TestBackendSwitch:
    def test_reported_backend(self):
        assert backend() == ("numba" if HAVE_NUMBA else "numpy")

    def test_environment_flag(self):
        env = dict(os.environ, STOCHTRANS_DISABLE_NUMBA="1")
        out = subprocess.run([sys.executable, "-c", "from stochtrans._accel import backend; print(backend())"],
                             env=env, capture_output=True, text=True, check=True)
        assert out.stdout.strip() == "numpy"

    @pytest.mark.skipif(not HAVE_NUMBA, reason="numba not installed")
    def test_forced_numpy_matches(self):
        pts = np.random.default_rng(2).random((10, 2))
        args = (pts, np.array([[1, 2]]), [[0.3]], [[0.7]], [0.1])
        np.testing.assert_allclose(trig_eval(*args, use_numba=False), trig_eval(*args, use_numba=True), atol=1e-12)
