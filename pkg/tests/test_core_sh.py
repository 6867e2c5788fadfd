import numpy as np
import pytest

from gsavatar.core import ValidationError, eval_sh, sh_basis, sh_basis_grad
from gsavatar.core.sh import C0


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def test_band0_constant():
    # Y00 = 1/(2 sqrt(pi))
    assert np.isclose(C0, 1.0 / (2.0 * np.sqrt(np.pi)))
    coeffs = np.zeros((3, 16))
    coeffs[:, 0] = 2.0
    for d in [(0, 0, 1), (1, 0, 0), (0.3, -0.5, 0.8)]:
        rgb = eval_sh(coeffs, unit(d))
        assert np.allclose(rgb, 2.0 * 0.28209479, atol=1e-7)


def test_zero_coeffs():
    assert np.allclose(eval_sh(np.zeros((3, 16)), (0, 0, 1)), 0.0)


def test_band1_odd_parity():
    rng = np.random.default_rng(0)
    coeffs = np.zeros((3, 16))
    coeffs[:, 1:4] = rng.normal(size=(3, 3))
    d = unit(rng.normal(size=3))
    assert np.allclose(eval_sh(coeffs, d), -eval_sh(coeffs, -d))


def test_linearity():
    rng = np.random.default_rng(1)
    c1 = rng.normal(size=(3, 16))
    c2 = rng.normal(size=(3, 16))
    d = unit(rng.normal(size=3))
    a, b = 0.7, -1.3
    assert np.allclose(eval_sh(a * c1 + b * c2, d),
                       a * eval_sh(c1, d) + b * eval_sh(c2, d))


def test_zero_direction_rejected():
    with pytest.raises(ValidationError):
        eval_sh(np.zeros((3, 16)), (0, 0, 0))


def test_basis_orthonormality():
    # Monte Carlo check that the basis is orthonormal on the sphere:
    # mean over uniform directions of 4*pi*Yi*Yj ~ delta_ij.
    rng = np.random.default_rng(42)
    dirs = rng.normal(size=(200000, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    B = sh_basis(dirs)
    gram = 4.0 * np.pi * (B.T @ B) / dirs.shape[0]
    assert np.allclose(gram, np.eye(16), atol=0.05)


def test_basis_grad_matches_fd():
    rng = np.random.default_rng(3)
    d = rng.normal(size=3)
    h = 1e-6
    analytic = sh_basis_grad(d)
    for axis in range(3):
        dp = d.copy()
        dm = d.copy()
        dp[axis] += h
        dm[axis] -= h
        fd = (sh_basis(dp) - sh_basis(dm)) / (2 * h)
        assert np.allclose(analytic[:, axis], fd, atol=1e-7)
