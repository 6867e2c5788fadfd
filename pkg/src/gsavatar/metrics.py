"""Image quality metrics: PSNR, SSIM (with analytic gradient), MAE, and a
Laplacian-pyramid perceptual proxy.

SSIM follows the reference formulation: 11x11 Gaussian window (sigma 1.5,
sampled and normalized), C1 = 0.01^2, C2 = 0.03^2 for unit dynamic range,
covariance without sample correction, border cropped to valid windows,
averaged over pixels and channels.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.ndimage import correlate1d

from gsavatar.core.errors import ValidationError
from gsavatar.core.image import Image

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def _as_array(img) -> np.ndarray:
    if isinstance(img, Image):
        return img.data
    return np.asarray(img, dtype=np.float64)


def _check_pair(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValidationError(f"image shapes differ: {a.shape} vs {b.shape}")


def psnr(a, b) -> float:
    """10*log10(1/MSE) with unit peak; +inf for identical images."""
    a = _as_array(a)
    b = _as_array(b)
    _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def mae(a, b) -> float:
    a = _as_array(a)
    b = _as_array(b)
    _check_pair(a, b)
    return float(np.mean(np.abs(a - b)))


def _gaussian_kernel1d(sigma: float = SSIM_SIGMA, radius: int = SSIM_WINDOW // 2) -> np.ndarray:
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _filter_valid(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Separable valid-mode correlation along the two leading axes."""
    r = kernel.size // 2
    out = correlate1d(img, kernel, axis=0, mode="constant")[r:-r]
    return correlate1d(out, kernel, axis=1, mode="constant")[:, r:-r]


def _filter_full_transpose(grad: np.ndarray, kernel: np.ndarray, out_shape) -> np.ndarray:
    """Adjoint of _filter_valid: zero-embed into the original shape, then
    zero-padded correlation with the (symmetric) kernel."""
    r = kernel.size // 2
    canvas = np.zeros(out_shape)
    canvas[r:-r, r:-r] = grad
    out = correlate1d(canvas, kernel, axis=0, mode="constant")
    return correlate1d(out, kernel, axis=1, mode="constant")


def _ssim_maps(a: np.ndarray, b: np.ndarray, kernel: np.ndarray):
    mu_a = _filter_valid(a, kernel)
    mu_b = _filter_valid(b, kernel)
    p_aa = _filter_valid(a * a, kernel)
    p_bb = _filter_valid(b * b, kernel)
    p_ab = _filter_valid(a * b, kernel)
    var_a = p_aa - mu_a * mu_a
    var_b = p_bb - mu_b * mu_b
    cov = p_ab - mu_a * mu_b
    n1 = 2.0 * mu_a * mu_b + SSIM_C1
    n2 = 2.0 * cov + SSIM_C2
    d1 = mu_a * mu_a + mu_b * mu_b + SSIM_C1
    d2 = var_a + var_b + SSIM_C2
    s = (n1 * n2) / (d1 * d2)
    return s, (mu_a, mu_b, cov, var_a, var_b, n1, n2, d1, d2)


def ssim(a, b) -> float:
    """Mean local SSIM in [-1, 1]; requires min image side >= 11."""
    a = _as_array(a)
    b = _as_array(b)
    _check_pair(a, b)
    if min(a.shape[0], a.shape[1]) < SSIM_WINDOW:
        raise ValidationError(f"images must be at least {SSIM_WINDOW} pixels per side")
    kernel = _gaussian_kernel1d()
    s, _ = _ssim_maps(a, b, kernel)
    return float(np.mean(s))


def ssim_with_grad(a, b):
    """(ssim value, d ssim / d a).  Gradient is with respect to the first
    image; used by the training losses."""
    a = _as_array(a)
    b = _as_array(b)
    _check_pair(a, b)
    if min(a.shape[0], a.shape[1]) < SSIM_WINDOW:
        raise ValidationError(f"images must be at least {SSIM_WINDOW} pixels per side")
    kernel = _gaussian_kernel1d()
    s, (mu_a, mu_b, cov, var_a, var_b, n1, n2, d1, d2) = _ssim_maps(a, b, kernel)
    value = float(np.mean(s))

    inv = 1.0 / (d1 * d2)
    # partials holding the filtered quantities as independent variables
    d_n1 = n2 * inv
    d_n2 = n1 * inv
    d_d1 = -s / d1
    d_d2 = -s / d2
    # filtered-variable chain: mu_a enters n1, d1, and (via var/cov) d2, n2
    g_mu_a = d_n1 * 2.0 * mu_b + d_d1 * 2.0 * mu_a \
        + d_d2 * (-2.0 * mu_a) + d_n2 * 2.0 * (-mu_b)
    g_paa = d_d2  # var_a = p_aa - mu_a^2
    g_pab = d_n2 * 2.0  # cov = p_ab - mu_a mu_b

    scale = 1.0 / s.size
    grad = _filter_full_transpose(g_mu_a * scale, kernel, a.shape)
    grad += _filter_full_transpose(g_paa * scale, kernel, a.shape) * (2.0 * a)
    grad += _filter_full_transpose(g_pab * scale, kernel, a.shape) * b
    return value, grad


PYRAMID_LEVELS = 3
_BLUR5 = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


def _blur_same(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Separable zero-padded same-size blur (self-adjoint for symmetric kernels)."""
    pad = kernel.size // 2
    padded = np.pad(img, [(pad, pad), (0, 0), (0, 0)])
    win = np.lib.stride_tricks.sliding_window_view(padded, kernel.size, axis=0)
    img = np.tensordot(win, kernel, axes=([-1], [0]))
    padded = np.pad(img, [(0, 0), (pad, pad), (0, 0)])
    win = np.lib.stride_tricks.sliding_window_view(padded, kernel.size, axis=1)
    return np.tensordot(win, kernel, axes=([-1], [0]))


def _down(img: np.ndarray) -> np.ndarray:
    return _blur_same(img, _BLUR5)[::2, ::2, :]


def _down_transpose(grad: np.ndarray, shape) -> np.ndarray:
    stuffed = np.zeros(shape)
    stuffed[::2, ::2, :] = grad
    return _blur_same(stuffed, _BLUR5)


def _up(img: np.ndarray, shape) -> np.ndarray:
    stuffed = np.zeros(shape)
    stuffed[::2, ::2, :] = img
    return _blur_same(stuffed, 2.0 * _BLUR5)


def _up_transpose(grad: np.ndarray) -> np.ndarray:
    return _blur_same(grad, 2.0 * _BLUR5)[::2, ::2, :]


def laplacian_pyramid(img: np.ndarray, levels: int = PYRAMID_LEVELS):
    """Band-pass levels plus the final low-pass residual (lossless analysis)."""
    bands = []
    current = img
    for _ in range(levels):
        if min(current.shape[0], current.shape[1]) < 4:
            break
        low = _down(current)
        bands.append(current - _up(low, current.shape))
        current = low
    bands.append(current)
    return bands


def perceptual_proxy(a, b) -> float:
    """L1 distance between multi-scale Laplacian-pyramid features.

    Zero iff the images are identical (the pyramid keeps the low-pass
    residual, so the analysis is invertible); symmetric by construction.
    """
    value, _ = perceptual_proxy_with_grad(a, b)
    return value


def perceptual_proxy_with_grad(a, b):
    a = _as_array(a)
    b = _as_array(b)
    _check_pair(a, b)
    pa = laplacian_pyramid(a)
    pb = laplacian_pyramid(b)
    total = 0.0
    n_feats = sum(x.size for x in pa)
    grad = np.zeros_like(a)
    for level, (xa, xb) in enumerate(zip(pa, pb)):
        diff = xa - xb
        total += float(np.sum(np.abs(diff)))
        g = np.sign(diff) / n_feats
        # push the band gradient back through the pyramid analysis
        is_residual = level == len(pa) - 1
        if is_residual:
            back = g
            for lev in range(level - 1, -1, -1):
                shape = pa[lev].shape
                back = _down_transpose(back, shape)
        else:
            # band_l = current_l - up(down(current_l))
            back = g - _down_transpose(_up_transpose(g), pa[level].shape)
            for lev in range(level - 1, -1, -1):
                back = _down_transpose(back, pa[lev].shape)
        grad += back
    return total / n_feats, grad
