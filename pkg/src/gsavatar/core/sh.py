"""Real spherical harmonics basis up to degree 3 (16 functions).

Basis ordering and sign conventions follow the splatting literature:
index 0 is the constant band, indices 1..3 are degree 1 (-y, z, -x up to
the C1 constant), 4..8 degree 2, 9..15 degree 3.  `sh_basis_grad` returns
the analytic derivative of each basis function with respect to the
(unnormalized) direction components, used by the renderer backward pass.
"""

from __future__ import annotations

import numpy as np

from gsavatar.core.errors import ValidationError

C0 = 0.28209479177387814
C1 = 0.4886025119029199
C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)

N_COEFFS = 16  # degree 3 -> (3+1)^2


def sh_basis(dirs: np.ndarray) -> np.ndarray:
    """Evaluate the 16 degree-3 basis functions at unit directions.

    dirs: (..., 3) array of unit vectors. Returns (..., 16).
    """
    dirs = np.asarray(dirs, dtype=np.float64)
    x = dirs[..., 0]
    y = dirs[..., 1]
    z = dirs[..., 2]
    xx, yy, zz = x * x, y * y, z * z
    xy, yz, xz = x * y, y * z, x * z

    out = np.empty(dirs.shape[:-1] + (N_COEFFS,), dtype=np.float64)
    out[..., 0] = C0
    out[..., 1] = -C1 * y
    out[..., 2] = C1 * z
    out[..., 3] = -C1 * x
    out[..., 4] = C2[0] * xy
    out[..., 5] = C2[1] * yz
    out[..., 6] = C2[2] * (2.0 * zz - xx - yy)
    out[..., 7] = C2[3] * xz
    out[..., 8] = C2[4] * (xx - yy)
    out[..., 9] = C3[0] * y * (3.0 * xx - yy)
    out[..., 10] = C3[1] * xy * z
    out[..., 11] = C3[2] * y * (4.0 * zz - xx - yy)
    out[..., 12] = C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy)
    out[..., 13] = C3[4] * x * (4.0 * zz - xx - yy)
    out[..., 14] = C3[5] * z * (xx - yy)
    out[..., 15] = C3[6] * x * (xx - 3.0 * yy)
    return out


def sh_basis_grad(dirs: np.ndarray) -> np.ndarray:
    """Partial derivatives of each basis function w.r.t. (x, y, z).

    dirs: (..., 3). Returns (..., 16, 3).
    """
    dirs = np.asarray(dirs, dtype=np.float64)
    x = dirs[..., 0]
    y = dirs[..., 1]
    z = dirs[..., 2]
    xx, yy, zz = x * x, y * y, z * z
    zero = np.zeros_like(x)

    g = np.zeros(dirs.shape[:-1] + (N_COEFFS, 3), dtype=np.float64)
    g[..., 1, 1] = -C1
    g[..., 2, 2] = C1
    g[..., 3, 0] = -C1
    g[..., 4, 0] = C2[0] * y
    g[..., 4, 1] = C2[0] * x
    g[..., 5, 1] = C2[1] * z
    g[..., 5, 2] = C2[1] * y
    g[..., 6, 0] = C2[2] * (-2.0 * x)
    g[..., 6, 1] = C2[2] * (-2.0 * y)
    g[..., 6, 2] = C2[2] * (4.0 * z)
    g[..., 7, 0] = C2[3] * z
    g[..., 7, 2] = C2[3] * x
    g[..., 8, 0] = C2[4] * (2.0 * x)
    g[..., 8, 1] = C2[4] * (-2.0 * y)
    g[..., 9, 0] = C3[0] * 6.0 * x * y
    g[..., 9, 1] = C3[0] * (3.0 * xx - 3.0 * yy)
    g[..., 10, 0] = C3[1] * y * z
    g[..., 10, 1] = C3[1] * x * z
    g[..., 10, 2] = C3[1] * x * y
    g[..., 11, 0] = C3[2] * (-2.0 * x * y)
    g[..., 11, 1] = C3[2] * (4.0 * zz - xx - 3.0 * yy)
    g[..., 11, 2] = C3[2] * (8.0 * y * z)
    g[..., 12, 0] = C3[3] * (-6.0 * x * z)
    g[..., 12, 1] = C3[3] * (-6.0 * y * z)
    g[..., 12, 2] = C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy)
    g[..., 13, 0] = C3[4] * (4.0 * zz - 3.0 * xx - yy)
    g[..., 13, 1] = C3[4] * (-2.0 * x * y)
    g[..., 13, 2] = C3[4] * (8.0 * x * z)
    g[..., 14, 0] = C3[5] * (2.0 * x * z)
    g[..., 14, 1] = C3[5] * (-2.0 * y * z)
    g[..., 14, 2] = C3[5] * (xx - yy)
    g[..., 15, 0] = C3[6] * (3.0 * xx - 3.0 * yy)
    g[..., 15, 1] = C3[6] * (-6.0 * x * y)
    del zero
    return g


def eval_sh(coeffs: np.ndarray, direction: np.ndarray) -> np.ndarray:
    """Evaluate RGB color from 3x16 coefficients at a unit view direction.

    Linear in `coeffs`; no clamping (clamping happens at the final render
    stage only).  Raises ValidationError for a zero direction.
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    direction = np.asarray(direction, dtype=np.float64)
    if coeffs.shape != (3, N_COEFFS):
        raise ValidationError(f"sh coeffs must be (3, {N_COEFFS}), got {coeffs.shape}")
    norm = np.linalg.norm(direction)
    if norm == 0.0:
        raise ValidationError("view direction must be nonzero")
    basis = sh_basis(direction / norm)
    return coeffs @ basis


def eval_sh_batch(coeffs: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Batched eval: coeffs (K, 3, 16), dirs (K, 3) unit -> (K, 3)."""
    basis = sh_basis(dirs)
    return np.einsum("kcb,kb->kc", coeffs, basis)


def rgb_to_band0(rgb: np.ndarray) -> np.ndarray:
    """Band-0 coefficient that reproduces `rgb` under eval_sh for any direction."""
    return np.asarray(rgb, dtype=np.float64) / C0
