"""EWA projection of 3D Gaussians onto the image plane.

The 2D covariance is the first-order (Jacobian) approximation
cov2d = J W Sigma W^T J^T with W the camera rotation and J the perspective
projection Jacobian, plus a low-pass term on the diagonal.  Colors are
evaluated from SH coefficients along the normalized direction from the
camera center to the Gaussian center.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from gsavatar.core.camera import Camera
from gsavatar.core.errors import ValidationError
from gsavatar.core.model import GaussianModel, quat_normalize, quat_to_rotmat
from gsavatar.core.sh import eval_sh, sh_basis, sh_basis_grad
from gsavatar.render.config import DEFAULT_CONFIG, RasterConfig

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ProjectedGaussian:
    mean2d: np.ndarray  # (2,) pixel coordinates
    cov2d: np.ndarray  # (2, 2) symmetric, low-pass regularized
    depth: float  # camera-space z
    rgb: np.ndarray  # (3,) SH-evaluated view color (unclamped)
    opacity: float


def projection_jacobian(p_cam: np.ndarray, fx: float, fy: float) -> np.ndarray:
    x, y, z = p_cam
    return np.array([
        [fx / z, 0.0, -fx * x / (z * z)],
        [0.0, fy / z, -fy * y / (z * z)],
    ])


def max_eigenvalue_2x2(a: float, b: float, c: float) -> float:
    mid = 0.5 * (a + c)
    disc = np.sqrt(max(mid * mid - (a * c - b * b), 0.0))
    return mid + disc


def pixel_span(center: float, radius: float, limit: int) -> tuple[int, int]:
    """Inclusive pixel index range whose sample points (i + 0.5) may fall
    within `radius` of `center`; empty when lo > hi."""
    lo = max(0, int(np.ceil(center - radius - 0.5)))
    hi = min(limit - 1, int(np.floor(center + radius - 0.5)))
    return lo, hi


def project_gaussian(g, cam: Camera, config: RasterConfig = DEFAULT_CONFIG):
    """Project one Gaussian; returns None when culled (behind the near plane
    or with no pixel inside its cutoff radius)."""
    position = np.asarray(g.position, dtype=np.float64)
    p_cam = cam.rotation @ position + cam.translation
    if p_cam[2] <= config.near_plane:
        return None
    from gsavatar.core.model import assemble_covariance

    q = np.asarray(g.rotation, dtype=np.float64)
    sigma = assemble_covariance(q / np.linalg.norm(q), g.scale)
    J = projection_jacobian(p_cam, cam.fx, cam.fy)
    T = J @ cam.rotation
    cov2d = T @ sigma @ T.T + config.lowpass * np.eye(2)
    a, b, c = cov2d[0, 0], cov2d[0, 1], cov2d[1, 1]
    det = a * c - b * b
    if det <= 0.0 or not np.isfinite(det):
        log.warning("skipping gaussian with singular 2D covariance (det=%g)", det)
        return None
    mean2d = np.array([
        cam.fx * p_cam[0] / p_cam[2] + cam.cx,
        cam.fy * p_cam[1] / p_cam[2] + cam.cy,
    ])
    radius = config.cutoff_sigma * np.sqrt(max_eigenvalue_2x2(a, b, c))
    x_lo, x_hi = pixel_span(mean2d[0], radius, cam.width)
    y_lo, y_hi = pixel_span(mean2d[1], radius, cam.height)
    if x_lo > x_hi or y_lo > y_hi:
        return None
    d = position - cam.center
    direction = d / np.linalg.norm(d)
    rgb = eval_sh(g.sh_coeffs, direction)
    return ProjectedGaussian(mean2d, cov2d, float(p_cam[2]), rgb, float(g.opacity))


class ProjectedScene:
    """Batched projection of a whole model, depth-sorted, with the
    intermediates the backward pass needs."""

    __slots__ = (
        "k", "order", "means2d", "conic", "cov2d", "rgb", "opacity", "depth",
        "radius", "x_lo", "x_hi", "y_lo", "y_hi", "p_cam", "J", "T", "sigma",
        "M3", "R_q", "dirs", "dists", "basis", "quats_unit", "quat_norms",
    )

    def __init__(self, model: GaussianModel, cam: Camera, config: RasterConfig):
        k = model.k
        self.k = k
        R = cam.rotation
        p_cam = model.positions @ R.T + cam.translation
        z = p_cam[:, 2]
        in_front = z > config.near_plane
        # keep the math well-defined for culled rows
        zs = np.where(in_front, z, 1.0)

        quat_norms = np.linalg.norm(model.rotations, axis=1, keepdims=True)
        quats_unit = model.rotations / quat_norms
        R_q = quat_to_rotmat(quats_unit)
        M3 = R_q * model.scales[:, None, :]
        sigma = np.einsum("kij,klj->kil", M3, M3)

        J = np.zeros((k, 2, 3))
        J[:, 0, 0] = cam.fx / zs
        J[:, 0, 2] = -cam.fx * p_cam[:, 0] / (zs * zs)
        J[:, 1, 1] = cam.fy / zs
        J[:, 1, 2] = -cam.fy * p_cam[:, 1] / (zs * zs)
        T = J @ R
        cov2d = np.einsum("kij,kjl,kml->kim", T, sigma, T)
        cov2d[:, 0, 0] += config.lowpass
        cov2d[:, 1, 1] += config.lowpass
        a = cov2d[:, 0, 0]
        b = cov2d[:, 0, 1]
        c = cov2d[:, 1, 1]
        det = a * c - b * b
        bad = in_front & ((det <= 0.0) | ~np.isfinite(det))
        if np.any(bad):
            log.warning("skipping %d gaussians with singular 2D covariance", int(bad.sum()))
        ok = in_front & ~bad
        det_safe = np.where(det > 0.0, det, 1.0)
        conic = np.stack([c / det_safe, -b / det_safe, a / det_safe], axis=1)

        means2d = np.stack([
            cam.fx * p_cam[:, 0] / zs + cam.cx,
            cam.fy * p_cam[:, 1] / zs + cam.cy,
        ], axis=1)
        mid = 0.5 * (a + c)
        lam_max = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
        radius = config.cutoff_sigma * np.sqrt(np.maximum(lam_max, 0.0))

        x_lo = np.maximum(0, np.ceil(means2d[:, 0] - radius - 0.5)).astype(np.int64)
        x_hi = np.minimum(cam.width - 1, np.floor(means2d[:, 0] + radius - 0.5)).astype(np.int64)
        y_lo = np.maximum(0, np.ceil(means2d[:, 1] - radius - 0.5)).astype(np.int64)
        y_hi = np.minimum(cam.height - 1, np.floor(means2d[:, 1] + radius - 0.5)).astype(np.int64)
        visible = ok & (x_lo <= x_hi) & (y_lo <= y_hi)

        d = model.positions - cam.center
        dists = np.linalg.norm(d, axis=1)
        dists_safe = np.where(dists > 0.0, dists, 1.0)
        dirs = d / dists_safe[:, None]
        basis = sh_basis(dirs)
        rgb = np.einsum("kcb,kb->kc", model.sh, basis)

        vis_idx = np.nonzero(visible)[0]
        order = vis_idx[np.argsort(z[vis_idx], kind="stable")]
        self.order = order
        self.means2d = means2d
        self.conic = conic
        self.cov2d = cov2d
        self.rgb = rgb
        self.opacity = model.opacities
        self.depth = z
        self.radius = radius
        self.x_lo, self.x_hi, self.y_lo, self.y_hi = x_lo, x_hi, y_lo, y_hi
        self.p_cam = p_cam
        self.J = J
        self.T = T
        self.sigma = sigma
        self.M3 = M3
        self.R_q = R_q
        self.dirs = dirs
        self.dists = dists_safe
        self.basis = basis
        self.quats_unit = quats_unit
        self.quat_norms = quat_norms


def rotmat_quat_partials(quats_unit: np.ndarray) -> np.ndarray:
    """d(rotation matrix)/d(quaternion component) at the given quaternions.

    quats_unit: (K, 4) -> (K, 4, 3, 3); raw polynomial partials (the
    normalization chain is applied separately).
    """
    w = quats_unit[:, 0]
    x = quats_unit[:, 1]
    y = quats_unit[:, 2]
    z = quats_unit[:, 3]
    D = np.zeros((quats_unit.shape[0], 4, 3, 3))
    tw, tx, ty, tz = 2.0 * w, 2.0 * x, 2.0 * y, 2.0 * z
    # dR/dw
    D[:, 0, 0, 1] = -tz
    D[:, 0, 0, 2] = ty
    D[:, 0, 1, 0] = tz
    D[:, 0, 1, 2] = -tx
    D[:, 0, 2, 0] = -ty
    D[:, 0, 2, 1] = tx
    # dR/dx
    D[:, 1, 0, 1] = ty
    D[:, 1, 0, 2] = tz
    D[:, 1, 1, 0] = ty
    D[:, 1, 1, 1] = -2.0 * tx
    D[:, 1, 1, 2] = -tw
    D[:, 1, 2, 0] = tz
    D[:, 1, 2, 1] = tw
    D[:, 1, 2, 2] = -2.0 * tx
    # dR/dy
    D[:, 2, 0, 0] = -2.0 * ty
    D[:, 2, 0, 1] = tx
    D[:, 2, 0, 2] = tw
    D[:, 2, 1, 0] = tx
    D[:, 2, 1, 2] = tz
    D[:, 2, 2, 0] = -tw
    D[:, 2, 2, 1] = tz
    D[:, 2, 2, 2] = -2.0 * ty
    # dR/dz
    D[:, 3, 0, 0] = -2.0 * tz
    D[:, 3, 0, 1] = -tw
    D[:, 3, 0, 2] = tx
    D[:, 3, 1, 0] = tw
    D[:, 3, 1, 1] = -2.0 * tz
    D[:, 3, 1, 2] = ty
    D[:, 3, 2, 0] = tx
    D[:, 3, 2, 1] = ty
    return D
