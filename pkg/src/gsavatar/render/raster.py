"""Forward splatting and the analytic backward pass.

`render` composites depth-sorted Gaussians front to back per pixel
(tiled, parallel); `render_backward` returns gradients for all 59*K model
parameters in the flatten_params layout.  Both treat the stored quaternion
projectively (normalized on use), so gradients on the rotation block include
the normalization Jacobian and FD checks may perturb raw components.

Training loops use the prepare/forward/backward split to share the
projection stage and the forward buffers between the loss and its gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gsavatar.core.camera import Camera
from gsavatar.core.errors import ValidationError
from gsavatar.core.image import Image
from gsavatar.core.model import PARAMS_PER_GAUSSIAN, GaussianModel
from gsavatar.core.sh import sh_basis_grad
from gsavatar.render.config import DEFAULT_CONFIG, RasterConfig
from gsavatar.render.kernels import backward_kernel, bin_tiles, forward_kernel, reduce_pairs
from gsavatar.render.projection import ProjectedScene, rotmat_quat_partials


@dataclass(frozen=True)
class RenderAux:
    raw: np.ndarray  # (H, W, 3) pre-clamp composite
    transmittance: np.ndarray  # (H, W) background weight per pixel
    weight_sum: np.ndarray  # (H, W) sum of foreground compositing weights


class RenderGradients:
    """Gradient buffer in the exact flatten_params layout (59*K scalars)."""

    def __init__(self, k: int, flat: np.ndarray | None = None):
        if flat is None:
            flat = np.zeros(k * PARAMS_PER_GAUSSIAN)
        if flat.shape != (k * PARAMS_PER_GAUSSIAN,):
            raise ValidationError("gradient buffer has wrong length")
        self.k = k
        self.flat = flat

    @property
    def _mat(self) -> np.ndarray:
        return self.flat.reshape(self.k, PARAMS_PER_GAUSSIAN)

    @property
    def positions(self) -> np.ndarray:
        return self._mat[:, 0:3]

    @property
    def scales(self) -> np.ndarray:
        return self._mat[:, 3:6]

    @property
    def rotations(self) -> np.ndarray:
        return self._mat[:, 6:10]

    @property
    def opacities(self) -> np.ndarray:
        return self._mat[:, 10]

    @property
    def sh(self) -> np.ndarray:
        # note: copy (the 48-wide slice is not contiguous); read-only use
        return self._mat[:, 11:].reshape(self.k, 3, 16)


def _background_array(background) -> np.ndarray:
    bg = np.asarray(background, dtype=np.float64).reshape(3)
    if bg.min() < 0.0 or bg.max() > 1.0:
        raise ValidationError("background color must lie in [0, 1]")
    return bg


class RenderContext:
    """Projection + tile binning, reusable between forward and backward."""

    def __init__(self, model: GaussianModel, cam: Camera,
                 config: RasterConfig = DEFAULT_CONFIG):
        self.model = model
        self.cam = cam
        self.config = config
        self.scene = ProjectedScene(model, cam, config)
        order = self.scene.order
        self.means = np.ascontiguousarray(self.scene.means2d[order])
        self.conic = np.ascontiguousarray(self.scene.conic[order])
        self.rgb = np.ascontiguousarray(self.scene.rgb[order])
        self.opacity = np.ascontiguousarray(self.scene.opacity[order])
        ts = config.tile_size
        n_tiles_x = (cam.width + ts - 1) // ts
        n_tiles_y = (cam.height + ts - 1) // ts
        self.starts, self.items = bin_tiles(
            self.scene.x_lo[order] // ts, self.scene.x_hi[order] // ts,
            self.scene.y_lo[order] // ts, self.scene.y_hi[order] // ts,
            n_tiles_x, n_tiles_y)

    def forward(self, background) -> tuple[Image, RenderAux]:
        bg = _background_array(background)
        cam = self.cam
        raw = np.empty((cam.height, cam.width, 3))
        trans = np.empty((cam.height, cam.width))
        wsum = np.empty((cam.height, cam.width))
        forward_kernel(self.means, self.conic, self.rgb, self.opacity,
                       self.starts, self.items, cam.width, cam.height,
                       self.config.tile_size, bg, self.config.cutoff_sq,
                       self.config.alpha_skip, self.config.alpha_clip,
                       raw, trans, wsum)
        return Image(np.clip(raw, 0.0, 1.0)), RenderAux(raw, trans, wsum)

    def backward(self, background, grad_image: np.ndarray,
                 aux: RenderAux) -> RenderGradients:
        bg = _background_array(background)
        cam = self.cam
        grad_image = np.asarray(grad_image, dtype=np.float64)
        if grad_image.shape != (cam.height, cam.width, 3):
            raise ValidationError(
                f"upstream gradient shape {grad_image.shape} does not match "
                f"image ({cam.height}, {cam.width}, 3)")
        pair_grads = np.zeros((self.items.shape[0], 9))
        backward_kernel(self.means, self.conic, self.rgb, self.opacity,
                        self.starts, self.items, cam.width, cam.height,
                        self.config.tile_size, bg, self.config.cutoff_sq,
                        self.config.alpha_skip, self.config.alpha_clip,
                        np.ascontiguousarray(grad_image), aux.raw,
                        aux.transmittance, pair_grads)
        per_sorted = reduce_pairs(pair_grads, self.items, self.means.shape[0])
        return _chain_to_parameters(self.model, self.cam, self.scene, per_sorted)


def render(model: GaussianModel, cam: Camera, background=(0.0, 0.0, 0.0),
           config: RasterConfig = DEFAULT_CONFIG, return_aux: bool = False):
    """Render the model to a float image; clamps to [0, 1] at the end."""
    ctx = RenderContext(model, cam, config)
    image, aux = ctx.forward(background)
    if return_aux:
        return image, aux
    return image


def render_backward(model: GaussianModel, cam: Camera, background,
                    grad_image: np.ndarray,
                    config: RasterConfig = DEFAULT_CONFIG) -> RenderGradients:
    """Analytic gradients of sum(grad_image * rendered_image) w.r.t. all
    59*K parameters (position, scale, rotation, opacity, SH)."""
    ctx = RenderContext(model, cam, config)
    _, aux = ctx.forward(background)
    return ctx.backward(background, grad_image, aux)


def _chain_to_parameters(model: GaussianModel, cam: Camera,
                         scene: ProjectedScene,
                         per_sorted: np.ndarray) -> RenderGradients:
    """Pixel-space gradients (mean2d, conic, rgb, opacity) -> the 59*K
    parameter gradients, through projection, covariance assembly, and SH."""
    grads = RenderGradients(model.k)
    order = scene.order
    if order.size == 0:
        return grads

    g_mean2d = per_sorted[:, 0:2]
    g_conic = per_sorted[:, 2:5]
    g_rgb = per_sorted[:, 5:8]
    g_opacity = per_sorted[:, 8]

    # pixel-space covariance chain: conic = inv(cov2d)
    conic = scene.conic[order]
    conic_m = np.empty((order.size, 2, 2))
    conic_m[:, 0, 0] = conic[:, 0]
    conic_m[:, 0, 1] = conic[:, 1]
    conic_m[:, 1, 0] = conic[:, 1]
    conic_m[:, 1, 1] = conic[:, 2]
    g_lam = np.empty((order.size, 2, 2))
    g_lam[:, 0, 0] = g_conic[:, 0]
    g_lam[:, 0, 1] = g_conic[:, 1]
    g_lam[:, 1, 0] = g_conic[:, 1]
    g_lam[:, 1, 1] = g_conic[:, 2]
    g_cov2d = -np.einsum("kij,kjl,klm->kim", conic_m, g_lam, conic_m)

    T = scene.T[order]
    sigma = scene.sigma[order]
    R = cam.rotation
    g_sigma = np.einsum("kai,kab,kbj->kij", T, g_cov2d, T)
    g_T = 2.0 * np.einsum("kab,kbi,kij->kaj", g_cov2d, T, sigma)
    g_J = np.einsum("kai,mi->kam", g_T, R)

    # projection-Jacobian dependence on the camera-space point
    p_cam = scene.p_cam[order]
    x, y, z = p_cam[:, 0], p_cam[:, 1], p_cam[:, 2]
    fx, fy = cam.fx, cam.fy
    g_pcam = np.zeros((order.size, 3))
    g_pcam[:, 0] = g_J[:, 0, 2] * (-fx / (z * z))
    g_pcam[:, 1] = g_J[:, 1, 2] * (-fy / (z * z))
    g_pcam[:, 2] = (g_J[:, 0, 0] * (-fx / (z * z))
                    + g_J[:, 0, 2] * (2.0 * fx * x / (z ** 3))
                    + g_J[:, 1, 1] * (-fy / (z * z))
                    + g_J[:, 1, 2] * (2.0 * fy * y / (z ** 3)))
    # mean2d = perspective(p_cam): its Jacobian is J itself
    J = scene.J[order]
    g_pcam += np.einsum("kij,ki->kj", J, g_mean2d)
    g_pos = g_pcam @ R

    # world covariance chain: sigma = M3 M3^T, M3 = R_q diag(s)
    M3 = scene.M3[order]
    R_q = scene.R_q[order]
    scales = model.scales[order]
    g_M3 = 2.0 * np.einsum("kij,kjl->kil", g_sigma, M3)
    g_scale = np.einsum("kji,kji->ki", R_q, g_M3)
    g_Rq = g_M3 * scales[:, None, :]
    D = rotmat_quat_partials(scene.quats_unit[order])
    g_qhat = np.einsum("kij,kqij->kq", g_Rq, D)
    # through the normalization q_hat = q / |q|
    qhat = scene.quats_unit[order]
    qnorm = scene.quat_norms[order][:, 0]
    g_quat = (g_qhat - qhat * np.sum(qhat * g_qhat, axis=1, keepdims=True)) / qnorm[:, None]

    # color chain: rgb = sh . basis(dir),  dir = (mu - cam_center)/dist
    sh = model.sh[order]
    basis = scene.basis[order]
    g_sh = np.einsum("kc,kb->kcb", g_rgb, basis)
    dbasis = sh_basis_grad(scene.dirs[order])
    g_dir = np.einsum("kc,kcb,kbd->kd", g_rgb, sh, dbasis)
    dirs = scene.dirs[order]
    dists = scene.dists[order]
    g_pos += (g_dir - dirs * np.sum(dirs * g_dir, axis=1, keepdims=True)) / dists[:, None]

    mat = grads.flat.reshape(model.k, PARAMS_PER_GAUSSIAN)
    mat[order, 0:3] = g_pos
    mat[order, 3:6] = g_scale
    mat[order, 6:10] = g_quat
    mat[order, 10] = g_opacity
    mat[order, 11:] = g_sh.reshape(order.size, 48)
    return grads
