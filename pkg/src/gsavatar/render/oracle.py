"""Reference rasterizer: per-pixel full loop over the depth-sorted list.

Same math as the tiled renderer, no tiling, no parallelism; used as the
test oracle.  Also exposes per-Gaussian compositing weights for the
monotonicity and partition-of-unity property tests.
"""

from __future__ import annotations

import math

import numpy as np

from gsavatar.core.camera import Camera
from gsavatar.core.image import Image
from gsavatar.core.model import GaussianModel
from gsavatar.render.config import DEFAULT_CONFIG, RasterConfig
from gsavatar.render.projection import project_gaussian


def _sorted_projections(model: GaussianModel, cam: Camera, config: RasterConfig):
    entries = []
    for idx in range(model.k):
        proj = project_gaussian(model.gaussian(idx), cam, config)
        if proj is not None:
            entries.append((proj.depth, idx, proj))
    entries.sort(key=lambda e: (e[0], e[1]))
    return entries


def render_oracle(model: GaussianModel, cam: Camera, background=(0.0, 0.0, 0.0),
                  config: RasterConfig = DEFAULT_CONFIG) -> Image:
    img, _, _ = render_oracle_full(model, cam, background, config)
    return img


def render_oracle_full(model: GaussianModel, cam: Camera,
                       background=(0.0, 0.0, 0.0),
                       config: RasterConfig = DEFAULT_CONFIG):
    """Returns (image, transmittance map, weight-sum map)."""
    bg = np.asarray(background, dtype=np.float64).reshape(3)
    entries = _sorted_projections(model, cam, config)
    h, w = cam.height, cam.width
    raw = np.empty((h, w, 3))
    trans_map = np.empty((h, w))
    wsum_map = np.empty((h, w))
    cutoff = config.cutoff_sq
    for i in range(h):
        py = i + 0.5
        for j in range(w):
            px = j + 0.5
            trans = 1.0
            color = [0.0, 0.0, 0.0]
            wsum = 0.0
            for _, _, proj in entries:
                dx = px - proj.mean2d[0]
                dy = py - proj.mean2d[1]
                a = proj.cov2d[0, 0]
                b = proj.cov2d[0, 1]
                c = proj.cov2d[1, 1]
                det = a * c - b * b
                maha = (c * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det
                if maha > cutoff:
                    continue
                alpha = proj.opacity * math.exp(-0.5 * maha)
                if alpha > config.alpha_clip:
                    alpha = config.alpha_clip
                if alpha < config.alpha_skip:
                    continue
                weight = alpha * trans
                color[0] += proj.rgb[0] * weight
                color[1] += proj.rgb[1] * weight
                color[2] += proj.rgb[2] * weight
                wsum += weight
                trans *= 1.0 - alpha
            raw[i, j, 0] = color[0] + bg[0] * trans
            raw[i, j, 1] = color[1] + bg[1] * trans
            raw[i, j, 2] = color[2] + bg[2] * trans
            trans_map[i, j] = trans
            wsum_map[i, j] = wsum
    return Image(np.clip(raw, 0.0, 1.0)), trans_map, wsum_map


def render_oracle_weights(model: GaussianModel, cam: Camera,
                          config: RasterConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Compositing weight of every Gaussian at every pixel: (K, H, W)."""
    entries = _sorted_projections(model, cam, config)
    h, w = cam.height, cam.width
    weights = np.zeros((model.k, h, w))
    cutoff = config.cutoff_sq
    for i in range(h):
        py = i + 0.5
        for j in range(w):
            px = j + 0.5
            trans = 1.0
            for _, idx, proj in entries:
                dx = px - proj.mean2d[0]
                dy = py - proj.mean2d[1]
                a = proj.cov2d[0, 0]
                b = proj.cov2d[0, 1]
                c = proj.cov2d[1, 1]
                det = a * c - b * b
                maha = (c * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det
                if maha > cutoff:
                    continue
                alpha = proj.opacity * math.exp(-0.5 * maha)
                if alpha > config.alpha_clip:
                    alpha = config.alpha_clip
                if alpha < config.alpha_skip:
                    continue
                weights[idx, i, j] = alpha * trans
                trans *= 1.0 - alpha
    return weights
