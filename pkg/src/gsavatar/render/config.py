"""Rasterizer constants.

These are the conventional splatting defaults; each is exposed because the
tests pin behavior to them (skip thresholds interact with gradient checks).
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class RasterConfig:
    near_plane: float = 0.01  # world units, camera-space z cull
    lowpass: float = 0.3  # px^2 added to the 2D covariance diagonal
    alpha_clip: float = 0.999  # per-contribution opacity ceiling
    alpha_skip: float = 1.0 / 255.0  # contributions below this are skipped
    cutoff_sigma: float = 3.0  # pixels beyond this Mahalanobis radius skipped
    tile_size: int = 16

    @property
    def cutoff_sq(self) -> float:
        return self.cutoff_sigma * self.cutoff_sigma


DEFAULT_CONFIG = RasterConfig()
