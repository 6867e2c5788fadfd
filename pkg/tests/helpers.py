"""Shared test scene builders."""

from __future__ import annotations

import numpy as np

from gsavatar.core.camera import Camera, orbit_camera
from gsavatar.core.model import GaussianModel, quat_normalize


def random_model(rng: np.random.Generator, k: int = 5,
                 spread: float = 0.5, sh_amplitude: float = 0.3) -> GaussianModel:
    """Random valid scene near the origin, opacities kept away from the clip
    and skip thresholds so gradient checks stay smooth."""
    positions = rng.uniform(-spread, spread, size=(k, 3))
    scales = rng.uniform(0.05, 0.25, size=(k, 3))
    rotations = quat_normalize(rng.normal(size=(k, 4)))
    opacities = rng.uniform(0.3, 0.9, size=k)
    sh = np.zeros((k, 3, 16))
    sh[:, :, 0] = rng.uniform(0.5, 2.5, size=(k, 3))
    sh[:, :, 1:] = rng.uniform(-sh_amplitude, sh_amplitude, size=(k, 3, 15))
    return GaussianModel(positions, scales, rotations, opacities, sh)


def smooth_scene(rng: np.random.Generator, k: int = 5, res: int = 16):
    """Scene family for finite-difference gradient checks.

    Footprints cover the whole image with Mahalanobis distance well inside
    the cutoff, contributions stay above the skip threshold, and composites
    stay strictly inside [0, 1], so the rendered loss is smooth at every
    probe (the hard skip/clamp rules are exact discontinuities where central
    differences are meaningless).
    """
    positions = rng.uniform(-0.3, 0.3, size=(k, 3))
    scales = rng.uniform(1.5, 2.5, size=(k, 3))
    rotations = quat_normalize(rng.normal(size=(k, 4)))
    opacities = rng.uniform(0.3, 0.9, size=k)
    sh = np.zeros((k, 3, 16))
    sh[:, :, 0] = rng.uniform(0.25, 0.75, size=(k, 3)) / 0.28209479177387814
    sh[:, :, 1:] = rng.uniform(-0.02, 0.02, size=(k, 3, 15))
    model = GaussianModel(positions, scales, rotations, opacities, sh)
    cam = random_camera(rng, res=res, distance=2.5)
    background = rng.uniform(0.15, 0.85, size=3)
    return model, cam, background


def frontal_camera(res: int = 16, distance: float = 2.5) -> Camera:
    return orbit_camera(0.0, 0.0, distance, res, res, focal=float(res))


def random_camera(rng: np.random.Generator, res: int = 16,
                  distance: float = 2.5) -> Camera:
    az = rng.uniform(-80.0, 80.0)
    el = rng.uniform(-30.0, 30.0)
    return orbit_camera(az, el, distance, res, res, focal=float(res))
