"""Pinhole camera with a world-to-camera rigid pose.

Convention: camera space has +z forward (points with z > 0 are in front),
+x right, +y down; a world point p projects to pixel
(fx * x/z + cx, fy * y/z + cy) where (x, y, z) = R p + t.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from gsavatar.core.errors import ValidationError

ORTHONORMAL_TOL = 1e-8


@dataclass(frozen=True)
class Camera:
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray  # (3, 3) world-to-camera
    translation: np.ndarray  # (3,) world units

    def __post_init__(self) -> None:
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))
        if self.fx <= 0 or self.fy <= 0:
            raise ValidationError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValidationError("image dimensions must be positive")
        R = self.rotation
        if np.max(np.abs(R.T @ R - np.eye(3))) > ORTHONORMAL_TOL:
            raise ValidationError("rotation must be orthonormal")
        if np.linalg.det(R) < 0.0:
            raise ValidationError("rotation must be proper (det +1)")

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates (-R^T t)."""
        return -self.rotation.T @ self.translation

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.T + self.translation


def look_at(eye: np.ndarray, target: np.ndarray, width: int, height: int,
            fx: float, fy: float, up: np.ndarray = (0.0, 1.0, 0.0)) -> Camera:
    """Camera at `eye` looking toward `target` (y-down image convention)."""
    eye = np.asarray(eye, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    up = np.asarray(up, dtype=np.float64)
    forward = target - eye
    norm = np.linalg.norm(forward)
    if norm == 0.0:
        raise ValidationError("eye and target coincide")
    z = forward / norm
    x = np.cross(z, up)
    xn = np.linalg.norm(x)
    if xn < 1e-12:
        # looking along the up axis; pick an arbitrary right vector
        x = np.cross(z, np.array([1.0, 0.0, 0.0]))
        xn = np.linalg.norm(x)
    x = x / xn
    y = np.cross(z, x)
    R = np.stack([x, y, z], axis=0)
    t = -R @ eye
    return Camera(width, height, fx, fy, width / 2.0, height / 2.0, R, t)


def orbit_camera(azimuth_deg: float, elevation_deg: float, distance: float,
                 width: int, height: int, focal: float | None = None,
                 target: np.ndarray = (0.0, 0.0, 0.0)) -> Camera:
    """Orbit shorthand: azimuth about +y, elevation above the x-z plane.

    azimuth 0, elevation 0 places the camera on the +z axis looking at the
    target (the frontal view).
    """
    az = np.deg2rad(azimuth_deg)
    el = np.deg2rad(elevation_deg)
    target = np.asarray(target, dtype=np.float64)
    eye = target + distance * np.array(
        [np.sin(az) * np.cos(el), np.sin(el), np.cos(az) * np.cos(el)])
    f = focal if focal is not None else float(max(width, height))
    return look_at(eye, target, width, height, f, f)


def save_camera_json(cam: Camera, path: str | Path) -> None:
    doc = {
        "width": cam.width, "height": cam.height,
        "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
        "rotation": cam.rotation.reshape(-1).tolist(),
        "translation": cam.translation.tolist(),
    }
    Path(path).write_text(json.dumps(doc))


def load_camera_json(path: str | Path) -> Camera:
    doc = json.loads(Path(path).read_text())
    return Camera(int(doc["width"]), int(doc["height"]),
                  float(doc["fx"]), float(doc["fy"]),
                  float(doc["cx"]), float(doc["cy"]),
                  np.asarray(doc["rotation"], dtype=np.float64).reshape(3, 3),
                  np.asarray(doc["translation"], dtype=np.float64))
