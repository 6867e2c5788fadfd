"""Gaussian model domain types and the residual algebra.

A model stores K anisotropic Gaussians as struct-of-arrays; each Gaussian
carries 59 scalars: position (3), scale (3), quaternion (4, scalar-first
w,x,y,z), opacity (1), and degree-3 SH colors (3x16 = 48).

Parameter layout commitments (file format, flatten order) live here and are
versioned; see `flatten_params` and `save_model_json`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from gsavatar.core.errors import ValidationError
from gsavatar.core.sh import N_COEFFS

PARAMS_PER_GAUSSIAN = 59  # 3 + 3 + 4 + 1 + 48
SH_DEGREE = 3
QUAT_NORM_TOL = 1e-9
OPACITY_CLAMP = 1e-4  # opacity kept in [OPACITY_CLAMP, 1 - OPACITY_CLAMP] before logit


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norm == 0.0):
        raise ValidationError("cannot normalize zero quaternion")
    return q / norm


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrices from unit quaternions, scalar-first (w, x, y, z).

    q: (..., 4) -> (..., 3, 3). Uses the standard Hamilton convention:
    R(q) v rotates v by q.
    """
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    R[..., 0, 0] = 1.0 - 2.0 * (y * y + z * z)
    R[..., 0, 1] = 2.0 * (x * y - z * w)
    R[..., 0, 2] = 2.0 * (x * z + y * w)
    R[..., 1, 0] = 2.0 * (x * y + z * w)
    R[..., 1, 1] = 1.0 - 2.0 * (x * x + z * z)
    R[..., 1, 2] = 2.0 * (y * z - x * w)
    R[..., 2, 0] = 2.0 * (x * z - y * w)
    R[..., 2, 1] = 2.0 * (y * z + x * w)
    R[..., 2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return R


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def logit(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


@dataclass(frozen=True)
class Gaussian:
    """A single splat: 59 parameters. Immutable value object."""

    position: np.ndarray  # (3,) world units
    scale: np.ndarray  # (3,) world units, > 0
    rotation: np.ndarray  # (4,) unit quaternion, scalar-first
    opacity: float  # in (0, 1)
    sh_coeffs: np.ndarray  # (3, 16) RGB x degree-3 basis

    def __post_init__(self) -> None:
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64).reshape(3))
        object.__setattr__(self, "scale", np.asarray(self.scale, dtype=np.float64).reshape(3))
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64).reshape(4))
        object.__setattr__(self, "sh_coeffs", np.asarray(self.sh_coeffs, dtype=np.float64).reshape(3, N_COEFFS))
        validate_gaussian_arrays(
            self.position[None], self.scale[None], self.rotation[None],
            np.asarray([self.opacity]), self.sh_coeffs[None],
        )


def validate_gaussian_arrays(positions, scales, rotations, opacities, sh) -> None:
    if not (np.all(np.isfinite(positions)) and np.all(np.isfinite(scales))
            and np.all(np.isfinite(rotations)) and np.all(np.isfinite(opacities))
            and np.all(np.isfinite(sh))):
        raise ValidationError("gaussian parameters must be finite")
    if np.any(scales <= 0.0):
        raise ValidationError("scales must be strictly positive")
    norms = np.linalg.norm(rotations, axis=-1)
    if np.any(np.abs(norms - 1.0) > QUAT_NORM_TOL):
        worst = float(np.max(np.abs(norms - 1.0)))
        raise ValidationError(f"quaternions must be unit norm (worst deviation {worst:.3e})")
    if np.any(opacities <= 0.0) or np.any(opacities >= 1.0):
        raise ValidationError("opacity must lie strictly inside (0, 1)")


class GaussianModel:
    """Ordered set of K Gaussians with fixed K (no densify/prune).

    Arrays are read-only after construction; treat instances as immutable
    values (safe to share across threads).
    """

    def __init__(self, positions, scales, rotations, opacities, sh,
                 metadata: dict | None = None, validate: bool = True):
        self.positions = np.ascontiguousarray(positions, dtype=np.float64)
        self.scales = np.ascontiguousarray(scales, dtype=np.float64)
        self.rotations = np.ascontiguousarray(rotations, dtype=np.float64)
        self.opacities = np.ascontiguousarray(opacities, dtype=np.float64)
        self.sh = np.ascontiguousarray(sh, dtype=np.float64)
        self.sh_degree = SH_DEGREE
        self.metadata = dict(metadata or {})
        k = self.positions.shape[0]
        shapes = (self.positions.shape, self.scales.shape, self.rotations.shape,
                  self.opacities.shape, self.sh.shape)
        expected = ((k, 3), (k, 3), (k, 4), (k,), (k, 3, N_COEFFS))
        if shapes != expected:
            raise ValidationError(f"inconsistent array shapes {shapes}, expected {expected}")
        if validate:
            validate_gaussian_arrays(self.positions, self.scales, self.rotations,
                                     self.opacities, self.sh)
        for arr in (self.positions, self.scales, self.rotations, self.opacities, self.sh):
            arr.setflags(write=False)

    @property
    def k(self) -> int:
        return self.positions.shape[0]

    @property
    def gaussians(self) -> Iterator[Gaussian]:
        for i in range(self.k):
            yield self.gaussian(i)

    def gaussian(self, i: int) -> Gaussian:
        return Gaussian(self.positions[i], self.scales[i], self.rotations[i],
                        float(self.opacities[i]), self.sh[i])

    def with_metadata(self, **extra) -> "GaussianModel":
        md = dict(self.metadata)
        md.update(extra)
        return GaussianModel(self.positions, self.scales, self.rotations,
                             self.opacities, self.sh, metadata=md, validate=False)

    def allclose(self, other: "GaussianModel", atol: float = 0.0) -> bool:
        return (self.k == other.k
                and np.allclose(self.positions, other.positions, atol=atol, rtol=0)
                and np.allclose(self.scales, other.scales, atol=atol, rtol=0)
                and np.allclose(self.rotations, other.rotations, atol=atol, rtol=0)
                and np.allclose(self.opacities, other.opacities, atol=atol, rtol=0)
                and np.allclose(self.sh, other.sh, atol=atol, rtol=0))


@dataclass
class ResidualSet:
    """Per-Gaussian parameter offsets, mapped onto a template by apply_residuals.

    Scales offsets are log-scale units, opacity offsets logit units, rotation
    offsets raw quaternion increments (renormalized after addition).
    """

    d_position: np.ndarray  # (K, 3)
    d_scale: np.ndarray  # (K, 3)
    d_rotation: np.ndarray  # (K, 4)
    d_opacity: np.ndarray  # (K,)
    d_sh: np.ndarray  # (K, 3, 16)

    def __post_init__(self) -> None:
        self.d_position = np.asarray(self.d_position, dtype=np.float64)
        self.d_scale = np.asarray(self.d_scale, dtype=np.float64)
        self.d_rotation = np.asarray(self.d_rotation, dtype=np.float64)
        self.d_opacity = np.asarray(self.d_opacity, dtype=np.float64)
        self.d_sh = np.asarray(self.d_sh, dtype=np.float64)
        k = self.d_position.shape[0]
        expected = ((k, 3), (k, 3), (k, 4), (k,), (k, 3, N_COEFFS))
        got = (self.d_position.shape, self.d_scale.shape, self.d_rotation.shape,
               self.d_opacity.shape, self.d_sh.shape)
        if got != expected:
            raise ValidationError(f"residual shapes {got} do not match {expected}")
        for arr in (self.d_position, self.d_scale, self.d_rotation, self.d_opacity, self.d_sh):
            if not np.all(np.isfinite(arr)):
                raise ValidationError("residual entries must be finite")

    @property
    def k(self) -> int:
        return self.d_position.shape[0]

    @classmethod
    def zeros(cls, k: int) -> "ResidualSet":
        return cls(np.zeros((k, 3)), np.zeros((k, 3)), np.zeros((k, 4)),
                   np.zeros(k), np.zeros((k, 3, N_COEFFS)))

    @classmethod
    def from_matrix(cls, mat: np.ndarray) -> "ResidualSet":
        """Build from a (K, 59) matrix in the flatten_params per-Gaussian layout."""
        mat = np.asarray(mat, dtype=np.float64)
        if mat.ndim != 2 or mat.shape[1] != PARAMS_PER_GAUSSIAN:
            raise ValidationError(f"expected (K, {PARAMS_PER_GAUSSIAN}) matrix, got {mat.shape}")
        k = mat.shape[0]
        return cls(mat[:, 0:3], mat[:, 3:6], mat[:, 6:10], mat[:, 10],
                   mat[:, 11:].reshape(k, 3, N_COEFFS))

    def as_matrix(self) -> np.ndarray:
        k = self.k
        mat = np.empty((k, PARAMS_PER_GAUSSIAN), dtype=np.float64)
        mat[:, 0:3] = self.d_position
        mat[:, 3:6] = self.d_scale
        mat[:, 6:10] = self.d_rotation
        mat[:, 10] = self.d_opacity
        mat[:, 11:] = self.d_sh.reshape(k, 48)
        return mat


def assemble_covariance(q: np.ndarray, s: np.ndarray) -> np.ndarray:
    """World-space covariance R S S^T R^T from a unit quaternion and scales."""
    q = np.asarray(q, dtype=np.float64).reshape(4)
    s = np.asarray(s, dtype=np.float64).reshape(3)
    if abs(np.linalg.norm(q) - 1.0) > 1e-6:
        raise ValidationError("quaternion must be unit norm for covariance assembly")
    if np.any(s <= 0.0):
        raise ValidationError("scales must be strictly positive")
    R = quat_to_rotmat(q / np.linalg.norm(q))
    M = R * s[None, :]
    return M @ M.T


def apply_residuals(template: GaussianModel, delta: ResidualSet,
                    metadata: dict | None = None) -> GaussianModel:
    """Map per-Gaussian offsets onto a template model.

    position adds, scale multiplies by exp(offset), rotation adds then
    renormalizes, opacity composes in logit space, SH adds.  Output always
    satisfies the Gaussian invariants for any finite residual set.
    """
    if delta.k != template.k:
        raise ValidationError(f"residual K={delta.k} does not match template K={template.k}")
    if np.any(template.opacities <= 0.0) or np.any(template.opacities >= 1.0):
        raise ValidationError("template opacity at 0 or 1 has no logit")
    positions = template.positions + delta.d_position
    scales = template.scales * np.exp(delta.d_scale)
    rotations = quat_normalize(template.rotations + delta.d_rotation)
    # clamp before the logit so near-saturated template opacities stay finite;
    # the output clip only guards float saturation under extreme offsets
    alpha_t = np.clip(template.opacities, OPACITY_CLAMP, 1.0 - OPACITY_CLAMP)
    opacities = sigmoid(logit(alpha_t) + delta.d_opacity)
    opacities = np.clip(opacities, 1e-12, 1.0 - 1e-12)
    sh = template.sh + delta.d_sh
    return GaussianModel(positions, scales, rotations, opacities, sh,
                         metadata=metadata if metadata is not None else dict(template.metadata))


def apply_residuals_backward(template: GaussianModel, delta: ResidualSet,
                             output: GaussianModel,
                             g_positions: np.ndarray, g_scales: np.ndarray,
                             g_rotations: np.ndarray, g_opacities: np.ndarray,
                             g_sh: np.ndarray) -> ResidualSet:
    """Chain gradients w.r.t. the activated model back to the residual offsets."""
    gd_position = g_positions
    gd_scale = g_scales * output.scales
    u = template.rotations + delta.d_rotation
    unorm = np.linalg.norm(u, axis=1, keepdims=True)
    qhat = output.rotations
    inner = np.sum(qhat * g_rotations, axis=1, keepdims=True)
    gd_rotation = (g_rotations - qhat * inner) / unorm
    gd_opacity = g_opacities * output.opacities * (1.0 - output.opacities)
    return ResidualSet(gd_position, gd_scale, gd_rotation, gd_opacity, g_sh.copy())


def flatten_params(model: GaussianModel) -> np.ndarray:
    """Model -> vector of 59*K scalars.

    Per-Gaussian layout, committed as a file-format contract:
    [position(3), scale(3), quaternion(4), opacity(1), sh(48 row-major, R
    coefficients 0..15 then G then B)].
    """
    k = model.k
    out = np.empty((k, PARAMS_PER_GAUSSIAN), dtype=np.float64)
    out[:, 0:3] = model.positions
    out[:, 3:6] = model.scales
    out[:, 6:10] = model.rotations
    out[:, 10] = model.opacities
    out[:, 11:] = model.sh.reshape(k, 48)
    return out.reshape(-1)


def unflatten_params(vec: np.ndarray, k: int, metadata: dict | None = None,
                     validate: bool = True) -> GaussianModel:
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (k * PARAMS_PER_GAUSSIAN,):
        raise ValidationError(
            f"expected vector of length {k * PARAMS_PER_GAUSSIAN}, got shape {vec.shape}")
    mat = vec.reshape(k, PARAMS_PER_GAUSSIAN)
    return GaussianModel(mat[:, 0:3], mat[:, 3:6], mat[:, 6:10], mat[:, 10],
                         mat[:, 11:].reshape(k, 3, N_COEFFS),
                         metadata=metadata, validate=validate)


MODEL_FORMAT_VERSION = 1


def save_model_json(model: GaussianModel, path: str | Path) -> None:
    doc = {
        "version": MODEL_FORMAT_VERSION,
        "k": model.k,
        "sh_degree": model.sh_degree,
        "positions": model.positions.tolist(),
        "scales": model.scales.tolist(),
        "rotations": model.rotations.tolist(),
        "opacities": model.opacities.tolist(),
        "sh": model.sh.reshape(model.k, 48).tolist(),
        "metadata": model.metadata,
    }
    Path(path).write_text(json.dumps(doc))


def load_model_json(path: str | Path) -> GaussianModel:
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != MODEL_FORMAT_VERSION:
        raise ValidationError(f"unsupported model file version {doc.get('version')!r}")
    k = int(doc["k"])
    sh = np.asarray(doc["sh"], dtype=np.float64).reshape(k, 3, N_COEFFS)
    return GaussianModel(doc["positions"], doc["scales"], doc["rotations"],
                         doc["opacities"], sh, metadata=doc.get("metadata", {}))
