"""Template construction: parameter-wise averaging of subject models.

Quaternions are sign-aligned to the first model before averaging (double
cover); opacities are averaged in raw space then clamped away from 0/1 so
the residual logit stays finite.  Subject rotations are near-identical by
construction (shared landmark init), which is what makes the linear
quaternion average adequate.
"""

from __future__ import annotations

import hashlib

import numpy as np

from gsavatar.core.errors import ValidationError
from gsavatar.core.model import OPACITY_CLAMP, GaussianModel, quat_normalize


def build_template(models: list[GaussianModel]) -> GaussianModel:
    if not models:
        raise ValidationError("cannot average an empty model list")
    k = models[0].k
    for m in models[1:]:
        if m.k != k:
            raise ValidationError(f"model K mismatch: {m.k} != {k}")
        if m.sh_degree != models[0].sh_degree:
            raise ValidationError("models must share sh_degree")

    n = len(models)
    positions = np.mean([m.positions for m in models], axis=0)
    scales = np.mean([m.scales for m in models], axis=0)
    sh = np.mean([m.sh for m in models], axis=0)
    opacities = np.mean([m.opacities for m in models], axis=0)
    opacities = np.clip(opacities, OPACITY_CLAMP, 1.0 - OPACITY_CLAMP)

    reference = models[0].rotations
    quat_sum = np.zeros((k, 4))
    for m in models:
        dots = np.sum(m.rotations * reference, axis=1, keepdims=True)
        quat_sum += np.where(dots < 0.0, -m.rotations, m.rotations)
    rotations = quat_normalize(quat_sum / n)

    source_hashes = [model_hash(m) for m in models]
    return GaussianModel(positions, scales, rotations, opacities, sh,
                         metadata={"n_subjects": n, "source_hashes": source_hashes})


def model_hash(model: GaussianModel) -> str:
    h = hashlib.sha256()
    for arr in (model.positions, model.scales, model.rotations,
                model.opacities, model.sh):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()[:16]


def template_stats(models: list[GaussianModel], template: GaussianModel) -> dict:
    """Residual magnitude distributions per parameter class; quantifies how
    small the deformations from the template are for each subject."""
    if any(m.k != template.k for m in models):
        raise ValidationError("model K mismatch against template")
    classes = {
        "position": lambda m: m.positions - template.positions,
        "scale": lambda m: m.scales - template.scales,
        "rotation": lambda m: m.rotations - template.rotations,
        "opacity": lambda m: (m.opacities - template.opacities)[:, None],
        "sh": lambda m: (m.sh - template.sh).reshape(m.k, -1),
    }
    report: dict = {"n_subjects": len(models), "per_class": {}}
    for name, fn in classes.items():
        norms = np.array([np.linalg.norm(fn(m), axis=1) for m in models])  # (N, K)
        report["per_class"][name] = {
            "mean": float(norms.mean()),
            "max": float(norms.max()),
            "per_subject_mean": [float(x) for x in norms.mean(axis=1)],
        }
    return report
