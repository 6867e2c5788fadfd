"""Training objectives: reconstruction loss for the decoder, code-matching
loss for the encoder.  Each returns the scalar plus analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from gsavatar.core.errors import ValidationError
from gsavatar.metrics import (
    perceptual_proxy_with_grad,
    ssim_with_grad,
)


@dataclass(frozen=True)
class LossWeights:
    """Nonnegative weights for the decoder/encoder objectives.

    Defaults keep the perceptual proxy off; L1 + SSIM carry the
    reconstruction signal, with small L2 regularizers on the position and
    scale offsets.
    """

    perceptual: float = 0.0
    l1: float = 0.8
    ssim: float = 0.2
    reg_position: float = 1e-2
    reg_scale: float = 1e-2
    cosine: float = 1.0

    def __post_init__(self) -> None:
        for name in ("perceptual", "l1", "ssim", "reg_position", "reg_scale", "cosine"):
            if getattr(self, name) < 0.0:
                raise ValidationError(f"loss weight {name} must be nonnegative")

    def to_dict(self) -> dict:
        return {
            "perceptual": self.perceptual, "l1": self.l1, "ssim": self.ssim,
            "reg_position": self.reg_position, "reg_scale": self.reg_scale,
            "cosine": self.cosine,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LossWeights":
        return cls(**{k: float(v) for k, v in d.items()})


def _as_array(img) -> np.ndarray:
    from gsavatar.core.image import Image

    if isinstance(img, Image):
        return img.data
    return np.asarray(img, dtype=np.float64)


def decoder_loss(target, rendered, d_position: np.ndarray, d_scale: np.ndarray,
                 weights: LossWeights):
    """Reconstruction objective with offset regularizers.

    value = w_p * perceptual + w_1 * L1 + w_s * (1 - SSIM)
          + w_mu * ||d_position||^2 + w_sc * ||d_scale||^2

    Returns (value, grad wrt rendered image, grad wrt d_position, grad wrt
    d_scale).  SSIM enters as 1 - SSIM so the loss decreases as similarity
    increases.
    """
    target = _as_array(target)
    rendered = _as_array(rendered)
    if target.shape != rendered.shape:
        raise ValidationError(f"image shapes differ: {target.shape} vs {rendered.shape}")
    d_position = np.asarray(d_position, dtype=np.float64)
    d_scale = np.asarray(d_scale, dtype=np.float64)

    value = 0.0
    grad_img = np.zeros_like(rendered)

    if weights.perceptual > 0.0:
        p, gp = perceptual_proxy_with_grad(rendered, target)
        value += weights.perceptual * p
        grad_img += weights.perceptual * gp

    if weights.l1 > 0.0:
        diff = rendered - target
        value += weights.l1 * float(np.mean(np.abs(diff)))
        grad_img += weights.l1 * np.sign(diff) / diff.size

    if weights.ssim > 0.0:
        s, gs = ssim_with_grad(rendered, target)
        value += weights.ssim * (1.0 - s)
        grad_img += weights.ssim * (-gs)

    value += weights.reg_position * float(np.sum(d_position ** 2))
    value += weights.reg_scale * float(np.sum(d_scale ** 2))
    grad_dpos = 2.0 * weights.reg_position * d_position
    grad_dscale = 2.0 * weights.reg_scale * d_scale
    return value, grad_img, grad_dpos, grad_dscale


def encoder_loss(code: np.ndarray, predicted: np.ndarray, cosine_weight: float = 1.0):
    """||w - w_hat||^2 + cosine_weight * (1 - cos(w, w_hat)).

    Returns (value, grad wrt predicted).
    """
    code = np.asarray(code, dtype=np.float64)
    predicted = np.asarray(predicted, dtype=np.float64)
    if code.shape != predicted.shape:
        raise ValidationError(f"code shapes differ: {code.shape} vs {predicted.shape}")
    if cosine_weight < 0.0:
        raise ValidationError("cosine weight must be nonnegative")
    diff = predicted - code
    value = float(np.sum(diff ** 2))
    grad = 2.0 * diff
    if cosine_weight > 0.0:
        nw = float(np.linalg.norm(code))
        nh = float(np.linalg.norm(predicted))
        if nh == 0.0 or nw == 0.0:
            raise ValidationError("cosine distance undefined for zero-norm codes")
        cos = float(np.dot(code, predicted)) / (nw * nh)
        value += cosine_weight * (1.0 - cos)
        d_cos = code / (nw * nh) - cos * predicted / (nh * nh)
        grad += cosine_weight * (-d_cos)
    return value, grad
