"""Adam with optional per-parameter learning rates, plus a small
deterministic training-loop harness used by fitting, decoder/encoder
training, and refinement."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numba
import numpy as np

from gsavatar.core.errors import ValidationError


@numba.njit(cache=True)
def _adam_update(params, grads, m, v, lr, scalar_lr, t, beta1, beta2, eps):
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    out = np.empty_like(params)
    for i in range(params.shape[0]):
        g = grads[i]
        m[i] = beta1 * m[i] + (1.0 - beta1) * g
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g
        step = lr[i] if lr.shape[0] > 1 else scalar_lr
        out[i] = params[i] - step * (m[i] / c1) / (np.sqrt(v[i] / c2) + eps)
    return out


@dataclass
class AdamState:
    m: np.ndarray  # first moment
    v: np.ndarray  # second moment
    step: int = 0
    lr: float | np.ndarray = 1e-3  # scalar or per-parameter array
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: np.ndarray, lr: float | np.ndarray = 1e-3,
                   beta1: float = 0.9, beta2: float = 0.999,
                   eps: float = 1e-8) -> "AdamState":
        if np.ndim(lr) > 0 and np.shape(lr) != np.shape(params):
            raise ValidationError("per-parameter learning rates must match parameter shape")
        return cls(np.zeros_like(params, dtype=np.float64),
                   np.zeros_like(params, dtype=np.float64), 0, lr, beta1, beta2, eps)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState) -> np.ndarray:
    """One bias-corrected Adam update; mutates `state`, returns new params.

    Equivalent to p - lr * m_hat / (sqrt(v_hat) + eps); the fused kernel
    keeps large parameter vectors allocation-free.
    """
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ValidationError(
            f"shape mismatch: params {params.shape}, grads {grads.shape}, "
            f"state {state.m.shape}")
    if not np.all(np.isfinite(grads)):
        bad = int(np.argmin(np.isfinite(grads).reshape(-1)))
        raise ValidationError(f"non-finite gradient at parameter index {bad}")
    state.step += 1
    if params.ndim == 1 and params.shape[0] > 4096:
        if np.ndim(state.lr) > 0:
            lr_vec, scalar_lr = np.ascontiguousarray(state.lr, dtype=np.float64), 0.0
        else:
            lr_vec, scalar_lr = np.empty(1), float(state.lr)
        return _adam_update(params, grads, state.m, state.v, lr_vec, scalar_lr,
                            state.step, state.beta1, state.beta2, state.eps)
    t = state.step
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = state.m / (1.0 - state.beta1 ** t)
    v_hat = state.v / (1.0 - state.beta2 ** t)
    return params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


# per-group defaults for subject fitting (splatting convention); the
# higher SH bands train at 1/20 of the band-0 rate, also the convention
FIT_LR_POSITIONS = 1.6e-4
FIT_LR_SCALES = 5e-3
FIT_LR_ROTATIONS = 1e-3
FIT_LR_OPACITY = 5e-2
FIT_LR_SH = 2.5e-3
SH_REST_LR_FRACTION = 1.0 / 20.0


def fit_lr_vector(k: int, lr_positions: float = FIT_LR_POSITIONS,
                  lr_scales: float = FIT_LR_SCALES,
                  lr_rotations: float = FIT_LR_ROTATIONS,
                  lr_opacity: float = FIT_LR_OPACITY,
                  lr_sh: float = FIT_LR_SH) -> np.ndarray:
    """Per-parameter learning rates in the flatten_params layout."""
    row = np.empty(59)
    row[0:3] = lr_positions
    row[3:6] = lr_scales
    row[6:10] = lr_rotations
    row[10] = lr_opacity
    row[11:] = lr_sh * SH_REST_LR_FRACTION
    for channel in range(3):
        row[11 + 16 * channel] = lr_sh  # band-0 coefficient per channel
    return np.tile(row, k)


@dataclass
class TrainResult:
    params: np.ndarray
    trace: list[float] = field(default_factory=list)
    stopped_at: int | None = None


def train_loop(objective: Callable[[np.ndarray, np.random.Generator], tuple[float, np.ndarray]],
               params: np.ndarray, iters: int, lr: float | np.ndarray = 1e-3,
               seed: int = 0,
               callbacks: Sequence[Callable[[int, float, np.ndarray], bool]] = ()) -> TrainResult:
    """Generic Adam loop.

    `objective(params, rng) -> (loss, grad)`; deterministic given the seed.
    A callback returning True stops training after the current iteration.
    """
    params = np.array(params, dtype=np.float64)
    state = AdamState.for_params(params, lr=lr)
    rng = np.random.default_rng(seed)
    result = TrainResult(params)
    for it in range(iters):
        loss, grad = objective(result.params, rng)
        result.trace.append(float(loss))
        result.params = adam_step(result.params, grad, state)
        stop = False
        for cb in callbacks:
            if cb(it, loss, result.params):
                stop = True
        if stop:
            result.stopped_at = it
            break
    return result
