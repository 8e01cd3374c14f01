"""Adam with bias correction, as a pure function over numpy buffers."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..errors import OptimizerError


@dataclass(frozen=True)
class AdamState:
    step: int
    m: np.ndarray
    v: np.ndarray
    lr: float = 0.005
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, param, **hyper):
        return cls(0, np.zeros_like(param, dtype=np.float64), np.zeros_like(param, dtype=np.float64),
                   **hyper)


def adam_step(param, grad, state: AdamState, mask=None):
    """One Adam update. Returns ``(new_param, new_state)``; inputs are not modified.

    ``mask`` (broadcastable boolean) selects entries to update; the rest keep parameter and moments.
    """
    param = np.asarray(param, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != param.shape or state.m.shape != param.shape:
        raise OptimizerError(f"shape mismatch: param {param.shape}, grad {grad.shape}")
    if not state.lr >= 0:
        raise OptimizerError(f"learning rate must be nonnegative, got {state.lr}")
    if not np.isfinite(grad).all():
        raise OptimizerError(f"non-finite gradient at step {state.step + 1}")
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new = param - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    if mask is not None:
        keep = np.broadcast_to(~np.asarray(mask, dtype=bool), param.shape)
        new = np.where(keep, param, new)
        m = np.where(keep, state.m, m)
        v = np.where(keep, state.v, v)
    return new, replace(state, step=t, m=m, v=v)
