"""AMSGrad and the epoch learning-rate schedule."""

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ShapeError


@dataclass
class AMSGradState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    vhat: dict = field(default_factory=dict)


def amsgrad_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """In-place AMSGrad update of ``params`` (``{key: ndarray}``).

    ``vhat`` keeps the running elementwise maximum of the bias-corrected
    second moment. A missing gradient counts as zero.
    """
    for key, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {key!r}")
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for key, p in params.items():
        g = grads.get(key)
        g = np.zeros_like(p) if g is None else g
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape} for {key!r}")
        if key not in state.m:
            state.m[key] = np.zeros_like(p)
            state.v[key] = np.zeros_like(p)
            state.vhat[key] = np.zeros_like(p)
        m = state.m[key] = beta1 * state.m[key] + (1.0 - beta1) * g
        v = state.v[key] = beta2 * state.v[key] + (1.0 - beta2) * g * g
        vhat = state.vhat[key] = np.maximum(state.vhat[key], v / c2)
        p -= lr * (m / c1) / (np.sqrt(vhat) + eps)
    return params, state


def lr_schedule(epoch, lr0=0.001):
    """``lr0 * 0.95**epoch * 0.5**(epoch // 5)``."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    return lr0 * 0.95**epoch * 0.5 ** (epoch // 5)
