"""Bias-corrected Adam over named parameter dictionaries."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ShapeError


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_update(params, grads, state: AdamState):
    """One Adam step over every parameter named in `grads`.

    Parameters absent from `grads` are untouched (their moments too), which
    is how the trainer freezes one group while stepping the other.
    """
    state.step += 1
    t = state.step
    for name in sorted(grads):
        g = grads[name]
        p = params[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name!r}: {g.shape} vs parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name] = state.beta1 * state.m[name] + (1 - state.beta1) * g
        v = state.v[name] = state.beta2 * state.v[name] + (1 - state.beta2) * g * g
        m_hat = m / (1 - state.beta1**t)
        v_hat = v / (1 - state.beta2**t)
        params[name] = p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state
