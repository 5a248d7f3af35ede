"""AdamW with decoupled weight decay and an inverse-square-root warmup schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, Mapping, Tuple

import numpy as np

from .errors import NonFiniteGradient


def lr_at(step: int, cfg) -> float:
    """Learning rate at 1-based ``step``: linear warmup to ``peak_lr``, then ``step**-0.5`` decay."""
    if step < 1:
        raise ValueError("step is 1-based")
    w = cfg.warmup_steps
    return cfg.peak_lr * math.sqrt(w) * min(step ** -0.5, step * w ** -1.5)


@dataclass
class AdamState:
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def zeros_like(cls, params: Mapping[str, np.ndarray]) -> "AdamState":
        return cls(0, {k: np.zeros_like(p) for k, p in params.items()}, {k: np.zeros_like(p) for k, p in params.items()})


def adamw_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float,
    cfg,
    names: Iterable[str] | None = None,
) -> Tuple[Dict[str, np.ndarray], AdamState]:
    """One AdamW update; returns new params and state, inputs are left untouched.

    ``names`` restricts the update to a subset (the trainable parameters);
    the others are copied through and keep their moments.
    """
    names = list(params if names is None else names)
    if set(grads) - set(params):
        raise KeyError(f"gradients for unknown params: {sorted(set(grads) - set(params))}")
    bad = [k for k in names if k in grads and not np.all(np.isfinite(grads[k]))]
    if bad:
        raise NonFiniteGradient(state.step + 1, bad)
    t = state.step + 1
    b1, b2 = cfg.beta1, cfg.beta2
    new_params = dict(params)
    new_m, new_v = dict(state.m), dict(state.v)
    for k in names:
        g = grads.get(k)
        if g is None:
            g = np.zeros_like(params[k])
        m = b1 * state.m[k] + (1.0 - b1) * g
        v = b2 * state.v[k] + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        theta = params[k]
        new_params[k] = theta - lr * (m_hat / (np.sqrt(v_hat) + cfg.eps)) - lr * cfg.weight_decay * theta
        new_m[k], new_v[k] = m, v
    return new_params, AdamState(t, new_m, new_v)


def clip_grad_norm(grads: Mapping[str, np.ndarray], max_norm: float, names: Iterable[str]) -> Tuple[Dict[str, np.ndarray], float]:
    """Scale ``grads[names]`` so their joint L2 norm is at most ``max_norm``."""
    names = [k for k in names if k in grads]
    total = math.sqrt(sum(float(np.sum(grads[k] * grads[k])) for k in names))
    if total <= max_norm or total == 0.0:
        return dict(grads), total
    scale = max_norm / total
    out = dict(grads)
    for k in names:
        out[k] = grads[k] * scale
    return out, total
