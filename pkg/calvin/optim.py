"""Adam with bias correction over named float32 parameters."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Mapping

import numpy as np

from .errors import ShapeError


@dataclass
class AdamState:
    """First/second moments per parameter name plus the shared step counter."""

    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.lr <= 0:
            raise ValueError("Adam learning rate must be positive")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.step < 0:
            raise ValueError("Adam step counter cannot be negative")


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
) -> Dict[str, np.ndarray]:
    """Return updated copies of ``params``; ``state`` advances by one step.

    Parameters without an entry in ``grads`` are treated as having zero gradient.
    """
    for name, grad in grads.items():
        if name not in params:
            raise ShapeError(f"Gradient for unknown parameter '{name}'")
        if np.shape(grad) != np.shape(params[name]):
            raise ShapeError(
                f"Gradient shape {np.shape(grad)} does not match parameter '{name}' {np.shape(params[name])}"
            )

    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step

    updated: Dict[str, np.ndarray] = {}
    for name, value in params.items():
        g = np.asarray(grads.get(name, np.zeros_like(value)), dtype=np.float64)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None or v is None:
            m = np.zeros(value.shape, dtype=np.float32)
            v = np.zeros(value.shape, dtype=np.float32)
        elif m.shape != value.shape:
            raise ShapeError(f"Adam moment shape mismatch for '{name}'")
        m64 = state.beta1 * m.astype(np.float64) + (1.0 - state.beta1) * g
        v64 = state.beta2 * v.astype(np.float64) + (1.0 - state.beta2) * (g * g)
        state.m[name] = m64.astype(np.float32)
        state.v[name] = v64.astype(np.float32)
        step = state.lr * (m64 / bc1) / (np.sqrt(v64 / bc2) + state.eps)
        updated[name] = (value.astype(np.float64) - step).astype(np.float32)
    return updated
