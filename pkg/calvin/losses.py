"""Imitation losses: action scores, motion model and action availability."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import ShapeError
from .maze import AgentState, Motion
from .planners import support_index
from .tensor import Tensor, as_tensor, gather_cells, index_rows, reshape, scale, softmax_cross_entropy

Transition = Tuple[int, AgentState, AgentState]


@dataclass(frozen=True)
class LossReport:
    l_q: float
    l_p: float
    l_a: float
    samples: int

    @property
    def total(self) -> float:
        return self.l_q + self.l_p + self.l_a

    def as_dict(self):
        return {"L_Q": self.l_q, "L_P": self.l_p, "L_A": self.l_a, "total": self.total, "samples": self.samples}


def _cells(states: Sequence[AgentState], planes: Tuple[int, ...]) -> np.ndarray:
    cells = np.array([s.plane_index for s in states], dtype=np.int64).reshape(-1, 3)
    if np.any(cells < 0) or np.any(cells >= np.asarray(planes)):
        raise ShapeError(f"Sample state outside the {planes} value planes")
    return cells


def loss_q(
    q: Tensor,
    states: Sequence[AgentState],
    actions: Sequence[int],
    weights: Sequence[float],
    normaliser: Optional[float] = None,
) -> Tensor:
    """``sum_t w_t CE(Q(s_t), a*_t) / normaliser`` (the sample count by default)."""
    logits = gather_cells(q, _cells(states, q.shape[1:]))
    total = softmax_cross_entropy(logits, np.asarray(actions), np.asarray(weights, dtype=np.float64))
    return scale(total, 1.0 / (normaliser or len(actions)))


def loss_a(
    a_valid: Tensor,
    states: Sequence[AgentState],
    actions: Sequence[int],
    normaliser: Optional[float] = None,
) -> Tensor:
    """Cross-entropy of the availability logits against the expert action."""
    logits = gather_cells(a_valid, _cells(states, a_valid.shape[1:]))
    total = softmax_cross_entropy(logits, np.asarray(actions))
    return scale(total, 1.0 / (normaliser or len(actions)))


def transition_targets(
    transitions: Sequence[Transition], motion: Motion, kernel_size: int
) -> Tuple[np.ndarray, np.ndarray]:
    """Motion-model row and support index of each observed transition."""
    m = motion.orientations
    rows, targets = [], []
    for action, before, after in transitions:
        offset = support_index(after.row - before.row, after.col - before.col, kernel_size)
        if motion.embodied:
            rows.append(action * m + before.theta)
            targets.append(after.theta * kernel_size * kernel_size + offset)
        else:
            rows.append(action)
            targets.append(offset)
    return np.asarray(rows, dtype=np.int64), np.asarray(targets, dtype=np.int64)


def loss_p(p_logits: Tensor, transitions: Sequence[Transition], motion: Motion) -> Tensor:
    """Mean cross-entropy of the motion model slice of each expert action against the observed move."""
    if not transitions:
        return as_tensor(0.0)
    kernel_size = p_logits.shape[-1]
    support = int(np.prod(p_logits.shape[-3:] if motion.embodied else p_logits.shape[-2:]))
    flat = reshape(p_logits, (-1, support))
    rows, targets = transition_targets(transitions, motion, kernel_size)
    logits = index_rows(flat, rows)
    return scale(softmax_cross_entropy(logits, targets), 1.0 / len(transitions))
