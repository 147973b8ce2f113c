"""Differentiable planners: the Value Iteration Network and CALVIN.

Both planners consume a ``C x H x W`` observation tensor and return Q values
of shape ``A x M x H x W`` (``M = 1`` for positional agents, 8 for embodied
agents) together with the value planes ``M x H x W``.

CALVIN predicts which actions are available at each state and routes values
only through available actions; unavailable actions lead to a failure state
with a single learned reward. The done action never propagates value.

Parameter shapes (``K`` is the kernel size)::

    calvin.P_logits   A x K x K            (embodied: A x M x M x K x K)
    calvin.R_hat      A x K x K            (embodied: A x M x M x K x K)
    calvin.R_F        1
    calvin.avail.*    2-layer CNN, C -> hidden -> A*M + M channels
    vin.reward.*      2-layer CNN, C -> hidden -> 1 channel
    vin.P_R           h x K x K            (embodied: h x M x 1 x K x K)
    vin.P_V           h x K x K            (embodied: h x M x M x K x K)
    vin.project       A x h                (omitted when hidden_actions is None)
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from .errors import ShapeError
from .maze import AgentState, Maze, Motion, all_states, kinematic_move, legal_actions
from .nn import ParameterStore, TwoLayerCNN, pointwise
from .tensor import (
    Tensor,
    add,
    as_tensor,
    channel_max,
    conv2d,
    index_rows,
    mul,
    reshape,
    scale,
    sigmoid,
    softmax,
    sub,
    tensor_sum,
)


@dataclass(frozen=True)
class PlannerOutput:
    q: Tensor
    v: Tensor
    reward: Tensor
    availability: Optional[Tensor] = None
    a_valid: Optional[Tensor] = None


def support_index(dr: int, dc: int, kernel_size: int) -> int:
    """Flat index of offset ``(dr, dc)`` inside a ``K x K`` kernel."""
    pad = kernel_size // 2
    if abs(dr) > pad or abs(dc) > pad:
        raise ShapeError(f"Offset ({dr}, {dc}) lies outside the {kernel_size}x{kernel_size} support")
    return (dr + pad) * kernel_size + (dc + pad)


def _as_5d(kernel: Tensor, orientations: int) -> Tensor:
    """View positional ``A x K x K`` kernels as ``A x 1 x 1 x K x K``."""
    if kernel.ndim == 5:
        return kernel
    if kernel.ndim == 3 and orientations == 1:
        a, k1, k2 = kernel.shape
        return reshape(kernel, (a, 1, 1, k1, k2))
    raise ShapeError(f"Unexpected motion kernel shape {kernel.shape} for {orientations} orientations")


def motion_model_distribution(logits: Tensor) -> Tensor:
    """Softmax over the (next-orientation x) K x K support of each action slice."""
    logits = as_tensor(logits)
    if logits.ndim == 3:
        a, k1, k2 = logits.shape
        flat = reshape(logits, (a, k1 * k2))
    elif logits.ndim == 5:
        a, m, m2, k1, k2 = logits.shape
        flat = reshape(logits, (a, m, m2 * k1 * k2))
    else:
        raise ShapeError(f"Motion logits must be 3D or 5D, got {logits.shape}")
    return reshape(softmax(flat, axis=-1), logits.shape)


def calvin_availability(a_valid: Tensor, a_thresh: Tensor) -> Tensor:
    """``sigmoid(A_valid - A_thresh)``, the threshold broadcast over actions."""
    return sigmoid(sub(a_valid, a_thresh))


def calvin_reward(availability: Tensor, probs: Tensor, r_hat: Tensor, r_f: Tensor) -> Tensor:
    """Expected reward of each (state, action), failure reward weighted by unavailability."""
    availability = as_tensor(availability)
    orientations = availability.shape[1]
    p5 = _as_5d(as_tensor(probs), orientations)
    r5 = _as_5d(as_tensor(r_hat), orientations)
    if p5.shape != r5.shape:
        raise ShapeError(f"Motion model {p5.shape} and reward kernel {r5.shape} differ")
    expected = tensor_sum(mul(p5, r5), axis=(2, 3, 4))
    expected = reshape(expected, expected.shape + (1, 1))
    failure = mul(reshape(as_tensor(r_f), (1, 1, 1, 1)), sub(1.0, availability))
    return add(failure, mul(availability, expected))


def _done_mask(num_actions: int, done: Optional[int]) -> np.ndarray:
    mask = np.ones((num_actions, 1, 1, 1), dtype=np.float32)
    if done is not None:
        mask[done] = 0.0
    return mask


def calvin_q_update(
    reward: Tensor,
    availability: Tensor,
    probs: Tensor,
    values: Tensor,
    gamma: float,
    done: Optional[int],
) -> Tensor:
    """``Q = R + gamma * A * [a != done] * sum P V(s + delta)``."""
    reward, availability, values = as_tensor(reward), as_tensor(availability), as_tensor(values)
    num_actions, orientations, height, width = reward.shape
    if values.shape != (orientations, height, width):
        raise ShapeError(f"Values {values.shape} do not match Q planes {reward.shape[1:]}")
    p5 = _as_5d(as_tensor(probs), orientations)
    k = p5.shape[-1]
    kernel = reshape(p5, (num_actions * orientations, orientations, k, k))
    propagated = reshape(conv2d(values, kernel), reward.shape)
    gate = mul(availability, _done_mask(num_actions, done))
    return add(reward, scale(mul(gate, propagated), gamma))


def calvin_iterate(
    reward: Tensor,
    availability: Tensor,
    probs: Tensor,
    gamma: float,
    k: int,
    done: Optional[int],
    v_init: Optional[Tensor] = None,
) -> Tuple[Tensor, Tensor]:
    """Alternate ``k`` max-pool and backup steps; returns the final ``(Q, V)``."""
    if k < 0:
        raise ValueError("Iteration count must be non-negative")
    reward = as_tensor(reward)
    values = as_tensor(np.zeros(reward.shape[1:], dtype=np.float32) if v_init is None else v_init)
    q = calvin_q_update(reward, availability, probs, values, gamma, done)
    for _ in range(k):
        values, _ = channel_max(q)
        q = calvin_q_update(reward, availability, probs, values, gamma, done)
    values, _ = channel_max(q)
    return q, values


def vin_iterate(
    reward_map: Tensor,
    p_r: Tensor,
    p_v: Tensor,
    k: int,
    v_init: Optional[Tensor] = None,
    projection: Optional[Tensor] = None,
) -> Tuple[Tensor, Tensor]:
    """VIN recurrence ``Q = conv(P_R, R) + conv(P_V, V)``, ``V = max_a Q``.

    ``reward_map`` is ``1 x H x W``; every action is allowed everywhere.
    """
    if k < 0:
        raise ValueError("Iteration count must be non-negative")
    reward_map, p_r, p_v = as_tensor(reward_map), as_tensor(p_r), as_tensor(p_v)
    if p_v.ndim == 3:
        hidden, k1, k2 = p_v.shape
        orientations = 1
    elif p_v.ndim == 5:
        hidden, orientations, _, k1, k2 = p_v.shape
    else:
        raise ShapeError(f"P_V must be 3D or 5D, got {p_v.shape}")
    height, width = reward_map.shape[1:]
    kernel_r = reshape(p_r, (hidden * orientations, 1, k1, k2))
    kernel_v = reshape(p_v, (hidden * orientations, orientations, k1, k2))
    planes = (hidden, orientations, height, width)
    reward_term = reshape(conv2d(reward_map, kernel_r), planes)

    def backup(values: Tensor) -> Tensor:
        return add(reward_term, reshape(conv2d(values, kernel_v), planes))

    values = as_tensor(np.zeros((orientations, height, width), dtype=np.float32) if v_init is None else v_init)
    q = backup(values)
    for _ in range(k):
        values, _ = channel_max(q)
        q = backup(values)
    values, _ = channel_max(q)
    if projection is not None:
        q = pointwise(q, projection)
    return q, values


# Planner modules


@dataclass(frozen=True)
class CalvinPlanner:
    motion: Motion
    in_channels: int
    hidden: int = 150
    kernel_size: int = 3
    gamma: float = 0.99
    prefix: str = "calvin"
    r_f_init: float = -1.0

    def __post_init__(self) -> None:
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd")

    @property
    def kind(self) -> str:
        return "calvin"

    @property
    def availability_net(self) -> TwoLayerCNN:
        m = self.motion.orientations
        return TwoLayerCNN(
            f"{self.prefix}.avail", self.in_channels, self.hidden, self.motion.num_actions * m + m
        )

    @property
    def kernel_shape(self) -> Tuple[int, ...]:
        a, m, k = self.motion.num_actions, self.motion.orientations, self.kernel_size
        return (a, m, m, k, k) if self.motion.embodied else (a, k, k)

    def init_params(self, store: ParameterStore) -> None:
        self.availability_net.init_params(store)
        store.add_constant(f"{self.prefix}.P_logits", self.kernel_shape, 0.0)
        store.add_constant(f"{self.prefix}.R_hat", self.kernel_shape, 0.0)
        store.add_constant(f"{self.prefix}.R_F", (1,), self.r_f_init)

    def availability_logits(self, obs: Tensor, params: Mapping[str, Tensor]) -> Tuple[Tensor, Tensor]:
        """``A_valid`` as ``A x M x H x W`` and ``A_thresh`` as ``1 x M x H x W``."""
        a, m = self.motion.num_actions, self.motion.orientations
        height, width = obs.shape[1:]
        out = self.availability_net(obs, params)
        a_valid = reshape(index_rows(out, range(a * m)), (a, m, height, width))
        a_thresh = reshape(index_rows(out, range(a * m, a * m + m)), (1, m, height, width))
        return a_valid, a_thresh

    def forward(
        self,
        obs: Tensor,
        params: Mapping[str, Tensor],
        k: int,
        v_init: Optional[Tensor] = None,
    ) -> PlannerOutput:
        a_valid, a_thresh = self.availability_logits(obs, params)
        availability = calvin_availability(a_valid, a_thresh)
        probs = motion_model_distribution(params[f"{self.prefix}.P_logits"])
        reward = calvin_reward(availability, probs, params[f"{self.prefix}.R_hat"], params[f"{self.prefix}.R_F"])
        q, v = calvin_iterate(reward, availability, probs, self.gamma, k, self.motion.done, v_init)
        return PlannerOutput(q=q, v=v, reward=reward, availability=availability, a_valid=a_valid)


@dataclass(frozen=True)
class VinPlanner:
    motion: Motion
    in_channels: int
    hidden: int = 150
    hidden_actions: Optional[int] = 40
    kernel_size: int = 3
    prefix: str = "vin"

    def __post_init__(self) -> None:
        if self.kernel_size % 2 == 0:
            raise ValueError("kernel_size must be odd")
        if self.hidden_actions is not None and self.hidden_actions < 1:
            raise ValueError("hidden_actions must be positive")

    @property
    def kind(self) -> str:
        return "vin"

    @property
    def reward_net(self) -> TwoLayerCNN:
        return TwoLayerCNN(f"{self.prefix}.reward", self.in_channels, self.hidden, 1)

    @property
    def channels(self) -> int:
        return self.motion.num_actions if self.hidden_actions is None else self.hidden_actions

    def init_params(self, store: ParameterStore) -> None:
        h, m, k = self.channels, self.motion.orientations, self.kernel_size
        self.reward_net.init_params(store)
        if self.motion.embodied:
            store.add_uniform(f"{self.prefix}.P_R", (h, m, 1, k, k), k * k)
            store.add_uniform(f"{self.prefix}.P_V", (h, m, m, k, k), m * k * k)
        else:
            store.add_uniform(f"{self.prefix}.P_R", (h, k, k), k * k)
            store.add_uniform(f"{self.prefix}.P_V", (h, k, k), k * k)
        if self.hidden_actions is not None:
            store.add_uniform(f"{self.prefix}.project", (self.motion.num_actions, h), h)

    def forward(
        self,
        obs: Tensor,
        params: Mapping[str, Tensor],
        k: int,
        v_init: Optional[Tensor] = None,
    ) -> PlannerOutput:
        reward_map = self.reward_net(obs, params)
        projection = params.get(f"{self.prefix}.project") if self.hidden_actions is not None else None
        q, v = vin_iterate(
            reward_map, params[f"{self.prefix}.P_R"], params[f"{self.prefix}.P_V"], k, v_init, projection
        )
        return PlannerOutput(q=q, v=v, reward=reward_map)


def build_planner(kind: str, motion: Motion, in_channels: int, **options):
    if kind == "calvin":
        allowed = {"hidden", "kernel_size", "gamma"}
        return CalvinPlanner(motion, in_channels, **{k: v for k, v in options.items() if k in allowed})
    if kind == "vin":
        allowed = {"hidden", "kernel_size", "hidden_actions"}
        return VinPlanner(motion, in_channels, **{k: v for k, v in options.items() if k in allowed})
    raise ValueError(f"Unknown planner '{kind}'; expected 'calvin' or 'vin'")


# Ground truth


def ground_truth_calvin_inputs(
    maze: Maze, motion: Motion, kernel_size: int = 3, target_reward: float = 1.0
) -> Dict[str, np.ndarray]:
    """Availability, motion model, reward kernel and failure reward of the true maze.

    Moves are available where they do not collide, done only at the target,
    the motion model is deterministic and done pays ``target_reward``.
    """
    a, m = motion.num_actions, motion.orientations
    availability = np.zeros((a, m) + maze.shape, dtype=np.float32)
    for state in all_states(maze, motion):
        for action in legal_actions(maze, state, motion):
            if action == motion.done and state.cell != maze.target:
                continue
            availability[(action,) + state.plane_index] = 1.0

    probs = np.zeros((a, m, m, kernel_size, kernel_size), dtype=np.float32)
    r_hat = np.zeros_like(probs)
    pad = kernel_size // 2
    for action in range(a):
        for theta in range(m):
            origin = AgentState(0, 0, theta if motion.embodied else None)
            moved = kinematic_move(origin, action, motion)
            m_next = moved.theta if motion.embodied else 0
            probs[action, theta, m_next, moved.row + pad, moved.col + pad] = 1.0
    r_hat[motion.done] = target_reward * probs[motion.done]

    if not motion.embodied:
        probs = probs[:, 0, 0]
        r_hat = r_hat[:, 0, 0]
    return {"availability": availability, "probs": probs, "r_hat": r_hat, "r_f": np.zeros(1, dtype=np.float32)}
