"""Tabular value iteration with state-dependent legal actions.

This is the reference planner: it knows the true transition model, so the
learned planners can be checked against it. A linear-programming solution of
the same Bellman equations (via PuLP) serves as an independent oracle for the
iterative solver.

Usage overview
--------------

1. Build an :class:`ExactMDP` directly from transition tables, or derive one
   from a maze with :func:`build_maze_mdp`.
2. Run :func:`vi_exact` for ``k`` iterations and read ``values``, ``q`` and the
   greedy ``policy`` from the returned :class:`ValueResult`.
3. Optionally cross-check the fixpoint with :func:`solve_mdp_lp`.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

try:
    import pulp  # type: ignore
except ImportError as exc:
    raise ImportError(
        "PuLP is required for the linear-programming oracle.\n"
        "Install it with `pip install pulp` or add it to your environment."
    ) from exc

from .errors import CalvinError, ShapeError
from .maze import AgentState, Maze, Motion, Outcome, all_states, step

logger = logging.getLogger(__name__)

TERMINAL = -1


@dataclass(frozen=True)
class ExactMDP:
    """Finite MDP stored as ``A x S x D`` tables over ``D`` possible outcomes.

    ``successors`` holds the next-state index per outcome, ``TERMINAL`` for
    episode end. ``legal`` marks the (action, state) pairs that may be taken.
    """

    probabilities: np.ndarray
    successors: np.ndarray
    rewards: np.ndarray
    legal: np.ndarray
    gamma: float

    def __post_init__(self) -> None:
        probabilities = np.asarray(self.probabilities, dtype=np.float64)
        successors = np.asarray(self.successors, dtype=np.int64)
        rewards = np.asarray(self.rewards, dtype=np.float64)
        legal = np.asarray(self.legal, dtype=bool)
        if probabilities.ndim != 3 or probabilities.shape != successors.shape or probabilities.shape != rewards.shape:
            raise ShapeError("probabilities, successors and rewards must share one A x S x D shape")
        if legal.shape != probabilities.shape[:2]:
            raise ShapeError("legal must have shape A x S")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        num_states = probabilities.shape[1]
        if np.any(successors < TERMINAL) or np.any(successors >= num_states):
            raise ShapeError("successor index outside the state range")
        if np.any(probabilities < 0):
            raise ValueError("transition probabilities must be non-negative")
        totals = probabilities.sum(axis=2)
        if np.any(np.abs(totals[legal] - 1.0) > 1e-6):
            raise ValueError("transition probabilities must sum to 1 for every legal (state, action)")
        object.__setattr__(self, "probabilities", probabilities)
        object.__setattr__(self, "successors", successors)
        object.__setattr__(self, "rewards", rewards)
        object.__setattr__(self, "legal", legal)

    @property
    def num_actions(self) -> int:
        return self.probabilities.shape[0]

    @property
    def num_states(self) -> int:
        return self.probabilities.shape[1]

    def backup(self, values: np.ndarray) -> np.ndarray:
        """Q(s,a) for legal pairs, ``-inf`` elsewhere."""
        extended = np.append(np.asarray(values, dtype=np.float64), 0.0)
        future = extended[np.where(self.successors == TERMINAL, self.num_states, self.successors)]
        q = np.sum(self.probabilities * (self.rewards + self.gamma * future), axis=2)
        return np.where(self.legal, q, -np.inf)


@dataclass(frozen=True)
class ValueResult:
    values: np.ndarray
    q: np.ndarray
    policy: np.ndarray
    iterations: int


def _greedy(q: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    has_action = np.isfinite(q).any(axis=0)
    values = np.where(has_action, np.max(np.where(np.isfinite(q), q, -np.inf), axis=0), 0.0)
    policy = np.where(has_action, np.argmax(q, axis=0), -1)
    return values, policy


def vi_exact(mdp: ExactMDP, k: int, v_init: Optional[np.ndarray] = None) -> ValueResult:
    """Run ``k`` value iterations starting from ``v_init`` (zeros by default).

    Each iteration maxes Q into V and backs V up into Q; the returned values
    are the max of the final Q, and the policy is its argmax with ties going
    to the lowest action index. States without legal actions keep value 0.
    """
    if k < 1:
        raise ValueError("vi_exact needs at least one iteration")
    values = np.zeros(mdp.num_states) if v_init is None else np.asarray(v_init, dtype=np.float64)
    if values.shape != (mdp.num_states,):
        raise ShapeError(f"v_init must have shape ({mdp.num_states},)")
    q = mdp.backup(values)
    for _ in range(k):
        values, _ = _greedy(q)
        q = mdp.backup(values)
    values, policy = _greedy(q)
    return ValueResult(values=values, q=q, policy=policy, iterations=k)


def solve_mdp_lp(mdp: ExactMDP, log_solver_output: bool = False) -> np.ndarray:
    """Optimal values as the smallest V satisfying every Bellman inequality."""
    problem = pulp.LpProblem("BellmanFixpoint", pulp.LpMinimize)
    values = [pulp.LpVariable(f"v_{s}") for s in range(mdp.num_states)]
    problem += pulp.lpSum(values), "TotalValue"

    for constraint in _build_bellman_constraints(mdp, values):
        problem += constraint

    status_code = problem.solve(pulp.PULP_CBC_CMD(msg=int(log_solver_output)))
    status = pulp.LpStatus.get(status_code, "Unknown")
    if status != "Optimal":
        raise CalvinError(f"Bellman linear programme did not solve to optimality (status {status})")
    return np.array([pulp.value(v) or 0.0 for v in values], dtype=np.float64)


def _build_bellman_constraints(mdp: ExactMDP, values: List["pulp.LpVariable"]):
    for s in range(mdp.num_states):
        legal = np.flatnonzero(mdp.legal[:, s])
        if legal.size == 0:
            yield values[s] == 0, f"no_action_{s}"
            continue
        for a in legal:
            terms = []
            for d in range(mdp.probabilities.shape[2]):
                p = float(mdp.probabilities[a, s, d])
                if p == 0.0:
                    continue
                succ = int(mdp.successors[a, s, d])
                future = 0 if succ == TERMINAL else mdp.gamma * values[succ]
                terms.append(p * (float(mdp.rewards[a, s, d]) + future))
            yield values[s] >= pulp.lpSum(terms), f"bellman_{s}_{a}"


# Maze MDPs


@dataclass(frozen=True)
class MazeMDP:
    """An :class:`ExactMDP` together with the agent state behind each index."""

    mdp: ExactMDP
    states: Tuple[AgentState, ...]
    index: Dict[AgentState, int]
    motion: Motion
    shape: Tuple[int, int]

    def to_planes(self, vector: np.ndarray, fill: float = 0.0) -> np.ndarray:
        """Scatter a per-state vector into ``M x H x W`` planes."""
        planes = np.full((self.motion.orientations,) + self.shape, fill, dtype=np.float64)
        for state, value in zip(self.states, vector):
            planes[state.plane_index] = value
        return planes


def move_cost(motion: Motion, before: AgentState, after: AgentState) -> float:
    if motion.embodied:
        return 1.0
    return math.hypot(after.row - before.row, after.col - before.col)


def build_maze_mdp(
    maze: Maze,
    motion: Motion,
    gamma: float,
    target_reward: float = 1.0,
    step_costs: bool = False,
) -> MazeMDP:
    """Deterministic MDP of a maze with a placed target.

    Without ``step_costs`` the only reward is ``target_reward`` for done at the
    target, and done elsewhere ends the episode with nothing. With
    ``step_costs`` every move pays its length, done is legal only at the
    target and ``target_reward`` is paid there.
    """
    if maze.target is None:
        raise ValueError("build_maze_mdp needs a maze with a target")
    states = tuple(all_states(maze, motion))
    index = {state: i for i, state in enumerate(states)}
    shape = (motion.num_actions, len(states), 1)
    probabilities = np.ones(shape)
    successors = np.full(shape, TERMINAL, dtype=np.int64)
    rewards = np.zeros(shape)
    legal = np.zeros(shape[:2], dtype=bool)

    for s, state in enumerate(states):
        at_target = state.cell == maze.target
        for a in range(motion.num_actions):
            if a == motion.done:
                legal[a, s] = at_target or not step_costs
                rewards[a, s, 0] = target_reward if at_target else 0.0
                continue
            result = step(maze, state, a, motion)
            if result.outcome is Outcome.COLLISION:
                continue
            legal[a, s] = True
            successors[a, s, 0] = index[result.state]
            if step_costs:
                rewards[a, s, 0] = -move_cost(motion, state, result.state)

    probabilities[~legal] = 0.0
    mdp = ExactMDP(probabilities, successors, rewards, legal, gamma)
    return MazeMDP(mdp=mdp, states=states, index=index, motion=motion, shape=maze.shape)


def greedy_path(
    maze_mdp: MazeMDP, result: ValueResult, start: AgentState, max_steps: int = 10_000
) -> List[Tuple[AgentState, int]]:
    """Follow the greedy policy from ``start`` until it takes done."""
    path: List[Tuple[AgentState, int]] = []
    state = start
    for _ in range(max_steps):
        action = int(result.policy[maze_mdp.index[state]])
        path.append((state, action))
        if action == maze_mdp.motion.done or action < 0:
            return path
        successor = int(maze_mdp.mdp.successors[action, maze_mdp.index[state], 0])
        state = maze_mdp.states[successor]
    raise CalvinError(f"Greedy policy did not terminate within {max_steps} steps")
