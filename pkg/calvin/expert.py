"""Expert demonstrations: shortest paths, training-sample expansion and loss weights.

Positional experts pay 1 per axial and sqrt(2) per diagonal move; embodied
experts pay 1 per action, rotations included. Every trajectory ends with the
done action taken at the target.
"""
from __future__ import annotations

import heapq
import itertools
import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import UnreachableGoalError
from .maze import (
    AgentState,
    Cell,
    Maze,
    Motion,
    Outcome,
    all_cells,
    bfs_distances,
    generate_task_maze,
    get_motion,
    maze_from_dict,
    maze_to_dict,
    step,
    visible_cells,
)

logger = logging.getLogger(__name__)

SQRT2 = math.sqrt(2.0)
EVAL_NAMESPACE = 0x5EED


def derive_seed(*parts: int) -> int:
    """Deterministic 32-bit seed from a tuple of integers."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


# Search


@dataclass(frozen=True)
class SearchResult:
    """States visited (start first) and the actions between them."""

    states: Tuple[AgentState, ...]
    actions: Tuple[int, ...]
    axial: int = 0
    diagonal: int = 0

    @property
    def cost(self) -> float:
        return self.axial + SQRT2 * self.diagonal

    @property
    def cells(self) -> List[Cell]:
        return [s.cell for s in self.states]


def _is_diagonal(before: AgentState, after: AgentState) -> bool:
    return before.row != after.row and before.col != after.col


def _move_counts(motion: Motion, before: AgentState, after: AgentState) -> Tuple[int, int]:
    if motion.embodied or not _is_diagonal(before, after):
        return 1, 0
    return 0, 1


def _euclidean(a: Cell, b: Cell) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def _chebyshev(a: Cell, b: Cell) -> float:
    return float(max(abs(a[0] - b[0]), abs(a[1] - b[1])))


def _search(
    maze: Maze,
    start: AgentState,
    goal: Cell,
    motion: Motion,
    heuristic: Callable[[Cell, Cell], float],
) -> SearchResult:
    if not maze.is_free(start.cell) or not maze.is_free(goal):
        raise UnreachableGoalError(f"Start {start.cell} or goal {goal} is not a free cell")

    counter = itertools.count()
    best: Dict[AgentState, Tuple[int, int]] = {start: (0, 0)}
    came_from: Dict[AgentState, Tuple[AgentState, int]] = {}
    open_set = [(heuristic(start.cell, goal), next(counter), start)]
    closed = set()

    while open_set:
        _, _, current = heapq.heappop(open_set)
        if current in closed:
            continue
        if current.cell == goal:
            return _reconstruct(current, came_from, best[current])
        closed.add(current)
        axial, diagonal = best[current]
        for action in motion.move_actions:
            result = step(maze, current, action, motion)
            if result.outcome is not Outcome.MOVED or result.state in closed:
                continue
            nxt = result.state
            da, dd = _move_counts(motion, current, nxt)
            counts = (axial + da, diagonal + dd)
            cost = counts[0] + SQRT2 * counts[1]
            known = best.get(nxt)
            if known is not None and known[0] + SQRT2 * known[1] <= cost:
                continue
            best[nxt] = counts
            came_from[nxt] = (current, action)
            heapq.heappush(open_set, (cost + heuristic(nxt.cell, goal), next(counter), nxt))

    raise UnreachableGoalError(f"Goal {goal} is unreachable from {start.cell}")


def _reconstruct(
    end: AgentState, came_from: Dict[AgentState, Tuple[AgentState, int]], counts: Tuple[int, int]
) -> SearchResult:
    states = [end]
    actions: List[int] = []
    while states[-1] in came_from:
        previous, action = came_from[states[-1]]
        states.append(previous)
        actions.append(action)
    states.reverse()
    actions.reverse()
    return SearchResult(tuple(states), tuple(actions), axial=counts[0], diagonal=counts[1])


def astar(maze: Maze, start: AgentState, goal: Cell, motion: Motion) -> SearchResult:
    """Cost-optimal path with an admissible heuristic.

    Euclidean distance for positional motion, Chebyshev distance (a lower
    bound on unit-cost moves) for embodied motion.
    """
    heuristic = _chebyshev if motion.embodied else _euclidean
    return _search(maze, start, goal, motion, heuristic)


def dijkstra(maze: Maze, start: AgentState, goal: Cell, motion: Motion) -> SearchResult:
    return _search(maze, start, goal, motion, lambda a, b: 0.0)


# Trajectories


@dataclass(frozen=True)
class Trajectory:
    """Expert demonstration; ``states[t]`` is where ``actions[t]`` is taken."""

    maze: Maze
    states: Tuple[AgentState, ...]
    actions: Tuple[int, ...]
    motion: str = "positional"
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.actions:
            raise ValueError("A trajectory needs at least one action")
        if len(self.states) != len(self.actions):
            raise ValueError("Trajectory states and actions must have the same length")
        motion = get_motion(self.motion)
        if self.actions[-1] != motion.done:
            raise ValueError("A trajectory must end with the done action")
        if self.states[-1].cell != self.maze.target:
            raise ValueError("The done action must be taken at the target")

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def motion_model(self) -> Motion:
        return get_motion(self.motion)

    def revealed_snapshots(self, partial: bool = True) -> List[FrozenSet[Cell]]:
        """Cells known at each step; full observability reveals the whole grid."""
        if not partial:
            everything = all_cells(self.maze)
            return [everything] * len(self)
        snapshots: List[FrozenSet[Cell]] = []
        revealed: FrozenSet[Cell] = frozenset()
        for state in self.states:
            revealed = revealed | visible_cells(self.maze, state.cell)
            snapshots.append(revealed)
        return snapshots

    def transitions(self) -> List[Tuple[int, AgentState, AgentState]]:
        """(action, state, next state) for every move action of the demonstration."""
        return [
            (action, self.states[t], self.states[t + 1])
            for t, action in enumerate(self.actions[:-1])
        ]


def make_trajectory(maze: Maze, seed: int, motion: Motion) -> Trajectory:
    """A* demonstration from the maze's start to its target, followed by done.

    Embodied agents start with an orientation drawn from ``seed``.
    """
    if maze.start is None or maze.target is None:
        raise ValueError("make_trajectory needs a maze with a placed task")
    theta = int(np.random.default_rng(seed).integers(8)) if motion.embodied else None
    start = AgentState(maze.start[0], maze.start[1], theta)
    path = astar(maze, start, maze.target, motion)
    states = path.states
    actions = path.actions + (motion.done,)
    return Trajectory(maze=maze, states=states, actions=actions, motion=motion.name, seed=int(seed))


def replay(trajectory: Trajectory) -> Outcome:
    """Step the actions of ``trajectory`` from its first state and report the final outcome."""
    motion = trajectory.motion_model
    state = trajectory.states[0]
    outcome = Outcome.MOVED
    for action in trajectory.actions:
        result = step(trajectory.maze, state, action, motion)
        outcome, state = result.outcome, result.state
        if outcome in (Outcome.SUCCESS, Outcome.FALSE_DONE, Outcome.COLLISION):
            break
    return outcome


# Loss weights and sample expansion


def compute_weights(traj_len: int, beta: float) -> np.ndarray:
    """``w_t = beta ** (|T| - t)`` for ``t = 1..|T|``; the final step weighs 1."""
    if traj_len < 1:
        raise ValueError("Trajectory length must be at least 1")
    if not 0.0 < beta <= 1.0:
        raise ValueError(f"beta must lie in (0, 1], got {beta}")
    exponents = np.arange(traj_len - 1, -1, -1, dtype=np.float64)
    return np.power(beta, exponents)


def compute_distance_weights(trajectory: Trajectory, beta: float) -> np.ndarray:
    """``beta ** d_t`` normalised by its maximum, ``d_t`` the BFS distance to the target."""
    if not 0.0 < beta <= 1.0:
        raise ValueError(f"beta must lie in (0, 1], got {beta}")
    motion = trajectory.motion_model
    target = trajectory.maze.target
    # Moves are reversible, so distances from the target equal distances to it.
    if motion.embodied:
        sweeps = [
            bfs_distances(trajectory.maze, AgentState(target[0], target[1], theta), motion)
            for theta in range(motion.orientations)
        ]
        stacked = np.stack([np.where(s >= 0, s, np.iinfo(np.int64).max) for s in sweeps])
        distances = stacked.min(axis=0)
    else:
        distances = bfs_distances(trajectory.maze, AgentState(*target), motion)
    d = np.array([distances[s.index] for s in trajectory.states], dtype=np.float64)
    weights = np.power(beta, d)
    return weights / weights.max()


@dataclass(frozen=True)
class TrainingSample:
    """Step ``t`` supervised on the observation available at time ``t_obs`` (``t <= t_obs``)."""

    trajectory: int
    t_obs: int
    t: int
    state: AgentState
    action: int
    weight: float

    def __post_init__(self) -> None:
        if self.t > self.t_obs:
            raise ValueError("A sample cannot be supervised on a future step")
        if not 0.0 < self.weight <= 1.0:
            raise ValueError(f"Sample weight must lie in (0, 1], got {self.weight}")


def expand_partial(
    trajectory: Trajectory,
    cap: Optional[int] = None,
    beta: float = 1.0,
    partial: bool = True,
    index: int = 0,
) -> List[TrainingSample]:
    """Expand a trajectory into (observation time, supervised step) samples.

    Under partial observability every pair ``t <= t_obs`` is a sample; when
    that exceeds ``cap`` the diagonal is kept and the rest is subsampled
    uniformly. Under full observability ``t_obs`` is the final step.
    """
    length = len(trajectory)
    weights = compute_weights(length, beta)
    if partial:
        pairs = [(t_obs, t) for t_obs in range(length) for t in range(t_obs + 1)]
    else:
        pairs = [(length - 1, t) for t in range(length)]

    if partial and cap is not None and len(pairs) > cap:
        diagonal = [(t, t) for t in range(length)]
        off_diagonal = [p for p in pairs if p[0] != p[1]]
        extra = max(cap - length, 0)
        rng = np.random.default_rng(derive_seed(trajectory.seed, length))
        chosen = rng.choice(len(off_diagonal), size=min(extra, len(off_diagonal)), replace=False)
        pairs = sorted(diagonal + [off_diagonal[i] for i in chosen])

    return [
        TrainingSample(
            trajectory=index,
            t_obs=t_obs,
            t=t,
            state=trajectory.states[t],
            action=trajectory.actions[t],
            weight=float(weights[t]),
        )
        for t_obs, t in pairs
    ]


# Datasets


def generate_dataset(count: int, lattice_n: int, motion: Motion, seed: int) -> List[Trajectory]:
    """``count`` demonstrations, each in its own maze; deterministic given ``seed``."""
    trajectories = []
    for i in range(count):
        maze = generate_task_maze(lattice_n, derive_seed(seed, i))
        trajectories.append(make_trajectory(maze, derive_seed(seed, i, 1), motion))
    logger.info(
        "Dataset generated",
        extra={
            "event": "dataset_generated",
            "trajectories": count,
            "lattice_n": lattice_n,
            "motion": motion.name,
            "seed": seed,
        },
    )
    return trajectories


def trajectory_to_dict(trajectory: Trajectory) -> Dict[str, object]:
    return {
        "maze": maze_to_dict(trajectory.maze),
        "motion": trajectory.motion,
        "seed": trajectory.seed,
        "states": [list(s.index) for s in trajectory.states],
        "actions": list(trajectory.actions),
    }


def trajectory_from_dict(payload: Dict[str, object]) -> Trajectory:
    motion = get_motion(str(payload.get("motion", "positional")))
    states = []
    for entry in payload["states"]:  # type: ignore[union-attr]
        if motion.embodied:
            theta, row, col = entry
            states.append(AgentState(row, col, theta))
        else:
            row, col = entry
            states.append(AgentState(row, col))
    return Trajectory(
        maze=maze_from_dict(payload["maze"]),  # type: ignore[arg-type]
        states=tuple(states),
        actions=tuple(int(a) for a in payload["actions"]),  # type: ignore[union-attr]
        motion=motion.name,
        seed=int(payload.get("seed", 0)),  # type: ignore[arg-type]
    )


def dumps_dataset(trajectories: Iterable[Trajectory]) -> str:
    return "".join(
        json.dumps(trajectory_to_dict(t), sort_keys=True, separators=(",", ":")) + "\n"
        for t in trajectories
    )


def write_dataset(path: str, trajectories: Sequence[Trajectory]) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(dumps_dataset(trajectories))


def read_dataset(path: str) -> List[Trajectory]:
    with open(path, "r", encoding="utf-8") as handle:
        return [trajectory_from_dict(json.loads(line)) for line in handle if line.strip()]


def split_dataset(
    trajectories: Sequence[Trajectory], validation_fraction: float
) -> Tuple[List[Trajectory], List[Trajectory]]:
    """Hold out the last ``validation_fraction`` of the mazes."""
    if not 0.0 <= validation_fraction < 1.0:
        raise ValueError("validation_fraction must lie in [0, 1)")
    held_out = int(round(len(trajectories) * validation_fraction))
    if validation_fraction > 0 and len(trajectories) > 1:
        held_out = max(held_out, 1)
    cut = len(trajectories) - held_out
    return list(trajectories[:cut]), list(trajectories[cut:])
