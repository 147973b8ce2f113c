"""Live rollouts: reveal, re-plan and act greedily until done or the step limit."""
from __future__ import annotations

import enum
import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .backbones import Episode
from .expert import EVAL_NAMESPACE, Trajectory, astar, derive_seed
from .maze import AgentState, Maze, Motion, Outcome, generate_task_maze, step
from .model import PlanningModel
from .tensor import Tensor

logger = logging.getLogger(__name__)

OSCILLATION_REPEATS = 4

Task = Tuple[Maze, AgentState]


class RolloutOutcome(str, enum.Enum):
    SUCCESS = "success"
    FALSE_DONE = "false-done"
    STEP_LIMIT = "step-limit"
    STUCK = "stuck-oscillation"


@dataclass(frozen=True)
class RolloutResult:
    outcome: RolloutOutcome
    steps: int
    collisions: int
    states: Tuple[AgentState, ...]
    actions: Tuple[int, ...]

    @property
    def success(self) -> bool:
        return self.outcome is RolloutOutcome.SUCCESS


class Policy:
    def reset(self, maze: Maze, start: AgentState) -> None:
        return None

    def act(self, state: AgentState, episode: Episode) -> int:
        raise NotImplementedError


class PlannerPolicy(Policy):
    """Greedy on the planner's Q at the agent's state, ties to the lowest action.

    The value planes of each step seed the next plan unless ``warm_start`` is off.
    """

    def __init__(self, model: PlanningModel, warm_start: bool = True, k: Optional[int] = None) -> None:
        self.model = model
        self.warm_start = warm_start
        self.k = k
        self._params = model.constants()
        self._values: Optional[Tensor] = None
        self.last_q: Optional[np.ndarray] = None

    def reset(self, maze: Maze, start: AgentState) -> None:
        self._values = None
        self.last_q = None

    def act(self, state: AgentState, episode: Episode) -> int:
        out = self.model.plan(episode.snapshot(), self._params, self._values if self.warm_start else None, self.k)
        self._values = out.v
        self.last_q = out.q.data
        scores = out.q.data[(slice(None),) + state.plane_index]
        return int(np.argmax(scores))


class ReplayPolicy(Policy):
    """Replays the actions of an expert trajectory."""

    def __init__(self, trajectory: Trajectory) -> None:
        self.trajectory = trajectory
        self._cursor = 0

    def reset(self, maze: Maze, start: AgentState) -> None:
        self._cursor = 0

    def act(self, state: AgentState, episode: Episode) -> int:
        action = self.trajectory.actions[min(self._cursor, len(self.trajectory) - 1)]
        self._cursor += 1
        return action


class RandomPolicy(Policy):
    def __init__(self, motion: Motion, seed: int = 0) -> None:
        self.motion = motion
        self.seed = seed
        self._rng = np.random.default_rng(seed)

    def reset(self, maze: Maze, start: AgentState) -> None:
        self._rng = np.random.default_rng(derive_seed(self.seed, maze.seed))

    def act(self, state: AgentState, episode: Episode) -> int:
        return int(self._rng.integers(self.motion.num_actions))


class OraclePolicy(Policy):
    """Follows an A* path computed with full knowledge of the maze."""

    def __init__(self, motion: Motion) -> None:
        self.motion = motion
        self._plan: List[int] = []
        self._maze: Optional[Maze] = None

    def reset(self, maze: Maze, start: AgentState) -> None:
        self._maze = maze
        self._plan = list(astar(maze, start, maze.target, self.motion).actions) + [self.motion.done]

    def act(self, state: AgentState, episode: Episode) -> int:
        return self._plan.pop(0) if self._plan else self.motion.done


def rollout(
    maze: Maze,
    start: AgentState,
    policy: Policy,
    backbone,
    motion: Motion,
    max_steps: int,
) -> RolloutResult:
    """Run one episode. Collisions leave the agent in place and are counted."""
    episode = backbone.start(maze)
    policy.reset(maze, start)
    state = start
    states: List[AgentState] = []
    actions: List[int] = []
    collisions = 0
    seen: Counter = Counter()
    outcome = RolloutOutcome.STEP_LIMIT

    for _ in range(max_steps):
        episode.observe(state)
        key = (state, episode.digest())
        seen[key] += 1
        if seen[key] >= OSCILLATION_REPEATS:
            outcome = RolloutOutcome.STUCK
            break
        action = policy.act(state, episode)
        states.append(state)
        actions.append(action)
        result = step(maze, state, action, motion)
        if result.outcome is Outcome.SUCCESS:
            outcome = RolloutOutcome.SUCCESS
            break
        if result.outcome is Outcome.FALSE_DONE:
            outcome = RolloutOutcome.FALSE_DONE
            break
        if result.outcome is Outcome.COLLISION:
            collisions += 1
        state = result.state

    return RolloutResult(outcome, len(actions), collisions, tuple(states), tuple(actions))


def run_rollouts(
    tasks: Sequence[Task],
    policy_factory: Callable[[], Policy],
    backbone,
    motion: Motion,
    max_steps: int,
    workers: int = 1,
) -> List[RolloutResult]:
    """Rollouts of independent tasks, in task order; each gets a fresh policy."""

    def run(task: Task) -> RolloutResult:
        maze, start = task
        return rollout(maze, start, policy_factory(), backbone, motion, max_steps)

    if workers <= 1:
        results = [run(task) for task in tasks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, tasks))
    logger.debug(
        "Rollouts finished",
        extra={
            "event": "rollout_finished",
            "tasks": len(tasks),
            "successes": sum(r.success for r in results),
        },
    )
    return results


def evaluation_tasks(count: int, lattice_n: int, motion: Motion, seed: int) -> List[Task]:
    """Fresh mazes from a seed namespace disjoint from dataset generation."""
    tasks = []
    for i in range(count):
        maze = generate_task_maze(lattice_n, derive_seed(EVAL_NAMESPACE, seed, i))
        theta = None
        if motion.embodied:
            theta = int(np.random.default_rng(derive_seed(EVAL_NAMESPACE, seed, i, 1)).integers(8))
        tasks.append((maze, AgentState(maze.start[0], maze.start[1], theta)))
    return tasks
