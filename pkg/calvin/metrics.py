"""Evaluation metrics: navigation success and collision preference."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .backbones import OracleBackbone
from .maze import Maze, Motion, all_states, legal_actions
from .model import PlanningModel
from .rollout import Policy, RolloutResult, evaluation_tasks, run_rollouts

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "v1"


@dataclass
class MetricsSummary:
    success_mean: float
    success_std: float
    per_seed: List[float]
    mean_steps_success: Optional[float]
    mazes: int
    seeds: List[int]
    outcomes: Dict[str, int] = field(default_factory=dict)
    collision_violation: Optional[float] = None

    def to_dict(self) -> Dict[str, object]:
        return {
            "schema": SCHEMA_VERSION,
            "success_mean": self.success_mean,
            "success_std": self.success_std,
            "per_seed": list(self.per_seed),
            "mean_steps_success": self.mean_steps_success,
            "mazes": self.mazes,
            "seeds": list(self.seeds),
            "outcomes": dict(sorted(self.outcomes.items())),
            "collision_violation": self.collision_violation,
        }


def success_rate(
    policy_factory: Callable[[], Policy],
    backbone,
    motion: Motion,
    mazes: int,
    seeds: Sequence[int],
    lattice_n: int,
    max_steps: int,
    workers: int = 1,
) -> MetricsSummary:
    """Success fraction on fresh mazes per seed, then mean and population std over seeds."""
    if mazes < 1 or not seeds:
        raise ValueError("success_rate needs at least one maze and one seed")
    per_seed: List[float] = []
    successful_steps: List[int] = []
    outcomes: Dict[str, int] = {}
    for seed in seeds:
        tasks = evaluation_tasks(mazes, lattice_n, motion, seed)
        results: List[RolloutResult] = run_rollouts(tasks, policy_factory, backbone, motion, max_steps, workers)
        per_seed.append(float(np.mean([r.success for r in results])))
        successful_steps.extend(r.steps for r in results if r.success)
        for r in results:
            outcomes[r.outcome.value] = outcomes.get(r.outcome.value, 0) + 1
    summary = MetricsSummary(
        success_mean=float(np.mean(per_seed)),
        success_std=float(np.std(per_seed)),
        per_seed=per_seed,
        mean_steps_success=float(np.mean(successful_steps)) if successful_steps else None,
        mazes=mazes,
        seeds=list(seeds),
        outcomes=outcomes,
    )
    logger.info(
        "Evaluation completed",
        extra={"event": "evaluation_completed", "success_mean": summary.success_mean, "mazes": mazes},
    )
    return summary


def collision_violations(q: np.ndarray, maze: Maze, motion: Motion) -> Tuple[int, int]:
    """Count states where some illegal move scores at least as high as some legal move.

    ``q`` is ``A x M x H x W``; the done action is ignored and states whose
    moves are all legal (or all illegal) are not counted.
    """
    violations = counted = 0
    moves = set(motion.move_actions)
    for state in all_states(maze, motion):
        legal = sorted(set(legal_actions(maze, state, motion)) & moves)
        illegal = sorted(moves - set(legal))
        if not legal or not illegal:
            continue
        scores = q[(slice(None),) + state.plane_index]
        counted += 1
        if scores[legal].min() <= scores[illegal].max():
            violations += 1
    return violations, counted


def full_knowledge_snapshot(model: PlanningModel, maze: Maze) -> np.ndarray:
    """Planner input after the whole maze has been observed."""
    if isinstance(model.backbone, OracleBackbone):
        return OracleBackbone(partial=False).start(maze).snapshot()
    episode = model.backbone.start(maze)  # type: ignore[attr-defined]
    for state in all_states(maze, model.motion):
        episode.observe(state)
    return episode.snapshot()


def collision_preference(model: PlanningModel, mazes: Sequence[Maze]) -> float:
    """Fraction of counted states, over ``mazes``, that violate the valid-above-invalid ordering."""
    violations = counted = 0
    for maze in mazes:
        out = model.plan(full_knowledge_snapshot(model, maze))
        v, c = collision_violations(out.q.data, maze, model.motion)
        violations += v
        counted += c
    return violations / counted if counted else 0.0
