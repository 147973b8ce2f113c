"""Differentiable planning toolkit for maze navigation by imitation.

This package exposes a small reverse-mode tensor engine, maze environments with
expert demonstrations, exact value iteration, the VIN and CALVIN planners, a
lattice point-pooling perception backbone and the training and evaluation
loops built on them. It is decoupled from the command-line application so it
can be reused in standalone experiments or notebooks.
"""

from .errors import (
    CalvinError,
    CheckpointError,
    ConfigError,
    GraphError,
    NonFiniteError,
    ShapeError,
    TaskPlacementError,
    TrainingDivergedError,
    UnreachableGoalError,
)
from .exact_vi import ExactMDP, ValueResult, build_maze_mdp, greedy_path, solve_mdp_lp, vi_exact
from .expert import (
    Trajectory,
    astar,
    compute_distance_weights,
    compute_weights,
    dijkstra,
    expand_partial,
    generate_dataset,
    make_trajectory,
    read_dataset,
    split_dataset,
    write_dataset,
)
from .maze import (
    EMBODIED,
    POSITIONAL,
    POSITIONAL4,
    AgentState,
    Maze,
    ascii_render,
    generate_maze,
    generate_task_maze,
    get_motion,
    legal_actions,
    step,
    visible_cells,
)
from .metrics import MetricsSummary, collision_preference, success_rate
from .model import PlanningModel, build_model
from .planners import CalvinPlanner, VinPlanner, calvin_iterate, vin_iterate
from .render import render_maps
from .rollout import OraclePolicy, PlannerPolicy, RandomPolicy, ReplayPolicy, RolloutResult, rollout
from .tensor import Tensor, backward
from .training import TrainConfig, Trainer, ablation_configs, train

__all__ = [
    "AgentState",
    "CalvinError",
    "CalvinPlanner",
    "CheckpointError",
    "ConfigError",
    "EMBODIED",
    "ExactMDP",
    "GraphError",
    "Maze",
    "MetricsSummary",
    "NonFiniteError",
    "OraclePolicy",
    "POSITIONAL",
    "POSITIONAL4",
    "PlannerPolicy",
    "PlanningModel",
    "RandomPolicy",
    "ReplayPolicy",
    "RolloutResult",
    "ShapeError",
    "TaskPlacementError",
    "Tensor",
    "TrainConfig",
    "Trainer",
    "TrainingDivergedError",
    "Trajectory",
    "UnreachableGoalError",
    "ValueResult",
    "VinPlanner",
    "ablation_configs",
    "ascii_render",
    "astar",
    "backward",
    "build_maze_mdp",
    "build_model",
    "calvin_iterate",
    "collision_preference",
    "compute_distance_weights",
    "compute_weights",
    "dijkstra",
    "expand_partial",
    "generate_dataset",
    "generate_maze",
    "generate_task_maze",
    "get_motion",
    "greedy_path",
    "legal_actions",
    "make_trajectory",
    "read_dataset",
    "render_maps",
    "rollout",
    "solve_mdp_lp",
    "split_dataset",
    "step",
    "success_rate",
    "train",
    "vi_exact",
    "vin_iterate",
    "visible_cells",
    "write_dataset",
]
