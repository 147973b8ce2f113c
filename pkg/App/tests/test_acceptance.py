"""
Desk-scale Navigation Tests

Trains planners on 1000 demonstrations in 15x15 mazes and evaluates them on
100 unseen mazes for each of 3 seeds. Each case takes hours on one CPU, so
the module only runs with CALVIN_RUN_SLOW=1.
"""

import os
from dataclasses import replace
from functools import lru_cache

import numpy as np
import pytest

from calvin.backbones import OracleBackbone
from calvin.expert import generate_dataset
from calvin.maze import get_motion
from calvin.metrics import collision_preference, success_rate
from calvin.rollout import PlannerPolicy, evaluation_tasks
from calvin.training import TrainConfig, ablation_configs, train
from App.config import build_train_config, load_config

pytestmark = [
    pytest.mark.slow,
    pytest.mark.skipif(os.environ.get("CALVIN_RUN_SLOW") != "1", reason="set CALVIN_RUN_SLOW=1"),
]

SEEDS = (0, 1, 2)
MAZES = 100


def preset(name, **changes):
    return replace(build_train_config(load_config(presets=["desk", name])), **changes)


@lru_cache(maxsize=None)
def dataset(motion, lattice_n, count, seed):
    return tuple(generate_dataset(count, lattice_n, get_motion(motion), seed))


@lru_cache(maxsize=None)
def trained(config: TrainConfig):
    return train(config, list(dataset(config.motion, config.lattice_n, config.trajectories, config.seed))).model


def success(config: TrainConfig):
    model = trained(config)
    return success_rate(
        lambda: PlannerPolicy(model),
        model.backbone,
        model.motion,
        MAZES,
        SEEDS,
        config.lattice_n,
        config.step_limit,
        config.workers,
    ).success_mean


def violation_rate(config: TrainConfig):
    model = trained(config)
    mazes = [maze for maze, _ in evaluation_tasks(20, config.lattice_n, model.motion, SEEDS[0])]
    return collision_preference(model, mazes)


def test_full_observability():
    calvin = preset("grid-full")
    assert success(calvin) >= 0.95
    assert success(replace(calvin, planner="vin")) < success(calvin)


def test_partial_observability_reweighting():
    reweighted = preset("grid-partial")
    standard = replace(reweighted, beta=1.0)
    assert success(reweighted) >= 0.80
    assert success(standard) <= success(reweighted) - 0.25


def test_embodied():
    config = preset("embodied")
    assert success(config) >= 0.80
    assert trained(config).store["calvin.P_logits"].shape == (5, 8, 8, 3, 3)


def test_collision_preference():
    calvin = preset("grid-full")
    calvin_rate = violation_rate(calvin)
    assert calvin_rate <= 0.05
    assert violation_rate(replace(calvin, planner="vin")) >= 3 * calvin_rate


def test_ablation_ordering():
    rates = {name: success(config) for name, config in ablation_configs(preset("grid-partial"))}
    assert rates["full"] > rates["no_L_A"] > rates["no_L_P"]
    assert rates["no_L_P"] < 0.25


def test_lattice_backbone():
    config = preset("lpn")
    assert success(config) >= 0.70
    assert not isinstance(trained(config).backbone, OracleBackbone)


def test_learned_motion_model_matches_kinematics():
    model = trained(preset("grid-full"))
    probs = model.store["calvin.P_logits"]
    motion = model.motion
    for action in motion.move_actions:
        dr, dc = motion.offsets[action]
        row, col = np.unravel_index(np.argmax(probs[action]), probs[action].shape)
        assert (row - 1, col - 1) == (dr, dc)
