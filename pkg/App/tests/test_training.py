"""
Training Tests

This test suite covers:
- Action, motion-model and availability losses
- TrainConfig validation and hyperparameter grids
- Resumable, reproducible training runs and loss ablations
"""

import math
import unittest
from dataclasses import replace

import numpy as np
import pytest

from calvin.errors import ConfigError
from calvin.expert import generate_dataset
from calvin.losses import LossReport, loss_a, loss_p, loss_q, transition_targets
from calvin.maze import EMBODIED, POSITIONAL, AgentState
from calvin.tensor import as_tensor
from calvin.training import (
    METRIC_COLUMNS,
    TrainConfig,
    Trainer,
    ablation_configs,
    expand_dataset,
    train,
)

SMALL = TrainConfig(
    lattice_n=3,
    hidden=8,
    k=5,
    batch_size=4,
    sample_cap=2,
    trajectories=4,
    epochs=1,
    max_steps=20,
)


class LossTests(unittest.TestCase):
    """Cross-entropy losses on hand-built planner outputs"""

    def setUp(self):
        self.q = as_tensor(np.zeros((9, 1, 5, 5), dtype=np.float32))
        self.states = [AgentState(1, 1), AgentState(2, 3)]
        self.actions = [2, 8]

    def test_uniform_scores_cost_log_nine(self):
        loss = loss_q(self.q, self.states, self.actions, [1.0, 1.0])
        self.assertAlmostEqual(loss.item(), math.log(9), places=5)

    def test_weights_scale_the_loss(self):
        single = loss_q(self.q, self.states, self.actions, [1.0, 1.0]).item()
        double = loss_q(self.q, self.states, self.actions, [2.0, 2.0]).item()
        self.assertAlmostEqual(double, 2 * single, places=5)

    def test_normaliser_overrides_sample_count(self):
        loss = loss_q(self.q, self.states, self.actions, [1.0, 1.0], normaliser=4)
        self.assertAlmostEqual(loss.item(), math.log(9) / 2, places=5)

    def test_availability_loss_prefers_expert_action(self):
        logits = np.zeros((9, 1, 5, 5), dtype=np.float32)
        logits[2, 0, 1, 1] = 10.0
        confident = loss_a(as_tensor(logits), [AgentState(1, 1)], [2]).item()
        uniform = loss_a(self.q, [AgentState(1, 1)], [2]).item()
        self.assertLess(confident, uniform)

    def test_states_outside_the_planes_rejected(self):
        with self.assertRaises(ValueError):
            loss_q(self.q, [AgentState(7, 7)], [0], [1.0])

    def test_motion_loss_without_transitions_is_zero(self):
        self.assertEqual(loss_p(as_tensor(np.zeros((9, 3, 3))), [], POSITIONAL).item(), 0.0)

    def test_motion_loss_of_uniform_model(self):
        moves = [(2, AgentState(1, 1), AgentState(1, 2)), (4, AgentState(1, 2), AgentState(2, 2))]
        loss = loss_p(as_tensor(np.zeros((9, 3, 3))), moves, POSITIONAL)
        self.assertAlmostEqual(loss.item(), math.log(9), places=5)

    def test_transition_targets(self):
        rows, targets = transition_targets([(2, AgentState(1, 1), AgentState(1, 2))], POSITIONAL, 3)
        np.testing.assert_array_equal(rows, [2])
        np.testing.assert_array_equal(targets, [5])
        rows, targets = transition_targets([(3, AgentState(1, 1, 2), AgentState(1, 1, 3))], EMBODIED, 3)
        np.testing.assert_array_equal(rows, [3 * 8 + 2])
        np.testing.assert_array_equal(targets, [3 * 9 + 4])

    def test_report_total(self):
        report = LossReport(1.0, 0.5, 0.25, 3)
        self.assertEqual(report.total, 1.75)
        self.assertEqual(report.as_dict()["samples"], 3)


class TrainConfigTests(unittest.TestCase):
    """Validation of training hyperparameters"""

    def test_defaults_are_valid(self):
        config = TrainConfig()
        self.assertFalse(config.partial)
        self.assertEqual(config.step_limit, 200)
        self.assertEqual(replace(config, observability="partial").step_limit, 500)
        self.assertEqual(replace(config, max_steps=7).step_limit, 7)

    def test_invalid_values_raise_config_error(self):
        for changes in (
            {"planner": "dqn"},
            {"motion": "hover"},
            {"lr": 0.0},
            {"beta": 0.0},
            {"kernel_size": 4},
            {"epochs": 31},
            {"gamma": 1.0},
            {"validation_fraction": 1.0},
            {"loss_p_coef": -1.0},
        ):
            with self.subTest(changes=changes):
                with self.assertRaises(ConfigError):
                    TrainConfig(**changes)

    def test_strict_grids(self):
        TrainConfig(strict_grids=True, lr=0.005, beta=0.25, k=40, hidden=80)
        with self.assertRaises(ConfigError):
            TrainConfig(strict_grids=True, lr=0.02)
        with self.assertRaises(ConfigError):
            TrainConfig(strict_grids=True, k=50)

    def test_from_mapping_ignores_unknown_keys(self):
        config = TrainConfig.from_mapping({"planner": "vin", "k": 20, "SECRET_KEY": "x"})
        self.assertEqual((config.planner, config.k), ("vin", 20))
        self.assertEqual(TrainConfig.from_mapping(config.to_dict()), config)

    def test_ablations(self):
        variants = dict(ablation_configs(SMALL))
        self.assertEqual(list(variants), ["full", "no_L_A", "no_L_P"])
        self.assertEqual(variants["full"], SMALL)
        self.assertEqual(variants["no_L_A"].loss_a_coef, 0.0)
        self.assertEqual(variants["no_L_P"].loss_p_coef, 0.0)
        self.assertEqual(variants["no_L_P"].loss_a_coef, 1.0)


class TrainerTests(unittest.TestCase):
    """Optimisation loop, pausing and resuming"""

    @classmethod
    def setUpClass(cls):
        cls.dataset = generate_dataset(4, 3, POSITIONAL, 0)

    def test_sample_cap_bounds_expansion(self):
        config = replace(SMALL, observability="partial", sample_cap=1)
        samples = expand_dataset(self.dataset, config)
        self.assertEqual(len(samples), sum(len(t) for t in self.dataset))

    def test_steps_report_finite_losses_and_move_parameters(self):
        trainer = Trainer(SMALL, self.dataset[:3], self.dataset[3:])
        before = trainer.model.store.state_dict()
        report = trainer.run_steps(1)[0]
        self.assertTrue(np.isfinite(report.total))
        self.assertGreater(report.l_q, 0.0)
        self.assertGreater(report.l_p, 0.0)
        changed = [n for n in before if not np.array_equal(before[n], trainer.model.store[n])]
        self.assertTrue(changed)

    def test_action_loss_averages_per_trajectory_means(self):
        config = replace(SMALL, observability="full", beta=1.0, sample_cap=None)
        trainer = Trainer(config, self.dataset[:2])
        constants = trainer.model.constants()
        per_trajectory = []
        for index in range(2):
            members = [s for s in trainer.samples if s.trajectory == index]
            self.assertEqual(len(members), len(self.dataset[index]))
            report, _ = trainer.batch_loss(trainer.train_set, members, constants, with_grads=False)
            per_trajectory.append(report.l_q)
        combined, _ = trainer.batch_loss(trainer.train_set, trainer.samples, constants, with_grads=False)
        self.assertAlmostEqual(combined.l_q, sum(per_trajectory) / 2, places=5)

    def test_vin_has_no_motion_or_availability_loss(self):
        trainer = Trainer(replace(SMALL, planner="vin", vin_hidden_actions=6), self.dataset[:3])
        report = trainer.run_steps(1)[0]
        self.assertEqual((report.l_p, report.l_a), (0.0, 0.0))

    def test_resume_matches_uninterrupted_run(self):
        uninterrupted = Trainer(SMALL, self.dataset[:3])
        uninterrupted.run_steps(4)

        first = Trainer(SMALL, self.dataset[:3])
        first.run_steps(2)
        state = first.state_dict()
        resumed = Trainer(SMALL, self.dataset[:3])
        resumed.load_state_dict(state)
        self.assertEqual((resumed.epoch, resumed.cursor), (first.epoch, first.cursor))
        resumed.run_steps(2)

        for name in uninterrupted.model.store:
            np.testing.assert_allclose(resumed.model.store[name], uninterrupted.model.store[name], rtol=1e-6)
        self.assertEqual(resumed.adam.step, uninterrupted.adam.step)

    def test_epoch_record(self):
        trainer = Trainer(SMALL, self.dataset[:3], self.dataset[3:])
        record = trainer.run_epoch()
        self.assertEqual(record.epoch, 1)
        self.assertEqual(trainer.epoch, 1)
        self.assertEqual(trainer.cursor, 0)
        self.assertEqual(tuple(record.as_row()), METRIC_COLUMNS)
        self.assertTrue(0.0 <= record.val_success <= 1.0)

    def test_empty_training_set_rejected(self):
        with self.assertRaises(ConfigError):
            Trainer(SMALL, [])
        with self.assertRaises(ConfigError):
            train(SMALL, [])


def test_training_is_reproducible():
    dataset = generate_dataset(4, 3, POSITIONAL, 1)
    config = replace(SMALL, validation_fraction=0.25)
    first = train(config, dataset)
    second = train(config, dataset)
    assert [r.as_row() for r in first.history] == [r.as_row() for r in second.history]
    assert first.best_epoch == second.best_epoch == 1
    for name, value in first.best_state.items():
        np.testing.assert_array_equal(value, second.best_state[name])


@pytest.mark.parametrize("planner", ["calvin", "vin"])
def test_zero_epochs_keep_initial_parameters(planner):
    dataset = generate_dataset(2, 3, POSITIONAL, 2)
    config = replace(SMALL, planner=planner, epochs=0, vin_hidden_actions=6)
    result = train(config, dataset)
    assert result.best_epoch == 0
    assert result.history == []


@pytest.mark.integration
def test_demo_script_runs(capsys):
    from calvin.examples import build_demo_config, run_demo

    assert build_demo_config().lattice_n == 3
    run_demo()
    output = capsys.readouterr().out
    assert "Exact VI greedy path length" in output
    assert "Rollout outcome:" in output
