"""
Gradient check tests

This test suite covers:
- Finite-difference checks of every tensor op
- End-to-end imitation-loss gradients of CALVIN, VIN and the lattice backbone
- Detection of wrong analytic gradients
"""

import unittest

import numpy as np
import pytest

from calvin.gradcheck import SUITES, check_gradients, run_gradcheck, small_maze, suite_cases
from calvin.tensor import add, as_tensor, tensor_sum


class GradCheckTests(unittest.TestCase):
    """Analytic versus numerical gradients"""

    def test_detects_a_detached_branch(self):
        values = {"x": np.linspace(-1.0, 1.0, 6).reshape(2, 3)}
        result = check_gradients("detached", lambda p: tensor_sum(add(p["x"], as_tensor(2 * p["x"].data))), values)
        self.assertFalse(result.passed)
        self.assertEqual(len(result.failures), 6)

    def test_correct_gradient_passes(self):
        values = {"x": np.linspace(-1.0, 1.0, 6).reshape(2, 3)}
        result = check_gradients("sum", lambda p: tensor_sum(add(p["x"], p["x"])), values)
        self.assertTrue(result.passed)
        self.assertEqual(result.checked, 6)

    def test_coordinate_sampling(self):
        values = {"x": np.ones((10, 10))}
        result = check_gradients("sampled", lambda p: tensor_sum(p["x"]), values, max_coords=4)
        self.assertEqual(result.checked + result.skipped, 4)

    def test_small_maze_has_a_task(self):
        maze = small_maze(3)
        self.assertEqual(maze.shape, (5, 5))
        self.assertNotEqual(maze.start, maze.target)
        self.assertEqual(small_maze(3), maze)

    def test_unknown_suite(self):
        with self.assertRaises(ValueError):
            suite_cases("mlp", 0)


class SuiteTests(unittest.TestCase):
    """Whole suites at a few seeds"""

    def test_op_suite(self):
        report = run_gradcheck(range(3), ["ops"])
        self.assertTrue(report.passed, report.to_dict()["failed"])
        summary = report.to_dict()
        self.assertEqual(set(summary), {"passed", "checks", "failed", "max_error"})
        self.assertEqual(summary["failed"], [])

    def test_model_suites(self):
        report = run_gradcheck([0], ["calvin", "vin", "lpn"])
        self.assertTrue(report.passed, report.to_dict()["failed"])
        self.assertEqual(len(report.results), 4)


@pytest.mark.parametrize("suite", SUITES)
def test_suites_build_cases(suite):
    cases = suite_cases(suite, 1)
    assert cases
    for values, fn in cases.values():
        assert all(isinstance(v, np.ndarray) for v in values.values())
        assert callable(fn)
