"""
Parameter storage, optimizer and checkpoint tests
"""

import os
import tempfile
import unittest
from collections import OrderedDict

import numpy as np
import pytest

from calvin import checkpoint
from calvin.errors import CheckpointError, ShapeError
from calvin.nn import ParameterStore, TwoLayerCNN, pointwise
from calvin.optim import AdamState, adam_step
from calvin.tensor import as_tensor


class CheckpointFormatTests(unittest.TestCase):
    """Binary CALVIN1 checkpoints"""

    def setUp(self):
        self.tensors = OrderedDict(
            [
                ("calvin.P_logits", np.arange(9 * 9, dtype=np.float32).reshape(9, 3, 3)),
                ("calvin.R_F", np.array([-1.0], dtype=np.float32)),
                ("scalar", np.array(2.5, dtype=np.float32)),
            ]
        )

    def test_save_and_load_preserve_names_order_and_values(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "nested", "model.ckpt")
            checkpoint.save(path, self.tensors)
            loaded = checkpoint.load(path)
        self.assertEqual(list(loaded), list(self.tensors))
        for name, value in self.tensors.items():
            np.testing.assert_array_equal(loaded[name], value)
            self.assertEqual(loaded[name].shape, value.shape)

    def test_dumps_is_deterministic(self):
        self.assertEqual(checkpoint.dumps(self.tensors), checkpoint.dumps(OrderedDict(self.tensors)))

    def test_bad_magic_rejected(self):
        payload = b"NOTCALV" + checkpoint.dumps(self.tensors)[7:]
        with self.assertRaises(CheckpointError):
            checkpoint.loads(payload)

    def test_truncated_and_trailing_bytes_rejected(self):
        payload = checkpoint.dumps(self.tensors)
        with self.assertRaises(CheckpointError):
            checkpoint.loads(payload[:-3])
        with self.assertRaises(CheckpointError):
            checkpoint.loads(payload + b"\x00")

    def test_missing_file_raises_checkpoint_error(self):
        with self.assertRaises(CheckpointError):
            checkpoint.load("/nonexistent/model.ckpt")


class ParameterStoreTests(unittest.TestCase):
    """Named parameters and strict loading"""

    def setUp(self):
        self.store = ParameterStore(seed=0)
        TwoLayerCNN("net", 3, 4, 2).init_params(self.store)

    def test_registration_order_and_shapes(self):
        self.assertEqual(
            self.store.names(),
            ("net.conv1.weight", "net.conv2.weight", "net.conv1.bias", "net.conv2.bias"),
        )
        self.assertEqual(self.store["net.conv1.weight"].shape, (4, 3, 3, 3))
        self.assertEqual(self.store["net.conv2.weight"].shape, (2, 4, 1, 1))

    def test_same_seed_same_initialisation(self):
        other = ParameterStore(seed=0)
        TwoLayerCNN("net", 3, 4, 2).init_params(other)
        for name in self.store:
            np.testing.assert_array_equal(self.store[name], other[name])

    def test_strict_load_reports_missing_and_unexpected_names(self):
        state = self.store.state_dict()
        missing = OrderedDict(list(state.items())[1:])
        with self.assertRaises(CheckpointError) as ctx:
            self.store.load_state(missing)
        self.assertEqual(ctx.exception.name, "net.conv1.weight")
        state["extra"] = np.zeros(1, dtype=np.float32)
        with self.assertRaises(CheckpointError):
            self.store.load_state(state)

    def test_shape_mismatch_rejected(self):
        with self.assertRaises(CheckpointError):
            self.store.assign({"net.conv2.bias": np.zeros((3, 1, 1))})

    def test_duplicate_registration_rejected(self):
        with self.assertRaises(ValueError):
            self.store.add_constant("net.conv1.bias", (4, 1, 1))

    def test_network_forward_shape(self):
        out = TwoLayerCNN("net", 3, 4, 2)(as_tensor(np.ones((3, 5, 6))), self.store.leaves())
        self.assertEqual(out.shape, (2, 5, 6))


def test_pointwise_mixes_leading_channels():
    x = np.random.default_rng(0).normal(size=(3, 2, 4, 5)).astype(np.float32)
    weight = np.random.default_rng(1).normal(size=(6, 3)).astype(np.float32)
    out = pointwise(as_tensor(x), as_tensor(weight)).data
    np.testing.assert_allclose(out, np.einsum("oc,c...->o...", weight, x), rtol=1e-5, atol=1e-5)


def test_adam_first_step_moves_by_learning_rate():
    state = AdamState(lr=0.1)
    params = {"w": np.array([1.0, -2.0], dtype=np.float32)}
    updated = adam_step(params, {"w": np.array([0.5, -3.0])}, state)
    np.testing.assert_allclose(updated["w"], [0.9, -1.9], rtol=1e-5)
    assert state.step == 1


def test_adam_missing_gradient_counts_as_zero():
    state = AdamState(lr=0.1)
    params = {"w": np.ones(2, dtype=np.float32), "b": np.ones(1, dtype=np.float32)}
    updated = adam_step(params, {"w": np.ones(2)}, state)
    np.testing.assert_array_equal(updated["b"], params["b"])


def test_adam_rejects_mismatched_gradients():
    with pytest.raises(ShapeError):
        adam_step({"w": np.ones(2, dtype=np.float32)}, {"w": np.ones(3)}, AdamState())
    with pytest.raises(ShapeError):
        adam_step({"w": np.ones(2, dtype=np.float32)}, {"v": np.ones(2)}, AdamState())


def test_adam_converges_on_a_quadratic():
    target = np.array([1.0, -0.5, 0.25, 0.0], dtype=np.float32)
    store = ParameterStore(seed=0)
    store.add("x", np.zeros(4, dtype=np.float32))
    state = AdamState(lr=0.1)
    for _ in range(100):
        x = store["x"]
        store.assign(adam_step(store.state_dict(), {"x": 2.0 * (x - target)}, state))
    assert state.step == 100
    np.testing.assert_allclose(store["x"], target, atol=0.05)
