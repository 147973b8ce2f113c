"""
Tensor engine tests

This test suite covers:
- Forward values of the closed op set
- Convolution against a brute-force reference
- Tie handling in the action max-pool
- Gradient accumulation and graph errors
"""

import math
import unittest

import numpy as np
import pytest

from calvin.errors import GraphError, NonFiniteError, ShapeError
from calvin.tensor import (
    Tensor,
    add,
    as_tensor,
    backward,
    channel_max,
    concat,
    conv2d,
    gather_cells,
    mul,
    reshape,
    softmax,
    softmax_cross_entropy,
    tensor_sum,
)


def _brute_conv(x, kernel):
    out_channels, in_channels, size, _ = kernel.shape
    pad = size // 2
    _, height, width = x.shape
    padded = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    out = np.zeros((out_channels, height, width))
    for o in range(out_channels):
        for h in range(height):
            for w in range(width):
                out[o, h, w] = np.sum(padded[:, h:h + size, w:w + size] * kernel[o])
    return out


class ConvolutionTests(unittest.TestCase):
    """Same-size cross-correlation with zero padding"""

    def test_identity_kernel_returns_input(self):
        x = np.random.default_rng(0).normal(size=(1, 5, 6)).astype(np.float32)
        kernel = np.zeros((1, 1, 3, 3), dtype=np.float32)
        kernel[0, 0, 1, 1] = 1.0
        np.testing.assert_array_equal(conv2d(x, kernel).data, x)

    def test_impulse_response_is_flipped_kernel(self):
        x = np.zeros((1, 5, 5), dtype=np.float32)
        x[0, 2, 2] = 1.0
        kernel = np.arange(9, dtype=np.float32).reshape(1, 1, 3, 3)
        out = conv2d(x, kernel).data
        np.testing.assert_array_equal(out[0, 1:4, 1:4], kernel[0, 0, ::-1, ::-1])
        self.assertEqual(float(np.abs(out).sum()), float(kernel.sum()))

    def test_matches_brute_force(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(2, 4, 5)).astype(np.float32)
        kernel = rng.normal(size=(3, 2, 5, 5)).astype(np.float32)
        np.testing.assert_allclose(conv2d(x, kernel).data, _brute_conv(x, kernel), rtol=1e-5, atol=1e-5)

    def test_rejects_even_kernel_and_channel_mismatch(self):
        with self.assertRaises(ShapeError):
            conv2d(np.zeros((1, 3, 3)), np.zeros((1, 1, 2, 2)))
        with self.assertRaises(ShapeError):
            conv2d(np.zeros((2, 3, 3)), np.zeros((1, 1, 3, 3)))

    def test_input_gradient_is_adjoint(self):
        """<conv(x, k), g> = <x, grad_x> for a linear map"""
        rng = np.random.default_rng(5)
        x = Tensor.parameter(rng.normal(size=(2, 4, 4)))
        kernel = as_tensor(rng.normal(size=(3, 2, 3, 3)))
        g = rng.normal(size=(3, 4, 4)).astype(np.float32)
        out = conv2d(x, kernel)
        grads = backward(tensor_sum(mul(out, g)))
        lhs = float(np.sum(out.data.astype(np.float64) * g))
        rhs = float(np.sum(x.data.astype(np.float64) * grads[x]))
        self.assertAlmostEqual(lhs, rhs, places=3)


class ChannelMaxTests(unittest.TestCase):
    """Max-pool over the action axis"""

    def test_ties_go_to_lowest_index(self):
        q = Tensor.parameter(np.array([[[1.0, 2.0]], [[1.0, 3.0]], [[0.5, 3.0]]]))
        pooled, argmax = channel_max(q)
        np.testing.assert_array_equal(argmax, [[0, 1]])
        np.testing.assert_array_equal(pooled.data, [[1.0, 3.0]])
        grad = backward(tensor_sum(pooled))[q]
        expected = np.zeros((3, 1, 2), dtype=np.float32)
        expected[0, 0, 0] = 1.0
        expected[1, 0, 1] = 1.0
        np.testing.assert_array_equal(grad, expected)

    def test_empty_action_axis_rejected(self):
        with self.assertRaises(ShapeError):
            channel_max(np.zeros((0, 2, 2)))


class CrossEntropyTests(unittest.TestCase):
    """Weighted softmax cross-entropy"""

    def test_uniform_logits_give_log_of_class_count(self):
        loss = softmax_cross_entropy(np.zeros(9), 4)
        self.assertAlmostEqual(loss.item(), math.log(9), places=5)

    def test_weights_scale_rows(self):
        logits = np.zeros((2, 9))
        loss = softmax_cross_entropy(logits, [1, 2], [0.5, 0.25])
        self.assertAlmostEqual(loss.item(), 0.75 * math.log(9), places=5)

    def test_gradient_is_probabilities_minus_one_hot(self):
        logits = Tensor.parameter(np.array([1.0, 2.0, 3.0]))
        grad = backward(softmax_cross_entropy(logits, 0))[logits]
        probs = np.exp([1.0, 2.0, 3.0]) / np.exp([1.0, 2.0, 3.0]).sum()
        probs[0] -= 1.0
        np.testing.assert_allclose(grad, probs, rtol=1e-5)

    def test_invalid_targets_and_weights_rejected(self):
        with self.assertRaises(ShapeError):
            softmax_cross_entropy(np.zeros(3), 3)
        with self.assertRaises(ShapeError):
            softmax_cross_entropy(np.zeros((2, 3)), [0, 1], [-1.0, 1.0])


class GraphTests(unittest.TestCase):
    """Reverse-mode traversal"""

    def test_shared_input_gradients_accumulate(self):
        a = Tensor.parameter(np.array([2.0, -1.0]))
        loss = tensor_sum(add(mul(a, a), a))
        np.testing.assert_allclose(backward(loss)[a], [5.0, -1.0])

    def test_non_scalar_loss_rejected(self):
        a = Tensor.parameter(np.ones(3))
        with self.assertRaises(GraphError):
            backward(mul(a, 2.0))

    def test_constant_loss_rejected(self):
        with self.assertRaises(GraphError):
            backward(tensor_sum(as_tensor(np.ones(3))))

    def test_unused_params_get_zero_gradient(self):
        a = Tensor.parameter(np.ones(2))
        b = Tensor.parameter(np.ones((2, 2)))
        grads = backward(tensor_sum(a), [a, b])
        np.testing.assert_array_equal(grads[b], np.zeros((2, 2)))


def test_non_finite_values_raise():
    with pytest.raises(NonFiniteError):
        Tensor(np.array([1.0, np.inf]))


def test_broadcast_mismatch_raises_shape_error():
    with pytest.raises(ShapeError):
        add(np.zeros((2, 3)), np.zeros((3, 2)))


def test_reshape_and_concat_shapes():
    x = as_tensor(np.arange(6.0))
    assert reshape(x, (2, 3)).shape == (2, 3)
    assert concat([reshape(x, (2, 3)), np.zeros((1, 3))], axis=0).shape == (3, 3)
    with pytest.raises(ShapeError):
        reshape(x, (4, 2))


def test_gather_cells_collects_action_vectors():
    q = np.arange(2 * 3 * 3, dtype=np.float32).reshape(2, 3, 3)
    out = gather_cells(q, np.array([[0, 0], [2, 1]])).data
    np.testing.assert_array_equal(out, [[0.0, 9.0], [7.0, 16.0]])
    with pytest.raises(ShapeError):
        gather_cells(q, np.array([[3, 0]]))


def test_softmax_rows_sum_to_one():
    out = softmax(np.random.default_rng(1).normal(size=(4, 7)), axis=1).data
    np.testing.assert_allclose(out.sum(axis=1), np.ones(4), rtol=1e-6)
