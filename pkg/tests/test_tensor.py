"""
Test suite for the tensor core.

Covers the forward operations the architectures are built from, their
numerical safety, and tape-based reverse-mode gradients checked against
central finite differences.
"""

import unittest

import numpy as np

import sys
import os
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from errors import (
    ContractError, DegenerateNormalizationError, DimensionError, NumericInputError
)
from tensor import (
    GradTape, Tensor, add, backward, concat, dropout, finite_difference_check, gelu,
    finite_difference_gradients, layer_norm, linear, log_clamped, matmul, max_pool, mean_all,
    multiply, pick, relative_gradient_error, scale, softmax, sum_all, tanh, transpose
)


class TestForwardOps(unittest.TestCase):
    """Forward values of the elementary operations."""

    def test_matmul_identity(self):
        """Identity times A is A."""
        a = Tensor([[1.5, -2.0], [0.25, 4.0]])
        out = matmul(Tensor(np.eye(2)), a)
        np.testing.assert_array_equal(out.data, a.data)

    def test_matmul_hand_arithmetic(self):
        """[[1,2],[3,4]] x [[0],[1]] is [[2],[4]]."""
        out = matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[0.0], [1.0]]))
        np.testing.assert_array_equal(out.data, [[2.0], [4.0]])

    def test_matmul_shape_mismatch(self):
        """Mismatched inner extents name both shapes."""
        with self.assertRaises(DimensionError) as ctx:
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
        self.assertIn("(2, 3)", str(ctx.exception))

    def test_batched_matmul_and_transpose(self):
        """A leading batch axis is carried through."""
        a = Tensor(np.arange(12.0).reshape(2, 2, 3))
        out = matmul(a, transpose(a))
        self.assertEqual(out.shape, (2, 2, 2))
        np.testing.assert_allclose(out.data[1], a.data[1] @ a.data[1].T)

    def test_softmax_rows_sum_to_one(self):
        """Softmax output is a distribution along the axis."""
        x = Tensor(np.random.default_rng(0).normal(size=(4, 7)))
        out = softmax(x)
        np.testing.assert_allclose(out.data.sum(axis=-1), np.ones(4), atol=1e-12)
        self.assertTrue(np.all(out.data > 0))

    def test_softmax_is_overflow_safe(self):
        """Large logits do not overflow."""
        out = softmax(Tensor([[1000.0, 1000.0], [-1000.0, 0.0]]))
        np.testing.assert_allclose(out.data, [[0.5, 0.5], [0.0, 1.0]], atol=1e-12)
        self.assertTrue(np.all(np.isfinite(out.data)))

    def test_softmax_rejects_non_finite(self):
        """Non-finite logits raise a numeric input error."""
        with self.assertRaises(NumericInputError):
            softmax(Tensor([[np.nan, 1.0]]))

    def test_layer_norm_standardizes(self):
        """Unit gain and zero bias give zero-mean, (almost) unit-variance rows."""
        out = layer_norm(Tensor([[1.0, 2.0, 3.0, 4.0]]), Tensor(np.ones(4)), Tensor(np.zeros(4)))
        self.assertAlmostEqual(float(out.data.mean()), 0.0, places=12)
        self.assertAlmostEqual(float(out.data.var()), 1.0, places=4)

    def test_layer_norm_single_feature(self):
        """A single feature per row cannot be normalized."""
        with self.assertRaises(DegenerateNormalizationError):
            layer_norm(Tensor([[1.0], [2.0]]), Tensor([1.0]), Tensor([0.0]))

    def test_layer_norm_constant_row_is_finite(self):
        """A constant row maps to the bias, not to NaN."""
        out = layer_norm(Tensor([[3.0, 3.0, 3.0]]), Tensor(np.ones(3)), Tensor([0.5, 0.5, 0.5]))
        np.testing.assert_allclose(out.data, [[0.5, 0.5, 0.5]])

    def test_activations(self):
        """gelu(0) = 0, gelu is near identity for large x, tanh is bounded."""
        out = gelu(Tensor([0.0, 10.0, -10.0]))
        self.assertEqual(out.data[0], 0.0)
        self.assertAlmostEqual(out.data[1], 10.0, places=6)
        self.assertAlmostEqual(out.data[2], 0.0, places=6)
        self.assertTrue(np.all(np.abs(tanh(Tensor([-50.0, 50.0])).data) <= 1.0))

    def test_gelu_at_three(self):
        """The tanh approximation gives gelu(3) ≈ 2.9964."""
        self.assertAlmostEqual(float(gelu(Tensor([3.0])).data[0]), 2.9964, delta=1e-4)

    def test_softmax_shift_invariance(self):
        """Adding a constant to every logit changes nothing."""
        x = np.random.default_rng(1).normal(size=(3, 6))
        np.testing.assert_allclose(softmax(Tensor(x + 37.5)).data, softmax(Tensor(x)).data,
                                   atol=1e-12)

    def test_matmul_associativity(self):
        """(AB)C equals A(BC) to 1e-9 relative."""
        rng = np.random.default_rng(2)
        for _ in range(10):
            a, b, c = (Tensor(rng.normal(size=shape)) for shape in ((3, 4), (4, 5), (5, 2)))
            left = matmul(matmul(a, b), c).data
            right = matmul(a, matmul(b, c)).data
            np.testing.assert_allclose(left, right, rtol=1e-9, atol=1e-12)

    def test_layer_norm_two_features(self):
        """[1, −1] with eps 1e-5 maps to ±1/√(1 + 1e-5)."""
        out = layer_norm(Tensor([[1.0, -1.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=1e-5)
        expected = 1.0 / np.sqrt(1.0 + 1e-5)
        np.testing.assert_allclose(out.data, [[expected, -expected]], atol=1e-12)
        np.testing.assert_allclose(out.data, [[1.0, -1.0]], atol=1e-5)

    def test_layer_norm_zero_gain(self):
        """A zero gain leaves only the bias."""
        bias = np.array([0.25, -1.0, 3.0])
        out = layer_norm(Tensor(np.random.default_rng(3).normal(size=(4, 3))),
                         Tensor(np.zeros(3)), Tensor(bias))
        np.testing.assert_array_equal(out.data, np.tile(bias, (4, 1)))

    def test_max_pool_over_sequence(self):
        """max_pool reduces the sequence axis."""
        x = Tensor([[[1.0, 5.0], [3.0, 2.0], [0.0, 4.0]]])
        np.testing.assert_array_equal(max_pool(x, axis=1).data, [[3.0, 5.0]])

    def test_pick_and_log_clamped(self):
        """pick selects one entry per row; log_clamped floors at the clamp."""
        x = Tensor([[0.25, 0.75], [1.0, 0.0]])
        picked = pick(x, np.array([1, 1]))
        np.testing.assert_array_equal(picked.data, [0.75, 0.0])
        logged = log_clamped(picked, 1e-12)
        self.assertAlmostEqual(logged.data[1], np.log(1e-12))

    def test_tensor_rank_limit(self):
        """Tensors are at most 3D."""
        with self.assertRaises(DimensionError):
            Tensor(np.zeros((1, 1, 1, 1)))

    def test_dropout_rates(self):
        """Rate 0 is the identity; rate 1 is rejected; survivors are rescaled."""
        x = Tensor(np.ones((50, 50)))
        rng = np.random.default_rng(3)
        self.assertIs(dropout(x, 0.0, rng), x)
        with self.assertRaises(ContractError):
            dropout(x, 1.0, rng)
        out = dropout(x, 0.5, rng)
        self.assertTrue(set(np.unique(out.data)) <= {0.0, 2.0})


class TestGradTape(unittest.TestCase):
    """Reverse-mode gradients."""

    def test_square_gradient(self):
        """d/dx sum(x * x) = 2x, with both uses of x accumulated."""
        x = Tensor([1.0, -2.0, 3.0], requires_grad=True)
        with GradTape() as tape:
            loss = sum_all(multiply(x, x))
        (grad,) = backward(tape, loss, [x])
        np.testing.assert_allclose(grad, [2.0, -4.0, 6.0])

    def test_unused_parameter_has_exact_zero_gradient(self):
        """A parameter off the loss path gets exact zeros."""
        a = Tensor([1.0, 2.0], requires_grad=True)
        b = Tensor([3.0, 4.0], requires_grad=True)
        with GradTape() as tape:
            loss = sum_all(a)
        grads = backward(tape, loss, {"a": a, "b": b})
        np.testing.assert_array_equal(grads["b"], np.zeros(2))
        np.testing.assert_array_equal(grads["a"], np.ones(2))

    def test_ops_outside_tape_are_not_recorded(self):
        """Only ops inside the with block are recorded."""
        x = Tensor([1.0, 2.0], requires_grad=True)
        with GradTape() as tape:
            scale(x, 2.0)
        recorded = len(tape)
        scale(x, 3.0)
        self.assertEqual(recorded, 1)
        self.assertEqual(len(tape), 1)

    def test_constants_are_not_recorded(self):
        """Ops on tensors without requires_grad stay off the tape."""
        with GradTape() as tape:
            add(Tensor([1.0]), Tensor([2.0]))
        self.assertEqual(len(tape), 0)

    def test_backward_requires_scalar(self):
        """Backward needs a scalar loss."""
        x = Tensor([1.0, 2.0], requires_grad=True)
        with GradTape() as tape:
            y = scale(x, 2.0)
        with self.assertRaises(ContractError):
            backward(tape, y, [x])

    def test_max_pool_routes_ties_to_lowest_index(self):
        """Tied maxima send the whole gradient to the first occurrence."""
        x = Tensor([[2.0], [2.0], [1.0]], requires_grad=True)
        with GradTape() as tape:
            loss = sum_all(max_pool(x, axis=0))
        (grad,) = backward(tape, loss, [x])
        np.testing.assert_array_equal(grad, [[1.0], [0.0], [0.0]])

    def test_backward_replay_is_deterministic(self):
        """Two backward passes over one tape give bitwise-identical gradients."""
        rng = np.random.default_rng(4)
        x = Tensor(rng.normal(size=(5, 3)))
        weight = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
        gain = Tensor(np.ones(3), requires_grad=True)
        shift = Tensor(np.zeros(3), requires_grad=True)
        with GradTape() as tape:
            h = layer_norm(matmul(x, weight), gain, shift)
            loss = sum_all(max_pool(softmax(gelu(h)), axis=0))
        first = backward(tape, loss, [weight, gain, shift])
        second = backward(tape, loss, [weight, gain, shift])
        for a, b in zip(first, second):
            np.testing.assert_array_equal(a, b)

    def test_log_clamped_has_zero_gradient_below_floor(self):
        """The clamped region does not propagate gradient."""
        x = Tensor([1e-20, 0.5], requires_grad=True)
        with GradTape() as tape:
            loss = sum_all(log_clamped(x, 1e-12))
        (grad,) = backward(tape, loss, [x])
        np.testing.assert_allclose(grad, [0.0, 2.0])


class TestFiniteDifferences(unittest.TestCase):
    """Analytic gradients against central differences."""

    def setUp(self):
        """Small random layer shared by the checks."""
        rng = np.random.default_rng(11)
        self.x = Tensor(rng.normal(size=(3, 4)))
        self.weight = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
        self.bias = Tensor(rng.normal(size=3), requires_grad=True)
        self.gain = Tensor(1.0 + 0.1 * rng.normal(size=3), requires_grad=True)
        self.shift = Tensor(0.1 * rng.normal(size=3), requires_grad=True)

    def test_layer_norm_gelu_stack(self):
        """linear → layer_norm → gelu → mean."""
        def loss():
            h = layer_norm(linear(self.x, self.weight, self.bias), self.gain, self.shift)
            return mean_all(gelu(h))

        error = finite_difference_check(loss, [self.weight, self.bias, self.gain, self.shift])
        self.assertLess(error, 1e-4)

    def test_softmax_cross_entropy(self):
        """linear → tanh → softmax → picked log-probability."""
        labels = np.array([0, 2, 1])

        def loss():
            probs = softmax(tanh(linear(self.x, self.weight, self.bias)), axis=-1)
            return scale(mean_all(log_clamped(pick(probs, labels), 1e-12)), -1.0)

        error = finite_difference_check(loss, [self.weight, self.bias])
        self.assertLess(error, 1e-4)

    def test_attention_shaped_graph(self):
        """matmul with a transposed operand, concat and max_pool."""
        def loss():
            q = linear(self.x, self.weight, self.bias)
            weights = softmax(scale(matmul(q, transpose(q)), 0.5), axis=-1)
            mixed = concat([matmul(weights, q), q], axis=-1)
            return sum_all(max_pool(mixed, axis=0))

        error = finite_difference_check(loss, [self.weight, self.bias])
        self.assertLess(error, 1e-4)

    def test_oracle_formula(self):
        """θ² at 3 scores ≈ 0; a constant scores exactly 0."""
        theta = Tensor([3.0], requires_grad=True)
        self.assertLess(finite_difference_check(lambda: sum_all(multiply(theta, theta)), [theta]),
                        1e-8)
        self.assertEqual(finite_difference_check(lambda: sum_all(scale(theta, 0.0)), [theta]), 0.0)

    def test_oracle_is_relative_to_analytic_gradient(self):
        """The error is |a − n| / (|a| + 1e-8), not scaled by the estimate too."""
        np.testing.assert_allclose(relative_gradient_error(np.array([2.0]), np.array([2.0003])),
                                   [0.0003 / (2.0 + 1e-8)])
        np.testing.assert_allclose(relative_gradient_error(np.array([2e-9]), np.array([0.0])),
                                   [2e-9 / (2e-9 + 1e-8)])

    def test_oracle_catches_scaled_gradient(self):
        """A taped gradient off by a factor 1.00015 fails the 1e-4 bound."""
        theta = Tensor([1.3, -0.7], requires_grad=True)
        calls = []

        def loss():
            # the first call is the taped one
            calls.append(None)
            return scale(sum_all(multiply(theta, theta)), 1.0 if len(calls) == 1 else 1.00015)

        self.assertGreater(finite_difference_check(loss, [theta]), 1e-4)

    def test_gradient_estimates_are_returned_per_parameter(self):
        """Analytic and numeric gradients come back shaped like each parameter."""
        analytic, numeric = finite_difference_gradients(
            lambda: sum_all(linear(self.x, self.weight, self.bias)), [self.weight, self.bias])
        self.assertEqual([a.shape for a in analytic], [(4, 3), (3,)])
        np.testing.assert_allclose(numeric[1], np.full(3, 3.0), atol=1e-8)
        np.testing.assert_allclose(analytic[1], np.full(3, 3.0))


def _points(shapes, seed, positive=False):
    """Ten random input sets for one operation."""
    for point in range(10):
        rng = np.random.default_rng(seed * 100 + point)
        draw = (lambda s: rng.uniform(0.5, 2.0, size=s)) if positive else \
            (lambda s: rng.normal(size=s))
        yield rng, [Tensor(draw(shape), requires_grad=True) for shape in shapes]


class TestOperationGradients(unittest.TestCase):
    """Each differentiable operation at ten random points."""

    OPERATIONS = {
        "matmul": (lambda a, b: matmul(a, b), [(3, 4), (4, 2)], False),
        "batched_matmul": (lambda a, b: matmul(a, b), [(2, 3, 4), (4, 2)], False),
        "transpose": (lambda x: transpose(x), [(3, 4)], False),
        "add": (lambda a, b: add(a, b), [(3, 4), (4,)], False),
        "multiply": (lambda a, b: multiply(a, b), [(3, 4), (3, 4)], False),
        "scale": (lambda x: scale(x, -1.7), [(3, 4)], False),
        "linear": (lambda x, w, b: linear(x, w, b), [(3, 4), (4, 2), (2,)], False),
        "concat": (lambda a, b: concat([a, b], axis=-1), [(3, 2), (3, 4)], False),
        "sum_all": (lambda x: sum_all(x), [(3, 4)], False),
        "mean_all": (lambda x: mean_all(x), [(3, 4)], False),
        "max_pool": (lambda x: max_pool(x, axis=1), [(2, 5, 3)], False),
        "pick": (lambda x: pick(x, np.array([0, 2, 1])), [(3, 3)], False),
        "log_clamped": (lambda x: log_clamped(x, 1e-12), [(3, 4)], True),
        "softmax": (lambda x: softmax(x), [(3, 5)], False),
        "layer_norm": (lambda x, g, b: layer_norm(x, g, b), [(3, 5), (5,), (5,)], False),
        "tanh": (lambda x: tanh(x), [(3, 4)], False),
        "gelu": (lambda x: gelu(x), [(3, 4)], False),
        "dropout": (lambda x: dropout(x, 0.3, np.random.default_rng(7)), [(3, 4)], False),
    }

    def test_every_operation(self):
        """Relative error below 1e-4 for every input coordinate."""
        for seed, (name, (op, shapes, positive)) in enumerate(sorted(self.OPERATIONS.items())):
            for rng, inputs in _points(shapes, seed, positive):
                weights = Tensor(rng.normal(size=op(*inputs).shape))

                def loss():
                    return sum_all(multiply(op(*inputs), weights))

                with self.subTest(operation=name):
                    self.assertLess(finite_difference_check(loss, inputs), 1e-4)


if __name__ == '__main__':
    unittest.main(verbosity=2)
