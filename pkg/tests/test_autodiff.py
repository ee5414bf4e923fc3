import unittest

import numpy as np

from langcl.core import ops
from langcl.core.errors import GradientError, ShapeError
from langcl.core.gradcheck import analytic_grads, gradcheck
from langcl.core.tensor import Tape, Tensor, no_grad


def leaf(shape, seed=0):
    rng = np.random.default_rng(seed)
    return Tensor(rng.normal(size=shape), requires_grad=True)


class TestPrimitiveGradients(unittest.TestCase):
    """Every differentiable primitive against central differences."""

    def assertGradOk(self, fn, tensors, tol=1e-5):
        self.assertLess(gradcheck(fn, tensors), tol)

    def test_elementwise(self):
        """Pointwise ops compose and match finite differences."""
        a, b = leaf((3, 4), 1), leaf((3, 4), 2)
        self.assertGradOk(lambda: ops.sum_(ops.mul(ops.tanh(a), ops.sigmoid(b))), [a, b])
        self.assertGradOk(lambda: ops.sum_(ops.square(ops.sub(a, b))), [a, b])
        self.assertGradOk(lambda: ops.mean(ops.exp(ops.scale(a, 0.5))), [a])

    def test_log_of_positive_values(self):
        """Log gradient on inputs kept away from zero."""
        a = Tensor(np.random.default_rng(3).uniform(0.5, 2.0, size=(2, 3)), requires_grad=True)
        self.assertGradOk(lambda: ops.sum_(ops.log(a)), [a])

    def test_broadcast_add_reduces_to_bias_shape(self):
        """A broadcast bias receives the gradient summed over batch and time."""
        x, bias = leaf((2, 5, 3), 4), leaf((3,), 5)
        self.assertGradOk(lambda: ops.sum_(ops.square(ops.add(x, bias))), [x, bias])

    def test_batched_matmul(self):
        """A 3-d input times a 2-d weight differentiates in both operands."""
        x, w = leaf((2, 4, 3), 6), leaf((3, 5), 7)
        self.assertGradOk(lambda: ops.sum_(ops.tanh(ops.matmul(x, w))), [x, w])

    def test_softmax_family(self):
        """Softmax and log-softmax both pass a weighted-sum gradient check."""
        a = leaf((4, 6), 8)
        weights = ops.constant(np.random.default_rng(9).normal(size=(4, 6)))
        self.assertGradOk(lambda: ops.sum_(ops.mul(ops.softmax(a), weights)), [a])
        self.assertGradOk(lambda: ops.sum_(ops.mul(ops.log_softmax(a), weights)), [a])

    def test_concat_and_shift(self):
        """Feature concat followed by a time shift routes gradients back to both inputs."""
        a, b = leaf((2, 5, 2), 10), leaf((2, 5, 3), 11)
        self.assertGradOk(
            lambda: ops.sum_(ops.square(ops.shift_time(ops.concat([a, b]), 2))), [a, b]
        )

    def test_reused_intermediate_accumulates(self):
        """A node consumed twice must receive both upstream contributions."""
        a = leaf((3,), 12)

        def fn():
            h = ops.tanh(a)
            return ops.sum_(ops.mul(h, h))

        self.assertGradOk(fn, [a])


INSTANCES = 20


def weighted(out, rng):
    """Scalar loss with a random linear read-out, so every output element matters."""
    return ops.sum_(ops.mul(out, ops.constant(rng.normal(size=out.shape))))


def unary_case(op, positive=False):
    def build(seed):
        rng = np.random.default_rng(seed)
        shape = tuple(rng.integers(1, 5, size=rng.integers(1, 4)))
        data = rng.uniform(0.5, 2.0, size=shape) if positive else rng.normal(size=shape)
        a = Tensor(data, requires_grad=True)
        weights = ops.constant(rng.normal(size=shape))
        return (lambda: ops.sum_(ops.mul(op(a), weights))), [a]

    return build


def binary_case(op):
    def build(seed):
        rng = np.random.default_rng(seed)
        a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        b_shape = [(3, 4), (4,), (1, 4), (3, 1)][seed % 4]
        b = Tensor(rng.normal(size=b_shape), requires_grad=True)
        weights = ops.constant(rng.normal(size=(3, 4)))
        return (lambda: ops.sum_(ops.mul(op(a, b), weights))), [a, b]

    return build


def matmul_case(seed):
    rng = np.random.default_rng(seed)
    lead = tuple(rng.integers(1, 4, size=seed % 3))
    x = Tensor(rng.normal(size=(*lead, 3)), requires_grad=True)
    w = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
    weights = ops.constant(rng.normal(size=(*lead, 2)))
    return (lambda: ops.sum_(ops.mul(ops.matmul(x, w), weights))), [x, w]


def reduce_case(op):
    def build(seed):
        rng = np.random.default_rng(seed)
        a = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        axis = [None, 0, 1][seed % 3]
        if axis is None:
            return (lambda: ops.scale(op(a, None), 1.5)), [a]
        weights = ops.constant(rng.normal(size=(4,) if axis == 0 else (3,)))
        return (lambda: ops.sum_(ops.mul(op(a, axis), weights))), [a]

    return build


def concat_case(seed):
    rng = np.random.default_rng(seed)
    widths = rng.integers(1, 4, size=rng.integers(1, 4))
    parts = [Tensor(rng.normal(size=(2, int(w))), requires_grad=True) for w in widths]
    weights = ops.constant(rng.normal(size=(2, int(widths.sum()))))
    return (lambda: ops.sum_(ops.mul(ops.concat(parts), weights))), parts


def shift_case(seed):
    rng = np.random.default_rng(seed)
    a = Tensor(rng.normal(size=(2, 5, 3)), requires_grad=True)
    steps = int(rng.integers(0, 7))
    weights = ops.constant(rng.normal(size=(2, 5, 3)))
    return (lambda: ops.sum_(ops.mul(ops.shift_time(a, steps), weights))), [a]


def two_layer_case(seed):
    rng = np.random.default_rng(seed)
    x = ops.constant(rng.normal(size=(4, 3)))
    w1 = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
    b1 = Tensor(rng.normal(size=(5,)), requires_grad=True)
    w2 = Tensor(rng.normal(size=(5, 2)), requires_grad=True)
    weights = ops.constant(rng.normal(size=(4, 2)))

    def fn():
        hidden = ops.tanh(ops.add(ops.matmul(x, w1), b1))
        return ops.sum_(ops.mul(ops.log_softmax(ops.matmul(hidden, w2)), weights))

    return fn, [w1, b1, w2]


PRIMITIVE_CASES = {
    "add": binary_case(ops.add),
    "sub": binary_case(ops.sub),
    "mul": binary_case(ops.mul),
    "scale": unary_case(lambda a: ops.scale(a, -0.7)),
    "matmul": matmul_case,
    "tanh": unary_case(ops.tanh),
    "sigmoid": unary_case(ops.sigmoid),
    "square": unary_case(ops.square),
    "exp": unary_case(ops.exp),
    "log": unary_case(ops.log, positive=True),
    "sum": reduce_case(ops.sum_),
    "mean": reduce_case(ops.mean),
    "softmax": unary_case(ops.softmax),
    "log_softmax": unary_case(ops.log_softmax),
    "concat": concat_case,
    "shift_time": shift_case,
    "two_layer_net": two_layer_case,
}


class TestPrimitiveSweep(unittest.TestCase):
    """Seeded random instances of every primitive against central differences."""

    def test_every_primitive_on_random_instances(self):
        """Twenty instances per primitive stay within 1e-4 relative error."""
        for name, build in PRIMITIVE_CASES.items():
            for seed in range(INSTANCES):
                with self.subTest(primitive=name, seed=seed):
                    fn, tensors = build(seed)
                    self.assertLess(gradcheck(fn, tensors), 1e-4)

    def test_threshold_mask_straight_through_on_random_instances(self):
        """Forward is the hard mask; backward hands the upstream gradient through unchanged."""
        for seed in range(INSTANCES):
            rng = np.random.default_rng(seed)
            real = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
            threshold = float(rng.uniform(-0.5, 0.5))
            upstream = rng.normal(size=(3, 4))
            with Tape() as tape:
                mask = ops.threshold_mask(real, threshold)
                loss = ops.sum_(ops.mul(mask, ops.constant(upstream)))
            tape.backward(loss)
            np.testing.assert_array_equal(mask.data, (real.data > threshold).astype(float))
            np.testing.assert_array_equal(real.grad, upstream)

    def test_softmax_rows_sum_to_one(self):
        """Softmax rows sum to one, including rows with large logits."""
        rng = np.random.default_rng(0)
        for seed in range(INSTANCES):
            logits = rng.normal(scale=10.0 * (seed + 1), size=(4, 7))
            rows = ops.softmax(Tensor(logits)).data.sum(axis=-1)
            np.testing.assert_allclose(rows, np.ones(4), atol=1e-12)

    def test_backward_is_deterministic(self):
        """Two backward passes over the same graph give bitwise-equal gradients."""
        fn, tensors = two_layer_case(3)
        first = analytic_grads(fn, tensors)
        second = analytic_grads(fn, tensors)
        for a, b in zip(first, second, strict=True):
            np.testing.assert_array_equal(a, b)


class TestTape(unittest.TestCase):
    def test_backward_needs_scalar(self):
        """Backward from a non-scalar output is refused."""
        a = leaf((2, 2))
        with Tape() as tape:
            out = ops.tanh(a)
        with self.assertRaises(GradientError):
            tape.backward(out)

    def test_no_grad_records_nothing(self):
        """Ops under no_grad leave the tape empty."""
        a = leaf((2,))
        with Tape() as tape:
            with no_grad():
                ops.sum_(ops.square(a))
        self.assertEqual(len(tape), 0)

    def test_frozen_leaf_gets_no_gradient(self):
        """A tensor without requires_grad keeps grad None."""
        a = leaf((3,))
        frozen = Tensor(np.ones(3))
        with Tape() as tape:
            loss = ops.sum_(ops.mul(a, frozen))
        tape.backward(loss)
        self.assertIsNone(frozen.grad)
        np.testing.assert_allclose(a.grad, np.ones(3))

    def test_shape_mismatch_raises(self):
        """Incompatible shapes fail before any arithmetic."""
        with self.assertRaises(ShapeError):
            ops.add(leaf((2, 3)), leaf((4,)))

    def test_threshold_mask_passes_gradient_straight_through(self):
        """Below-threshold entries still get the upstream gradient."""
        real = Tensor(np.array([-1.0, 0.2, 3.0]), requires_grad=True)
        with Tape() as tape:
            mask = ops.threshold_mask(real, 0.5)
            loss = ops.sum_(ops.scale(mask, 2.0))
        tape.backward(loss)
        np.testing.assert_array_equal(mask.data, [0.0, 0.0, 1.0])
        np.testing.assert_allclose(real.grad, [2.0, 2.0, 2.0])


if __name__ == "__main__":
    unittest.main()
