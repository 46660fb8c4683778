"""Reverse-mode gradients checked against central differences and analytics.

Every kernel gets an isolated 64-bit check at h=1e-5 with elementwise
relative error at most 1e-4, plus composed-graph checks of depth >= 10.
"""

import numpy as np
import pytest

from helpers import numerical_gradient, rel_err

from hatnet.tensor import (
    ContractError,
    GradTape,
    NumericError,
    Tensor,
    activation,
    avg_pool2d,
    backward,
    conv2d,
    cross_entropy_logits,
    finite_diff_gradient,
    gelu,
    layer_norm,
    matmul,
    reduce_mean,
    reduce_sum,
    reshape,
    scale,
    silu,
    softmax_rows,
    transpose,
)

F64 = np.float64


def check_gradient(f, *tensors, tol=1e-4, h=1e-5):
    """Tape gradient of scalar f(*tensors) vs central differences, per input."""
    with GradTape() as tape:
        tape.watch(*tensors)
        loss = f(*tensors)
    grads = backward(loss, tape)
    for i, t in enumerate(tensors):
        def loss_at(arr, i=i):
            args = [Tensor(x.data, dtype=F64) for x in tensors]
            args[i] = Tensor(arr, dtype=F64)
            return f(*args).item()

        numeric = numerical_gradient(loss_at, t.data.copy(), h)
        err = rel_err(grads[t].data, numeric)
        assert err <= tol, f"input {i}: rel err {err:.3e} > {tol}"


def t64(rng, *shape):
    return Tensor(rng.standard_normal(shape), dtype=F64)


class TestBackwardBasics:
    def test_sum_gradient_is_ones(self, rng):
        x = t64(rng, 3, 4)
        with GradTape() as tape:
            tape.watch(x)
            loss = reduce_sum(x)
        grads = backward(loss, tape)
        assert np.array_equal(grads[x].data, np.ones((3, 4)))

    def test_quadratic_gradient_is_x(self, rng):
        x = t64(rng, 5)
        with GradTape() as tape:
            tape.watch(x)
            loss = scale(reduce_sum(x * x), 0.5)
        grads = backward(loss, tape)
        assert np.allclose(grads[x].data, x.data, atol=1e-12)

    def test_unused_parameter_gets_zeros(self, rng):
        x, unused = t64(rng, 2), t64(rng, 3, 3)
        with GradTape() as tape:
            tape.watch(x, unused)
            loss = reduce_sum(x)
        grads = backward(loss, tape)
        assert np.array_equal(grads[unused].data, np.zeros((3, 3)))

    def test_non_scalar_loss_rejected(self, rng):
        x = t64(rng, 2)
        with GradTape() as tape:
            tape.watch(x)
            y = x * x
        with pytest.raises(ContractError, match="scalar"):
            backward(y, tape)

    def test_fanout_accumulates_additively(self, rng):
        x = t64(rng, 4)
        with GradTape() as tape:
            tape.watch(x)
            loss = reduce_sum(x + x)
        grads = backward(loss, tape)
        assert np.array_equal(grads[x].data, np.full(4, 2.0))

    def test_tape_scoping_restores_outer(self, rng):
        x = t64(rng, 2)
        with GradTape() as outer:
            outer.watch(x)
            y1 = x * x
            with GradTape() as inner:
                inner.watch(x)
                reduce_sum(x + x)
            loss = reduce_sum(y1)
        grads = backward(loss, outer)
        # the inner tape's ops must not leak into the outer gradient
        assert np.allclose(grads[x].data, 2.0 * x.data)

    def test_no_tape_records_nothing(self, rng):
        x = t64(rng, 2)
        tape = GradTape()
        _ = x * x
        assert len(tape) == 0


class TestFiniteDifferenceOracle:
    def test_linear_coordinate(self):
        theta = Tensor(np.array([2.0, 5.0, -1.0]), dtype=F64)
        grad = finite_diff_gradient(lambda t: t.data[0], theta)
        assert np.allclose(grad.data, [1.0, 0.0, 0.0], atol=1e-9)

    def test_square_at_three(self):
        theta = Tensor(np.array([3.0]), dtype=F64)
        grad = finite_diff_gradient(lambda t: float(t.data[0] ** 2), theta)
        assert abs(grad.data[0] - 6.0) <= 1e-6

    def test_softmax_jvp_matches_analytic_jacobian(self, rng):
        v = rng.standard_normal(4)
        theta = Tensor(rng.standard_normal(4), dtype=F64)

        def f(t):
            return float(softmax_rows(t).data @ v)

        numeric = finite_diff_gradient(f, theta).data
        s = softmax_rows(theta).data
        jacobian = np.diag(s) - np.outer(s, s)
        assert rel_err(numeric, jacobian @ v) <= 1e-6

    def test_step_must_be_positive(self):
        with pytest.raises(ContractError):
            finite_diff_gradient(lambda t: 0.0, Tensor([1.0], dtype=F64), h=0.0)

    def test_non_finite_evaluation_raises(self):
        with pytest.raises(NumericError):
            finite_diff_gradient(lambda t: float("nan"), Tensor([1.0], dtype=F64))


class TestKernelGradients:
    def test_matmul(self, rng):
        a, b = t64(rng, 3, 4), t64(rng, 4, 2)
        check_gradient(lambda a, b: reduce_sum(matmul(a, b) * matmul(a, b)), a, b)

    def test_batched_matmul(self, rng):
        a, b = t64(rng, 2, 3, 4), t64(rng, 2, 4, 3)
        c = t64(rng, 2, 3, 3)
        check_gradient(lambda a, b: reduce_sum(matmul(a, b) * c), a, b)

    def test_softmax_rows(self, rng):
        x = t64(rng, 3, 5)
        v = t64(rng, 3, 5)
        check_gradient(lambda x: reduce_sum(softmax_rows(x) * v), x)

    def test_avg_pool(self, rng):
        x = t64(rng, 2, 4, 4, 3)
        check_gradient(lambda x: reduce_sum(avg_pool2d(x, 2) * avg_pool2d(x, 2)), x)

    def test_conv_dense(self, rng):
        x, w, b = t64(rng, 2, 5, 5, 3), t64(rng, 3, 3, 3, 4), t64(rng, 4)
        check_gradient(lambda x, w, b: reduce_sum(conv2d(x, w, b) * conv2d(x, w, b)), x, w, b)

    def test_conv_strided(self, rng):
        x, w = t64(rng, 1, 6, 6, 2), t64(rng, 3, 3, 2, 3)
        check_gradient(lambda x, w: reduce_sum(conv2d(x, w, stride=2) * conv2d(x, w, stride=2)), x, w)

    def test_conv_depthwise(self, rng):
        x, w, b = t64(rng, 1, 4, 4, 3), t64(rng, 3, 3, 1, 3), t64(rng, 3)
        check_gradient(
            lambda x, w, b: reduce_sum(conv2d(x, w, b, groups=3) * conv2d(x, w, b, groups=3)), x, w, b
        )

    def test_conv_grouped(self, rng):
        x, w = t64(rng, 1, 4, 4, 4), t64(rng, 3, 3, 2, 6)
        check_gradient(lambda x, w: reduce_sum(conv2d(x, w, groups=2) * conv2d(x, w, groups=2)), x, w)

    def test_layer_norm(self, rng):
        x, g, b = t64(rng, 3, 6), t64(rng, 6), t64(rng, 6)
        v = t64(rng, 3, 6)
        check_gradient(lambda x, g, b: reduce_sum(layer_norm(x, g, b) * v), x, g, b)

    def test_silu(self, rng):
        x = t64(rng, 4, 4)
        check_gradient(lambda x: reduce_sum(silu(x) * silu(x)), x)

    def test_gelu(self, rng):
        x = t64(rng, 4, 4)
        check_gradient(lambda x: reduce_sum(gelu(x) * gelu(x)), x)

    def test_elementwise_and_shape_ops(self, rng):
        x, y = t64(rng, 2, 6), t64(rng, 2, 6)

        def f(x, y):
            z = (x + y) * (x - y)
            z = reshape(z, (3, 4))
            z = transpose(z, (1, 0))
            return reduce_mean(z * z)

        check_gradient(f, x, y)

    def test_broadcast_add_bias(self, rng):
        x, b = t64(rng, 3, 5), t64(rng, 5)
        check_gradient(lambda x, b: reduce_sum((x + b) * (x + b)), x, b)

    def test_cross_entropy(self, rng):
        logits = t64(rng, 4, 3)
        labels = np.array([0, 2, 1, 1])
        check_gradient(lambda z: cross_entropy_logits(z, labels), logits)

    def test_reduce_mean_keepdims(self, rng):
        x = t64(rng, 3, 4)
        check_gradient(lambda x: reduce_sum(reduce_mean(x, axis=1, keepdims=True) * x), x)


class TestComposedGraphs:
    def test_depth_ten_composition(self, rng):
        # conv -> norm -> act -> pool -> reshape -> matmul -> softmax ->
        # scale -> mul -> mean: ten recorded kernels end to end
        x = t64(rng, 1, 4, 4, 2)
        w = t64(rng, 3, 3, 2, 2)
        g, b = t64(rng, 2), t64(rng, 2)
        wm = t64(rng, 2, 3)

        def f(x, w, g, b, wm):
            y = conv2d(x, w)
            y = layer_norm(y, g, b)
            y = activation(y, "silu")
            y = avg_pool2d(y, 2)
            y = reshape(y, (4, 2))
            y = matmul(y, wm)
            y = softmax_rows(y)
            y = scale(y, 3.0)
            y = y * y
            return reduce_mean(y)

        check_gradient(f, x, w, g, b, wm)

    def test_attention_shaped_composition(self, rng):
        x = t64(rng, 2, 4, 6)
        wq, wk, wv = t64(rng, 6, 6), t64(rng, 6, 6), t64(rng, 6, 6)

        def f(x, wq, wk, wv):
            q = matmul(x, wq)
            k = matmul(x, wk)
            v = matmul(x, wv)
            scores = scale(matmul(q, transpose(k, (0, 2, 1))), 1.0 / np.sqrt(6.0))
            att = softmax_rows(scores)
            out = matmul(att, v)
            return reduce_mean(out * out)

        check_gradient(f, x, wq, wk, wv, tol=1e-4)

    def test_finite_diff_agrees_with_tape_on_full_tensor(self, rng):
        x = Tensor(rng.standard_normal((3, 3)), dtype=F64)
        v = rng.standard_normal((3, 3))

        def f_tensor(t):
            return reduce_sum(silu(t) * Tensor(v, dtype=F64))

        with GradTape() as tape:
            tape.watch(x)
            loss = f_tensor(x)
        analytic = backward(loss, tape)[x].data
        numeric = finite_diff_gradient(f_tensor, x).data
        assert rel_err(analytic, numeric) <= 1e-6
