"""Autodiff engine: forward oracles, gradient checks, and optimizer behavior."""

import math

import numpy as np
import pytest
from scipy.special import expit

import helpers
from tickdist.engine import (
    PROB_FLOOR,
    ParameterSet,
    Tape,
    Tensor,
    adam_step,
    add,
    attention_pool,
    causal_dilated_conv1d,
    cross_entropy,
    dropout,
    last_step,
    linear,
    lstm_forward,
    relu,
    residual_block,
    softmax,
    sum_all,
)


def naive_causal_conv(x, kernel, bias, dilation):
    """Direct quintuple-loop reference for the dilated causal convolution."""
    b_n, c_in, t_len = x.shape
    c_out, _, k = kernel.shape
    out = np.zeros((b_n, c_out, t_len))
    for b in range(b_n):
        for co in range(c_out):
            for t in range(t_len):
                acc = bias[co]
                for ci in range(c_in):
                    for j in range(k):
                        src = t - (k - 1 - j) * dilation
                        if src >= 0:
                            acc += kernel[co, ci, j] * x[b, ci, src]
                out[b, co, t] = acc
    return out


class TestConv:
    def test_hand_example_dilation_two(self):
        x = Tensor(np.array([[1.0, 2.0, 3.0, 4.0]]))
        kernel = Tensor(np.array([[[1.0, 1.0]]]))
        bias = Tensor(np.zeros(1))
        out = causal_dilated_conv1d(None, x, kernel, bias, dilation=2)
        np.testing.assert_allclose(out.values, [[1.0, 2.0, 4.0, 6.0]], atol=0)

    def test_identity_kernel(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.normal(size=(3, 7)))
        kernel = Tensor(np.eye(3)[:, :, None])
        bias = Tensor(np.zeros(3))
        out = causal_dilated_conv1d(None, x, kernel, bias, dilation=1)
        np.testing.assert_array_equal(out.values, x.values)

    def test_bias_broadcast(self):
        x = Tensor(np.zeros((2, 4)))
        kernel = Tensor(np.zeros((3, 2, 2)))
        bias = Tensor(np.array([1.0, -2.0, 0.5]))
        out = causal_dilated_conv1d(None, x, kernel, bias)
        np.testing.assert_array_equal(out.values, np.tile(bias.values[:, None], (1, 4)))

    @pytest.mark.parametrize("dilation", [1, 2, 3])
    def test_matches_naive_reference(self, dilation):
        rng = np.random.default_rng(dilation)
        x = rng.normal(size=(2, 3, 9))
        kernel = rng.normal(size=(4, 3, 3))
        bias = rng.normal(size=4)
        out = causal_dilated_conv1d(None, Tensor(x), Tensor(kernel), Tensor(bias), dilation)
        np.testing.assert_allclose(out.values, naive_causal_conv(x, kernel, bias, dilation), atol=1e-12)

    def test_batched_rows_match_single(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(3, 2, 6))
        kernel = Tensor(rng.normal(size=(2, 2, 2)))
        bias = Tensor(rng.normal(size=2))
        batched = causal_dilated_conv1d(None, Tensor(x), kernel, bias, 2)
        for b in range(3):
            single = causal_dilated_conv1d(None, Tensor(x[b]), kernel, bias, 2)
            np.testing.assert_array_equal(batched.values[b], single.values)

    def test_causality_bit_identity(self):
        rng = np.random.default_rng(8)
        x1 = rng.normal(size=(2, 3, 10))
        x2 = x1.copy()
        x2[:, :, 6] += 5.0
        kernel = Tensor(rng.normal(size=(4, 3, 3)))
        bias = Tensor(rng.normal(size=4))
        a = causal_dilated_conv1d(None, Tensor(x1), kernel, bias, 2)
        b = causal_dilated_conv1d(None, Tensor(x2), kernel, bias, 2)
        np.testing.assert_array_equal(a.values[:, :, :6], b.values[:, :, :6])
        assert not np.array_equal(a.values[:, :, 6], b.values[:, :, 6])

    def test_validation(self):
        x = Tensor(np.zeros((2, 4)))
        kernel = Tensor(np.zeros((3, 2, 2)))
        bias = Tensor(np.zeros(3))
        with pytest.raises(ValueError, match="dilation"):
            causal_dilated_conv1d(None, x, kernel, bias, dilation=0)
        with pytest.raises(ValueError, match="channels"):
            causal_dilated_conv1d(None, Tensor(np.zeros((5, 4))), kernel, bias)
        with pytest.raises(ValueError, match="bias"):
            causal_dilated_conv1d(None, x, kernel, Tensor(np.zeros(2)))
        with pytest.raises(ValueError, match="kernel"):
            causal_dilated_conv1d(None, x, Tensor(np.zeros((3, 2))), bias)

    def test_gradients(self):
        rng = np.random.default_rng(3)
        x = Tensor(rng.normal(size=(2, 2, 5)), requires_grad=True)
        kernel = Tensor(rng.normal(size=(3, 2, 2)), requires_grad=True)
        bias = Tensor(rng.normal(size=3), requires_grad=True)

        def loss(tape):
            return sum_all(tape, causal_dilated_conv1d(tape, x, kernel, bias, 2))

        assert helpers.finite_difference_max_err(loss, [x, kernel, bias]) < 1e-6

    def test_noncontiguous_input(self):
        rng = np.random.default_rng(9)
        base = rng.normal(size=(2, 6, 8))
        view = base[:, ::2, :]  # stride-2 channel view
        kernel = Tensor(rng.normal(size=(2, 3, 2)))
        bias = Tensor(rng.normal(size=2))
        out = causal_dilated_conv1d(None, Tensor(view), kernel, bias, 1)
        np.testing.assert_allclose(
            out.values, naive_causal_conv(np.ascontiguousarray(view), kernel.values, bias.values, 1), atol=1e-12
        )


class TestElementwise:
    def test_relu_values(self):
        out = relu(None, Tensor(np.array([-2.0, -0.5, 0.0, 0.5, 2.0])))
        np.testing.assert_array_equal(out.values, [0.0, 0.0, 0.0, 0.5, 2.0])

    def test_relu_grad(self):
        # probe values stay away from the kink at zero
        x = Tensor(np.array([-2.0, -0.5, 0.3, 0.5, 2.0]), requires_grad=True)

        def loss(tape):
            return sum_all(tape, relu(tape, x))

        assert helpers.finite_difference_max_err(loss, [x]) < 1e-6

    def test_dropout_eval_is_identity_object(self):
        x = Tensor(np.ones((3, 4)))
        assert dropout(None, x, 0.5, None, training=False) is x
        assert dropout(None, x, 0.0, np.random.default_rng(0), training=True) is x

    def test_dropout_training_scales_mask(self):
        rng = np.random.default_rng(0)
        x = Tensor(np.ones((200, 200)))
        out = dropout(None, x, 0.3, rng, training=True)
        vals = np.unique(out.values)
        keep = 1.0 / 0.7
        np.testing.assert_allclose(sorted(vals), [0.0, keep], atol=1e-12)
        assert abs(out.values.mean() - 1.0) < 0.01

    def test_dropout_needs_rng_in_training(self):
        with pytest.raises(ValueError, match="generator"):
            dropout(None, Tensor(np.ones(3)), 0.5, None, training=True)

    def test_dropout_rate_validation(self):
        for bad in (-0.1, 1.0):
            with pytest.raises(ValueError):
                dropout(None, Tensor(np.ones(3)), bad, None, training=False)

    def test_add_shape_mismatch(self):
        with pytest.raises(ValueError):
            add(None, Tensor(np.ones(3)), Tensor(np.ones(4)))

    def test_last_step_selects_final_column(self):
        x = Tensor(np.arange(12.0).reshape(2, 2, 3), requires_grad=True)
        out = last_step(None, x)
        np.testing.assert_array_equal(out.values, [[2.0, 5.0], [8.0, 11.0]])

        def loss(tape):
            return sum_all(tape, last_step(tape, x))

        assert helpers.finite_difference_max_err(loss, [x]) < 1e-6


class TestLinear:
    def test_values(self):
        x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]))
        w = Tensor(np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]))
        b = Tensor(np.array([0.0, 10.0, -1.0]))
        out = linear(None, x, w, b)
        np.testing.assert_array_equal(out.values, [[1.0, 12.0, 2.0], [3.0, 14.0, 6.0]])

    def test_vector_input(self):
        x = Tensor(np.array([1.0, 2.0]))
        w = Tensor(np.array([[2.0, 3.0]]))
        b = Tensor(np.array([1.0]))
        out = linear(None, x, w, b)
        assert out.values.shape == (1,)
        assert out.values[0] == 9.0

    def test_feature_mismatch(self):
        with pytest.raises(ValueError):
            linear(None, Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))), Tensor(np.ones(4)))

    def test_gradients(self):
        rng = np.random.default_rng(4)
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        w = Tensor(rng.normal(size=(2, 4)), requires_grad=True)
        b = Tensor(rng.normal(size=2), requires_grad=True)

        def loss(tape):
            return sum_all(tape, linear(tape, x, w, b))

        assert helpers.finite_difference_max_err(loss, [x, w, b]) < 1e-6


class TestSoftmax:
    def test_uniform_for_equal_logits(self):
        out = softmax(None, Tensor(np.zeros((2, 5))))
        np.testing.assert_allclose(out.values, np.full((2, 5), 0.2), atol=1e-15)

    def test_single_elevated_logit(self):
        z = np.array([0.0, 0.0, math.log(6.0), 0.0, 0.0])
        out = softmax(None, Tensor(z))
        np.testing.assert_allclose(out.values, [0.1, 0.1, 0.6, 0.1, 0.1], atol=1e-12)

    def test_shift_invariance(self):
        rng = np.random.default_rng(1)
        z = rng.normal(size=(4, 5))
        a = softmax(None, Tensor(z)).values
        b = softmax(None, Tensor(z + 123.456)).values
        np.testing.assert_allclose(a, b, atol=1e-13)
        # a shift that is exact in floating point gives bit-identical output
        c = softmax(None, Tensor(z + 1024.0)).values
        d = softmax(None, Tensor((z + 1024.0) + 2048.0)).values
        np.testing.assert_allclose(c, d, atol=1e-13)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(2)
        out = softmax(None, Tensor(rng.normal(size=(50, 5)) * 30.0))
        np.testing.assert_allclose(out.values.sum(axis=1), np.ones(50), atol=1e-12)

    def test_extreme_logits_stay_finite(self):
        out = softmax(None, Tensor(np.array([1e4, 0.0, -1e4])))
        assert np.isfinite(out.values).all()
        assert abs(out.values.sum() - 1.0) < 1e-12

    def test_nonfinite_logits_rejected(self):
        with pytest.raises(ValueError):
            softmax(None, Tensor(np.array([np.nan, 0.0])))

    def test_gradients(self):
        rng = np.random.default_rng(6)
        z = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
        weights = rng.normal(size=(3, 5))

        def loss(tape):
            p = softmax(tape, z)
            return sum_all(tape, Tensor(0.0)) if p is None else _weighted_sum(tape, p, weights)

        assert helpers.finite_difference_max_err(loss, [z]) < 1e-6


def _weighted_sum(tape, t: Tensor, weights: np.ndarray) -> Tensor:
    """Fixed-weight contraction used to probe gradients of non-scalar ops."""
    out = Tensor((t.values * weights).sum(), requires_grad=t.requires_grad)

    def backward(grad):
        if t.requires_grad:
            t.accumulate_grad(weights * float(grad))

    if tape is not None and out.requires_grad:
        tape.record(out, backward)
    return out


class TestCrossEntropy:
    def test_uniform_prediction_is_log5(self):
        probs = Tensor(np.full((3, 5), 0.2))
        targets = np.eye(5)[[0, 2, 4]]
        loss = cross_entropy(None, probs, targets)
        assert abs(float(loss.values) - math.log(5.0)) < 1e-12

    def test_single_row_confidence(self):
        probs = Tensor(np.array([0.1, 0.1, 0.6, 0.1, 0.1]))
        loss = cross_entropy(None, probs, np.eye(5)[2])
        assert abs(float(loss.values) - (-math.log(0.6))) < 1e-12
        assert abs(float(loss.values) - 0.5108256) < 1e-7

    def test_mean_over_rows(self):
        probs = Tensor(np.array([[0.2] * 5, [0.1, 0.1, 0.6, 0.1, 0.1]]))
        targets = np.eye(5)[[1, 2]]
        loss = cross_entropy(None, probs, targets)
        expect = (math.log(5.0) - math.log(0.6)) / 2.0
        assert abs(float(loss.values) - expect) < 1e-12
        assert abs(float(loss.values) - 1.0601) < 1e-4

    def test_zero_probability_is_floored(self):
        probs = Tensor(np.array([0.0, 1.0, 0.0, 0.0, 0.0]))
        loss = cross_entropy(None, probs, np.eye(5)[0])
        assert float(loss.values) == -math.log(PROB_FLOOR)

    def test_target_validation(self):
        probs = Tensor(np.full((1, 5), 0.2))
        for bad in (np.full((1, 5), 0.2), np.zeros((1, 5)), np.ones((1, 5))):
            with pytest.raises(ValueError, match="one-hot"):
                cross_entropy(None, probs, bad)
        with pytest.raises(ValueError, match="mismatch"):
            cross_entropy(None, probs, np.eye(4)[[0]])

    def test_softmax_grad_identity(self):
        # d(mean CE)/d(logits) collapses to (softmax - onehot) / n
        rng = np.random.default_rng(7)
        z = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
        targets = np.eye(5)[[0, 3, 2, 2]]
        tape = Tape()
        p = softmax(tape, z)
        loss = cross_entropy(tape, p, targets)
        tape.backward(loss)
        np.testing.assert_allclose(z.grad, (p.values - targets) / 4.0, atol=1e-12)

    def test_softmax_grad_finite_difference(self):
        rng = np.random.default_rng(8)
        z = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
        targets = np.eye(5)[[1, 4, 0]]

        def loss(tape):
            return cross_entropy(tape, softmax(tape, z), targets)

        assert helpers.finite_difference_max_err(loss, [z]) < 1e-6


class TestAttention:
    def test_single_column_gets_full_weight(self):
        h = Tensor(np.array([[3.0], [4.0]]))
        w = Tensor(np.array([[0.5, -0.2]]))
        v = Tensor(np.array([1.0]))
        ctx, wts = attention_pool(None, h, w, v)
        np.testing.assert_allclose(wts, [1.0], atol=0)
        np.testing.assert_array_equal(ctx.values, [3.0, 4.0])

    def test_identical_columns_uniform_weights(self):
        h = Tensor(np.tile(np.array([[1.0], [2.0]]), (1, 6)))
        w = Tensor(np.array([[0.3, 0.7]]))
        v = Tensor(np.array([2.0]))
        ctx, wts = attention_pool(None, h, w, v)
        np.testing.assert_allclose(wts, np.full(6, 1.0 / 6.0), atol=1e-12)
        np.testing.assert_allclose(ctx.values, [1.0, 2.0], atol=1e-12)

    def test_zero_score_vector_averages(self):
        rng = np.random.default_rng(2)
        hv = rng.normal(size=(3, 5))
        h = Tensor(hv)
        w = Tensor(rng.normal(size=(2, 3)))
        v = Tensor(np.zeros(2))
        ctx, wts = attention_pool(None, h, w, v)
        np.testing.assert_allclose(wts, np.full(5, 0.2), atol=1e-12)
        np.testing.assert_allclose(ctx.values, hv.mean(axis=1), atol=1e-12)

    def test_weights_form_distribution(self):
        rng = np.random.default_rng(3)
        h = Tensor(rng.normal(size=(2, 4, 7)))
        w = Tensor(rng.normal(size=(3, 4)))
        v = Tensor(rng.normal(size=3))
        _, wts = attention_pool(None, h, w, v)
        assert wts.shape == (2, 7)
        assert (wts >= 0.0).all()
        np.testing.assert_allclose(wts.sum(axis=1), np.ones(2), atol=1e-12)

    def test_shape_validation(self):
        with pytest.raises(ValueError):
            attention_pool(None, Tensor(np.ones((3, 4))), Tensor(np.ones((2, 5))), Tensor(np.ones(2)))
        with pytest.raises(ValueError):
            attention_pool(None, Tensor(np.ones((3, 4))), Tensor(np.ones((2, 3))), Tensor(np.ones(3)))

    def test_gradients(self):
        rng = np.random.default_rng(4)
        h = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
        w = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
        v = Tensor(rng.normal(size=2), requires_grad=True)

        def loss(tape):
            ctx, _ = attention_pool(tape, h, w, v)
            return sum_all(tape, ctx)

        assert helpers.finite_difference_max_err(loss, [h, w, v]) < 1e-6


class TestLstm:
    def test_zero_weights_give_zero_output(self):
        x = Tensor(np.random.default_rng(0).normal(size=(3, 6)))
        wx = Tensor(np.zeros((8, 3)))
        wh = Tensor(np.zeros((8, 2)))
        b = Tensor(np.zeros(8))
        out = lstm_forward(None, x, wx, wh, b)
        np.testing.assert_array_equal(out.values, np.zeros((2, 6)))

    def test_single_step_hand_computation(self):
        rng = np.random.default_rng(1)
        h = 3
        xv = rng.normal(size=(4, 1))
        wx = rng.normal(size=(4 * h, 4))
        wh = rng.normal(size=(4 * h, h))
        b = rng.normal(size=4 * h)
        out = lstm_forward(None, Tensor(xv), Tensor(wx), Tensor(wh), Tensor(b))
        pre = wx @ xv[:, 0] + b  # h0 = 0 so the hidden product vanishes
        i = expit(pre[:h])
        f = expit(pre[h : 2 * h])
        g = np.tanh(pre[2 * h : 3 * h])
        o = expit(pre[3 * h :])
        c = i * g
        expect = o * np.tanh(c)
        np.testing.assert_allclose(out.values[:, 0], expect, atol=1e-12)
        assert f.shape == (h,)  # forget gate exists even though c0 = 0

    def test_two_step_recursion(self):
        rng = np.random.default_rng(2)
        h = 2
        xv = rng.normal(size=(3, 2))
        wx = rng.normal(size=(4 * h, 3))
        wh = rng.normal(size=(4 * h, h))
        b = rng.normal(size=4 * h)
        out = lstm_forward(None, Tensor(xv), Tensor(wx), Tensor(wh), Tensor(b))
        h_prev = np.zeros(h)
        c_prev = np.zeros(h)
        for t in range(2):
            pre = wx @ xv[:, t] + wh @ h_prev + b
            i = expit(pre[:h])
            f = expit(pre[h : 2 * h])
            g = np.tanh(pre[2 * h : 3 * h])
            o = expit(pre[3 * h :])
            c_prev = f * c_prev + i * g
            h_prev = o * np.tanh(c_prev)
            np.testing.assert_allclose(out.values[:, t], h_prev, atol=1e-12)

    def test_causality_bit_identity(self):
        rng = np.random.default_rng(3)
        xa = rng.normal(size=(2, 3, 8))
        xb = xa.copy()
        xb[:, :, 5] -= 2.0
        wx = Tensor(rng.normal(size=(8, 3)))
        wh = Tensor(rng.normal(size=(8, 2)))
        b = Tensor(rng.normal(size=8))
        a = lstm_forward(None, Tensor(xa), wx, wh, b)
        out_b = lstm_forward(None, Tensor(xb), wx, wh, b)
        np.testing.assert_array_equal(a.values[:, :, :5], out_b.values[:, :, :5])
        assert not np.array_equal(a.values[:, :, 5], out_b.values[:, :, 5])

    def test_batched_rows_match_single(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(3, 2, 5))
        wx = Tensor(rng.normal(size=(8, 2)))
        wh = Tensor(rng.normal(size=(8, 2)))
        b = Tensor(rng.normal(size=8))
        batched = lstm_forward(None, Tensor(x), wx, wh, b)
        for i in range(3):
            single = lstm_forward(None, Tensor(x[i]), wx, wh, b)
            np.testing.assert_allclose(batched.values[i], single.values, atol=1e-14)

    def test_shape_validation(self):
        with pytest.raises(ValueError):
            lstm_forward(None, Tensor(np.ones((3, 4))), Tensor(np.ones((7, 3))), Tensor(np.ones((7, 1))), Tensor(np.ones(7)))
        with pytest.raises(ValueError):
            lstm_forward(None, Tensor(np.ones((3, 4))), Tensor(np.ones((8, 2))), Tensor(np.ones((8, 2))), Tensor(np.ones(8)))

    def test_gradients(self):
        rng = np.random.default_rng(5)
        x = Tensor(rng.normal(size=(2, 2, 4)), requires_grad=True)
        wx = Tensor(rng.normal(size=(12, 2)) * 0.5, requires_grad=True)
        wh = Tensor(rng.normal(size=(12, 3)) * 0.5, requires_grad=True)
        b = Tensor(rng.normal(size=12) * 0.5, requires_grad=True)

        def loss(tape):
            return sum_all(tape, lstm_forward(tape, x, wx, wh, b))

        assert helpers.finite_difference_max_err(loss, [x, wx, wh, b]) < 1e-5


class TestResidualBlock:
    def test_zero_filters_reduce_to_relu_identity(self):
        rng = np.random.default_rng(0)
        xv = rng.normal(size=(3, 6))
        x = Tensor(xv)
        zero_w = Tensor(np.zeros((3, 3, 2)))
        zero_b = Tensor(np.zeros(3))
        out = residual_block(None, x, zero_w, zero_b, zero_w, zero_b, dilation=1)
        np.testing.assert_array_equal(out.values, np.maximum(xv, 0.0))

    def test_channel_change_requires_skip(self):
        x = Tensor(np.ones((2, 5)))
        w1 = Tensor(np.zeros((4, 2, 2)))
        b1 = Tensor(np.zeros(4))
        w2 = Tensor(np.zeros((4, 4, 2)))
        with pytest.raises(ValueError, match="skip"):
            residual_block(None, x, w1, b1, w2, Tensor(np.zeros(4)), dilation=1)

    def test_skip_projection_path(self):
        rng = np.random.default_rng(1)
        x = Tensor(rng.normal(size=(2, 5)), requires_grad=True)
        w1 = Tensor(rng.normal(size=(4, 2, 2)) * 0.3, requires_grad=True)
        b1 = Tensor(np.zeros(4), requires_grad=True)
        w2 = Tensor(rng.normal(size=(4, 4, 2)) * 0.3, requires_grad=True)
        b2 = Tensor(np.zeros(4), requires_grad=True)
        sw = Tensor(rng.normal(size=(4, 2, 1)) * 0.3, requires_grad=True)
        sb = Tensor(np.zeros(4), requires_grad=True)

        def loss(tape):
            out = residual_block(tape, x, w1, b1, w2, b2, dilation=2, skip_w=sw, skip_b=sb)
            return sum_all(tape, out)

        assert helpers.finite_difference_max_err(loss, [x, w1, w2, sw]) < 1e-5


class TestTapeSemantics:
    def test_non_scalar_loss_rejected(self):
        tape = Tape()
        x = Tensor(np.ones(3), requires_grad=True)
        out = relu(tape, x)
        with pytest.raises(ValueError, match="scalar"):
            tape.backward(out)

    def test_leaf_gradients_accumulate_across_backward_calls(self):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        tape = Tape()
        loss = sum_all(tape, relu(tape, x))
        tape.backward(loss)
        first = x.grad.copy()
        tape.backward(loss)
        np.testing.assert_array_equal(x.grad, 2.0 * first)

    def test_forward_without_tape_matches(self):
        rng = np.random.default_rng(6)
        x = Tensor(rng.normal(size=(2, 3, 7)), requires_grad=True)
        k = Tensor(rng.normal(size=(3, 3, 2)), requires_grad=True)
        b = Tensor(rng.normal(size=3), requires_grad=True)
        with_tape = causal_dilated_conv1d(Tape(), x, k, b, 2)
        without = causal_dilated_conv1d(None, x, k, b, 2)
        np.testing.assert_array_equal(with_tape.values, without.values)

    def test_diamond_reuse_sums_branches(self):
        # y = sum(x) + sum(x): both branches must contribute
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        tape = Tape()
        a = sum_all(tape, x)
        b = sum_all(tape, x)
        total = add(tape, a, b)
        tape.backward(total)
        np.testing.assert_array_equal(x.grad, [2.0, 2.0])


class TestParameterSetAndAdam:
    def test_duplicate_name_rejected(self):
        ps = ParameterSet()
        ps.add("w", np.zeros(2))
        with pytest.raises(ValueError):
            ps.add("w", np.zeros(2))

    def test_value_dict_round_trip(self):
        ps = ParameterSet()
        ps.add("a", np.arange(3.0))
        ps.add("b", np.eye(2))
        snap = ps.value_dict()
        ps["a"].values += 10.0
        ps.load_value_dict(snap)
        np.testing.assert_array_equal(ps["a"].values, np.arange(3.0))

    def test_load_shape_mismatch(self):
        ps = ParameterSet()
        ps.add("a", np.zeros(3))
        with pytest.raises(ValueError):
            ps.load_value_dict({"a": np.zeros(4)})
        with pytest.raises(KeyError):
            ps.load_value_dict({})

    def test_first_step_magnitude_is_learning_rate(self):
        ps = ParameterSet()
        t = ps.add("w", np.array([1.0, -2.0]))
        t.grad = np.array([0.5, -3.0])
        adam_step(ps, learning_rate=1e-3)
        delta = t.values - np.array([1.0, -2.0])
        # bias correction makes the first step lr * sign(g) up to eps rounding
        np.testing.assert_allclose(np.abs(delta), [1e-3, 1e-3], rtol=1e-4)
        assert delta[0] < 0 and delta[1] > 0

    def test_zero_gradient_is_a_no_op(self):
        ps = ParameterSet()
        t = ps.add("w", np.array([1.0, 2.0]))
        t.grad = np.zeros(2)
        adam_step(ps, learning_rate=0.1)
        np.testing.assert_array_equal(t.values, [1.0, 2.0])

    def test_missing_gradient_rejected(self):
        ps = ParameterSet()
        ps.add("w", np.zeros(2))
        with pytest.raises(ValueError, match="gradient"):
            adam_step(ps, 1e-3)

    def test_gradients_cleared_after_step(self):
        ps = ParameterSet()
        t = ps.add("w", np.zeros(2))
        t.grad = np.ones(2)
        adam_step(ps, 1e-3)
        assert t.grad is None

    def test_update_sequence_deterministic(self):
        def run():
            ps = ParameterSet()
            t = ps.add("w", np.array([0.3, -0.7, 1.1]))
            rng = np.random.default_rng(11)
            for _ in range(25):
                t.grad = rng.normal(size=3)
                adam_step(ps, 3e-3)
            return t.values.copy()

        np.testing.assert_array_equal(run(), run())

    def test_constant_gradient_decreases_quadratic(self):
        # minimize 0.5 * w^2 by feeding grad = w; loss must shrink
        ps = ParameterSet()
        t = ps.add("w", np.array([5.0]))
        for _ in range(400):
            t.grad = t.values.copy()
            adam_step(ps, 5e-2)
        assert abs(t.values[0]) < 1.0
