"""Numeric building blocks: MLP forward/backward, pooling, losses, Adam."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cloudwire import nn


def make_mlp(widths, relu=None, batchnorm=None, seed=0, final_zero=False):
    L = len(widths) - 1
    spec = nn.MlpSpec(
        widths=tuple(widths),
        relu=tuple(relu) if relu is not None else (False,) * L,
        batchnorm=tuple(batchnorm) if batchnorm is not None else (False,) * L,
    )
    return nn.init_mlp(spec, np.random.default_rng(seed), final_zero=final_zero)


class TestMlpForward:
    def test_zero_weights_zero_bias_gives_zero(self):
        params = make_mlp([3, 4], final_zero=True)
        y, _ = nn.mlp_forward(params, np.ones((5, 3)))
        np.testing.assert_array_equal(y, 0.0)

    def test_identity_weights_relu(self):
        params = make_mlp([2, 2], relu=[True])
        params.W[0][...] = np.eye(2)
        params.b[0][...] = 0.0
        y, _ = nn.mlp_forward(params, np.array([[-1.0, 2.0]]))
        np.testing.assert_array_equal(y, [[0.0, 2.0]])

    def test_eval_mode_pure(self):
        params = make_mlp([3, 8, 8, 2], relu=[True, True, False], batchnorm=[True, True, False], seed=1)
        x = np.random.default_rng(2).normal(size=(7, 3))
        y1, _ = nn.mlp_forward(params, x, mode="eval")
        y2, _ = nn.mlp_forward(params, x, mode="eval")
        np.testing.assert_array_equal(y1, y2)

    def test_train_mode_batchnorm_standardizes(self):
        params = make_mlp([3, 6], batchnorm=[True], seed=3)
        x = np.random.default_rng(4).normal(size=(64, 3)) * 5 + 2
        y, _ = nn.mlp_forward(params, x, mode="train")
        np.testing.assert_allclose(y.mean(axis=0), 0.0, atol=1e-10)
        np.testing.assert_allclose(y.std(axis=0), 1.0, atol=1e-2)


class TestMlpBackward:
    def test_zero_upstream_gives_zero_grads(self):
        params = make_mlp([3, 5, 2], relu=[True, False], seed=5)
        x = np.random.default_rng(6).normal(size=(4, 3))
        y, cache = nn.mlp_forward(params, x, mode="train")
        grads, dx = nn.mlp_backward(params, cache, np.zeros_like(y))
        assert all(np.all(g == 0) for g in grads.values())
        np.testing.assert_array_equal(dx, 0.0)

    def test_single_linear_layer_closed_form(self):
        params = make_mlp([3, 2], seed=7)
        x = np.random.default_rng(8).normal(size=(6, 3))
        y, cache = nn.mlp_forward(params, x)
        dy = np.random.default_rng(9).normal(size=y.shape)
        grads, dx = nn.mlp_backward(params, cache, dy)
        np.testing.assert_allclose(grads["W0"], x.T @ dy, rtol=1e-12)
        np.testing.assert_allclose(grads["b0"], dy.sum(axis=0), rtol=1e-12)
        np.testing.assert_allclose(dx, dy @ params.W[0].T, rtol=1e-12)

    def test_finite_difference_two_layer(self):
        params = make_mlp([4, 8, 3], relu=[True, False], seed=10)
        x = np.random.default_rng(11).normal(size=(5, 4))
        target = np.random.default_rng(12).normal(size=(5, 3))
        arrays = params.named_arrays()

        def f():
            y, cache = nn.mlp_forward(params, x, mode="train")
            diff = y - target
            loss = float(0.5 * (diff**2).sum())
            grads, _ = nn.mlp_backward(params, cache, diff)
            return loss, grads

        worst = nn.gradient_check(f, arrays, rel_tol=1e-4)
        assert worst < 1e-4

    def test_finite_difference_with_batchnorm(self):
        params = make_mlp([3, 6, 2], relu=[True, False], batchnorm=[True, False], seed=13)
        x = np.random.default_rng(14).normal(size=(9, 3))
        arrays = params.named_arrays()

        def f():
            y, cache = nn.mlp_forward(params, x, mode="train")
            loss = float((y**2).sum())
            grads, _ = nn.mlp_backward(params, cache, 2.0 * y)
            return loss, grads

        assert nn.gradient_check(f, arrays, rel_tol=1e-4) < 1e-4

    def test_nonfinite_input_raises(self):
        params = make_mlp([3, 2], seed=15)
        x = np.array([[1.0, np.inf, 0.0]])
        with pytest.raises(nn.NonFiniteError):
            nn.mlp_forward(params, x)


class TestMaxpool:
    def test_single_row_identity(self):
        x = np.random.default_rng(16).normal(size=(1, 5))
        pooled, argmax = nn.maxpool_rows(x, 1)
        np.testing.assert_array_equal(pooled, x)

    def test_permutation_within_group_invariant(self):
        rng = np.random.default_rng(17)
        x = rng.normal(size=(12, 6))
        pooled, _ = nn.maxpool_rows(x, 4)
        for g in range(3):
            perm = rng.permutation(4)
            x[g * 4 : (g + 1) * 4] = x[g * 4 : (g + 1) * 4][perm]
        pooled2, _ = nn.maxpool_rows(x, 4)
        np.testing.assert_array_equal(pooled, pooled2)

    def test_gradient_routes_to_argmax(self):
        x = np.array([[1.0, 5.0], [3.0, 2.0], [0.0, 0.0], [4.0, 1.0]])
        pooled, argmax = nn.maxpool_rows(x, 2)
        np.testing.assert_array_equal(pooled, [[3.0, 5.0], [4.0, 1.0]])
        dy = np.array([[1.0, 2.0], [3.0, 4.0]])
        dx = nn.maxpool_rows_backward(dy, argmax, 4)
        expected = np.array([[0.0, 2.0], [1.0, 0.0], [0.0, 0.0], [3.0, 4.0]])
        np.testing.assert_array_equal(dx, expected)

    def test_finite_difference_away_from_ties(self):
        rng = np.random.default_rng(18)
        x = rng.normal(size=(8, 4))
        arrays = {"x": x}

        def f():
            pooled, argmax = nn.maxpool_rows(x, 4)
            loss = float((pooled**3).sum())
            dpooled = 3.0 * pooled**2
            return loss, {"x": nn.maxpool_rows_backward(dpooled, argmax, 8)}

        assert nn.gradient_check(f, arrays, rel_tol=1e-4) < 1e-4


class TestActivations:
    def test_sigmoid_clamped_range(self):
        z = np.array([-1000.0, 0.0, 1000.0])
        p, _ = nn.sigmoid_clamped(z)
        assert p[0] >= nn.PROB_CLAMP
        assert p[2] <= 1 - nn.PROB_CLAMP
        assert p[1] == 0.5

    def test_softmax_rows_sums_to_one(self):
        x = np.random.default_rng(19).normal(size=(6, 10)) * 30
        s = nn.softmax_rows(x)
        np.testing.assert_allclose(s.sum(axis=1), 1.0, rtol=1e-12)
        assert (s > 0).all()

    def test_softmax_of_zeros_uniform(self):
        s = nn.softmax_rows(np.zeros((3, 5)))
        np.testing.assert_array_equal(s, 0.2)

    def test_softmax_backward_finite_difference(self):
        rng = np.random.default_rng(20)
        x = rng.normal(size=(4, 6))
        w = rng.normal(size=(4, 6))
        arrays = {"x": x}

        def f():
            s = nn.softmax_rows(x)
            loss = float((s * w).sum())
            return loss, {"x": nn.softmax_rows_backward(s, w)}

        assert nn.gradient_check(f, arrays, rel_tol=1e-4) < 1e-4


class TestLosses:
    def test_bce_perfect_prediction_zero(self):
        loss, _ = nn.bce(np.array([1.0 - nn.PROB_CLAMP]), np.array([1.0]))
        assert loss == pytest.approx(0.0, abs=1e-6)

    def test_bce_matches_neg_log(self):
        p = np.array([0.9, 0.2])
        y = np.array([1.0, 0.0])
        loss, _ = nn.bce(p, y)
        assert loss == pytest.approx(-(np.log(0.9) + np.log(0.8)) / 2)

    def test_bce_gradient(self):
        p = np.array([0.3, 0.7])
        y = np.array([1.0, 0.0])
        _, dp = nn.bce(p, y)
        expected = (-y / p + (1 - y) / (1 - p)) / 2
        np.testing.assert_allclose(dp, expected, rtol=1e-12)

    def test_balanced_bce_equals_duplicated_plain_bce(self):
        # one positive, nine negatives; balancing equals replicating the
        # positive nine times in a plain mean BCE
        rng = np.random.default_rng(21)
        p = rng.uniform(0.05, 0.95, size=10)
        y = np.zeros(10)
        y[4] = 1.0
        balanced, _ = nn.balanced_bce(p, y)
        p_dup = np.concatenate([p, np.full(8, p[4])])
        y_dup = np.concatenate([y, np.ones(8)])
        plain, _ = nn.bce(p_dup, y_dup)
        assert balanced == pytest.approx(plain, abs=1e-9)

    def test_balanced_bce_single_class_warns(self):
        p = np.array([0.4, 0.6])
        y = np.ones(2)
        with pytest.warns(UserWarning):
            loss, dp = nn.balanced_bce(p, y)
        ref, dref = nn.bce(p, y)
        assert loss == pytest.approx(ref)

    def test_balanced_bce_gradient_finite_difference(self):
        rng = np.random.default_rng(22)
        p = rng.uniform(0.1, 0.9, size=8)
        y = np.array([1.0, 0, 0, 1, 0, 0, 0, 1])
        arrays = {"p": p}

        def f():
            loss, dp = nn.balanced_bce(p, y)
            return float(loss), {"p": dp}

        assert nn.gradient_check(f, arrays, rel_tol=1e-4) < 1e-4

    def test_mse_points_zero_at_target(self):
        v = np.random.default_rng(23).normal(size=(5, 3))
        loss, dv = nn.mse_points(v, v.copy())
        assert loss == 0.0
        np.testing.assert_array_equal(dv, 0.0)

    def test_mse_points_gradient(self):
        rng = np.random.default_rng(24)
        v = rng.normal(size=(4, 3))
        t = rng.normal(size=(4, 3))
        arrays = {"v": v}

        def f():
            loss, dv = nn.mse_points(v, t)
            return float(loss), {"v": dv}

        assert nn.gradient_check(f, arrays, rel_tol=1e-4) < 1e-4


class TestAdam:
    def test_first_step_is_signed_lr(self):
        w = {"w": np.array([1.0, -2.0, 3.0])}
        g = {"w": np.array([0.3, -0.7, 0.0001])}
        state = nn.AdamState(lr=0.01)
        before = w["w"].copy()
        nn.adam_step(w, g, state)
        # bias-corrected m/sqrt(v) equals sign(g) on the first step, up to
        # the epsilon guard in the denominator
        np.testing.assert_allclose(before - w["w"], 0.01 * np.sign(g["w"]), rtol=2e-4)

    def test_zero_gradient_unchanged(self):
        w = {"w": np.array([1.0, 2.0])}
        state = nn.AdamState(lr=0.1)
        nn.adam_step(w, {"w": np.zeros(2)}, state)
        np.testing.assert_array_equal(w["w"], [1.0, 2.0])

    def test_converges_on_quadratic(self):
        w = {"w": np.array([0.0])}
        state = nn.AdamState(lr=0.1)
        for _ in range(100):
            grad = {"w": 2.0 * (w["w"] - 3.0)}
            nn.adam_step(w, grad, state)
        assert abs(w["w"][0] - 3.0) < 0.1

    def test_missing_grad_key_untouched(self):
        w = {"a": np.array([1.0]), "b": np.array([2.0])}
        state = nn.AdamState(lr=0.1)
        nn.adam_step(w, {"a": np.array([1.0])}, state)
        assert w["a"][0] != 1.0
        assert w["b"][0] == 2.0

    def test_unknown_grad_key_raises(self):
        w = {"a": np.array([1.0])}
        state = nn.AdamState(lr=0.1)
        with pytest.raises(KeyError):
            nn.adam_step(w, {"zz": np.array([1.0])}, state)

    def test_nonfinite_grad_raises(self):
        w = {"a": np.array([1.0])}
        state = nn.AdamState(lr=0.1)
        with pytest.raises(nn.NonFiniteError):
            nn.adam_step(w, {"a": np.array([np.nan])}, state)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_step_size_bounded_by_lr(self, seed):
        rng = np.random.default_rng(seed)
        w = {"w": rng.normal(size=4)}
        before = w["w"].copy()
        state = nn.AdamState(lr=0.05)
        nn.adam_step(w, {"w": rng.normal(size=4) * 10}, state)
        # |update| <= lr / (1 - beta1) style bound; first step is exactly lr-scaled
        assert np.all(np.abs(w["w"] - before) <= 0.05 * 1.0001)
