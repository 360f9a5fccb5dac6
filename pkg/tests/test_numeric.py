import math

import numpy as np
import pytest

from kgax.errors import DivergenceError, KgaxError
from kgax.numeric import (
    AdamState,
    adam_step,
    affine,
    affine_grad,
    dot,
    finite_diff_gradcheck,
    hadamard,
    leaky_relu,
    leaky_relu_grad,
    sigmoid,
    softplus,
    stable_softmax,
    xavier_init,
)


class TestXavier:
    def test_bound_respected(self):
        rng = np.random.default_rng(0)
        w = xavier_init((40, 60), rng)
        bound = math.sqrt(6.0 / (60 + 40))
        assert np.all(np.abs(w) <= bound)

    def test_large_sample_centered(self):
        rng = np.random.default_rng(1)
        w = xavier_init((1000, 1000), rng)
        assert abs(float(w.mean())) < 0.005

    def test_deterministic_per_seed(self):
        a = xavier_init((5, 3), np.random.default_rng(42))
        b = xavier_init((5, 3), np.random.default_rng(42))
        assert np.array_equal(a, b)

    def test_vector_uses_square_fan(self):
        rng = np.random.default_rng(2)
        v = xavier_init((50,), rng)
        assert np.all(np.abs(v) <= math.sqrt(6.0 / 100))

    def test_dtype_cast(self):
        w = xavier_init((4, 4), np.random.default_rng(0), dtype=np.float32)
        assert w.dtype == np.float32

    def test_rejects_empty_shape(self):
        with pytest.raises(KgaxError):
            xavier_init((), np.random.default_rng(0))
        with pytest.raises(KgaxError):
            xavier_init((0, 3), np.random.default_rng(0))


class TestLeakyRelu:
    def test_values(self):
        x = np.array([-2.0, -0.5, 0.0, 0.5, 2.0])
        out = leaky_relu(x, 0.2)
        assert np.allclose(out, [-0.4, -0.1, 0.0, 0.5, 2.0])

    def test_zero_is_on_identity_branch(self):
        assert leaky_relu_grad(np.array([0.0]), 0.2)[0] == 1.0

    def test_grad_matches_slope(self):
        x = np.array([-1.0, 1.0])
        g = leaky_relu_grad(x, 0.3)
        assert g[0] == np.float64(0.3) and g[1] == 1.0

    def test_grad_is_finite_difference(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            x = rng.normal(size=7)
            x = x[np.abs(x) > 1e-3]  # keep away from the kink
            h = 1e-7
            fd = (leaky_relu(x + h, 0.2) - leaky_relu(x - h, 0.2)) / (2 * h)
            assert np.allclose(fd, leaky_relu_grad(x, 0.2), atol=1e-6)


class TestSoftmax:
    def test_hand_case(self):
        pi = stable_softmax(np.log([1.0, 3.0]))
        assert np.allclose(pi, [0.25, 0.75], atol=1e-12)

    def test_sums_to_one(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            logits = rng.normal(scale=rng.uniform(0.1, 50), size=rng.integers(1, 30))
            assert abs(stable_softmax(logits).sum() - 1.0) < 1e-9

    def test_shift_invariance(self):
        logits = np.array([0.3, -1.2, 4.0])
        assert np.allclose(stable_softmax(logits), stable_softmax(logits + 1000.0))

    def test_extreme_logits_do_not_overflow(self):
        pi = stable_softmax(np.array([1e9, 0.0]))
        assert np.isfinite(pi).all() and pi[0] == 1.0

    def test_empty_rejected(self):
        with pytest.raises(KgaxError):
            stable_softmax(np.array([]))

    def test_non_finite_rejected(self):
        with pytest.raises(KgaxError):
            stable_softmax(np.array([1.0, np.nan]))


class TestSmallOps:
    def test_hadamard_and_dot(self):
        a = np.array([1.0, 2.0])
        b = np.array([3.0, 0.5])
        assert np.allclose(hadamard(a, b), [3.0, 1.0])
        assert dot(a, b) == 4.0

    def test_shape_mismatch_raises(self):
        with pytest.raises(KgaxError):
            hadamard(np.zeros(2), np.zeros(3))
        with pytest.raises(KgaxError):
            dot(np.zeros(2), np.zeros(3))
        with pytest.raises(KgaxError):
            affine(np.zeros((2, 3)), np.zeros(4))

    def test_affine_grad_matches_fd(self):
        rng = np.random.default_rng(5)
        w = rng.normal(size=(3, 4))
        x = rng.normal(size=4)
        gy = rng.normal(size=3)
        dw, dx = affine_grad(w, x, gy)
        h = 1e-6
        for i in range(4):
            xp = x.copy(); xp[i] += h
            xm = x.copy(); xm[i] -= h
            fd = (gy @ affine(w, xp) - gy @ affine(w, xm)) / (2 * h)
            assert abs(fd - dx[i]) < 1e-6
        assert np.allclose(dw, np.outer(gy, x))


class TestStableScalars:
    def test_softplus_extremes(self):
        assert softplus(np.array([-800.0]))[0] == 0.0
        assert np.isclose(softplus(np.array([800.0]))[0], 800.0)
        assert np.isclose(softplus(np.array([0.0]))[0], math.log(2.0))

    def test_sigmoid_extremes(self):
        out = sigmoid(np.array([-800.0, 0.0, 800.0]))
        assert np.isfinite(out).all()
        assert out[0] == 0.0 and out[1] == 0.5 and out[2] == 1.0

    def test_sigmoid_softplus_identity(self):
        x = np.linspace(-30, 30, 61)
        assert np.allclose(softplus(x), -np.log(sigmoid(-x)), atol=1e-12)


class TestAdam:
    def test_first_step_matches_hand_formula(self):
        params = {"w": np.array([1.0])}
        grads = {"w": np.array([0.5])}
        state = AdamState()
        adam_step(params, grads, state, lr=0.1)
        m_hat = 0.5  # 0.1*0.5 / (1 - 0.9)
        v_hat = 0.25  # 0.001*0.25 / (1 - 0.999)
        expect = 1.0 - 0.1 * m_hat / (math.sqrt(v_hat) + 1e-8)
        assert abs(params["w"][0] - expect) < 1e-12

    def test_converges_on_quadratic(self):
        params = {"w": np.array([5.0])}
        state = AdamState()
        for _ in range(2000):
            adam_step(params, {"w": 2.0 * params["w"]}, state, lr=0.05)
        assert abs(params["w"][0]) < 1e-3

    def test_missing_grad_leaves_param_untouched(self):
        params = {"a": np.array([1.0]), "b": np.array([2.0])}
        state = AdamState()
        adam_step(params, {"a": np.array([1.0])}, state, lr=0.1)
        assert params["b"][0] == 2.0
        assert state.t.get("a") == 1 and "b" not in state.t

    def test_nonfinite_grad_raises_with_name(self):
        params = {"w": np.array([1.0])}
        with pytest.raises(DivergenceError, match="w"):
            adam_step(params, {"w": np.array([np.nan])}, AdamState(), lr=0.1)


class TestGradcheck:
    def test_accepts_correct_gradient(self):
        def loss_fn(params):
            x = params["x"]
            return float(np.sum(x ** 2)), {"x": 2.0 * x}

        report = finite_diff_gradcheck(loss_fn, {"x": np.array([1.0, -2.0, 3.0])})
        assert report.passed
        assert report.max_rel_err < 1e-8

    def test_rejects_wrong_gradient(self):
        def loss_fn(params):
            x = params["x"]
            return float(np.sum(x ** 2)), {"x": 3.0 * x}

        report = finite_diff_gradcheck(loss_fn, {"x": np.array([1.0, 2.0])})
        assert not report.passed
        assert report.worst_param == "x"

    def test_missing_grad_entry_counts_as_zero(self):
        def loss_fn(params):
            return float(np.sum(params["x"] ** 2)), {}

        report = finite_diff_gradcheck(loss_fn, {"x": np.array([0.7])})
        assert not report.passed

    def test_summary_lines_mention_verdict(self):
        def loss_fn(params):
            x = params["x"]
            return float(np.sum(x ** 2)), {"x": 2.0 * x}

        report = finite_diff_gradcheck(loss_fn, {"x": np.array([1.0])})
        lines = report.summary_lines()
        assert any(line.startswith("PASS") for line in lines)

    def test_nonfinite_loss_raises(self):
        def loss_fn(params):
            return float("nan"), {"x": np.zeros(1)}

        with pytest.raises(DivergenceError):
            finite_diff_gradcheck(loss_fn, {"x": np.array([1.0])})
