import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from afs.nn import (
    Adam,
    AdamConfig,
    ContractError,
    Param,
    adam_step,
    cross_entropy_loss,
    dense_forward,
    l2_penalty,
    mse_loss,
    tanh_forward,
    truncated_normal_init,
    two_logit_softmax,
)

finite = st.floats(-50, 50, allow_nan=False)


class TestDense:
    def test_identity(self):
        out = dense_forward(np.array([[1.0, 2.0]]), np.eye(2), np.zeros(2))
        np.testing.assert_array_equal(out, [[1.0, 2.0]])

    def test_zero_input_gives_bias(self):
        out = dense_forward(np.zeros((1, 2)), np.random.default_rng(0).normal(size=(2, 2)), np.array([3.0, 4.0]))
        np.testing.assert_array_equal(out, [[3.0, 4.0]])

    def test_hand_multiply(self):
        out = dense_forward(np.array([[1.0, 1.0]]), np.ones((2, 2)), np.ones(2))
        np.testing.assert_array_equal(out, [[3.0, 3.0]])

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(ValueError, match=r"\(1, 3\).*\(2, 2\)"):
            dense_forward(np.ones((1, 3)), np.ones((2, 2)), np.zeros(2))


class TestTanh:
    def test_zero(self):
        assert tanh_forward(np.array(0.0)) == 0.0

    def test_reference_value(self):
        # mpmath, 30 digits: tanh(1) = 0.761594155955764888...
        assert tanh_forward(np.array(1.0)) == pytest.approx(0.761594155955764888, abs=1e-15)

    @given(finite)
    def test_odd_and_bounded(self, x):
        y = tanh_forward(np.array([x, -x]))
        assert y[0] == -y[1]
        assert -1.0 <= y[0] <= 1.0


class TestTwoLogitSoftmax:
    def test_equal_logits(self):
        assert two_logit_softmax(3.0, 3.0) == 0.5

    def test_saturation_without_overflow(self):
        with np.errstate(over="raise"):
            assert two_logit_softmax(1000.0, 0.0) == pytest.approx(1.0, abs=np.finfo(float).eps)
            assert two_logit_softmax(0.0, 1000.0) >= 0.0

    def test_closed_form(self):
        assert two_logit_softmax(math.log(3.0), 0.0) == pytest.approx(0.75, abs=1e-15)

    @given(finite, finite)
    def test_complement(self, p, n):
        assert abs(two_logit_softmax(p, n) + two_logit_softmax(n, p) - 1.0) <= 1e-12

    def test_vectorized(self):
        p = np.array([0.0, 1.0, -2.0])
        n = np.array([0.0, 0.0, 3.0])
        out = two_logit_softmax(p, n)
        np.testing.assert_allclose(out, 1.0 / (1.0 + np.exp(n - p)), rtol=1e-14)


class TestCrossEntropy:
    def test_perfect_prediction(self):
        logits = np.array([[1000.0, 0.0, 0.0]])
        assert cross_entropy_loss(logits, np.array([0])) == 0.0

    def test_uniform_ten_classes(self):
        assert cross_entropy_loss(np.zeros((4, 10)), np.arange(4)) == pytest.approx(2.302585092994046, abs=1e-12)

    def test_mean_of_samples(self):
        logits = np.array([[2.0, 0.5, -1.0], [0.1, 0.2, 0.3]])
        l1 = cross_entropy_loss(logits[:1], np.array([1]))
        l2 = cross_entropy_loss(logits[1:], np.array([2]))
        assert cross_entropy_loss(logits, np.array([1, 2])) == pytest.approx((l1 + l2) / 2, abs=1e-15)

    def test_label_out_of_range(self):
        with pytest.raises(IndexError):
            cross_entropy_loss(np.zeros((1, 3)), np.array([3]))

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        logits = rng.normal(size=(3, 4))
        labels = np.array([0, 3, 1])
        _, grad = cross_entropy_loss(logits, labels, return_grad=True)
        h = 1e-6
        num = np.zeros_like(logits)
        for idx in np.ndindex(*logits.shape):
            up, dn = logits.copy(), logits.copy()
            up[idx] += h
            dn[idx] -= h
            num[idx] = (cross_entropy_loss(up, labels) - cross_entropy_loss(dn, labels)) / (2 * h)
        np.testing.assert_allclose(grad, num, atol=1e-9)


class TestMSE:
    def test_zero(self):
        x = np.arange(6.0).reshape(2, 3)
        assert mse_loss(x, x) == 0.0

    def test_unit_offset(self):
        assert mse_loss(np.ones((2, 2)) + 1, np.ones((2, 2))) == 1.0

    def test_hand_value(self):
        assert mse_loss(np.array([1.0, 3.0]), np.array([0.0, 1.0])) == 2.5

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            mse_loss(np.ones(2), np.ones(3))


class TestL2:
    def test_zero_params(self):
        assert l2_penalty([Param("w", np.zeros((2, 2)))], 1.0) == 0.0

    def test_hand_value(self):
        assert l2_penalty([Param("w", np.array([1.0, 2.0]))], 0.0001) == pytest.approx(0.0005, abs=1e-18)

    def test_lambda_zero(self):
        assert l2_penalty([Param("w", np.full(3, 7.0))], 0.0) == 0.0

    def test_biases_and_frozen_excluded(self):
        params = [
            Param("w", np.array([1.0])),
            Param("b", np.array([5.0]), decay=False),
            Param("frozen", np.array([9.0]), trainable=False),
        ]
        assert l2_penalty(params, 1.0) == 1.0

    def test_negative_lambda(self):
        with pytest.raises(ContractError):
            l2_penalty([], -1.0)


class TestAdam:
    def test_zero_gradient_is_noop(self):
        p = Param("w", np.array([0.3, -0.2]))
        adam_step([p], AdamConfig(), 1)
        np.testing.assert_array_equal(p.value, [0.3, -0.2])

    @pytest.mark.parametrize("g", [0.5, -3.0, 1e-3])
    def test_first_step_is_learning_rate_times_sign(self, g):
        p = Param("w", np.array([0.0]))
        p.grad[:] = g
        adam_step([p], AdamConfig(), 1)
        # m_hat = g, v_hat = g^2 -> update = lr * g / (|g| + eps)
        assert p.value[0] == pytest.approx(-1e-3 * g / (abs(g) + 1e-8), rel=1e-12)
        assert p.grad[0] == 0.0

    def test_two_steps_follow_recurrence(self):
        # hand-rolled for constant g=0.5: updates 9.99999980e-4 then 9.99999980e-4
        p = Param("w", np.array([0.0]))
        opt = Adam([p])
        for _ in range(2):
            p.grad[:] = 0.5
            opt.step()
        assert p.value[0] == pytest.approx(-0.0019999999599999933, rel=1e-12)

    def test_step_index_zero_rejected(self):
        with pytest.raises(ContractError):
            adam_step([], AdamConfig(), 0)

    def test_untrainable_untouched(self):
        p = Param("w", np.array([1.0, 2.0]), trainable=False)
        p.grad[:] = 5.0
        before = p.value.copy()
        for t in range(1, 4):
            adam_step([p], AdamConfig(), t)
        assert p.value.tobytes() == before.tobytes()

    @pytest.mark.parametrize("kwargs", [dict(learning_rate=0), dict(beta1=1.0), dict(beta2=0.0), dict(epsilon=0)])
    def test_config_invariants(self, kwargs):
        with pytest.raises(ContractError):
            AdamConfig(**kwargs)


class TestTruncatedNormal:
    def test_bounds(self):
        x = truncated_normal_init((300, 300), 0)
        assert np.abs(x).max() <= 0.2

    def test_bit_reproducible(self):
        assert truncated_normal_init((50, 7), 42).tobytes() == truncated_normal_init((50, 7), 42).tobytes()
        assert truncated_normal_init((50, 7), 42).tobytes() != truncated_normal_init((50, 7), 43).tobytes()

    def test_moments(self):
        # truncnorm(-2, 2, scale=0.1): mean 0, std 0.0880
        x = truncated_normal_init((100_000,), 7)
        assert abs(x.mean()) < 0.005
        assert 0.08 <= x.std() <= 0.10
