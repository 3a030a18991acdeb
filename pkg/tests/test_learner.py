import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from afs.checkpoint import CheckpointError, save_checkpoint
from afs.learner import (
    LearnerConfig,
    LearnerParams,
    learner_forward,
    load_pretrained,
    objective,
    set_frozen,
    weight_features,
)
from afs.nn import Adam, ContractError, l2_penalty

small = st.floats(-100, 100, allow_nan=False)


class TestWeightFeatures:
    def test_identity_gate(self):
        x = np.random.default_rng(0).normal(size=(4, 3))
        assert weight_features(x, np.ones_like(x)).tobytes() == x.tobytes()

    def test_zero_gate(self):
        x = np.random.default_rng(1).normal(size=(4, 3))
        np.testing.assert_array_equal(weight_features(x, np.zeros_like(x)), 0.0)

    def test_elementwise(self):
        np.testing.assert_array_equal(weight_features(np.array([[2.0, 3.0]]), np.array([[0.5, 1.0]])), [[1.0, 3.0]])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            weight_features(np.ones((2, 3)), np.ones((3, 2)))

    @settings(max_examples=50)
    @given(arrays(np.float64, (3, 4), elements=small), arrays(np.float64, (3, 4), elements=small),
           arrays(np.float64, (3, 4), elements=st.floats(0, 1)), small, small)
    def test_linear_in_features(self, x, y, a, alpha, beta):
        lhs = weight_features(alpha * x + beta * y, a)
        rhs = alpha * weight_features(x, a) + beta * weight_features(y, a)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-9, atol=1e-9)


class TestForward:
    def test_zero_weights_give_final_bias(self):
        params = LearnerParams(LearnerConfig((3, 4, 2)), seed=0)
        for w, _ in params.layers:
            w.value[:] = 0
        out = learner_forward(np.random.default_rng(2).normal(size=(5, 3)), params)
        np.testing.assert_array_equal(out, np.tile(params.layers[-1][1].value, (5, 1)))

    def test_shape(self):
        params = LearnerParams(LearnerConfig((7, 5, 10)), seed=0)
        assert learner_forward(np.ones((4, 7)), params).shape == (4, 10)

    def test_hand_computed_logits(self):
        params = LearnerParams(LearnerConfig((2, 2, 2), activation="relu"), seed=0)
        (w0, b0), (w1, b1) = params.layers
        w0.value[:] = [[1.0, -1.0], [2.0, 0.5]]
        b0.value[:] = [0.0, -1.0]
        w1.value[:] = [[1.0, 0.0], [-1.0, 2.0]]
        b1.value[:] = [0.5, 0.0]
        # hidden pre = [1*1 + 2*2, -1 + 0.5*2 - 1] = [5, -1] -> relu [5, 0]
        # logits = [5 + 0.5, 0]
        out = learner_forward(np.array([[1.0, 2.0]]), params)
        np.testing.assert_array_equal(out, [[5.5, 0.0]])

    def test_tanh_hand_computed(self):
        params = LearnerParams(LearnerConfig((1, 1, 1), task="regression", activation="tanh"), seed=0)
        (w0, b0), (w1, b1) = params.layers
        w0.value[:] = 1.0
        b0.value[:] = 0.0
        w1.value[:] = 2.0
        b1.value[:] = 1.0
        out = learner_forward(np.array([[1.0]]), params)
        assert out[0, 0] == pytest.approx(1.0 + 2.0 * 0.7615941559557649, abs=1e-15)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            learner_forward(np.ones((2, 3)), LearnerParams(LearnerConfig((4, 2, 2))))

    @pytest.mark.parametrize("kwargs", [dict(layer_sizes=(3,)), dict(task="ranking"), dict(activation="gelu")])
    def test_bad_config(self, kwargs):
        with pytest.raises(ContractError):
            LearnerConfig(**kwargs)


class TestObjective:
    def test_perfect_prediction(self):
        logits = np.array([[800.0, 0.0], [0.0, 800.0]])
        assert objective(logits, np.array([0, 1]), [], 0.0) == 0.0

    def test_uniform_ten_classes(self):
        assert objective(np.zeros((3, 10)), np.array([1, 2, 3]), [], 0.0) == pytest.approx(math.log(10), abs=1e-12)

    def test_regularizer_added_exactly(self):
        params = LearnerParams(LearnerConfig((3, 4, 2)), seed=1)
        logits = np.random.default_rng(3).normal(size=(5, 2))
        y = np.array([0, 1, 1, 0, 1])
        bare = objective(logits, y, params, 0.0)
        assert objective(logits, y, params, 0.0001) == bare + l2_penalty(params, 0.0001)

    def test_regression(self):
        assert objective(np.array([[1.0], [3.0]]), np.array([0.0, 1.0]), [], 0.0, task="regression") == 2.5

    def test_task_target_mismatch(self):
        with pytest.raises(TypeError):
            objective(np.zeros((2, 2)), np.array([0.5, 0.2]), [], 0.0, task="classification")
        with pytest.raises(TypeError):
            objective(np.zeros((2, 1)), np.array([0, 1]), [], 0.0, task="regression")


class TestFreeze:
    def _step(self, params, n=3):
        opt = Adam(params.params)
        for _ in range(n):
            for p in params:
                p.grad[:] = 1.0
            opt.step()

    def test_frozen_tensors_unchanged(self):
        params = LearnerParams(LearnerConfig((3, 4, 2)), seed=0)
        before = [p.value.tobytes() for p in params]
        set_frozen(params, True)
        self._step(params, 100)
        assert [p.value.tobytes() for p in params] == before
        assert all(not p.trainable for p in params)

    def test_unfreeze_restores_training(self):
        params = LearnerParams(LearnerConfig((3, 4, 2)), seed=0)
        before = [p.value.copy() for p in params]
        set_frozen(params, True)
        set_frozen(params, False)
        self._step(params)
        assert all(not np.array_equal(b, p.value) for b, p in zip(before, params))

    def test_idempotent(self):
        params = LearnerParams(LearnerConfig((3, 4, 2)), seed=0)
        set_frozen(params, True)
        set_frozen(params, True)
        assert params.frozen and all(not p.trainable for p in params)


class TestLoadPretrained:
    def test_round_trip(self, tmp_path):
        cfg = LearnerConfig((6, 5, 3))
        params = LearnerParams(cfg, seed=4)
        path = tmp_path / "learner.ckpt"
        save_checkpoint(path, learner=params)
        loaded = load_pretrained(path, cfg)
        for a, b in zip(params, loaded):
            assert a.name == b.name
            assert b.value.tobytes() == a.value.astype(np.float32).astype(np.float64).tobytes()
            assert not b.adam_m.any() and not b.adam_v.any()

    def test_wrong_input_dim_names_tensor(self, tmp_path):
        path = tmp_path / "learner.ckpt"
        save_checkpoint(path, learner=LearnerParams(LearnerConfig((6, 5, 3))))
        with pytest.raises(CheckpointError, match=r"learner\.dense0_w.*\(6, 5\).*\(7, 5\)"):
            load_pretrained(path, LearnerConfig((7, 5, 3)))

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_pretrained(tmp_path / "nope.ckpt", LearnerConfig((2, 2, 2)))
