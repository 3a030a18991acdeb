import time

import numpy as np
import pytest

from afs.attention import AttentionConfig, AttentionParams, compute_dataset_weights
from afs.checkpoint import save_checkpoint
from afs.data import Dataset
from afs.evaluation import export_weights
from afs.learner import LearnerConfig, LearnerParams
from afs.nn import AdamConfig, ContractError
from afs.trainer import (
    PretrainConfig,
    TrainConfig,
    finetune_reused,
    hybrid_init_train,
    pretrain_attention,
    train_afs,
)

from gradcheck import check


def toy(m=80, d=5, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(size=(m, d))
    y = (x[:, 0] + x[:, 2] > 1).astype(int)
    return Dataset(x, y, name="toy")


def small_config(steps=30, seed=0, d=5):
    return TrainConfig(steps=steps, batch_size=16, seed=seed,
                       attention=AttentionConfig(d, n_e=4, hidden_width=3),
                       learner=LearnerConfig((d, 8, 2)), log_every=10)


def test_gradient_suite():
    start = time.perf_counter()
    errors = [check(seed) for seed in range(25)]
    assert max(errors) <= 1e-4, errors
    assert time.perf_counter() - start <= 10


def test_gradient_without_penalty():
    assert max(check(seed, lam=0.0) for seed in range(5)) <= 1e-4


class TestTrainAfs:
    def test_deterministic_weights_csv(self, tmp_path):
        ds = toy()
        a = train_afs(ds, small_config(seed=7))
        b = train_afs(ds, small_config(seed=7))
        export_weights(a.weights, "afs", tmp_path / "a.csv")
        export_weights(b.weights, "afs", tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_seed_changes_result(self):
        ds = toy()
        assert not np.array_equal(train_afs(ds, small_config(seed=1)).weights,
                                  train_afs(ds, small_config(seed=2)).weights)

    def test_zero_steps_gives_init_weights(self):
        ds = toy()
        cfg = small_config(steps=0, seed=3)
        res = train_afs(ds, cfg)
        init = AttentionParams(cfg.attention, 3)
        np.testing.assert_array_equal(res.weights, compute_dataset_weights(ds.features, init))
        assert res.report.steps == []

    def test_weights_in_unit_interval(self):
        res = train_afs(toy(), small_config())
        assert res.weights.shape == (5,)
        assert np.all((res.weights > 0) & (res.weights < 1))

    def test_report_logging(self, tmp_path):
        res = train_afs(toy(), small_config(steps=25))
        assert res.report.steps == [10, 20, 25]
        assert len(res.trace) == 25
        res.report.to_csv(tmp_path / "r.csv")
        assert (tmp_path / "r.csv").read_text().splitlines()[0] == "step,objective"

    def test_objective_decreases(self):
        res = train_afs(toy(m=200), small_config(steps=300))
        assert np.mean(res.trace[-30:]) < np.mean(res.trace[:30])

    def test_default_architecture(self):
        cfg = TrainConfig(steps=0).resolve(toy())
        assert cfg.attention.input_dim == 5
        assert cfg.learner.layer_sizes == (5, 500, 2)

    def test_dimension_mismatch(self):
        with pytest.raises(ContractError):
            train_afs(toy(d=5), small_config(d=4))

    def test_task_mismatch(self):
        ds = Dataset(np.ones((4, 5)), np.array([0.5, 1.0, 2.0, 3.0]))
        with pytest.raises(ContractError):
            train_afs(ds, small_config())

    def test_regression_runs(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(40, 3))
        ds = Dataset(x, x[:, 0] * 2.0)
        cfg = TrainConfig(steps=20, batch_size=10, attention=AttentionConfig(3, 4, 1, 2),
                          learner=LearnerConfig((3, 5, 1), task="regression"))
        assert np.isfinite(train_afs(ds, cfg).weights).all()

    @pytest.mark.parametrize("kwargs", [dict(steps=-1), dict(batch_size=0), dict(lam=-1.0)])
    def test_bad_config(self, kwargs):
        with pytest.raises(ContractError):
            TrainConfig(**kwargs)


class TestPretrain:
    def test_fits_target(self):
        ds = toy()
        att = AttentionParams(AttentionConfig(5, 4, 1, 3), 0)
        target = np.array([0.1, 0.9, 0.5, 0.3, 0.7])
        res = pretrain_attention(ds, target, att, PretrainConfig(steps=600, lam=0.0, tol=0.0,
                                                                 adam=AdamConfig(1e-2)))
        w = compute_dataset_weights(ds.features, att)
        np.testing.assert_allclose(w, target, atol=0.05)
        assert res.mse_trace[-1] < res.mse_trace[0]

    def test_early_stop(self):
        ds = toy()
        att = AttentionParams(AttentionConfig(5, 4, 1, 3), 0)
        res = pretrain_attention(ds, np.full(5, 0.5), att, PretrainConfig(steps=500, tol=1.0))
        assert res.steps_run == 1

    def test_target_validation(self):
        att = AttentionParams(AttentionConfig(5, 4, 1, 3), 0)
        with pytest.raises(ContractError):
            pretrain_attention(toy(), np.full(4, 0.5), att)
        with pytest.raises(ContractError):
            pretrain_attention(toy(), np.full(5, 1.5), att)


class TestHybrid:
    def test_zero_pretraining_equals_plain_training(self):
        ds = toy()
        cfg = small_config(seed=4)
        hyb = hybrid_init_train(ds, "fisher", PretrainConfig(steps=0), cfg)
        plain = train_afs(ds, cfg)
        assert hyb.result.weights.tobytes() == plain.weights.tobytes()
        assert hyb.pretrain.steps_run == 0

    def test_target_is_normalized_base(self):
        hyb = hybrid_init_train(toy(), "relieff", PretrainConfig(steps=5), small_config(steps=5),
                                relieff_kwargs=dict(k_neighbors=3))
        assert hyb.target.min() == 0.0 and hyb.target.max() == 1.0
        assert hyb.base.method == "relieff"

    def test_unknown_base(self):
        with pytest.raises(ValueError, match="unknown base method"):
            hybrid_init_train(toy(), "chi2", PretrainConfig(), small_config())


class TestReuse:
    def _pretrained(self):
        return LearnerParams(LearnerConfig((5, 8, 2)), seed=11)

    def test_local_tune_keeps_learner_bits(self, tmp_path):
        path = tmp_path / "l.ckpt"
        save_checkpoint(path, learner=self._pretrained())
        before = path.read_bytes()
        res = finetune_reused(toy(), path, "local_tune", 25, small_config())
        save_checkpoint(tmp_path / "after.ckpt", learner=res.learner)
        assert (tmp_path / "after.ckpt").read_bytes() == before
        assert res.learner.frozen

    def test_local_tune_trains_attention(self):
        learner = self._pretrained()
        cfg = small_config(seed=5)
        res = finetune_reused(toy(), learner, "local_tune", 20, cfg)
        init = AttentionParams(cfg.attention, 5)
        assert not np.array_equal(res.attention["w1"].value, init["w1"].value)

    def test_global_tune_mutates_both(self):
        learner = self._pretrained()
        before = [p.value.copy() for p in learner]
        res = finetune_reused(toy(), learner, "global_tune", 20, small_config())
        assert all(not np.array_equal(b, p.value) for b, p in zip(before, res.learner))
        assert not res.learner.frozen

    def test_steps_override(self):
        res = finetune_reused(toy(), self._pretrained(), "global_tune", 7, small_config(steps=100))
        assert len(res.trace) == 7

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            finetune_reused(toy(), self._pretrained(), "partial", 5, small_config())
