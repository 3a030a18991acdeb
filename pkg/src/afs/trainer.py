"""Training orchestration for AFS and its two extensions.

All randomness is derived from ``TrainConfig.seed``: parameter init uses
fixed sub-streams per tensor and minibatch order uses its own stream, so the
same (dataset, config) always reproduces the same tensors.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .attention import (
    AttentionConfig,
    AttentionParams,
    attention_backward,
    attention_forward,
    compute_dataset_weights,
)
from .baselines import BaselineWeights, fisher_score, min_max_normalize, relieff
from .checkpoint import load_learner
from .data import Dataset, batch_iterator
from .learner import (
    LearnerConfig,
    LearnerParams,
    learner_backward,
    learner_forward,
    set_frozen,
    task_loss,
    weight_features,
)
from .nn import Adam, AdamConfig, ContractError, add_l2_grad, l2_penalty, mse_loss

log = logging.getLogger(__name__)

# sub-stream tags under the master seed
_BATCH_STREAM = 3
_PRETRAIN_STREAM = 4

# Joint training uses a large Adam epsilon. With the usual 1e-8 every
# attention parameter takes near unit-size steps whatever its gradient
# magnitude, so rarely-active pixels drift upward as fast as informative
# ones; at 1e-2 small gradients give proportionally small steps.
AFS_ADAM = AdamConfig(epsilon=1e-2)


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 3000
    batch_size: int = 100
    lam: float = 1e-4
    seed: int = 0
    adam: AdamConfig = AFS_ADAM
    attention: AttentionConfig | None = None
    learner: LearnerConfig | None = None
    log_every: int = 50
    weights_batch_size: int = 1000

    def __post_init__(self):
        if self.steps < 0:
            raise ContractError(f"steps must be >= 0, got {self.steps}")
        if self.batch_size < 1:
            raise ContractError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lam < 0:
            raise ContractError(f"lambda must be >= 0, got {self.lam}")

    def resolve(self, dataset: Dataset) -> "TrainConfig":
        """Fill in architecture defaults sized for ``dataset`` and check they fit it."""
        att = self.attention or AttentionConfig(input_dim=dataset.d)
        if dataset.is_classification:
            default_learner = LearnerConfig((dataset.d, 500, dataset.class_count))
        else:
            out = 1 if dataset.labels.ndim == 1 else dataset.labels.shape[1]
            default_learner = LearnerConfig((dataset.d, 500, out), task="regression")
        lrn = self.learner or default_learner
        if att.input_dim != dataset.d or lrn.input_dim != dataset.d:
            raise ContractError(
                f"config input dims (attention {att.input_dim}, learner {lrn.input_dim}) "
                f"do not match dataset d={dataset.d}"
            )
        if (lrn.task == "classification") != dataset.is_classification:
            raise ContractError(f"learner task {lrn.task!r} does not match the dataset's labels")
        if lrn.task == "classification" and lrn.output_dim < dataset.class_count:
            raise ContractError(f"learner has {lrn.output_dim} outputs for {dataset.class_count} classes")
        return replace(self, attention=att, learner=lrn)


@dataclass
class TrainReport:
    steps: list[int] = field(default_factory=list)
    objective: list[float] = field(default_factory=list)
    weights: np.ndarray | None = None
    wall_time: float = 0.0

    def log(self, step: int, value: float) -> None:
        self.steps.append(step)
        self.objective.append(value)

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "objective"])
            for s, v in zip(self.steps, self.objective):
                writer.writerow([s, repr(v)])


@dataclass
class TrainResult:
    attention: AttentionParams
    learner: LearnerParams
    weights: np.ndarray
    report: TrainReport
    # full per-step objective trace, kept for diagnostics
    trace: list[float] = field(default_factory=list, repr=False)


def joint_objective(x: np.ndarray, y: np.ndarray, attention: AttentionParams, learner: LearnerParams,
                    lam: float, backward: bool = True) -> float:
    """Regularized objective on one batch; with ``backward`` also accumulates grads."""
    a, cache = attention_forward(x, attention, return_cache=True)
    out, acts = learner_forward(weight_features(x, a), learner, return_cache=True)
    params = [*attention, *learner]
    if not backward:
        return task_loss(out, y, learner.config.task) + l2_penalty(params, lam)
    loss, grad_out = task_loss(out, y, learner.config.task, return_grad=True)
    grad_g = learner_backward(acts, grad_out, learner)
    if any(p.trainable for p in attention):
        attention_backward(cache, grad_g * x, attention)
    add_l2_grad(params, lam)
    return loss + l2_penalty(params, lam)


def _joint_steps(dataset: Dataset, attention: AttentionParams, learner: LearnerParams,
                 config: TrainConfig, report: TrainReport, trace: list[float]) -> None:
    opt = Adam([*attention, *learner], config.adam)
    batches = batch_iterator(dataset.m, config.batch_size, [config.seed, _BATCH_STREAM])
    for step in range(1, config.steps + 1):
        idx = next(batches)
        value = joint_objective(dataset.features[idx], dataset.labels[idx], attention, learner, config.lam)
        opt.step()
        trace.append(value)
        if step % config.log_every == 0 or step == config.steps:
            report.log(step, value)
            log.debug("step %d objective %.5f", step, value)


def train_afs(dataset: Dataset, config: TrainConfig, attention: AttentionParams | None = None,
              learner: LearnerParams | None = None) -> TrainResult:
    """Joint minibatch training of attention and learner, then dataset feature weights.

    Parameters not passed in are initialized from ``config.seed``.
    """
    start = time.perf_counter()
    config = config.resolve(dataset)
    attention = attention if attention is not None else AttentionParams(config.attention, config.seed)
    learner = learner if learner is not None else LearnerParams(config.learner, config.seed)
    if attention.config != config.attention:
        raise ContractError(f"attention params {attention.config} do not match config {config.attention}")
    if learner.config.layer_sizes != config.learner.layer_sizes:
        raise ContractError(
            f"learner layer sizes {learner.config.layer_sizes} do not match config {config.learner.layer_sizes}"
        )
    report = TrainReport()
    trace: list[float] = []
    _joint_steps(dataset, attention, learner, config, report, trace)
    weights = compute_dataset_weights(dataset.features, attention, config.weights_batch_size)
    report.weights = weights
    report.wall_time = time.perf_counter() - start
    return TrainResult(attention, learner, weights, report, trace)


@dataclass(frozen=True)
class PretrainConfig:
    steps: int = 1000
    batch_size: int = 100
    lam: float = 1e-4
    tol: float = 1e-4
    adam: AdamConfig = field(default_factory=AdamConfig)


@dataclass
class PretrainResult:
    attention: AttentionParams
    mse_trace: list[float]
    steps_run: int


def pretrain_attention(dataset: Dataset, target_weights, attention: AttentionParams,
                       config: PretrainConfig = PretrainConfig(), seed: int = 0) -> PretrainResult:
    """Fit the attention module so every sample's A row matches ``target_weights``.

    Only attention tensors are touched. Stops after ``config.steps`` updates or
    once a minibatch MSE drops below ``config.tol``.
    """
    target = np.asarray(target_weights, dtype=np.float64)
    if target.shape != (attention.config.input_dim,):
        raise ContractError(f"target weights shape {target.shape}, expected ({attention.config.input_dim},)")
    if target.min() < 0 or target.max() > 1:
        raise ContractError("target weights must lie in [0, 1]")
    params = list(attention)
    opt = Adam(params, config.adam)
    batches = batch_iterator(dataset.m, config.batch_size, [seed, _PRETRAIN_STREAM])
    trace = []
    steps_run = 0
    for _ in range(config.steps):
        x = dataset.features[next(batches)]
        a, cache = attention_forward(x, attention, return_cache=True)
        loss, grad_a = mse_loss(a, np.broadcast_to(target, a.shape), return_grad=True)
        attention_backward(cache, grad_a, attention)
        add_l2_grad(params, config.lam)
        opt.step()
        steps_run += 1
        trace.append(loss)
        if loss < config.tol:
            break
    return PretrainResult(attention, trace, steps_run)


BASE_METHODS = ("fisher", "relieff")


def base_weights(dataset: Dataset, method: str, relieff_kwargs: dict | None = None) -> BaselineWeights:
    if method == "fisher":
        return fisher_score(dataset.features, dataset.labels)
    if method == "relieff":
        return relieff(dataset.features, dataset.labels, **(relieff_kwargs or {}))
    raise ValueError(f"unknown base method {method!r}; choose from {BASE_METHODS}")


@dataclass
class HybridResult:
    result: TrainResult
    base: BaselineWeights
    target: np.ndarray
    pretrain: PretrainResult
    pretrained_weights: np.ndarray


def hybrid_init_train(dataset: Dataset, base_method: str, pretrain_config: PretrainConfig,
                      train_config: TrainConfig, relieff_kwargs: dict | None = None) -> HybridResult:
    """Filter-method weights -> min-max -> attention pretraining -> normal AFS training."""
    base = base_weights(dataset, base_method, relieff_kwargs)
    target = min_max_normalize(base.w)
    cfg = train_config.resolve(dataset)
    attention = AttentionParams(cfg.attention, cfg.seed)
    pre = pretrain_attention(dataset, target, attention, pretrain_config, seed=cfg.seed)
    pretrained = compute_dataset_weights(dataset.features, attention, cfg.weights_batch_size)
    result = train_afs(dataset, cfg, attention=attention)
    return HybridResult(result, base, target, pre, pretrained)


REUSE_MODES = ("global_tune", "local_tune")


def finetune_reused(dataset: Dataset, learner_checkpoint, mode: str, steps: int,
                    config: TrainConfig) -> TrainResult:
    """AFS-R: fresh attention on top of a pretrained learner.

    ``learner_checkpoint`` is a checkpoint path or ready ``LearnerParams``.
    ``global_tune`` trains both modules, ``local_tune`` freezes the learner.
    """
    if mode not in REUSE_MODES:
        raise ValueError(f"unknown reuse mode {mode!r}; choose from {REUSE_MODES}")
    if isinstance(learner_checkpoint, LearnerParams):
        config = replace(config, learner=learner_checkpoint.config)
    config = replace(config, steps=steps).resolve(dataset)
    if isinstance(learner_checkpoint, LearnerParams):
        learner = learner_checkpoint
    else:
        learner = load_learner(learner_checkpoint, config.learner)
    set_frozen(learner, mode == "local_tune")
    return train_afs(dataset, config, learner=learner)
