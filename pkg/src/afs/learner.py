"""Learning module: a dense network trained on attention-gated features."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .nn import (
    ContractError,
    Param,
    cross_entropy_loss,
    dense_forward,
    l2_penalty,
    mse_loss,
    relu_forward,
    tanh_forward,
    truncated_normal_init,
)

TASKS = ("classification", "regression")
ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class LearnerConfig:
    """``layer_sizes`` runs input -> hidden... -> output, e.g. ``(784, 500, 10)``."""

    layer_sizes: tuple[int, ...] = field(default=(784, 500, 10))
    task: str = "classification"
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise ContractError(f"layer_sizes needs at least input and output sizes >= 1, got {self.layer_sizes}")
        if self.task not in TASKS:
            raise ContractError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.activation not in ACTIVATIONS:
            raise ContractError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]


class LearnerParams:
    def __init__(self, config: LearnerConfig, seed: int = 0):
        self.config = config
        self.params: list[Param] = []
        sizes = config.layer_sizes
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            self.params.append(Param(f"learner.dense{i}_w", truncated_normal_init((fan_in, fan_out), [seed, 2, 2 * i])))
            self.params.append(
                Param(f"learner.dense{i}_b", truncated_normal_init((fan_out,), [seed, 2, 2 * i + 1]), decay=False)
            )
        self.frozen = False

    def __iter__(self) -> Iterator[Param]:
        return iter(self.params)

    @property
    def layers(self) -> list[tuple[Param, Param]]:
        return list(zip(self.params[0::2], self.params[1::2]))

    def copy(self) -> "LearnerParams":
        clone = LearnerParams.__new__(LearnerParams)
        clone.config = self.config
        clone.params = [Param(p.name, p.value.copy(), p.trainable, p.decay) for p in self.params]
        clone.frozen = self.frozen
        return clone


def set_frozen(params: LearnerParams, flag: bool) -> None:
    params.frozen = bool(flag)
    for p in params.params:
        p.trainable = not flag


def weight_features(batch: np.ndarray, attention: np.ndarray) -> np.ndarray:
    """G = X * A, elementwise."""
    batch = np.asarray(batch, dtype=np.float64)
    attention = np.asarray(attention, dtype=np.float64)
    if batch.shape != attention.shape:
        raise ValueError(f"weight_features: features {batch.shape} vs attention {attention.shape}")
    return batch * attention


def _activate(x, kind):
    return relu_forward(x) if kind == "relu" else tanh_forward(x)


def learner_forward(g: np.ndarray, params: LearnerParams, return_cache: bool = False):
    """Logits (classification) or predictions (regression); no output nonlinearity."""
    g = np.asarray(g, dtype=np.float64)
    d = params.config.input_dim
    if g.ndim != 2 or g.shape[1] != d:
        raise ValueError(f"learner expects {d} input columns, got shape {g.shape}")
    layers = params.layers
    acts = [g]
    x = g
    for i, (w, b) in enumerate(layers):
        x = dense_forward(x, w.value, b.value)
        if i < len(layers) - 1:
            x = _activate(x, params.config.activation)
        acts.append(x)
    return (x, acts) if return_cache else x


def learner_backward(acts: Sequence[np.ndarray], grad_out: np.ndarray, params: LearnerParams) -> np.ndarray:
    """Accumulate grads of theta_l and return d(objective)/dG.

    Frozen tensors get no gradient, but dG still flows back through them.
    """
    layers = params.layers
    kind = params.config.activation
    delta = grad_out
    for i in range(len(layers) - 1, -1, -1):
        w, b = layers[i]
        if i < len(layers) - 1:
            out = acts[i + 1]
            delta = delta * (out > 0) if kind == "relu" else delta * (1.0 - out * out)
        if w.trainable:
            w.grad += acts[i].T @ delta
            b.grad += delta.sum(axis=0)
        delta = delta @ w.value.T
    return delta


def task_loss(predictions: np.ndarray, targets: np.ndarray, task: str, return_grad: bool = False):
    targets = np.asarray(targets)
    if task == "classification":
        if not np.issubdtype(targets.dtype, np.integer) or targets.ndim != 1:
            raise TypeError("classification objective needs a 1-d integer label vector")
        return cross_entropy_loss(predictions, targets, return_grad=return_grad)
    if task == "regression":
        if not np.issubdtype(targets.dtype, np.floating):
            raise TypeError("regression objective needs real-valued targets")
        targets = targets.reshape(np.shape(predictions)) if targets.ndim == 1 else targets
        return mse_loss(predictions, targets, return_grad=return_grad)
    raise ContractError(f"unknown task {task!r}")


def objective(predictions, targets, all_params: Iterable[Param], lam: float, task: str = "classification") -> float:
    """Task loss plus ``lam`` times the L2 norm of trainable weights."""
    return task_loss(predictions, targets, task) + l2_penalty(all_params, lam)


def load_pretrained(path, config: LearnerConfig) -> LearnerParams:
    """Learner parameters from a checkpoint, with fresh Adam moments."""
    from .checkpoint import load_learner

    return load_learner(path, config)
