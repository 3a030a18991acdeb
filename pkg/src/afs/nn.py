"""Dense-network numerical core.

Everything here works on float64 numpy arrays. Parameters are held in
:class:`Param` objects carrying their own gradient and Adam moment buffers,
and gradients are written by the fixed-topology backward passes in
:mod:`afs.attention` and :mod:`afs.learner`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

TRUNC_STD = 0.1


class ContractError(ValueError):
    """Raised when an operation is called outside its documented preconditions."""


def _check_shape(name: str, a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{name}: shape mismatch {a.shape} vs {b.shape}")


@dataclass
class Param:
    name: str
    value: np.ndarray
    trainable: bool = True
    # biases are excluded from the L2 penalty
    decay: bool = True
    grad: np.ndarray = field(init=False, repr=False)
    adam_m: np.ndarray = field(init=False, repr=False)
    adam_v: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.adam_m = np.zeros_like(self.value)
        self.adam_v = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad.fill(0.0)

    def reset_moments(self):
        self.adam_m.fill(0.0)
        self.adam_v.fill(0.0)


@dataclass(frozen=True)
class AdamConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ContractError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0 < self.beta1 < 1 or not 0 < self.beta2 < 1:
            raise ContractError(f"betas must lie in (0, 1), got {self.beta1}, {self.beta2}")
        if not self.epsilon > 0:
            raise ContractError(f"epsilon must be > 0, got {self.epsilon}")


def dense_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if x.ndim != 2 or weights.ndim != 2 or x.shape[1] != weights.shape[0]:
        raise ValueError(f"dense_forward: cannot multiply input {x.shape} by weights {weights.shape}")
    if bias.shape != (weights.shape[1],):
        raise ValueError(f"dense_forward: bias {bias.shape} does not match weights {weights.shape}")
    return x @ weights + bias


def tanh_forward(x: np.ndarray) -> np.ndarray:
    return np.tanh(x)


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def two_logit_softmax(p, n):
    """Probability mass on ``p`` in a softmax over the pair ``(p, n)``.

    Works elementwise on arrays. The larger logit is subtracted before
    exponentiating, so saturated inputs give exactly 0 or 1 instead of nan.
    """
    p = np.asarray(p, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    top = np.maximum(p, n)
    ep = np.exp(p - top)
    en = np.exp(n - top)
    out = ep / (ep + en)
    return out if out.ndim else float(out)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def cross_entropy_loss(logits: np.ndarray, labels: np.ndarray, return_grad: bool = False):
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits).

    With ``return_grad`` the gradient with respect to the logits is returned too.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    m, c = logits.shape
    if labels.shape != (m,):
        raise ValueError(f"cross_entropy_loss: {labels.shape[0] if labels.ndim else 0} labels for {m} rows")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise IndexError(f"cross_entropy_loss: labels must lie in [0, {c})")
    logp = log_softmax(logits)
    rows = np.arange(m)
    loss = float(-logp[rows, labels].mean())
    if not return_grad:
        return loss
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    grad /= m
    return loss, grad


def mse_loss(pred: np.ndarray, target: np.ndarray, return_grad: bool = False):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    _check_shape("mse_loss", pred, target)
    diff = pred - target
    loss = float(np.mean(diff * diff))
    if not return_grad:
        return loss
    return loss, 2.0 * diff / diff.size


def l2_penalty(params: Iterable[Param], lam: float) -> float:
    """``lam`` times the summed squares of every trainable, decayed tensor."""
    if lam < 0:
        raise ContractError(f"lambda must be >= 0, got {lam}")
    if lam == 0:
        return 0.0
    total = 0.0
    for p in params:
        if p.trainable and p.decay:
            total += float(np.sum(p.value * p.value))
    return lam * total


def add_l2_grad(params: Iterable[Param], lam: float) -> None:
    if lam == 0:
        return
    for p in params:
        if p.trainable and p.decay:
            p.grad += 2.0 * lam * p.value


def adam_step(params: Sequence[Param], config: AdamConfig, step_index: int) -> None:
    """One bias-corrected Adam update of every trainable tensor, then clear grads.

    ``step_index`` is the 1-based count of updates made so far, including this one.
    """
    if step_index < 1:
        raise ContractError(f"adam_step: step_index must be >= 1, got {step_index}")
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1**step_index
    c2 = 1.0 - b2**step_index
    step = config.learning_rate / c1
    for p in params:
        if p.trainable:
            g = p.grad
            p.adam_m *= b1
            p.adam_m += (1.0 - b1) * g
            p.adam_v *= b2
            np.multiply(g, g, out=g)
            p.adam_v += (1.0 - b2) * g
            # g is reused as scratch: sqrt(v_hat) + eps, then the step
            np.multiply(p.adam_v, 1.0 / c2, out=g)
            np.sqrt(g, out=g)
            g += config.epsilon
            np.divide(p.adam_m, g, out=g)
            g *= step
            p.value -= g
        p.zero_grad()


class Adam:
    """Keeps the step counter so callers don't have to."""

    def __init__(self, params: Sequence[Param], config: AdamConfig | None = None):
        self.params = list(params)
        self.config = config or AdamConfig()
        self.t = 0

    def step(self):
        self.t += 1
        adam_step(self.params, self.config, self.t)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


def truncated_normal_init(shape, seed, std: float = TRUNC_STD) -> np.ndarray:
    """N(0, std^2) draws, redrawing anything outside +-2 std.

    ``seed`` may be an int or a sequence of ints (anything ``default_rng`` takes).
    """
    rng = np.random.default_rng(seed)
    out = rng.normal(0.0, std, size=shape)
    bound = 2.0 * std
    bad = np.abs(out) > bound
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > bound
    return out
