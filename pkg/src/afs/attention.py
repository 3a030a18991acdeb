"""Attention module: shared extraction net E plus one shallow net per feature.

Each feature k owns a small tanh stack fed by E that ends in two scalar
logits, "selected" (p) and "unselected" (n). The softmax mass on p is the
probability a_i^k that feature k is attended for sample i, and the column
mean of those probabilities over a dataset is the feature weight.

The d per-feature nets are stored stacked along a feature axis so the whole
layer is evaluated with a few matmuls. :func:`attention_logits` walks a
single feature's net with plain dense ops and is the reference the batched
path is tested against.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .nn import ContractError, Param, dense_forward, tanh_forward, truncated_normal_init, two_logit_softmax


@dataclass(frozen=True)
class AttentionConfig:
    input_dim: int
    n_e: int = 128
    hidden_layers: int = 1
    hidden_width: int = 8

    def __post_init__(self):
        if self.input_dim < 1:
            raise ContractError(f"input_dim must be >= 1, got {self.input_dim}")
        if self.n_e < 1:
            raise ContractError(f"n_e must be >= 1, got {self.n_e}")
        if self.hidden_layers < 0:
            raise ContractError(f"hidden_layers must be >= 0, got {self.hidden_layers}")
        if self.hidden_layers and self.hidden_width < 1:
            raise ContractError(f"hidden_width must be >= 1, got {self.hidden_width}")

    @property
    def last_width(self) -> int:
        return self.hidden_width if self.hidden_layers else self.n_e


class AttentionParams:
    """theta_a. Per-feature tensors carry the feature index on axis 0,
    except the first hidden layer's weights which are laid out
    ``(n_e, d, width)`` so E can hit all d nets with one matmul."""

    def __init__(self, config: AttentionConfig, seed: int = 0):
        self.config = config
        d, ne, h = config.input_dim, config.n_e, config.hidden_width
        shapes = [("w1", (d, ne), True), ("b1", (ne,), False)]
        for layer in range(config.hidden_layers):
            w_shape = (ne, d, h) if layer == 0 else (d, h, h)
            shapes.append((f"hidden{layer}_w", w_shape, True))
            shapes.append((f"hidden{layer}_b", (d, h), False))
        last = config.last_width
        shapes += [
            ("w_p", (d, last), True),
            ("b_p", (d,), False),
            ("w_n", (d, last), True),
            ("b_n", (d,), False),
        ]
        self.params: list[Param] = [
            Param(f"attention.{name}", truncated_normal_init(shape, [seed, 1, i]), decay=decay)
            for i, (name, shape, decay) in enumerate(shapes)
        ]
        self._by_name = {p.name.split(".", 1)[1]: p for p in self.params}

    def __getitem__(self, name: str) -> Param:
        return self._by_name[name]

    def __iter__(self) -> Iterator[Param]:
        return iter(self.params)

    @property
    def hidden(self) -> list[tuple[Param, Param]]:
        return [
            (self[f"hidden{i}_w"], self[f"hidden{i}_b"]) for i in range(self.config.hidden_layers)
        ]

    def feature_net(self, k: int) -> tuple[list[tuple[np.ndarray, np.ndarray]], np.ndarray, float, np.ndarray, float]:
        """Feature ``k``'s own parameters: ([(W, b) per hidden layer], w_p, b_p, w_n, b_n)."""
        d = self.config.input_dim
        if not 0 <= k < d:
            raise IndexError(f"feature index {k} out of range for d={d}")
        layers = []
        for i, (w, b) in enumerate(self.hidden):
            layers.append((w.value[:, k, :] if i == 0 else w.value[k], b.value[k]))
        return (
            layers,
            self["w_p"].value[k],
            float(self["b_p"].value[k]),
            self["w_n"].value[k],
            float(self["b_n"].value[k]),
        )

    def set_trainable(self, flag: bool) -> None:
        for p in self.params:
            p.trainable = flag

    def copy(self) -> "AttentionParams":
        clone = AttentionParams.__new__(AttentionParams)
        clone.config = self.config
        clone.params = [Param(p.name, p.value.copy(), p.trainable, p.decay) for p in self.params]
        clone._by_name = {p.name.split(".", 1)[1]: p for p in clone.params}
        return clone


def _check_batch(batch: np.ndarray, params: AttentionParams) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.float64)
    d = params.config.input_dim
    if batch.ndim != 2 or batch.shape[1] != d:
        raise ValueError(f"attention expects a batch with {d} columns, got shape {batch.shape}")
    return batch


def extract_e(batch: np.ndarray, params: AttentionParams) -> np.ndarray:
    batch = _check_batch(batch, params)
    return tanh_forward(dense_forward(batch, params["w1"].value, params["b1"].value))


def attention_logits(e: np.ndarray, k: int, params: AttentionParams) -> tuple[np.ndarray, np.ndarray]:
    """Selected/unselected logits of feature ``k`` for every row of ``e``."""
    layers, w_p, b_p, w_n, b_n = params.feature_net(k)
    h = np.asarray(e, dtype=np.float64)
    for w, b in layers:
        h = tanh_forward(dense_forward(h, w, b))
    p = h @ w_p + b_p
    n = h @ w_n + b_n
    return p, n


def _forward(batch: np.ndarray, params: AttentionParams):
    m = batch.shape[0]
    cfg = params.config
    d, h = cfg.input_dim, cfg.hidden_width
    e = extract_e(batch, params)
    acts = []
    if cfg.hidden_layers:
        w0, b0 = params.hidden[0]
        x = np.tanh((e @ w0.value.reshape(cfg.n_e, d * h)).reshape(m, d, h) + b0.value)
        acts.append(x)
        for w, b in params.hidden[1:]:
            x = np.matmul(x.transpose(1, 0, 2), w.value).transpose(1, 0, 2)
            x = np.tanh(x + b.value)
            acts.append(x)
        p = np.einsum("mkh,kh->mk", x, params["w_p"].value) + params["b_p"].value
        n = np.einsum("mkh,kh->mk", x, params["w_n"].value) + params["b_n"].value
    else:
        p = e @ params["w_p"].value.T + params["b_p"].value
        n = e @ params["w_n"].value.T + params["b_n"].value
    a = two_logit_softmax(p, n)
    return a, (batch, e, acts, a)


def attention_forward(batch: np.ndarray, params: AttentionParams, return_cache: bool = False):
    """Attention matrix A (m x d) for ``batch``; entries lie in (0, 1)."""
    batch = _check_batch(batch, params)
    a, cache = _forward(batch, params)
    return (a, cache) if return_cache else a


def attention_backward(cache, grad_a: np.ndarray, params: AttentionParams) -> None:
    """Accumulate d(objective)/d(theta_a) into ``param.grad`` given dObjective/dA."""
    batch, e, acts, a = cache
    cfg = params.config
    m = batch.shape[0]
    d, h = cfg.input_dim, cfg.hidden_width
    # a = sigmoid(p - n)
    dp = grad_a * a * (1.0 - a)
    wp, wn = params["w_p"], params["w_n"]
    params["b_p"].grad += dp.sum(axis=0)
    params["b_n"].grad -= dp.sum(axis=0)
    if cfg.hidden_layers:
        x = acts[-1]
        wp.grad += np.einsum("mk,mkh->kh", dp, x)
        wn.grad -= np.einsum("mk,mkh->kh", dp, x)
        dx = dp[:, :, None] * (wp.value - wn.value)[None, :, :]
        for layer in range(cfg.hidden_layers - 1, 0, -1):
            w, b = params.hidden[layer]
            dpre = dx * (1.0 - acts[layer] ** 2)
            b.grad += dpre.sum(axis=0)
            prev = acts[layer - 1]
            w.grad += np.matmul(prev.transpose(1, 2, 0), dpre.transpose(1, 0, 2))
            dx = np.matmul(dpre.transpose(1, 0, 2), w.value.transpose(0, 2, 1)).transpose(1, 0, 2)
        w0, b0 = params.hidden[0]
        dpre = dx * (1.0 - acts[0] ** 2)
        b0.grad += dpre.sum(axis=0)
        flat = dpre.reshape(m, d * h)
        w0.grad += (e.T @ flat).reshape(cfg.n_e, d, h)
        de = flat @ w0.value.reshape(cfg.n_e, d * h).T
    else:
        wp.grad += dp.T @ e
        wn.grad -= dp.T @ e
        de = dp @ (wp.value - wn.value)
    dz = de * (1.0 - e * e)
    params["w1"].grad += batch.T @ dz
    params["b1"].grad += dz.sum(axis=0)


def feature_weights(attention: np.ndarray) -> np.ndarray:
    """Per-feature mean selection probability (column means of A)."""
    attention = np.asarray(attention, dtype=np.float64)
    if attention.ndim != 2 or attention.shape[0] < 1:
        raise ContractError(f"feature_weights needs at least one row, got shape {attention.shape}")
    return attention.mean(axis=0)


def compute_dataset_weights(features: np.ndarray, params: AttentionParams, batch_size: int = 1000) -> np.ndarray:
    """Feature weights over a whole dataset, streamed in batches."""
    features = np.asarray(features)
    m = features.shape[0]
    if m < 1:
        raise ContractError("compute_dataset_weights: empty dataset")
    if batch_size < 1:
        raise ContractError(f"batch_size must be >= 1, got {batch_size}")
    sums = np.zeros(params.config.input_dim)
    for start in range(0, m, batch_size):
        sums += attention_forward(features[start:start + batch_size], params).sum(axis=0)
    return sums / m
