"""Top-K evaluation of feature rankings with a fixed benchmark classifier."""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .data import Dataset, SplitPlan, batch_iterator
from .learner import LearnerConfig, LearnerParams, learner_backward, learner_forward
from .nn import Adam, AdamConfig, ContractError, add_l2_grad, cross_entropy_loss


@dataclass
class FeatureRanking:
    order: np.ndarray
    weights: np.ndarray


def rank_features(weights) -> FeatureRanking:
    """Descending by weight; equal weights keep ascending feature index."""
    weights = np.asarray(weights, dtype=np.float64)
    if not np.isfinite(weights).all():
        raise ValueError("rank_features: weights must be finite")
    order = np.lexsort((np.arange(weights.size), -weights))
    return FeatureRanking(order, weights)


def select_top_k(dataset: Dataset, ranking: FeatureRanking, k: int) -> Dataset:
    if not 1 <= k <= dataset.d:
        raise ValueError(f"K must be in [1, {dataset.d}], got {k}")
    cols = ranking.order[:k]
    return replace(dataset, features=dataset.features[:, cols], image_shape=None,
                   meta={**dataset.meta, "columns": cols.tolist()})


@dataclass(frozen=True)
class ClassifierConfig:
    hidden: int = 500
    steps: int = 3000
    batch_size: int = 100
    lam: float = 0.0
    seed: int = 0
    activation: str = "relu"
    adam: AdamConfig = field(default_factory=AdamConfig)
    eval_batch_size: int = 2000


def train_classifier(train: Dataset, config: ClassifierConfig, class_count: int | None = None) -> LearnerParams:
    """Plain dense classifier (one hidden layer) on raw features."""
    c = class_count or train.class_count
    params = LearnerParams(LearnerConfig((train.d, config.hidden, c), activation=config.activation), config.seed)
    opt = Adam(params.params, config.adam)
    batches = batch_iterator(train.m, config.batch_size, [config.seed, 5])
    for _ in range(config.steps):
        idx = next(batches)
        out, acts = learner_forward(train.features[idx], params, return_cache=True)
        _, grad = cross_entropy_loss(out, train.labels[idx], return_grad=True)
        learner_backward(acts, grad, params)
        add_l2_grad(params.params, config.lam)
        opt.step()
    return params


def predict(params: LearnerParams, features: np.ndarray, batch_size: int = 2000) -> np.ndarray:
    out = [learner_forward(features[s:s + batch_size], params).argmax(axis=1)
           for s in range(0, features.shape[0], batch_size)]
    return np.concatenate(out)


def accuracy(params: LearnerParams, dataset: Dataset, batch_size: int = 2000) -> float:
    return float(np.mean(predict(params, dataset.features, batch_size) == dataset.labels))


def benchmark_nn_eval(train: Dataset, test: Dataset, config: ClassifierConfig = ClassifierConfig()) -> float:
    """Test accuracy of a freshly trained benchmark classifier."""
    if train.d != test.d:
        raise ValueError(f"train has {train.d} features but test has {test.d}")
    c = max(train.class_count, test.class_count)
    params = train_classifier(train, config, class_count=c)
    return accuracy(params, test, config.eval_batch_size)


def derive_seed(seed: int, *keys: int) -> int:
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


def k_grid(k_min: int = 15, k_max: int = 295, k_step: int = 10) -> list[int]:
    return list(range(k_min, k_max + 1, k_step))


@dataclass
class AccuracyCurve:
    ks: list[int]
    accuracies: list[float]
    method: str = ""
    dataset: str = ""
    seed: int = 0

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.ks, self.ks[1:])):
            raise ValueError("curve K values must be strictly increasing")

    def as_dict(self) -> dict[int, float]:
        return dict(zip(self.ks, self.accuracies))

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["K", "accuracy"])
            for k, a in zip(self.ks, self.accuracies):
                writer.writerow([k, repr(a)])


def _map(fn, items, jobs):
    jobs = jobs or os.cpu_count() or 1
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def accuracy_curve(train: Dataset, test: Dataset, ranking: FeatureRanking, ks: Sequence[int] | None = None,
                   config: ClassifierConfig = ClassifierConfig(), method: str = "", jobs: int | None = None) -> AccuracyCurve:
    """One benchmark run per K; each K gets its own seed derived from ``config.seed``."""
    ks = list(ks) if ks is not None else k_grid()
    if ks and max(ks) > train.d:
        raise ValueError(f"K up to {max(ks)} requested but only {train.d} features")

    def point(k):
        cfg = replace(config, seed=derive_seed(config.seed, k))
        return benchmark_nn_eval(select_top_k(train, ranking, k), select_top_k(test, ranking, k), cfg)

    return AccuracyCurve(ks, _map(point, ks, jobs), method, train.name, config.seed)


def average_accuracy(curve: AccuracyCurve, k_lo: int = 15, k_hi: int = 85) -> float:
    vals = [a for k, a in zip(curve.ks, curve.accuracies) if k_lo <= k <= k_hi]
    if not vals:
        raise ValueError(f"curve has no points with K in [{k_lo}, {k_hi}]")
    return float(np.mean(vals))


@dataclass
class CVResult:
    curve: AccuracyCurve
    cells: list[AccuracyCurve]
    weights: list[np.ndarray]


def cross_validated_curve(dataset: Dataset, plan: SplitPlan, selector: Callable[[Dataset, int], np.ndarray],
                          ks: Sequence[int], config: ClassifierConfig = ClassifierConfig(), method: str = "",
                          jobs: int | None = None) -> CVResult:
    """Mean K-curve over every (repeat, fold) cell of ``plan``.

    ``selector(train_split, cell_index)`` returns feature weights computed from
    the training split only; the held-out fold is used for testing alone.
    """
    cells, all_weights = [], []
    for i, (train_idx, test_idx) in enumerate(plan):
        train, test = dataset.subset(train_idx), dataset.subset(test_idx)
        w = np.asarray(selector(train, i), dtype=np.float64)
        all_weights.append(w)
        cfg = replace(config, seed=derive_seed(config.seed, i))
        cells.append(accuracy_curve(train, test, rank_features(w), ks, cfg, method, jobs))
    mean = np.mean([c.accuracies for c in cells], axis=0)
    return CVResult(AccuracyCurve(list(ks), mean.tolist(), method, dataset.name, config.seed), cells, all_weights)


# -- file exports --------------------------------------------------------------


def heatmap_pixels(ranking: FeatureRanking, k_list: Sequence[int], rows: int, cols: int) -> np.ndarray:
    """Gray level per pixel: earlier K tiers darker, unselected pixels white (255)."""
    d = ranking.order.size
    if rows * cols != d:
        raise ValueError(f"image shape {rows}x{cols} does not match d={d}")
    tiers = sorted(set(int(k) for k in k_list))
    if tiers and not 1 <= tiers[0] <= tiers[-1] <= d:
        raise ValueError(f"tiers must lie in [1, {d}], got {tiers}")
    position = np.empty(d, dtype=np.int64)
    position[ranking.order] = np.arange(d)
    img = np.full(d, 255, dtype=np.uint8)
    for i in range(len(tiers) - 1, -1, -1):
        img[position < tiers[i]] = int(round(200 * i / len(tiers)))
    return img.reshape(rows, cols)


def export_heatmap(ranking: FeatureRanking, k_list: Sequence[int], rows: int, cols: int, path) -> bytes:
    """Binary PGM (P5, maxval 255) of the selection tiers."""
    img = heatmap_pixels(ranking, k_list, rows, cols)
    data = f"P5\n{cols} {rows}\n255\n".encode("ascii") + img.tobytes()
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)
    return data


def export_weights(weights, method: str, path) -> None:
    """CSV ``feature_index,weight:<method>`` in index order."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["feature_index", f"weight:{method}"])
        for k, w in enumerate(np.asarray(weights, dtype=np.float64)):
            writer.writerow([k, repr(float(w))])
    os.replace(tmp, path)


def import_weights(path) -> tuple[np.ndarray, str]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"weights file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or len(header) != 2 or header[0] != "feature_index" or not header[1].startswith("weight"):
            raise ContractError(f"{path}:1: expected header 'feature_index,weight:<method>', got {header}")
        method = header[1].partition(":")[2]
        weights = []
        for line_no, row in enumerate(reader, start=2):
            if len(row) != 2:
                raise ContractError(f"{path}:{line_no}: expected 2 cells, got {len(row)}")
            try:
                idx, w = int(row[0]), float(row[1])
            except ValueError:
                raise ContractError(f"{path}:{line_no}: could not parse {row}") from None
            if idx != len(weights):
                raise ContractError(f"{path}:{line_no}: feature index {idx} out of order")
            weights.append(w)
    return np.array(weights), method
