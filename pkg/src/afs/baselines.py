"""Filter-method feature scores used as baselines and as hybrid-init targets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import ContractError

FISHER_EPS = 1e-12


@dataclass
class BaselineWeights:
    w: np.ndarray
    method: str


def fisher_score(X, y, eps: float = FISHER_EPS) -> BaselineWeights:
    """Between-class over within-class spread per feature.

    Uses population variances; ``eps`` keeps zero-variance features finite.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    classes, counts = np.unique(y, return_counts=True)
    if classes.size < 2:
        raise ContractError("fisher_score needs at least two classes")
    grand = X.mean(axis=0)
    between = np.zeros(X.shape[1])
    within = np.zeros(X.shape[1])
    for c, n in zip(classes, counts):
        rows = X[y == c]
        mu = rows.mean(axis=0)
        between += n * (mu - grand) ** 2
        within += n * rows.var(axis=0)
    return BaselineWeights(between / (within + eps), "fisher")


def relieff(X, y, k_neighbors: int = 5, sample_count: int | None = None, seed: int = 0) -> BaselineWeights:
    """ReliefF with l1 distance on range-normalized features.

    With ``sample_count`` equal to m (the default) every instance is visited
    in index order and ``seed`` is unused; otherwise ``sample_count``
    instances are drawn without replacement. Neighbours are ordered by
    distance with ties going to the lower index.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    m, d = X.shape
    s = m if sample_count is None else int(sample_count)
    if not 1 <= s <= m:
        raise ValueError(f"sample_count must be in [1, {m}], got {s}")
    span = X.max(axis=0) - X.min(axis=0)
    w = np.zeros(d)
    if not span.any():
        return BaselineWeights(w, "relieff")
    scale = np.where(span > 0, 1.0 / np.where(span > 0, span, 1.0), 0.0)
    Xn = X * scale

    classes, counts = np.unique(y, return_counts=True)
    prior = dict(zip(classes.tolist(), (counts / m).tolist()))
    members = {c: np.flatnonzero(y == c) for c in classes.tolist()}
    visit = np.arange(m) if s == m else np.sort(np.random.default_rng(seed).choice(m, size=s, replace=False))

    for c in np.unique(y[visit]).tolist():
        if len(members[c]) < k_neighbors + 1:
            raise ValueError(f"class {c} has {len(members[c])} samples; ReliefF with k={k_neighbors} needs {k_neighbors + 1}")
    for c, idx in members.items():
        if len(idx) < k_neighbors:
            raise ValueError(f"class {c} has {len(idx)} samples; ReliefF with k={k_neighbors} needs {k_neighbors} misses")

    denom = s * k_neighbors
    for i in visit:
        row = Xn[i]
        dist = np.abs(Xn - row).sum(axis=1)
        own = y[i].item()
        p_own = prior[own]
        for c, idx in members.items():
            cand = idx[idx != i] if c == own else idx
            near = cand[np.lexsort((cand, dist[cand]))[:k_neighbors]]
            diffs = np.abs(Xn[near] - row)
            if c == own:
                for diff in diffs:
                    w = w - diff / denom
            else:
                coef = prior[c] / (1.0 - p_own)
                for diff in diffs:
                    w = w + coef * diff / denom
    return BaselineWeights(w, "relieff")


def min_max_normalize(w) -> np.ndarray:
    """Rescale to [0, 1]; a constant vector maps to all 0.5."""
    w = np.asarray(w, dtype=np.float64)
    lo, hi = w.min(), w.max()
    if hi == lo:
        return np.full_like(w, 0.5)
    return (w - lo) / (hi - lo)
