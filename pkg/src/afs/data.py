"""Datasets: IDX and CSV loading, n-MNIST style noise, CV splits, minibatches."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DatasetError(Exception):
    """Malformed or missing dataset input."""


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    name: str = "dataset"
    class_count: int = 0
    image_shape: tuple[int, int] | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise DatasetError(f"{self.name}: features must be a non-empty 2-d matrix, got {self.features.shape}")
        if not np.isfinite(self.features).all():
            raise DatasetError(f"{self.name}: features contain nan or inf")
        self.labels = np.asarray(self.labels)
        if self.labels.shape[0] != self.features.shape[0]:
            raise DatasetError(
                f"{self.name}: {self.labels.shape[0]} labels for {self.features.shape[0]} samples"
            )
        if self.is_classification:
            self.labels = self.labels.astype(np.int64)
            if self.labels.min() < 0:
                raise DatasetError(f"{self.name}: negative class label")
            self.class_count = max(self.class_count, int(self.labels.max()) + 1)
        if self.image_shape is not None and self.image_shape[0] * self.image_shape[1] != self.d:
            raise DatasetError(f"{self.name}: image shape {self.image_shape} does not match d={self.d}")

    @property
    def is_classification(self) -> bool:
        return np.issubdtype(self.labels.dtype, np.integer)

    @property
    def m(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def subset(self, index) -> "Dataset":
        return replace(self, features=self.features[index], labels=self.labels[index])

    def with_features(self, features: np.ndarray, name: str | None = None, **meta) -> "Dataset":
        return replace(self, features=features, name=name or self.name, meta={**self.meta, **meta})

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.features).tobytes())
        h.update(np.ascontiguousarray(self.labels).tobytes())
        return h.hexdigest()


def concat(a: Dataset, b: Dataset, name: str | None = None) -> Dataset:
    return replace(
        a,
        features=np.vstack([a.features, b.features]),
        labels=np.concatenate([a.labels, b.labels]),
        name=name or a.name,
        class_count=max(a.class_count, b.class_count),
    )


# -- IDX ---------------------------------------------------------------------


def _read_idx(path, expected_magic: int, ndim: int) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"file not found: {path}")
    raw = path.read_bytes()
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DatasetError(f"{path}: truncated IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise DatasetError(f"{path}: wrong IDX magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    dims = struct.unpack(">" + "I" * ndim, raw[4:header])
    count = math.prod(dims)
    if len(raw) - header != count:
        raise DatasetError(f"{path}: expected {count} data bytes for dims {dims}, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def load_idx(images_path, labels_path, name: str | None = None) -> Dataset:
    """Images scaled to [0, 1] and flattened row-major."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise DatasetError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    count, rows, cols = images.shape
    features = images.reshape(count, rows * cols).astype(np.float64) / 255.0
    return Dataset(features, labels.astype(np.int64), name=name or Path(images_path).name,
                   image_shape=(rows, cols))


def write_idx(dataset: Dataset, images_path, labels_path, metadata: dict | None = None) -> None:
    """Write pixels (rounded back to bytes) and labels as IDX, plus a JSON sidecar."""
    if dataset.image_shape is None:
        raise DatasetError("write_idx needs a dataset with an image shape")
    rows, cols = dataset.image_shape
    pixels = np.clip(np.rint(dataset.features * 255.0), 0, 255).astype(np.uint8)
    images_path, labels_path = Path(images_path), Path(labels_path)
    tmp_i = images_path.with_name(images_path.name + ".tmp")
    tmp_l = labels_path.with_name(labels_path.name + ".tmp")
    tmp_i.write_bytes(struct.pack(">IIII", IDX_IMAGES_MAGIC, dataset.m, rows, cols) + pixels.tobytes())
    tmp_l.write_bytes(struct.pack(">II", IDX_LABELS_MAGIC, dataset.m) + dataset.labels.astype(np.uint8).tobytes())
    os.replace(tmp_i, images_path)
    os.replace(tmp_l, labels_path)
    if metadata is not None:
        sidecar = images_path.with_name(images_path.name + ".json")
        sidecar.write_text(json.dumps(metadata, indent=2, sort_keys=True) + "\n")


# -- CSV ---------------------------------------------------------------------


def load_csv(path, label_column: str = "label", name: str | None = None) -> Dataset:
    """Numeric table with a header row; labels re-indexed by first appearance."""
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}: empty file") from None
        if label_column not in header:
            raise DatasetError(f"{path}: no label column {label_column!r} in header {header[:8]}...")
        label_idx = header.index(label_column)
        rows, raw_labels = [], []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DatasetError(f"{path}:{line_no}: {len(row)} cells, header has {len(header)}")
            values = []
            for col, cell in enumerate(row):
                if col == label_idx:
                    continue
                try:
                    values.append(float(cell))
                except ValueError:
                    raise DatasetError(f"{path}:{line_no}: non-numeric cell {cell!r} in column {header[col]!r}") from None
            rows.append(values)
            raw_labels.append(row[label_idx].strip())
    if not rows:
        raise DatasetError(f"{path}: no data rows")
    mapping: dict[str, int] = {}
    labels = np.array([mapping.setdefault(v, len(mapping)) for v in raw_labels], dtype=np.int64)
    return Dataset(np.array(rows), labels, name=name or path.stem, class_count=len(mapping),
                   meta={"label_values": list(mapping)})


def write_csv(dataset: Dataset, path, label_column: str = "label") -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{k}" for k in range(dataset.d)] + [label_column])
        for row, label in zip(dataset.features, dataset.labels):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])
    os.replace(tmp, path)


# -- noise -------------------------------------------------------------------


def awgn_noise(features: np.ndarray, snr_db: float, seed) -> np.ndarray:
    """Zero-mean Gaussian noise whose power sits ``snr_db`` below the mean signal power."""
    if math.isinf(snr_db) and snr_db > 0:
        return np.zeros_like(features)
    signal_power = float(np.mean(features * features))
    sigma = math.sqrt(signal_power / 10.0 ** (snr_db / 10.0))
    return np.random.default_rng(seed).normal(0.0, sigma, size=features.shape)


def synthesize_awgn(dataset: Dataset, snr_db: float, seed, clip: bool = True) -> Dataset:
    if math.isnan(snr_db) or snr_db == -math.inf:
        raise ValueError(f"snr_db must be finite or +inf, got {snr_db}")
    noisy = dataset.features + awgn_noise(dataset.features, snr_db, seed)
    if clip:
        np.clip(noisy, 0.0, 1.0, out=noisy)
    return dataset.with_features(noisy, name=f"{dataset.name}-awgn", noise={"kind": "awgn", "snr_db": snr_db, "seed": seed})


def motion_blur_kernel(length: int, angle_deg: float) -> np.ndarray:
    """Normalized line kernel of ``length`` taps at ``angle_deg`` (0 = horizontal)."""
    if length < 1:
        raise ValueError(f"kernel length must be >= 1, got {length}")
    size = length if length % 2 else length + 1
    c = size // 2
    theta = math.radians(angle_deg)
    kernel = np.zeros((size, size))
    for t in np.linspace(-(length - 1) / 2.0, (length - 1) / 2.0, length):
        col = int(math.floor(c + t * math.cos(theta) + 0.5))
        row = int(math.floor(c - t * math.sin(theta) + 0.5))
        kernel[row, col] += 1.0
    return kernel / kernel.sum()


def _convolve_images(images: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # true convolution with zero padding, batched over images
    n, rows, cols = images.shape
    c = kernel.shape[0] // 2
    out = np.zeros_like(images)
    for i, j in zip(*np.nonzero(kernel)):
        dy, dx = i - c, j - c
        w = kernel[i, j]
        src_r = slice(max(0, -dy), rows - max(0, dy))
        dst_r = slice(max(0, dy), rows - max(0, -dy))
        src_c = slice(max(0, -dx), cols - max(0, dx))
        dst_c = slice(max(0, dx), cols - max(0, -dx))
        out[:, dst_r, dst_c] += w * images[:, src_r, src_c]
    return out


def synthesize_motion_blur(dataset: Dataset, kernel_length: int = 5, angle_deg: float = 15.0,
                           image_rows: int | None = None, image_cols: int | None = None) -> Dataset:
    rows, cols = (image_rows, image_cols) if image_rows else (dataset.image_shape or (None, None))
    if rows is None or rows * cols != dataset.d:
        raise DatasetError(f"image shape {rows}x{cols} does not match d={dataset.d}")
    kernel = motion_blur_kernel(kernel_length, angle_deg)
    images = dataset.features.reshape(dataset.m, rows, cols)
    blurred = _convolve_images(images, kernel).reshape(dataset.m, rows * cols)
    out = dataset.with_features(blurred, name=f"{dataset.name}-mb",
                                noise={"kind": "mb", "length": kernel_length, "angle_deg": angle_deg})
    out.image_shape = (rows, cols)
    return out


def synthesize_rc_awgn(dataset: Dataset, contrast_factor: float = 0.5, snr_db: float = 12.0, seed=0) -> Dataset:
    if not 0 < contrast_factor <= 1:
        raise ValueError(f"contrast_factor must be in (0, 1], got {contrast_factor}")
    reduced = dataset.with_features(0.5 + contrast_factor * (dataset.features - 0.5))
    out = synthesize_awgn(reduced, snr_db, seed)
    out.name = f"{dataset.name}-rcawgn"
    out.meta = {**dataset.meta, "noise": {"kind": "rcawgn", "contrast_factor": contrast_factor,
                                          "snr_db": snr_db, "seed": seed}}
    return out


# -- splits and batches ---------------------------------------------------------


@dataclass
class SplitPlan:
    repeats: int
    folds: int
    seed: int
    cells: list[tuple[np.ndarray, np.ndarray]]  # (train, test), repeat-major
    stratified: bool = True
    warning: str | None = None

    def __iter__(self):
        return iter(self.cells)

    def __len__(self):
        return len(self.cells)


def kfold_splits(m: int, folds: int = 3, repeats: int = 3, seed: int = 0, labels=None) -> SplitPlan:
    """Repeated (optionally stratified) k-fold partition of ``range(m)``.

    Stratification deals each class's shuffled members round-robin across the
    folds, continuing the rotation from class to class, so fold sizes differ
    by at most one.
    """
    if folds < 2 or m < folds:
        raise ValueError(f"need folds >= 2 and m >= folds, got folds={folds}, m={m}")
    stratified = labels is not None
    warning = None
    if stratified:
        labels = np.asarray(labels)
        counts = np.bincount(labels)
        small = [int(c) for c in np.flatnonzero((counts > 0) & (counts < folds))]
        if small:
            stratified = False
            warning = f"classes {small} have fewer than {folds} samples; using unstratified folds"
    cells = []
    for r in range(repeats):
        rng = np.random.default_rng([seed, r])
        if stratified:
            order = np.concatenate([rng.permutation(np.flatnonzero(labels == c)) for c in np.unique(labels)])
        else:
            order = rng.permutation(m)
        fold_of = np.empty(m, dtype=np.int64)
        fold_of[order] = np.arange(m) % folds
        for f in range(folds):
            cells.append((np.flatnonzero(fold_of != f), np.flatnonzero(fold_of == f)))
    return SplitPlan(repeats, folds, seed, cells, stratified, warning)


def batch_iterator(m: int, batch_size: int, seed) -> Iterator[np.ndarray]:
    """Endless stream of index batches; each epoch is a fresh seeded shuffle."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    rng = np.random.default_rng(seed)
    while True:
        perm = rng.permutation(m)
        for start in range(0, m, batch_size):
            yield perm[start:start + batch_size]
