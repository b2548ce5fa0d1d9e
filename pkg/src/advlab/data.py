"""Datasets: CSV ingestion, synthetic blobs, splits, deterministic batches.

The mini-batch schedule is part of the reproducibility contract: batch
indices for iteration t are the first ``batch_size`` entries of a uniform
permutation drawn from the Philox stream ``(seed, DOMAIN_BATCH, t)`` (see
:mod:`advlab.rng`). Replaying a schedule therefore yields bit-identical
index sequences on any machine, which is what lets the twin trainer feed
two models exactly the same data.

CSV layout: one example per row, ``d`` numeric feature columns followed by
one integer label column. A header row is skipped when ``header=True``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import DOMAIN_BATCH, DOMAIN_BLOBS, DOMAIN_SPLIT, stream

BLOB_CENTER_SCALE = 3.0


class CsvFormatError(ValueError):
    """Malformed dataset file; message names the offending line."""


@dataclass(frozen=True)
class LabeledSet:
    """Feature matrix [N x d] plus integer labels [N] in [0, num_classes)."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        x = np.array(self.features, dtype=np.float64)
        y = np.array(self.labels)
        if x.ndim != 2 or y.ndim != 1 or len(x) != len(y):
            raise ValueError(f"misaligned features {x.shape} / labels {y.shape}")
        if len(x) < 1:
            raise ValueError("dataset must contain at least one example")
        if not np.issubdtype(y.dtype, np.integer):
            raise ValueError("labels must be integers")
        if self.num_classes < 1 or y.min() < 0 or y.max() >= self.num_classes:
            raise ValueError(f"labels outside [0, {self.num_classes})")
        if not np.isfinite(x).all():
            raise ValueError("non-finite feature value")
        x.setflags(write=False)
        y = y.astype(np.int64)
        y.setflags(write=False)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices: np.ndarray) -> "LabeledSet":
        return LabeledSet(self.features[indices], self.labels[indices], self.num_classes)


@dataclass(frozen=True)
class BatchSchedule:
    """Deterministic iteration -> index-list mapping (Philox, see module docs)."""

    seed: int
    batch_size: int

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")

    def indices(self, t: int, n: int) -> np.ndarray:
        """Batch indices for iteration t >= 1 over a dataset of size n."""
        if t < 1:
            raise ValueError("iteration index starts at 1")
        if self.batch_size > n:
            raise ValueError(f"batch_size {self.batch_size} exceeds dataset size {n}")
        rng = stream(self.seed, DOMAIN_BATCH, t)
        return rng.permutation(n)[: self.batch_size]


def next_batch(dataset: LabeledSet, schedule: BatchSchedule, t: int) -> LabeledSet:
    """The iteration-t mini batch: batch_size rows, uniform without replacement."""
    return dataset.subset(schedule.indices(t, len(dataset)))


def load_csv(path, header: bool = False) -> LabeledSet:
    """Parse a feature+label CSV; errors name the 1-based offending line."""
    rows, labels = [], []
    width = None
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    start = 1 if header else 0
    for lineno, line in enumerate(lines[start:], start=start + 1):
        if not line.strip():
            continue
        cells = line.split(",")
        if width is None:
            width = len(cells)
            if width < 2:
                raise CsvFormatError(f"{path}: line {lineno}: need at least one feature and a label")
        elif len(cells) != width:
            raise CsvFormatError(f"{path}: line {lineno}: expected {width} columns, got {len(cells)}")
        try:
            rows.append([float(c) for c in cells[:-1]])
        except ValueError:
            raise CsvFormatError(f"{path}: line {lineno}: non-numeric feature") from None
        lab = cells[-1].strip()
        try:
            labels.append(int(lab))
        except ValueError:
            raise CsvFormatError(f"{path}: line {lineno}: non-integer label {lab!r}") from None
    if not rows:
        raise CsvFormatError(f"{path}: no data rows")
    y = np.array(labels, dtype=np.int64)
    if y.min() < 0:
        raise CsvFormatError(f"{path}: negative label")
    return LabeledSet(np.array(rows), y, int(y.max()) + 1)


def save_csv(dataset: LabeledSet, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for x, y in zip(dataset.features, dataset.labels):
            fh.write(",".join(repr(float(v)) for v in x) + f",{int(y)}\n")


def blob_center(k: int, dim: int) -> np.ndarray:
    """Deterministic center of class k: axis k mod dim, magnitude scale*(1 + k//dim)."""
    c = np.zeros(dim)
    c[k % dim] = BLOB_CENTER_SCALE * (1 + k // dim)
    return c


def synth_blobs(n_per_class: int, num_classes: int, dim: int, spread: float, seed: int) -> LabeledSet:
    """Gaussian clusters at the documented class centers; same seed, same bits."""
    if n_per_class < 1 or num_classes < 1 or dim < 1:
        raise ValueError("counts must be positive")
    if spread < 0:
        raise ValueError("spread must be nonnegative")
    labels = np.repeat(np.arange(num_classes, dtype=np.int64), n_per_class)
    centers = np.stack([blob_center(k, dim) for k in range(num_classes)])
    noise = stream(seed, DOMAIN_BLOBS).standard_normal((len(labels), dim))
    return LabeledSet(centers[labels] + spread * noise, labels, num_classes)


def split(dataset: LabeledSet, n_train: int, seed: int) -> tuple[LabeledSet, LabeledSet]:
    """Disjoint shuffled train/test partition with n_train training rows."""
    if not 1 <= n_train < len(dataset):
        raise ValueError(f"n_train must be in [1, {len(dataset) - 1}]")
    perm = stream(seed, DOMAIN_SPLIT).permutation(len(dataset))
    return dataset.subset(perm[:n_train]), dataset.subset(perm[n_train:])
