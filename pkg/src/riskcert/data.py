"""Dataset ingestion, stratified splitting, and subgroup partitions.

CSV files are UTF-8 with a header row; one designated label column (any
text, mapped to dense indices in first-appearance order) and numeric
feature columns. Feature standardization is computed on the loaded split
only, with a variance floor of 1e-12 so constant columns map to zeros.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadSpec,
    ClassTooSmall,
    DimensionMismatch,
    DomainError,
    ParseError,
    SingleClassDataset,
)
from .risk import ReferenceDistribution

CLASS_RATIO = "class-ratio"
UNIFORM = "uniform"


@dataclass(frozen=True)
class Dataset:
    """Feature matrix plus dense class labels."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        features = np.array(self.features, dtype=float)
        labels = np.array(self.labels, dtype=int)
        if features.ndim != 2:
            raise DimensionMismatch("features must be a 2-D matrix")
        if labels.ndim != 1 or labels.shape[0] != features.shape[0]:
            raise DimensionMismatch("labels must be 1-D with one entry per row")
        if labels.size == 0:
            raise DimensionMismatch("dataset must contain at least one example")
        if not np.all(np.isfinite(features)):
            raise DomainError("features contain non-finite entries")
        if labels.min() < 0:
            raise DomainError("labels must be non-negative class indices")
        n_classes = int(labels.max()) + 1
        present = np.bincount(labels, minlength=n_classes)
        if np.any(present == 0):
            missing = int(np.argmin(present))
            raise DomainError(f"class {missing} has no examples")
        features.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    @property
    def m(self) -> int:
        return self.labels.size

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=int)
        return Dataset(self.features[idx], self.labels[idx])


@dataclass(frozen=True)
class SubgroupPartition:
    """Assignment of examples to subgroups with the reference distribution."""

    assignment: np.ndarray
    sizes: np.ndarray
    pi: ReferenceDistribution

    def __post_init__(self):
        assignment = np.array(self.assignment, dtype=int)
        sizes = np.array(self.sizes, dtype=int)
        if np.any(sizes < 1):
            raise DimensionMismatch("every subgroup must hold at least one example")
        if sizes.sum() != assignment.size:
            raise DimensionMismatch("subgroup sizes must sum to the example count")
        if not np.array_equal(np.bincount(assignment, minlength=sizes.size),
                              sizes):
            raise DimensionMismatch("sizes do not match the assignment counts")
        if len(self.pi) != sizes.size:
            raise DimensionMismatch("pi length must equal the subgroup count")
        assignment.setflags(write=False)
        sizes.setflags(write=False)
        object.__setattr__(self, "assignment", assignment)
        object.__setattr__(self, "sizes", sizes)

    @property
    def n(self) -> int:
        return self.sizes.size

    @property
    def m(self) -> int:
        return int(self.sizes.sum())

    def groups(self) -> list[np.ndarray]:
        """Example indices per subgroup, in subgroup order."""
        order = np.argsort(self.assignment, kind="stable")
        bounds = np.cumsum(self.sizes)[:-1]
        return np.split(order, bounds)


def column_stats(features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-column mean and scale (std with a 1e-12 variance floor)."""
    features = np.asarray(features, dtype=float)
    mean = features.mean(axis=0)
    scale = np.sqrt(np.maximum(features.var(axis=0), 1e-12))
    return mean, scale


def standardize(features: np.ndarray) -> np.ndarray:
    """Per-column zero mean, unit variance, with a 1e-12 variance floor."""
    features = np.asarray(features, dtype=float)
    mean, scale = column_stats(features)
    return (features - mean) / scale


def load_csv(path: str, label_column: str) -> Dataset:
    """Load a header-ed CSV, map labels to dense indices, standardize features.

    Labels are re-indexed to 0..n_classes-1 in first-appearance order. Raises
    ParseError with the 1-based file row and column name for any cell that
    does not parse as a number.
    """
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(1, label_column, "file is empty") from None
        if label_column not in header:
            raise ParseError(1, label_column, "label column not found in header")
        label_idx = header.index(label_column)

        rows: list[list[float]] = []
        raw_labels: list[str] = []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(line_no, label_column,
                                 f"expected {len(header)} cells, got {len(row)}")
            values = []
            for i, cell in enumerate(row):
                if i == label_idx:
                    continue
                try:
                    values.append(float(cell))
                except ValueError:
                    raise ParseError(line_no, header[i],
                                     f"cell {cell!r} is not numeric") from None
            rows.append(values)
            raw_labels.append(row[label_idx])

    if not rows:
        raise ParseError(2, label_column, "file has no data rows")

    mapping: dict[str, int] = {}
    labels = np.empty(len(raw_labels), dtype=int)
    for i, raw in enumerate(raw_labels):
        if raw not in mapping:
            mapping[raw] = len(mapping)
        labels[i] = mapping[raw]
    if len(mapping) < 2:
        raise SingleClassDataset(
            f"label column {label_column!r} holds a single class {list(mapping)!r}"
        )
    features = standardize(np.asarray(rows, dtype=float))
    return Dataset(features, labels)


def write_csv(dataset: Dataset, path: str, label_column: str = "label") -> None:
    """Write a dataset as CSV (feature columns x0..x{d-1}, integer labels)."""
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow([f"x{i}" for i in range(dataset.n_features)] + [label_column])
        for row, label in zip(dataset.features, dataset.labels):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def stratified_split_indices(data: Dataset, fraction: float,
                             seed) -> tuple[np.ndarray, np.ndarray]:
    """Index sets of a class-ratio-preserving split; deterministic per seed.

    Per class the first part receives round(fraction * count) examples, with
    at least one example per class kept on each side.
    """
    if not (0.0 < fraction < 1.0):
        raise BadSpec(f"fraction must lie in (0, 1), got {fraction}")
    rng = np.random.default_rng(seed)
    first: list[np.ndarray] = []
    second: list[np.ndarray] = []
    for cls in range(data.n_classes):
        idx = np.flatnonzero(data.labels == cls)
        if idx.size < 2:
            raise ClassTooSmall(
                f"class {cls} has {idx.size} example(s); need at least 2 to split"
            )
        take = _round_half_up(fraction * idx.size)
        take = min(max(take, 1), idx.size - 1)
        perm = rng.permutation(idx)
        first.append(perm[:take])
        second.append(perm[take:])
    first_idx = np.sort(np.concatenate(first))
    second_idx = np.sort(np.concatenate(second))
    return first_idx, second_idx


def stratified_split(data: Dataset, fraction: float,
                     seed) -> tuple[Dataset, Dataset]:
    first_idx, second_idx = stratified_split_indices(data, fraction, seed)
    return data.subset(first_idx), data.subset(second_idx)


def partition_by_class(data: Dataset,
                       reference: str = CLASS_RATIO) -> SubgroupPartition:
    """One subgroup per class; pi is the class ratio or uniform."""
    sizes = np.bincount(data.labels, minlength=data.n_classes)
    if reference == CLASS_RATIO:
        pi = ReferenceDistribution(sizes / data.m)
    elif reference == UNIFORM:
        pi = ReferenceDistribution.uniform(data.n_classes)
    else:
        raise BadSpec(f"unknown reference {reference!r}")
    return SubgroupPartition(assignment=data.labels.copy(), sizes=sizes, pi=pi)


def partition_per_example(data: Dataset) -> SubgroupPartition:
    """Every example is its own subgroup with the uniform reference."""
    m = data.m
    return SubgroupPartition(
        assignment=np.arange(m),
        sizes=np.ones(m, dtype=int),
        pi=ReferenceDistribution.uniform(m),
    )


def synth_imbalanced(n_per_class, d_x: int, separation: float,
                     seed) -> Dataset:
    """Gaussian blobs with consecutive class means spaced by ``separation``.

    With separation 0 the features carry no class signal. Deterministic per
    seed; features are raw (standardize after splitting).
    """
    counts = [int(c) for c in n_per_class]
    if len(counts) < 2:
        raise BadSpec("need at least 2 classes")
    if any(c < 2 for c in counts):
        raise BadSpec("every class needs at least 2 examples")
    d_x = int(d_x)
    if d_x < 1:
        raise BadSpec("d_x must be at least 1")
    separation = float(separation)
    if not np.isfinite(separation) or separation < 0:
        raise BadSpec("separation must be a non-negative number")

    rng = np.random.default_rng(seed)
    blocks = []
    labels = []
    for cls, count in enumerate(counts):
        mean = np.zeros(d_x)
        mean[0] = cls * separation
        blocks.append(rng.standard_normal((count, d_x)) + mean)
        labels.append(np.full(count, cls, dtype=int))
    return Dataset(np.vstack(blocks), np.concatenate(labels))
