"""Tabular data container, CSV ingestion, missingness and subsampling.

Missing cells are stored as NaN in a float64 matrix. NaN is never a valid
observed value here: the CSV reader only produces it for empty fields and
rejects literal ``nan``/``inf`` tokens, so ``np.isnan`` is an exact
missingness mask.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from gapforest._rng import substream
from gapforest.errors import DatasetError

__all__ = [
    "Dataset",
    "FeatureBounds",
    "feature_bounds",
    "load_csv",
    "write_csv",
    "impute_mean",
    "inject_mcar",
    "stratified_indices",
    "stratified_subsample",
]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Numeric table with optional 0/1 outlier labels.

    Attributes
    ----------
    values : ndarray of shape (rows, features)
        float64, NaN marks a missing cell. Read-only.
    labels : ndarray of shape (rows,) or None
        1 = outlier, 0 = inlier.
    feature_names : tuple of str
    """

    values: np.ndarray
    labels: np.ndarray | None = None
    feature_names: tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise DatasetError(f"values must be 2-D, got shape {values.shape}")
        if np.isinf(values).any():
            raise DatasetError("values contain infinities")
        names = tuple(self.feature_names) or tuple(f"x{k}" for k in range(values.shape[1]))
        if len(names) != values.shape[1]:
            raise DatasetError(f"{len(names)} feature names for {values.shape[1]} features")
        if len(set(names)) != len(names):
            raise DatasetError("feature names must be unique")
        labels = self.labels
        if labels is not None:
            labels = np.asarray(labels)
            if labels.shape != (values.shape[0],):
                raise DatasetError(f"labels shape {labels.shape} does not match {values.shape[0]} rows")
            if not np.isin(labels, (0, 1)).all():
                raise DatasetError("labels must be 0 (inlier) or 1 (outlier)")
            labels = _frozen(labels.astype(np.int8))
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "feature_names", names)

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def features(self) -> int:
        return self.values.shape[1]

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.values)

    @property
    def has_missing(self) -> bool:
        return bool(self.missing.any())

    def take(self, index: Sequence[int] | np.ndarray) -> Dataset:
        index = np.asarray(index, dtype=np.intp)
        labels = None if self.labels is None else self.labels[index]
        return Dataset(self.values[index], labels, self.feature_names)

    def with_values(self, values: np.ndarray) -> Dataset:
        return Dataset(values, self.labels, self.feature_names)

    def without_labels(self) -> Dataset:
        return Dataset(self.values, None, self.feature_names)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        same_labels = (self.labels is None and other.labels is None) or (
            self.labels is not None
            and other.labels is not None
            and np.array_equal(self.labels, other.labels)
        )
        return (
            self.feature_names == other.feature_names
            and self.values.shape == other.values.shape
            and np.array_equal(self.values, other.values, equal_nan=True)
            and same_labels
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True, eq=False)
class FeatureBounds:
    lower: np.ndarray
    upper: np.ndarray
    mode: str = "minmax"
    percentiles: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        lower = np.asarray(self.lower, dtype=np.float64)
        upper = np.asarray(self.upper, dtype=np.float64)
        if lower.shape != upper.shape or lower.ndim != 1:
            raise DatasetError("bounds must be two 1-D arrays of equal length")
        if not (lower <= upper).all():
            raise DatasetError("lower bound exceeds upper bound")
        object.__setattr__(self, "lower", _frozen(lower))
        object.__setattr__(self, "upper", _frozen(upper))


def _check_no_empty_feature(d: Dataset) -> None:
    empty = np.flatnonzero(d.missing.all(axis=0)) if d.rows else np.arange(d.features)
    if empty.size:
        names = ", ".join(d.feature_names[k] for k in empty[:5])
        raise DatasetError(f"feature(s) entirely missing: {names}")


def feature_bounds(
    d: Dataset, mode: str = "minmax", percentiles: tuple[float, float] = (1.0, 99.0)
) -> FeatureBounds:
    """Per-feature [lower, upper] ignoring missing cells.

    ``mode="percentile"`` uses the given lower/upper percentiles instead of
    the extremes, which keeps a few extreme values from stretching the box.
    """
    _check_no_empty_feature(d)
    if mode == "minmax":
        return FeatureBounds(np.nanmin(d.values, axis=0), np.nanmax(d.values, axis=0), "minmax")
    if mode == "percentile":
        lo, hi = percentiles
        if not 0.0 <= lo <= hi <= 100.0:
            raise DatasetError(f"invalid percentiles {percentiles}")
        lower = np.nanpercentile(d.values, lo, axis=0)
        upper = np.nanpercentile(d.values, hi, axis=0)
        return FeatureBounds(lower, upper, "percentile", (float(lo), float(hi)))
    raise DatasetError(f"unknown bounds mode {mode!r}")


def _parse_cell(text: str, line: int, column: str) -> float:
    text = text.strip()
    if text == "":
        return math.nan
    try:
        value = float(text)
    except ValueError:
        raise DatasetError(f"line {line}, column {column!r}: non-numeric cell {text!r}") from None
    if not math.isfinite(value):
        raise DatasetError(f"line {line}, column {column!r}: non-finite cell {text!r}")
    return value


def load_csv(path: str | Path, label_column: str | None = None) -> Dataset:
    """Read a header-first numeric CSV; empty fields become missing cells."""
    path = Path(path)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DatasetError(f"cannot read {path}: {exc.strerror or exc}") from None
    if not rows:
        raise DatasetError(f"{path}: empty file, header row required")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    if body and body[-1] == []:
        body = body[:-1]
    if label_column is not None and label_column not in header:
        raise DatasetError(f"{path}: label column {label_column!r} not in header")

    values = np.empty((len(body), len(header)), dtype=np.float64)
    for r, row in enumerate(body):
        if len(row) != len(header):
            raise DatasetError(f"{path}: line {r + 2} has {len(row)} fields, expected {len(header)}")
        for c, cell in enumerate(row):
            values[r, c] = _parse_cell(cell, r + 2, header[c])

    labels = None
    if label_column is not None:
        k = header.index(label_column)
        raw = values[:, k]
        if np.isnan(raw).any() or not np.isin(raw, (0.0, 1.0)).all():
            raise DatasetError(f"{path}: label column {label_column!r} must contain only 0 and 1")
        labels = raw.astype(np.int8)
        values = np.delete(values, k, axis=1)
        header = header[:k] + header[k + 1:]
    return Dataset(values, labels, tuple(header))


def write_csv(d: Dataset, path: str | Path, label_column: str | None = "label") -> None:
    """Write ``d`` as CSV; missing cells become empty fields, floats use ``repr``."""
    header = list(d.feature_names)
    with_labels = d.labels is not None and label_column is not None
    if with_labels:
        header.append(label_column)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in range(d.rows):
            row = ["" if math.isnan(v) else repr(float(v)) for v in d.values[r]]
            if with_labels:
                row.append(str(int(d.labels[r])))
            w.writerow(row)


def impute_mean(d: Dataset) -> Dataset:
    """Replace each missing cell with the mean of its feature's observed cells."""
    if not d.has_missing:
        return d
    _check_no_empty_feature(d)
    means = np.nanmean(d.values, axis=0)
    values = np.where(d.missing, means[np.newaxis, :], d.values)
    return d.with_values(values)


def inject_mcar(d: Dataset, rate: float, seed: int) -> Dataset:
    """Blank each cell independently with probability ``rate`` (MCAR).

    Cells that were already missing stay missing. Labels are untouched.
    """
    if not 0.0 <= rate < 1.0:
        raise DatasetError(f"MCAR rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return d
    mask = substream(seed, "mcar").random(d.values.shape) < rate
    return d.with_values(np.where(mask, np.nan, d.values))


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def stratified_indices(labels: np.ndarray, n: int, seed: int) -> np.ndarray:
    """Row indices for a label-balanced sample of size ``n`` without replacement.

    The sample holds ``round(n * outlier_fraction)`` outliers; the returned
    order is shuffled.
    """
    labels = np.asarray(labels)
    rows = labels.shape[0]
    if not 0 < n <= rows:
        raise DatasetError(f"sample size {n} outside 1..{rows}")
    outliers = np.flatnonzero(labels == 1)
    inliers = np.flatnonzero(labels == 0)
    n_out = _round_half_up(n * outliers.size / rows)
    n_out = min(max(n_out, n - inliers.size), outliers.size)
    rng = substream(seed, "subsample")
    pick = np.concatenate(
        [
            rng.choice(outliers, size=n_out, replace=False),
            rng.choice(inliers, size=n - n_out, replace=False),
        ]
    )
    return rng.permutation(pick)


def stratified_subsample(d: Dataset, n: int, seed: int) -> Dataset:
    if d.labels is None:
        raise DatasetError("stratified subsampling needs labels")
    if n > d.rows:
        raise DatasetError(f"cannot sample {n} rows from {d.rows}")
    return d.take(stratified_indices(d.labels, n, seed))
