"""Per-segment statistical features and standardization.

Each segment is summarised by 12 statistics over four series, giving a
48-wide vector laid out as::

    [0:12]  frame length, uplink
    [12:24] frame length, downlink
    [24:36] inter-arrival time, uplink
    [36:48] inter-arrival time, downlink

Statistics use sample conventions (n-1 variance, bias-corrected skew and
excess kurtosis); statistics undefined for a short series are filled with 0.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .records import ActivityLabel, Direction
from .segment import FlowSegment
from .validation import check_features

__all__ = [
    "FEATURE_NAMES",
    "N_FEATURES",
    "STAT_NAMES",
    "DirectionalStats",
    "FeatureStandardizer",
    "FeatureTable",
    "FeatureVector",
    "Scaler",
    "SegmentFeaturizer",
    "apply_scaler",
    "featurize",
    "featurize_segments",
    "fit_scaler",
    "interarrival",
    "read_feature_csv",
    "stats12",
    "write_feature_csv",
]

STAT_NAMES = (
    "minimum",
    "maximum",
    "standard_deviation",
    "first_quartile",
    "second_quartile",
    "third_quartile",
    "mean",
    "median_absolute_deviation",
    "variance",
    "skew",
    "kurtosis",
    "sum",
)
BLOCKS = ("len_up", "len_down", "iat_up", "iat_down")
N_FEATURES = len(STAT_NAMES) * len(BLOCKS)
FEATURE_NAMES = tuple(f"{block}_{stat}" for block in BLOCKS for stat in STAT_NAMES)


class DirectionalStats(NamedTuple):
    minimum: float
    maximum: float
    standard_deviation: float
    first_quartile: float
    second_quartile: float
    third_quartile: float
    mean: float
    median_absolute_deviation: float
    variance: float
    skew: float
    kurtosis: float
    sum: float


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    label: ActivityLabel | None = None
    window_index: int = 0


def interarrival(timestamps: Sequence[float]) -> np.ndarray:
    """Consecutive differences of a non-decreasing timestamp series."""
    ts = np.asarray(timestamps, dtype=float)
    if ts.size < 2:
        return np.empty(0)
    gaps = np.diff(ts)
    if np.any(gaps < 0):
        raise ValueError("timestamps must be non-decreasing")
    return gaps


def stats12(series: Sequence[float]) -> DirectionalStats:
    """The twelve summary statistics of one series.

    Quartiles interpolate linearly between order statistics.  Variance and
    standard deviation need n >= 2, skew n >= 3 and kurtosis n >= 4; below
    that (or for a constant series) they are 0.  An empty series gives
    all zeros.
    """
    x = np.asarray(series, dtype=float)
    n = x.size
    if n == 0:
        return DirectionalStats(*([0.0] * 12))
    if not np.all(np.isfinite(x)):
        raise ValueError("series contains non-finite values")

    lo, hi = float(x.min()), float(x.max())
    q1, q2, q3 = (float(v) for v in np.quantile(x, [0.25, 0.5, 0.75]))
    mad = float(np.median(np.abs(x - q2)))
    mean = float(x.mean())
    total = float(x.sum())

    var = std = skew = kurt = 0.0
    if n >= 2 and hi > lo:
        dev = x - mean
        sq = dev * dev
        m2 = float(sq.sum())
        var = m2 / (n - 1)
        std = float(np.sqrt(var))
        m2 /= n
        if n >= 3:
            m3 = float((sq * dev).sum()) / n
            skew = np.sqrt(n * (n - 1.0)) / (n - 2.0) * m3 / m2**1.5
        if n >= 4:
            m4 = float((sq * sq).sum()) / n
            g2 = m4 / (m2 * m2) - 3.0
            kurt = ((n + 1.0) * g2 + 6.0) * (n - 1.0) / ((n - 2.0) * (n - 3.0))
    return DirectionalStats(lo, hi, std, q1, q2, q3, mean, mad, var, float(skew), float(kurt), total)


def featurize(segment: FlowSegment) -> FeatureVector:
    """48-feature summary of one segment, per direction."""
    up_len, down_len, up_ts, down_ts = [], [], [], []
    for rec in segment.frames:
        if rec.direction is Direction.UP:
            up_len.append(rec.length)
            up_ts.append(rec.ts)
        else:
            down_len.append(rec.length)
            down_ts.append(rec.ts)
    values = np.concatenate(
        [
            stats12(up_len),
            stats12(down_len),
            stats12(interarrival(up_ts)),
            stats12(interarrival(down_ts)),
        ]
    )
    return FeatureVector(values, segment.label, segment.window_index)


def featurize_segments(segments: Iterable[FlowSegment]) -> "FeatureTable":
    vectors = [featurize(seg) for seg in segments]
    return FeatureTable.from_vectors(vectors)


@dataclass
class FeatureTable:
    """A labelled feature matrix, the unit exchanged through feature CSVs."""

    X: np.ndarray
    labels: list = field(default_factory=list)
    window_index: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float).reshape(-1, N_FEATURES)
        if not self.labels:
            self.labels = [None] * len(self.X)
        if len(self.window_index) == 0:
            self.window_index = np.zeros(len(self.X), dtype=int)
        self.window_index = np.asarray(self.window_index, dtype=int)
        if not (len(self.labels) == len(self.window_index) == len(self.X)):
            raise ValueError("labels, window_index and X must have the same length")

    def __len__(self) -> int:
        return len(self.X)

    @classmethod
    def from_vectors(cls, vectors: Sequence[FeatureVector]) -> "FeatureTable":
        if not vectors:
            return cls(np.empty((0, N_FEATURES)))
        return cls(
            np.vstack([v.values for v in vectors]),
            [v.label for v in vectors],
            np.array([v.window_index for v in vectors], dtype=int),
        )

    @property
    def apps(self) -> list:
        return [lab.app if lab is not None else None for lab in self.labels]

    def subset(self, mask_or_index) -> "FeatureTable":
        idx = np.asarray(mask_or_index)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        return FeatureTable(self.X[idx], [self.labels[i] for i in idx], self.window_index[idx])

    def concat(self, other: "FeatureTable") -> "FeatureTable":
        return FeatureTable(
            np.vstack([self.X, other.X]),
            list(self.labels) + list(other.labels),
            np.concatenate([self.window_index, other.window_index]),
        )


def write_feature_csv(table: FeatureTable, stream) -> None:
    """Write ``app,activity,window_index,f00..f47``; floats as shortest round-trip repr."""
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["app", "activity", "window_index"] + [f"f{i:02d}" for i in range(N_FEATURES)])
    for label, k, row in zip(table.labels, table.window_index, table.X):
        app, act = (label.app, label.activity) if label is not None else ("", "")
        writer.writerow([app, act, int(k)] + [repr(float(v)) for v in row])


def read_feature_csv(stream) -> FeatureTable:
    reader = csv.reader(stream)
    header = next(reader, None)
    expected = ["app", "activity", "window_index"] + [f"f{i:02d}" for i in range(N_FEATURES)]
    if header != expected:
        raise ValueError("feature CSV header must be app,activity,window_index,f00..f47")
    labels, idx, rows = [], [], []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(expected):
            raise ValueError(f"feature CSV row has {len(row)} columns at line {lineno}")
        try:
            labels.append(ActivityLabel(row[0], row[1]) if row[0] or row[1] else None)
            idx.append(int(row[2]))
            rows.append([float(v) for v in row[3:]])
        except ValueError as exc:
            raise ValueError(f"{exc} at line {lineno}") from None
    X = np.array(rows, dtype=float).reshape(-1, N_FEATURES)
    if not np.all(np.isfinite(X)):
        raise ValueError("feature CSV contains non-finite values")
    return FeatureTable(X, labels, np.array(idx, dtype=int))


@dataclass
class Scaler:
    mean: np.ndarray
    std: np.ndarray

    def to_json(self) -> dict:
        return {"mean": [float(v) for v in self.mean], "std": [float(v) for v in self.std]}

    @classmethod
    def from_json(cls, obj: dict) -> "Scaler":
        return cls(np.asarray(obj["mean"], dtype=float), np.asarray(obj["std"], dtype=float))


def fit_scaler(matrix) -> Scaler:
    """Per-feature mean and population standard deviation."""
    if isinstance(matrix, (list, tuple)) and matrix and isinstance(matrix[0], FeatureVector):
        matrix = np.vstack([v.values for v in matrix])
    X = np.asarray(matrix, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.shape[0] == 0:
        raise ValueError("cannot fit a scaler on an empty matrix")
    with np.errstate(over="ignore", invalid="ignore"):
        mean = X.mean(axis=0)
        std = np.sqrt(((X - mean) ** 2).mean(axis=0))
    if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(std))):
        raise ValueError("feature magnitudes overflow the scaler")
    # a column of identical values must come out exactly constant
    const = np.all(X == X[0], axis=0)
    mean[const] = X[0, const]
    std[const] = 0.0
    return Scaler(mean, std)


def apply_scaler(scaler: Scaler, X):
    """``(x - mean) / std``; features with zero std map to 0.

    Accepts a single vector, a 2-D matrix or a :class:`FeatureVector`.
    """
    if isinstance(X, FeatureVector):
        return FeatureVector(apply_scaler(scaler, X.values), X.label, X.window_index)
    arr = np.asarray(X, dtype=float)
    if arr.shape[-1] != scaler.mean.shape[0]:
        raise ValueError(f"expected {scaler.mean.shape[0]} features, got {arr.shape[-1]}")
    safe = np.where(scaler.std > 0, scaler.std, 1.0)
    out = (arr - scaler.mean) / safe
    return np.where(scaler.std > 0, out, 0.0)


class SegmentFeaturizer(TransformerMixin, BaseEstimator):
    """Stateless transformer: list of :class:`FlowSegment` -> (n, 48) matrix."""

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        return featurize_segments(X).X


class FeatureStandardizer(TransformerMixin, BaseEstimator):
    """Standardize features with population statistics; constant columns map to 0."""

    def fit(self, X, y=None):
        X = check_features(X, n_features=None)
        self.scaler_ = fit_scaler(X)
        self.mean_ = self.scaler_.mean
        self.scale_ = self.scaler_.std
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "scaler_")
        X = check_features(X, n_features=self.n_features_in_)
        return apply_scaler(self.scaler_, X)
