"""Feature matrices, feature-set masks, row selectors and z-score normalisation.

A :class:`FeatureMatrix` is laid out features x time: each column is the
feature vector of one interval and each row is one feature. The canonical
row order is::

    ul_count, dl_count, ul_bytes, dl_bytes, ul_dl_ratio,
    proto_TCP, proto_UDP, proto_QUIC, proto_OTHER
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .ingest import DEFAULT_TAU, PROTOCOLS, IntervalFeatures, IntervalSeries

SCALAR_FEATURES = ("ul_count", "dl_count", "ul_bytes", "dl_bytes", "ul_dl_ratio")
PROTOCOL_FEATURES = tuple(f"proto_{p}" for p in PROTOCOLS)
CANONICAL_FEATURES = SCALAR_FEATURES + PROTOCOL_FEATURES
SCALE_FLOOR = 1e-12


class FeatureSet(enum.Enum):
    FS1 = ("ul_count", "dl_count", "ul_bytes", "dl_bytes", "ul_dl_ratio")
    FS2 = ("ul_count", "ul_dl_ratio")
    FS3 = ("ul_count",)
    FS4 = ("ul_count", "dl_count", "ul_dl_ratio")
    FS5 = ("ul_count", "dl_count")
    FS6 = ("ul_count", "dl_count", "protocol_counts")

    @property
    def mask(self) -> frozenset:
        return frozenset(self.value)

    @property
    def feature_names(self) -> tuple:
        names = []
        for f in SCALAR_FEATURES:
            if f in self.mask:
                names.append(f)
        if "protocol_counts" in self.mask:
            names.extend(PROTOCOL_FEATURES)
        return tuple(names)

    @property
    def width(self) -> int:
        return len(self.feature_names)

    @classmethod
    def parse(cls, value) -> "FeatureSet":
        if isinstance(value, FeatureSet):
            return value
        key = str(value).upper().replace("-", "")
        try:
            return cls[key]
        except KeyError:
            raise ValueError(f"unknown feature set {value!r} (expected fs1..fs6)") from None

    @classmethod
    def from_names(cls, names) -> "FeatureSet":
        """The feature set whose expanded feature names equal ``names``."""
        for fs in cls:
            if fs.feature_names == tuple(names):
                return fs
        raise ValueError(f"no feature set has features {tuple(names)}")


@dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray
    feature_names: tuple
    tau: float = DEFAULT_TAU
    start_index: int = 0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError("feature matrix must be 2-D (features x intervals)")
        if values.shape[0] != len(self.feature_names):
            raise ValueError(
                f"{values.shape[0]} rows but {len(self.feature_names)} feature names"
            )
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    @property
    def n_features(self) -> int:
        return self.values.shape[0]

    @property
    def n_intervals(self) -> int:
        return self.values.shape[1]

    @property
    def samples(self) -> np.ndarray:
        """Time-major view, shape ``(n_intervals, n_features)``."""
        return self.values.T

    def row(self, name) -> np.ndarray:
        return self.values[self.feature_names.index(name)]

    def columns(self, start, stop) -> "FeatureMatrix":
        return FeatureMatrix(
            self.values[:, start:stop], self.feature_names, self.tau,
            self.start_index + start,
        )

    def with_values(self, values) -> "FeatureMatrix":
        return FeatureMatrix(values, self.feature_names, self.tau, self.start_index)


def _as_series(intervals) -> IntervalSeries:
    if isinstance(intervals, IntervalSeries):
        return intervals
    intervals = list(intervals)
    if intervals and not isinstance(intervals[0], IntervalFeatures):
        raise TypeError("expected IntervalFeatures items")
    return IntervalSeries.from_features(intervals)


def build_matrix(intervals, fs=FeatureSet.FS5) -> FeatureMatrix:
    """Stack the active features of ``fs`` for every interval."""
    fs = FeatureSet.parse(fs)
    series = _as_series(intervals)
    if len(series) == 0:
        raise ValueError("cannot build a feature matrix from zero intervals")
    rows = []
    for name in fs.feature_names:
        if name in PROTOCOL_FEATURES:
            rows.append(series.column(name[len("proto_"):]))
        else:
            rows.append(series.column(name))
    return FeatureMatrix(
        np.vstack(rows).astype(np.float64), fs.feature_names, series.tau,
        series.start_index,
    )


def apply_selector(X: FeatureMatrix, s) -> FeatureMatrix:
    """Keep the rows of ``X`` where the indicator ``s`` is 1."""
    bits = np.asarray(s).reshape(-1)
    if bits.size != X.n_features:
        raise ValueError(
            f"selector length {bits.size} != matrix row count {X.n_features}"
        )
    if not np.all((bits == 0) | (bits == 1)):
        raise ValueError("selector entries must be 0 or 1")
    keep = bits.astype(bool)
    names = tuple(n for n, k in zip(X.feature_names, keep) if k)
    return FeatureMatrix(X.values[keep], names, X.tau, X.start_index)


class Normalizer(TransformerMixin, BaseEstimator):
    """Per-feature z-score with the scale floored at ``scale_floor``.

    Accepts either a :class:`FeatureMatrix` (statistics per row) or a
    sklearn-style array of shape ``(n_samples, n_features)``.
    """

    def __init__(self, scale_floor=SCALE_FLOOR):
        self.scale_floor = scale_floor

    def fit(self, X, y=None):
        samples = self._samples(X)
        if samples.shape[0] == 0:
            raise ValueError("cannot fit a normalizer on zero samples")
        self.shift_ = samples.mean(axis=0)
        self.scale_ = np.maximum(samples.std(axis=0), self.scale_floor)
        self.n_features_in_ = samples.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, ["shift_", "scale_"])
        return self._apply(X, lambda a: (a - self.shift_) / self.scale_)

    def inverse_transform(self, X):
        check_is_fitted(self, ["shift_", "scale_"])
        return self._apply(X, lambda a: a * self.scale_ + self.shift_)

    def transform_feature(self, values, index):
        return (np.asarray(values, dtype=np.float64) - self.shift_[index]) / self.scale_[index]

    def inverse_feature(self, values, index):
        return np.asarray(values, dtype=np.float64) * self.scale_[index] + self.shift_[index]

    def _samples(self, X):
        if isinstance(X, FeatureMatrix):
            return X.samples
        return check_array(X, dtype=np.float64, ensure_min_samples=0)

    def _apply(self, X, fn):
        if isinstance(X, FeatureMatrix):
            return X.with_values(fn(X.samples).T)
        arr = np.asarray(X, dtype=np.float64)
        if arr.shape[-1] != self.shift_.size:
            raise ValueError(
                f"expected {self.shift_.size} features, got {arr.shape[-1]}"
            )
        return fn(arr)

    def to_dict(self):
        check_is_fitted(self, ["shift_", "scale_"])
        return {"shift": self.shift_.tolist(), "scale": self.scale_.tolist()}

    @classmethod
    def from_dict(cls, doc):
        norm = cls()
        norm.shift_ = np.asarray(doc["shift"], dtype=np.float64)
        norm.scale_ = np.asarray(doc["scale"], dtype=np.float64)
        norm.n_features_in_ = norm.shift_.size
        return norm


def fit_normalizer(X: FeatureMatrix, train_range) -> Normalizer:
    """Fit a :class:`Normalizer` on the columns of ``X`` selected by ``train_range``."""
    if isinstance(train_range, slice):
        cols = np.arange(X.n_intervals)[train_range]
    else:
        cols = np.asarray(list(train_range), dtype=np.int64)
    if cols.size == 0:
        raise ValueError("train_range is empty")
    if cols.min() < 0 or cols.max() >= X.n_intervals:
        raise ValueError("train_range falls outside the matrix")
    return Normalizer().fit(X.samples[cols])


class FeatureSetTransformer(TransformerMixin, BaseEstimator):
    """Pipeline step mapping an :class:`IntervalSeries` to a sample-major array."""

    def __init__(self, feature_set="FS5"):
        self.feature_set = feature_set

    def fit(self, X, y=None):
        FeatureSet.parse(self.feature_set)
        return self

    def transform(self, X):
        return build_matrix(X, self.feature_set).samples

    def get_feature_names_out(self, input_features=None):
        return np.asarray(FeatureSet.parse(self.feature_set).feature_names, dtype=object)


def _fmt(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def write_features_csv(X: FeatureMatrix, sink):
    writer = csv.writer(sink, lineterminator="\n")
    writer.writerow(X.feature_names)
    for row in X.samples.tolist():
        writer.writerow([_fmt(v) for v in row])
