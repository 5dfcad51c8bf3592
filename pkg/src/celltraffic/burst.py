"""Burst labelling, probabilistic burst prediction and decision-threshold sweeps.

An interval is a burst when its count is strictly above the burst
threshold. A predicted probability ``p`` is declared a burst when
``p >= theta``.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import ContractError
from .features import FeatureMatrix, FeatureSet, Normalizer, build_matrix
from .ingest import IntervalSeries
from .rnn.forecast import GruEstimatorMixin, next_step_dataset, sliding_windows
from .rnn.network import DEFAULT_HIDDEN, GruNetwork, Head, forward_batch


@dataclass(frozen=True)
class BurstConfig:
    burst_threshold: float
    decision_threshold: float = 0.5

    def __post_init__(self):
        if self.burst_threshold < 0:
            raise ValueError("burst_threshold must be >= 0")
        if not 0.0 <= self.decision_threshold <= 1.0:
            raise ValueError("decision_threshold must lie in [0, 1]")


@dataclass(frozen=True)
class BurstReport:
    theta: float | None
    tp: int
    fp: int
    tn: int
    fn: int
    recall_burst: float | None
    recall_nonburst: float | None
    accuracy: float
    prevalence: float

    def to_dict(self):
        return asdict(self)


def label_bursts(counts, burst_threshold: float) -> np.ndarray:
    return (np.asarray(counts, dtype=np.float64) > burst_threshold).astype(np.int64)


def burst_report(predicted, labels, theta=None) -> BurstReport:
    pred = np.asarray(predicted).astype(bool).reshape(-1)
    lab = np.asarray(labels).astype(bool).reshape(-1)
    if pred.size != lab.size:
        raise ValueError("predictions and labels differ in length")
    if lab.size == 0:
        raise ValueError("no labels to score")
    tp = int(np.sum(pred & lab))
    fn = int(np.sum(~pred & lab))
    fp = int(np.sum(pred & ~lab))
    tn = int(np.sum(~pred & ~lab))
    n = lab.size
    return BurstReport(
        theta=None if theta is None else float(theta),
        tp=tp, fp=fp, tn=tn, fn=fn,
        recall_burst=tp / (tp + fn) if tp + fn else None,
        recall_nonburst=tn / (tn + fp) if tn + fp else None,
        accuracy=(tp + tn) / n,
        prevalence=(tp + fn) / n,
    )


def persistence_burst_baseline(labels) -> np.ndarray:
    """Predict each interval's label as the previous interval's label."""
    lab = np.asarray(labels, dtype=np.int64).reshape(-1)
    if lab.size < 2:
        raise ValueError("persistence needs at least two labels")
    return np.concatenate(([0], lab[:-1]))


def sweep_thresholds(probabilities, labels, grid):
    """Score every ``theta`` in ascending ``grid``.

    Returns ``(reports, crossover_theta)`` where the crossover minimises
    ``|recall_burst - recall_nonburst|`` (first such theta on ties).
    """
    grid = np.asarray(grid, dtype=np.float64).reshape(-1)
    if grid.size == 0:
        raise ValueError("threshold grid is empty")
    if np.any(np.diff(grid) < 0):
        raise ValueError("threshold grid must be sorted ascending")
    probs = np.asarray(probabilities, dtype=np.float64).reshape(-1)
    reports = [burst_report(probs >= th, labels, th) for th in grid]
    gaps = [
        abs(r.recall_burst - r.recall_nonburst)
        if r.recall_burst is not None and r.recall_nonburst is not None else np.inf
        for r in reports
    ]
    crossover = float(grid[int(np.argmin(gaps))]) if np.isfinite(min(gaps)) else None
    return reports, crossover


def report_at(reports, theta):
    for r in reports:
        if r.theta == theta:
            return r
    raise KeyError(theta)


def write_sweep_csv(reports, sink):
    writer = csv.writer(sink, lineterminator="\n")
    writer.writerow(["theta", "recall_burst", "recall_nonburst", "accuracy", "tp", "fp", "tn", "fn"])
    for r in reports:
        writer.writerow([
            r.theta,
            "" if r.recall_burst is None else r.recall_burst,
            "" if r.recall_nonburst is None else r.recall_nonburst,
            r.accuracy, r.tp, r.fp, r.tn, r.fn,
        ])


def _raw_window(net, window):
    samples = window.samples if isinstance(window, FeatureMatrix) else np.asarray(window, dtype=np.float64)
    if net.normalizer is not None:
        samples = net.normalizer.transform(samples)
    return samples


def predict_burst(net: GruNetwork, window, theta: float = 0.5):
    """Probability of a burst in the interval after ``window`` and the decision."""
    if net.head is not Head.SIGMOID:
        raise ContractError(f"burst prediction needs a sigmoid head, network has {net.head.value}")
    if not 0.0 <= theta <= 1.0:
        raise ValueError("theta must lie in [0, 1]")
    out, _ = forward_batch(net, _raw_window(net, window))
    p = float(out[0, 0])
    return p, p >= theta


class GRUBurstPredictor(GruEstimatorMixin, ClassifierMixin, BaseEstimator):
    """Predict whether the next interval is a burst.

    ``fit`` takes the training :class:`IntervalSeries`. The burst threshold is
    ``burst_threshold`` when given, else ``threshold_sd`` times the standard
    deviation of the training ``target`` column. The head is a sigmoid
    trained with squared error.
    """

    def __init__(self, feature_set="FS5", target="ul_count", burst_threshold=None,
                 threshold_sd=1.0, theta=0.5, hidden_size=DEFAULT_HIDDEN, window_length=20,
                 learning_rate=1e-3, epochs=10, batch_size=64, seed=0,
                 gradient_clip_norm=5.0):
        self.feature_set = feature_set
        self.target = target
        self.burst_threshold = burst_threshold
        self.threshold_sd = threshold_sd
        self.theta = theta
        self.hidden_size = hidden_size
        self.window_length = window_length
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.gradient_clip_norm = gradient_clip_norm

    def fit(self, X, y=None):
        if not isinstance(X, IntervalSeries):
            X = IntervalSeries.from_features(X)
        M = build_matrix(X, FeatureSet.parse(self.feature_set))
        counts = X.column(self.target).astype(np.float64)
        if self.burst_threshold is not None:
            self.threshold_ = float(self.burst_threshold)
        else:
            self.threshold_ = float(self.threshold_sd * counts.std())
        labels = label_bursts(counts, self.threshold_)
        norm = Normalizer().fit(M)
        Xw, Yw = next_step_dataset(norm.transform(M.samples), labels, self.window_length)
        net = self._new_network(
            M.n_features, 1, Head.SIGMOID, input_feature_names=M.feature_names,
            normalizer=norm, target_name=self.target,
        )
        self.classes_ = np.array([0, 1])
        return self._fit_network(net, Xw, Yw)

    def burst_probability(self, X):
        """Burst probability for each interval of ``X`` after the first window."""
        check_is_fitted(self, "net_")
        if not isinstance(X, IntervalSeries):
            X = IntervalSeries.from_features(X)
        M = build_matrix(X, FeatureSet.parse(self.feature_set))
        W = sliding_windows(self.net_.normalizer.transform(M.samples), self.window_length)[:-1]
        if W.shape[0] == 0:
            return np.empty(0)
        out, _ = forward_batch(self.net_, W)
        return out[:, 0]

    def predict_proba(self, X):
        p = self.burst_probability(X)
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return (self.burst_probability(X) >= self.theta).astype(np.int64)

    def labels_for(self, X):
        """Ground-truth labels aligned with :meth:`predict` output."""
        check_is_fitted(self, "threshold_")
        if not isinstance(X, IntervalSeries):
            X = IntervalSeries.from_features(X)
        return label_bursts(X.column(self.target), self.threshold_)[self.window_length :]
