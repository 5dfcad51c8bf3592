"""Burst-prediction and application-classification experiments."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import synth
from ..burst import (
    GRUBurstPredictor, burst_report, label_bursts, persistence_burst_baseline,
    report_at, sweep_thresholds,
)
from ..classify import ClassReport, _fit_softmax_net, evaluate_classifier, labeled_windows
from ..features import FeatureSet
from ..ingest import DEFAULT_TAU, bin_intervals
from ..rnn.training import TrainConfig

DEFAULT_THETA_GRID = tuple(np.round(np.linspace(0.0, 1.0, 101), 2))


@dataclass
class BurstExperiment:
    burst_threshold: float
    prevalence: float
    reports: list
    crossover_theta: float | None
    crossover: object
    persistence: object

    def to_dict(self):
        return {
            "burst_threshold": self.burst_threshold,
            "prevalence": self.prevalence,
            "crossover_theta": self.crossover_theta,
            "crossover": None if self.crossover is None else self.crossover.to_dict(),
            "persistence": self.persistence.to_dict(),
        }


def run_burst_experiment(intervals, start: int, train_length: int, test_length: int,
                         threshold_sd: float = 1.0, feature_set="FS5", target="ul_count",
                         theta_grid=DEFAULT_THETA_GRID, **gru_params) -> BurstExperiment:
    """Train a sigmoid GRU on one span and sweep the decision threshold on the next.

    The burst threshold is ``threshold_sd`` times the SD of the training
    target. The persistence baseline predicts each test label from the one
    before it, including the last training interval.
    """
    train_stop = start + train_length
    test_stop = train_stop + test_length
    if start < 0 or test_stop > len(intervals):
        raise ValueError(
            f"need {train_length + test_length} intervals from {start}, trace has {len(intervals)}"
        )
    est = GRUBurstPredictor(feature_set=feature_set, target=target, threshold_sd=threshold_sd,
                            **gru_params).fit(intervals[start:train_stop])
    m = est.window_length
    ctx = intervals[train_stop - m : test_stop]
    probs = est.burst_probability(ctx)
    labels = est.labels_for(ctx)
    reports, theta = sweep_thresholds(probs, labels, theta_grid)
    prior = label_bursts(intervals.column(target)[train_stop - 1 : test_stop], est.threshold_)
    persist = burst_report(persistence_burst_baseline(prior)[1:], prior[1:])
    return BurstExperiment(
        burst_threshold=est.threshold_,
        prevalence=float(np.mean(labels)),
        reports=reports,
        crossover_theta=theta,
        crossover=None if theta is None else report_at(reports, theta),
        persistence=persist,
    )


def _balanced(index, labels, rng):
    by_class = {}
    for i in index:
        by_class.setdefault(labels[i], []).append(i)
    size = min(len(v) for v in by_class.values())
    keep = [rng.choice(v, size, replace=False) for _, v in sorted(by_class.items())]
    return np.sort(np.concatenate(keep))


@dataclass
class ClassificationExperiment:
    feature_set: str
    folds: int
    report: ClassReport
    fold_reports: list = field(default_factory=list)

    def to_dict(self):
        doc = self.report.to_dict()
        doc["folds"] = self.folds
        doc["fold_accuracy"] = [r.accuracy for r in self.fold_reports]
        return doc


def classification_dataset(hours_per_app=6.0, seed=0, tau=DEFAULT_TAU, fs="FS5",
                           window_length=6):
    """Seeded 4-app mixture windows: ``(windows, labels, ends)``."""
    schedule = synth.classification_schedule(hours_per_app, seed)
    trace, labels = synth.generate_mixture(schedule, seed, tau)
    horizon = schedule[-1][2]
    intervals = bin_intervals(trace, tau, horizon)
    return labeled_windows(intervals, labels, FeatureSet.parse(fs), window_length)


def run_classification_experiment(windows, labels, ends, folds=4, decision_interval=None,
                                  tau=DEFAULT_TAU, feature_set="FS5",
                                  config: TrainConfig = TrainConfig(), hidden_size=32,
                                  shuffle_labels=False, balance=True,
                                  seed=0) -> ClassificationExperiment:
    """k-fold evaluation over contiguous blocks of windows.

    Windows whose intervals overlap the held-out block are dropped from
    training. With ``balance`` every class is subsampled to the size of the
    rarest one, so the training prior does not depend on which block is held
    out. With ``shuffle_labels`` the training labels are permuted, the
    chance-level control.
    """
    windows = np.asarray(windows, dtype=np.float64)
    labels = list(labels)
    ends = np.asarray(ends)
    n = windows.shape[0]
    if folds < 2 or n < folds:
        raise ValueError("need folds >= 2 and at least one window per fold")
    m = windows.shape[1]
    decision_interval = tau if decision_interval is None else decision_interval
    bounds = np.linspace(0, n, folds + 1).astype(int)
    rng = np.random.default_rng(seed)
    classes = tuple(sorted(set(labels)))
    total = np.zeros((len(classes), len(classes)), dtype=np.int64)
    fold_reports = []
    names = FeatureSet.parse(feature_set).feature_names
    for f in range(folds):
        lo, hi = bounds[f], bounds[f + 1]
        e_lo, e_hi = ends[lo], ends[hi - 1]
        # a training window overlaps the test block if its span meets [e_lo-m+1, e_hi]
        train = np.nonzero((ends < e_lo - m + 1) | (ends - m + 1 > e_hi))[0]
        if balance:
            train = _balanced(train, labels, rng)
        y_train = [labels[i] for i in train]
        if shuffle_labels:
            y_train = [y_train[i] for i in rng.permutation(len(y_train))]
        net, _ = _fit_softmax_net(windows[train], y_train, names, config, hidden_size, classes)
        rep = evaluate_classifier(net, windows[lo:hi], labels[lo:hi], decision_interval, tau,
                                  ends[lo:hi], FeatureSet.parse(feature_set).name)
        fold_reports.append(rep)
        total += rep.confusion
    report = ClassReport(FeatureSet.parse(feature_set).name, float(decision_interval), classes, total)
    return ClassificationExperiment(report.feature_set, folds, report, fold_reports)


def shuffled_label_control(windows, labels, ends, repeats=8, folds=4, tau=DEFAULT_TAU,
                           feature_set="FS5", config: TrainConfig = TrainConfig(),
                           hidden_size=32, seed=0):
    """Held-out accuracy with permuted training labels, averaged over ``repeats``.

    One shuffled run scores near-constant predictions against a few long
    same-app blocks, so its accuracy swings widely around ``1/k``. Averaging
    independent shuffles (different label permutations and network seeds)
    gives a stable estimate of the chance level. Returns
    ``(mean_accuracy, per_repeat_accuracy)``.
    """
    seeds = np.random.default_rng(seed).integers(0, 2**31 - 1, size=repeats)
    acc = []
    for s in seeds:
        cfg = TrainConfig(**{**config.to_dict(), "seed": int(s)})
        exp = run_classification_experiment(
            windows, labels, ends, folds=folds, tau=tau, feature_set=feature_set, config=cfg,
            hidden_size=hidden_size, shuffle_labels=True, seed=int(s),
        )
        acc.append(exp.report.accuracy)
    return float(np.mean(acc)), acc
