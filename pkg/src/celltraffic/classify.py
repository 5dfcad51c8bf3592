"""Application classification of traffic windows with a softmax GRU."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .features import FeatureMatrix, FeatureSet, Normalizer, build_matrix
from .ingest import IntervalSeries
from .rnn.forecast import GruEstimatorMixin, sliding_windows
from .rnn.network import DEFAULT_HIDDEN, GruNetwork, Head, forward_batch
from .rnn.training import TrainConfig, train


@dataclass
class ClassReport:
    feature_set: str
    decision_interval_s: float
    classes: tuple
    confusion: np.ndarray

    @property
    def support(self) -> np.ndarray:
        return self.confusion.sum(axis=1)

    @property
    def total(self) -> int:
        return int(self.confusion.sum())

    @property
    def accuracy(self) -> float:
        return float(np.trace(self.confusion) / self.total)

    @property
    def per_class_recall(self) -> dict:
        out = {}
        for i, c in enumerate(self.classes):
            s = self.confusion[i].sum()
            out[c] = float(self.confusion[i, i] / s) if s else None
        return out

    def to_dict(self) -> dict:
        return {
            "feature_set": self.feature_set,
            "decision_interval_s": self.decision_interval_s,
            "accuracy": self.accuracy,
            "per_class": self.per_class_recall,
            "confusion": self.confusion.tolist(),
        }


def labeled_windows(intervals, labels, fs, m: int):
    """Windows of ``m`` intervals whose intervals all carry the same label.

    ``labels`` is a list of ``(interval_index, app)``. Returns
    ``(windows, window_labels, end_indices)`` with ``windows`` raw (not
    normalised) of shape ``(N, m, F)``.
    """
    if not isinstance(intervals, IntervalSeries):
        intervals = IntervalSeries.from_features(intervals)
    M = build_matrix(intervals, fs)
    n = len(intervals)
    lab = np.full(n, None, dtype=object)
    for k, app in labels:
        pos = k - intervals.start_index
        if 0 <= pos < n:
            lab[pos] = app
    codes = {app: i for i, app in enumerate(sorted({a for a in lab if a is not None}))}
    code = np.array([codes[a] if a is not None else -1 for a in lab])
    W = sliding_windows(M.samples, m)
    if W.shape[0] == 0:
        return np.empty((0, m, M.n_features)), [], np.empty(0, dtype=np.int64)
    cw = sliding_windows(code[:, None].astype(np.float64), m)[:, :, 0]
    ok = (cw.min(axis=1) == cw.max(axis=1)) & (cw[:, 0] >= 0)
    ends = np.nonzero(ok)[0] + m - 1
    return W[ok], [lab[e] for e in ends], ends + intervals.start_index


def _samples(window, fs_names=None):
    if isinstance(window, FeatureMatrix):
        if fs_names is not None and window.feature_names != fs_names:
            missing = [f for f in fs_names if f not in window.feature_names]
            if missing:
                raise ValueError(f"window lacks features {missing}")
            rows = [window.feature_names.index(f) for f in fs_names]
            return window.values[rows].T
        return window.samples
    return np.asarray(window, dtype=np.float64)


def _fit_softmax_net(X, y, feature_names, config, hidden_size, classes=None):
    classes = tuple(sorted(set(y))) if classes is None else tuple(classes)
    if len(classes) < 2:
        raise ValueError("classification needs at least two classes in the training data")
    index = {c: i for i, c in enumerate(classes)}
    Y = np.zeros((len(y), len(classes)))
    Y[np.arange(len(y)), [index[c] for c in y]] = 1.0
    norm = Normalizer().fit(X.reshape(-1, X.shape[-1]))
    net = GruNetwork.create(
        X.shape[-1], hidden_size, len(classes), Head.SOFTMAX, seed=config.seed,
        input_feature_names=feature_names, normalizer=norm,
        window_length=X.shape[1], classes=classes,
    )
    net, history = train(net, (norm.transform(X), Y), config)
    return net, history


def train_classifier(labeled, fs, config: TrainConfig = TrainConfig(),
                     hidden_size=DEFAULT_HIDDEN) -> GruNetwork:
    """Train a softmax GRU on ``[(window, app_label), ...]``."""
    fs = FeatureSet.parse(fs)
    items = list(labeled)
    if not items:
        raise ValueError("no labeled windows")
    X = np.stack([_samples(w, fs.feature_names) for w, _ in items])
    y = [lab for _, lab in items]
    net, _ = _fit_softmax_net(X, y, fs.feature_names, config, hidden_size)
    return net


def _log_probs(net, windows):
    X = np.asarray(windows, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    if net.normalizer is not None:
        X = net.normalizer.transform(X)
    out, cache = forward_batch(net, X)
    logits = cache.logits
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True)), out


def classify_window(net: GruNetwork, window):
    """Return ``(label, probabilities)`` for one raw window; ties go to the lowest index."""
    if net.head is not Head.SOFTMAX:
        raise ValueError("classification needs a softmax head")
    names = net.input_feature_names or None
    samples = _samples(window, names)
    if samples.shape[-1] != net.input_size:
        raise ValueError(f"window has {samples.shape[-1]} features, network expects {net.input_size}")
    _, probs = _log_probs(net, samples)
    k = int(np.argmax(probs[0]))
    return (net.classes[k] if net.classes else k), probs[0]


def _groups(labels, ends, j):
    # split runs of equal label and consecutive end index into chunks of j
    groups, cur = [], []
    for i, (lab, e) in enumerate(zip(labels, ends)):
        if cur and (lab != labels[cur[-1]] or e != ends[cur[-1]] + 1 or len(cur) == j):
            groups.append(cur)
            cur = []
        cur.append(i)
    if cur:
        groups.append(cur)
    return groups


def evaluate_classifier(net: GruNetwork, windows, labels, decision_interval: float,
                        tau: float, ends=None, feature_set="") -> ClassReport:
    """Score windows, deciding once per ``decision_interval`` seconds.

    With ``j = decision_interval / tau`` consecutive windows per decision the
    chosen class maximises the summed log-probabilities of the group.
    ``ends`` gives each window's last interval index (defaults to 0, 1, ...).
    """
    X = np.stack([_samples(w, net.input_feature_names or None) for w in windows]) if (
        isinstance(windows, list)
    ) else np.asarray(windows, dtype=np.float64)
    if X.shape[0] == 0:
        raise ValueError("no test windows")
    if len(labels) != X.shape[0]:
        raise ValueError("one label per window is required")
    ratio = decision_interval / tau
    j = int(round(ratio))
    if j < 1 or not math.isclose(ratio, j, rel_tol=0, abs_tol=1e-9):
        raise ValueError("decision_interval must be a positive multiple of tau")
    ends = np.arange(X.shape[0]) if ends is None else np.asarray(ends)
    logp, _ = _log_probs(net, X)
    classes = net.classes
    index = {c: i for i, c in enumerate(classes)}
    conf = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for g in _groups(list(labels), ends, j):
        pred = int(np.argmax(logp[g].sum(axis=0)))
        conf[index[labels[g[0]]], pred] += 1
    return ClassReport(str(feature_set), float(decision_interval), classes, conf)


class GRUClassifier(GruEstimatorMixin, ClassifierMixin, BaseEstimator):
    """Softmax GRU over raw windows of shape ``(n_windows, steps, features)``."""

    def __init__(self, feature_set="FS5", hidden_size=DEFAULT_HIDDEN, window_length=6,
                 learning_rate=1e-3, epochs=10, batch_size=64, seed=0,
                 gradient_clip_norm=5.0):
        self.feature_set = feature_set
        self.hidden_size = hidden_size
        self.window_length = window_length
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.gradient_clip_norm = gradient_clip_norm

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 3 or X.shape[0] != len(y):
            raise ValueError("X must be (n_windows, steps, features) with one label per window")
        names = FeatureSet.parse(self.feature_set).feature_names
        if X.shape[2] != len(names):
            names = tuple(f"f{i}" for i in range(X.shape[2]))
        self.net_, self.loss_curve_ = _fit_softmax_net(
            X, list(y), names, self._train_config(), self.hidden_size
        )
        self.classes_ = np.array(self.net_.classes, dtype=object)
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "net_")
        _, probs = _log_probs(self.net_, X)
        return probs

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    def evaluate(self, X, y, decision_interval, tau, ends=None):
        check_is_fitted(self, "net_")
        return evaluate_classifier(self.net_, X, list(y), decision_interval, tau, ends,
                                   FeatureSet.parse(self.feature_set).name)
