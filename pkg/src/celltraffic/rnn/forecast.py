"""Windowing, iterated multi-step prediction and sklearn-style GRU estimators."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ..features import FeatureMatrix, FeatureSet, Normalizer, build_matrix
from ..ingest import IntervalSeries
from .network import DEFAULT_HIDDEN, GruNetwork, Head, forward_batch
from .training import TrainConfig, train


def sliding_windows(samples, m: int) -> np.ndarray:
    """All length-``m`` windows of a ``(T, F)`` array as a ``(T-m+1, m, F)`` view."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.shape[0] < m:
        return np.empty((0, m, samples.shape[1]))
    return sliding_window_view(samples, m, axis=0).transpose(0, 2, 1)


def next_step_dataset(samples, targets, m: int):
    """Windows ``samples[i:i+m]`` paired with ``targets[i+m]``."""
    samples = np.asarray(samples, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64).reshape(samples.shape[0], -1)
    n = samples.shape[0] - m
    if n <= 0:
        raise ValueError(f"need more than {m} intervals to form a training pair")
    return sliding_windows(samples, m)[:n], targets[m:]


def _to_matrix(recent, fs, net):
    if isinstance(recent, FeatureMatrix):
        X = recent
    else:
        X = build_matrix(recent, fs)
    if net.input_feature_names and X.feature_names != net.input_feature_names:
        raise ValueError(
            f"features {X.feature_names} do not match the network's {net.input_feature_names}"
        )
    return X


def predict_next_batch(net: GruNetwork, windows, n: int) -> np.ndarray:
    """Iterated predictions from already-normalised windows ``(B, m, F)``.

    Each step's de-normalised, zero-floored prediction is written back into
    the target feature of the rolled window; other features repeat their
    last observed value. Returns shape ``(B, n)`` in original units.
    """
    if net.head is not Head.REGRESSION:
        raise ValueError("iterated prediction needs a regression head")
    W = np.array(windows, dtype=np.float64, copy=True)
    if W.ndim == 2:
        W = W[None]
    tidx = (
        net.input_feature_names.index(net.target_name)
        if net.target_name in net.input_feature_names else None
    )
    out = np.empty((W.shape[0], n))
    for k in range(n):
        y, _ = forward_batch(net, W)
        value = np.maximum(y[:, 0] * net.target_scale + net.target_shift, 0.0)
        out[:, k] = value
        if k + 1 < n:
            new = W[:, -1, :].copy()
            if tidx is not None:
                new[:, tidx] = (value - net.target_shift) / net.target_scale
            W = np.concatenate([W[:, 1:, :], new[:, None, :]], axis=1)
    return out


def predict_next(net: GruNetwork, recent, fs=None, n: int = 1) -> np.ndarray:
    """Predict the target for the ``n`` intervals following ``recent``."""
    fs = FeatureSet.parse(fs) if fs is not None else None
    X = _to_matrix(recent, fs or FeatureSet.FS5, net)
    m = net.window_length
    if X.n_intervals < m:
        raise ValueError(f"need at least {m} recent intervals, got {X.n_intervals}")
    samples = X.samples[-m:]
    if net.normalizer is not None:
        samples = net.normalizer.transform(samples)
    return predict_next_batch(net, samples[None], n)[0]


def target_scaling(series_values, normalizer, feature_names, target_name):
    if target_name in feature_names:
        i = feature_names.index(target_name)
        return float(normalizer.shift_[i]), float(normalizer.scale_[i])
    t = np.asarray(series_values, dtype=np.float64)
    return float(t.mean()), float(max(t.std(), 1e-12))


class GruEstimatorMixin:
    """Shared constructor parameters and training plumbing for GRU estimators."""

    def _train_config(self):
        return TrainConfig(
            window_length=self.window_length, learning_rate=self.learning_rate,
            epochs=self.epochs, batch_size=self.batch_size, seed=self.seed,
            gradient_clip_norm=self.gradient_clip_norm,
        )

    def _new_network(self, input_size, output_dim, head, **kwargs):
        return GruNetwork.create(
            input_size, self.hidden_size, output_dim, head, seed=self.seed,
            window_length=self.window_length, **kwargs,
        )

    def _fit_network(self, net, X, Y):
        self.net_, self.loss_curve_ = train(net, (X, Y), self._train_config())
        return self


class GRUForecaster(GruEstimatorMixin, RegressorMixin, BaseEstimator):
    """One-interval-ahead traffic forecaster.

    ``fit`` takes an :class:`IntervalSeries` (the training span); the target
    is the next interval's ``target`` column. ``predict`` returns one value
    per interval of ``X`` after the first ``window_length``.
    """

    def __init__(self, feature_set="FS5", target="ul_count", hidden_size=DEFAULT_HIDDEN,
                 window_length=20, learning_rate=1e-3, epochs=10, batch_size=64,
                 seed=0, gradient_clip_norm=5.0):
        self.feature_set = feature_set
        self.target = target
        self.hidden_size = hidden_size
        self.window_length = window_length
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.gradient_clip_norm = gradient_clip_norm

    def _matrix_and_target(self, X):
        fs = FeatureSet.parse(self.feature_set)
        if not isinstance(X, IntervalSeries):
            X = IntervalSeries.from_features(X)
        return build_matrix(X, fs), X.column(self.target).astype(np.float64)

    def fit(self, X, y=None):
        M, target = self._matrix_and_target(X)
        norm = Normalizer().fit(M)
        shift, scale = target_scaling(target, norm, M.feature_names, self.target)
        Xw, Yw = next_step_dataset(norm.transform(M.samples), (target - shift) / scale,
                                   self.window_length)
        net = self._new_network(
            M.n_features, 1, Head.REGRESSION, input_feature_names=M.feature_names,
            normalizer=norm, target_name=self.target, target_shift=shift, target_scale=scale,
        )
        return self._fit_network(net, Xw, Yw)

    def predict(self, X):
        check_is_fitted(self, "net_")
        M, _ = self._matrix_and_target(X)
        W = sliding_windows(self.net_.normalizer.transform(M.samples), self.window_length)[:-1]
        if W.shape[0] == 0:
            return np.empty(0)
        return predict_next_batch(self.net_, W, 1)[:, 0]

    def predict_next(self, recent, n=1):
        check_is_fitted(self, "net_")
        return predict_next(self.net_, recent, self.feature_set, n)
