from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..exceptions import DivergenceError
from ..features import FeatureMatrix
from .network import GruNetwork, as_batch, backward, batch_losses, forward_batch


@dataclass(frozen=True)
class TrainConfig:
    window_length: int = 20
    learning_rate: float = 1e-3
    epochs: int = 10
    batch_size: int = 64
    seed: int = 0
    gradient_clip_norm: float = 5.0

    def __post_init__(self):
        if self.window_length < 1 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("window_length, epochs and batch_size must be >= 1")
        if self.learning_rate < 0 or self.gradient_clip_norm <= 0:
            raise ValueError("learning_rate must be >= 0 and gradient_clip_norm > 0")

    def to_dict(self):
        return asdict(self)


class Adam:
    def __init__(self, params: dict, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1**self.t
        corr2 = 1.0 - b2**self.t
        for k, p in params.items():
            g = grads[k]
            self.m[k] *= b1
            self.m[k] += (1.0 - b1) * g
            self.v[k] *= b2
            self.v[k] += (1.0 - b2) * g * g
            p -= self.lr * (self.m[k] / corr1) / (np.sqrt(self.v[k] / corr2) + self.eps)


def clip_by_global_norm(grads: dict, max_norm: float) -> float:
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def stack_dataset(net, dataset):
    """``[(window, target), ...]`` or ``(X, Y)`` arrays -> ``(X, Y)`` arrays."""
    if isinstance(dataset, tuple) and len(dataset) == 2 and isinstance(dataset[0], np.ndarray):
        X, Y = dataset
    else:
        items = list(dataset)
        if not items:
            raise ValueError("training dataset is empty")
        windows = [w.samples if isinstance(w, FeatureMatrix) else np.asarray(w) for w, _ in items]
        if len({w.shape for w in windows}) != 1:
            raise ValueError("all training windows must have the same shape")
        X = np.stack(windows)
        Y = np.asarray([np.atleast_1d(np.asarray(t, dtype=np.float64)) for _, t in items])
    X = as_batch(net, X)
    Y = np.asarray(Y, dtype=np.float64).reshape(X.shape[0], -1)
    if X.shape[0] == 0:
        raise ValueError("training dataset is empty")
    if Y.shape[1] != net.output_dim:
        raise ValueError(f"targets have {Y.shape[1]} columns, network outputs {net.output_dim}")
    return X, Y


def train(net: GruNetwork, dataset, config: TrainConfig = TrainConfig()):
    """Mini-batch Adam with global-norm clipping; updates ``net`` in place.

    Returns ``(net, epoch_losses)`` where each entry is the mean per-sample
    loss seen during that epoch.
    """
    X, Y = stack_dataset(net, dataset)
    n = X.shape[0]
    rng = np.random.default_rng(config.seed)
    params = net.parameters()
    opt = Adam(params, lr=config.learning_rate)
    history = []
    for epoch in range(config.epochs):
        per_sample = np.empty(n)
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            _, cache = forward_batch(net, X[idx])
            per_sample[idx] = batch_losses(net, cache, Y[idx])
            grads = backward(net, cache, Y[idx])
            clip_by_global_norm(grads, config.gradient_clip_norm)
            opt.step(params, grads)
            net.touch()
        epoch_loss = float(np.mean(per_sample))
        if not np.isfinite(epoch_loss) or not all(np.all(np.isfinite(p)) for p in params.values()):
            raise DivergenceError(epoch, config.learning_rate)
        history.append(epoch_loss)
    return net, history
