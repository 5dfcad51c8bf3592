"""Recurrent (GRU) layer -> fully connected layer -> output head."""

from __future__ import annotations

import enum
import itertools
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, log_softmax, softmax

from ..exceptions import ContractError
from ..features import FeatureMatrix, Normalizer
from .cell import PARAM_NAMES, GruParams, sequence_backward, sequence_forward

FORMAT_VERSION = 1
DEFAULT_HIDDEN = 100


class Head(str, enum.Enum):
    REGRESSION = "regression"
    SOFTMAX = "softmax"
    SIGMOID = "sigmoid"


_ids = itertools.count()


@dataclass(eq=False)
class GruNetwork:
    cell: GruParams
    fc_weight: np.ndarray
    fc_bias: np.ndarray
    head: Head = Head.REGRESSION
    input_feature_names: tuple = ()
    normalizer: Normalizer | None = None
    window_length: int = 20
    target_name: str | None = None
    target_shift: float = 0.0
    target_scale: float = 1.0
    classes: tuple = ()
    version: int = field(default=0, compare=False)

    def __post_init__(self):
        self.head = Head(self.head)
        self.fc_weight = np.asarray(self.fc_weight, dtype=np.float64)
        self.fc_bias = np.asarray(self.fc_bias, dtype=np.float64).reshape(-1)
        self.input_feature_names = tuple(self.input_feature_names)
        self.classes = tuple(self.classes)
        if self.fc_weight.shape != (self.fc_bias.size, self.cell.hidden_size):
            raise ValueError(
                f"fc weight shape {self.fc_weight.shape} does not match "
                f"({self.fc_bias.size}, {self.cell.hidden_size})"
            )
        if self.head is Head.SOFTMAX and self.output_dim < 2:
            raise ValueError("a softmax head needs at least two outputs")
        if self.head is not Head.SOFTMAX and self.output_dim != 1:
            raise ValueError(f"a {self.head.value} head has exactly one output")
        if self.input_feature_names and len(self.input_feature_names) != self.input_size:
            raise ValueError("input_feature_names must match the input width")
        self._id = next(_ids)

    @classmethod
    def create(cls, input_size, hidden_size=DEFAULT_HIDDEN, output_dim=1,
               head=Head.REGRESSION, seed=0, **kwargs) -> "GruNetwork":
        if hidden_size <= 0 or input_size <= 0 or output_dim <= 0:
            raise ValueError("layer sizes must be positive")
        rng = np.random.default_rng(seed)
        cell = GruParams.initialize(input_size, hidden_size, rng)
        a = 1.0 / np.sqrt(hidden_size)
        fc_w = rng.uniform(-a, a, (output_dim, hidden_size))
        return cls(cell, fc_w, np.zeros(output_dim), head, **kwargs)

    @property
    def hidden_size(self) -> int:
        return self.cell.hidden_size

    @property
    def input_size(self) -> int:
        return self.cell.input_size

    @property
    def output_dim(self) -> int:
        return self.fc_bias.size

    def parameters(self) -> dict:
        out = self.cell.arrays()
        out["fc_weight"] = self.fc_weight
        out["fc_bias"] = self.fc_bias
        return out

    def touch(self):
        """Mark parameters as changed; invalidates outstanding forward caches."""
        self.version += 1

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "head": self.head.value,
            "input_size": self.input_size,
            "hidden_size": self.hidden_size,
            "output_dim": self.output_dim,
            "window_length": self.window_length,
            "input_feature_names": list(self.input_feature_names),
            "target_name": self.target_name,
            "target_shift": self.target_shift,
            "target_scale": self.target_scale,
            "classes": list(self.classes),
            "normalizer": self.normalizer.to_dict() if self.normalizer is not None else None,
            "weights": {
                name: {"shape": list(a.shape), "data": a.reshape(-1).tolist()}
                for name, a in self.parameters().items()
            },
        }

    @classmethod
    def from_dict(cls, doc) -> "GruNetwork":
        if doc.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported network format {doc.get('format_version')!r}")
        I, H, O = doc["input_size"], doc["hidden_size"], doc["output_dim"]
        expected = {name: (H, I) for name in ("W_r", "W_z", "W")}
        expected.update({name: (H, H) for name in ("U_r", "U_z", "U")})
        expected["fc_weight"] = (O, H)
        expected["fc_bias"] = (O,)
        arrays = {}
        for name, shape in expected.items():
            entry = doc["weights"][name]
            if tuple(entry["shape"]) != shape:
                raise ValueError(f"{name}: stored shape {entry['shape']} != expected {list(shape)}")
            data = np.asarray(entry["data"], dtype=np.float64)
            if data.size != int(np.prod(shape)):
                raise ValueError(f"{name}: {data.size} values for shape {list(shape)}")
            arrays[name] = data.reshape(shape)
        norm = doc.get("normalizer")
        if norm is not None:
            norm = Normalizer.from_dict(norm)
            if norm.shift_.size != I:
                raise ValueError("normalizer width does not match the input size")
        return cls(
            GruParams(**{n: arrays[n] for n in PARAM_NAMES}),
            arrays["fc_weight"], arrays["fc_bias"], Head(doc["head"]),
            tuple(doc.get("input_feature_names", ())), norm, doc["window_length"],
            doc.get("target_name"), doc.get("target_shift", 0.0),
            doc.get("target_scale", 1.0), tuple(doc.get("classes", ())),
        )

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "GruNetwork":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass(eq=False)
class ForwardCache:
    net_id: int
    version: int
    X: np.ndarray
    steps: list
    h_last: np.ndarray
    logits: np.ndarray
    output: np.ndarray


def _activate(logits, head):
    if head is Head.REGRESSION:
        return logits
    if head is Head.SIGMOID:
        return expit(logits)
    return softmax(logits, axis=-1)


def as_batch(net, windows) -> np.ndarray:
    """Coerce a window or batch of windows to ``(batch, steps, features)``."""
    if isinstance(windows, FeatureMatrix):
        X = windows.samples[None]
    else:
        X = np.asarray(windows, dtype=np.float64)
        if X.ndim == 2:
            X = X[None]
    if X.ndim != 3:
        raise ValueError("windows must be 2-D (steps x features) or 3-D (batch x steps x features)")
    if X.shape[2] != net.input_size:
        raise ValueError(f"window has {X.shape[2]} features, network expects {net.input_size}")
    if X.shape[1] < 1:
        raise ValueError("window has no time steps")
    return X


def forward_batch(net: GruNetwork, X):
    X = as_batch(net, X)
    h, steps = sequence_forward(net.cell, X)
    logits = h @ net.fc_weight.T + net.fc_bias
    out = _activate(logits, net.head)
    return out, ForwardCache(net._id, net.version, X, steps, h, logits, out)


def forward_sequence(net: GruNetwork, window):
    """Run one window (features x steps FeatureMatrix, or steps x features array).

    Returns ``(output_vector, cache)``.
    """
    out, cache = forward_batch(net, window)
    if out.shape[0] != 1:
        raise ValueError("forward_sequence takes a single window; use forward_batch")
    return out[0], cache


def _per_sample_loss(output, target, head):
    if head is Head.SOFTMAX:
        p = np.clip(output, 1e-300, None)
        return -np.sum(target * np.log(p), axis=-1)
    return np.sum((output - target) ** 2, axis=-1)


def _coerce_target(output, target):
    output = np.asarray(output, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if target.shape != output.shape:
        if target.size == output.size:
            target = target.reshape(output.shape)
        else:
            raise ValueError(f"target shape {target.shape} != output shape {output.shape}")
    return output, target


def loss(output, target, head=Head.REGRESSION) -> float:
    """Squared error for regression/sigmoid heads, cross-entropy for softmax.

    A batch (2-D) input returns the mean per-sample loss.
    """
    head = Head(head)
    output, target = _coerce_target(output, target)
    per = _per_sample_loss(output, target, head)
    return float(np.mean(per))


def batch_losses(net, cache, target) -> np.ndarray:
    output, target = _coerce_target(cache.output, target)
    if net.head is Head.SOFTMAX:
        # log-softmax of the logits is stabler than log(p)
        return -np.sum(target * log_softmax(cache.logits, axis=-1), axis=-1)
    return _per_sample_loss(output, target, net.head)


def backward(net: GruNetwork, cache: ForwardCache, target, loss_scale: float = 1.0) -> dict:
    """Exact gradients of ``loss_scale * mean loss`` w.r.t. every parameter."""
    if cache is None or not isinstance(cache, ForwardCache):
        raise ContractError("backward needs the cache returned by a forward pass")
    if cache.net_id != net._id or cache.version != net.version:
        raise ContractError("forward cache is stale: parameters changed or another network")
    out, target = _coerce_target(cache.output, target)
    B = out.shape[0]
    if net.head is Head.REGRESSION:
        d_logits = 2.0 * (out - target)
    elif net.head is Head.SIGMOID:
        d_logits = 2.0 * (out - target) * out * (1.0 - out)
    else:
        d_logits = out * target.sum(axis=-1, keepdims=True) - target
    d_logits *= loss_scale / B
    grads = {
        "fc_weight": d_logits.T @ cache.h_last,
        "fc_bias": d_logits.sum(axis=0),
    }
    dh = d_logits @ net.fc_weight
    grads.update(sequence_backward(net.cell, cache.X, cache.steps, dh))
    return {name: grads[name] for name in net.parameters()}
