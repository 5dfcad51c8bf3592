"""GRU cell without biases, vectorised over a batch.

For input ``x`` and previous state ``h``::

    r     = sigm(W_r x + U_r h)
    z     = sigm(W_z x + U_z h)
    h_new = tanh(W x + U (r * h))
    h'    = z * h + (1 - z) * h_new
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit as sigmoid

PARAM_NAMES = ("W_r", "W_z", "W", "U_r", "U_z", "U")


@dataclass
class GruParams:
    W_r: np.ndarray
    W_z: np.ndarray
    W: np.ndarray
    U_r: np.ndarray
    U_z: np.ndarray
    U: np.ndarray

    def __post_init__(self):
        for name in PARAM_NAMES:
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        h, i = self.W.shape
        for name in ("W_r", "W_z", "W"):
            if getattr(self, name).shape != (h, i):
                raise ValueError(f"{name} must have shape {(h, i)}")
        for name in ("U_r", "U_z", "U"):
            if getattr(self, name).shape != (h, h):
                raise ValueError(f"{name} must have shape {(h, h)}")
        for name in PARAM_NAMES:
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} contains non-finite values")

    @property
    def hidden_size(self) -> int:
        return self.W.shape[0]

    @property
    def input_size(self) -> int:
        return self.W.shape[1]

    @classmethod
    def initialize(cls, input_size, hidden_size, rng) -> "GruParams":
        """Uniform in +-1/sqrt(fan_in)."""
        a_in = 1.0 / np.sqrt(input_size)
        a_h = 1.0 / np.sqrt(hidden_size)
        return cls(
            rng.uniform(-a_in, a_in, (hidden_size, input_size)),
            rng.uniform(-a_in, a_in, (hidden_size, input_size)),
            rng.uniform(-a_in, a_in, (hidden_size, input_size)),
            rng.uniform(-a_h, a_h, (hidden_size, hidden_size)),
            rng.uniform(-a_h, a_h, (hidden_size, hidden_size)),
            rng.uniform(-a_h, a_h, (hidden_size, hidden_size)),
        )

    @classmethod
    def zeros(cls, input_size, hidden_size) -> "GruParams":
        w = np.zeros((hidden_size, input_size))
        u = np.zeros((hidden_size, hidden_size))
        return cls(w, w.copy(), w.copy(), u, u.copy(), u.copy())

    def arrays(self) -> dict:
        return {name: getattr(self, name) for name in PARAM_NAMES}


def gru_cell_forward(x, h_prev, params: GruParams) -> np.ndarray:
    """One GRU step for a single input vector."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    h_prev = np.asarray(h_prev, dtype=np.float64).reshape(-1)
    if x.size != params.input_size:
        raise ValueError(f"input has {x.size} features, cell expects {params.input_size}")
    if h_prev.size != params.hidden_size:
        raise ValueError(f"state has {h_prev.size} units, cell has {params.hidden_size}")
    r = sigmoid(params.W_r @ x + params.U_r @ h_prev)
    z = sigmoid(params.W_z @ x + params.U_z @ h_prev)
    h_new = np.tanh(params.W @ x + params.U @ (r * h_prev))
    return z * h_prev + (1.0 - z) * h_new


def sequence_forward(params: GruParams, X):
    """Unroll over ``X`` of shape ``(batch, steps, input)`` from a zero state.

    Returns the final hidden state and the per-step cache for BPTT.
    """
    B, m, _ = X.shape
    H = params.hidden_size
    # input projections for every step in one product
    W_all = np.concatenate([params.W_r, params.W_z, params.W], axis=0)
    xp = X @ W_all.T
    U_rz = np.concatenate([params.U_r, params.U_z], axis=0)
    h = np.zeros((B, H))
    steps = []
    for t in range(m):
        rz = sigmoid(xp[:, t, : 2 * H] + h @ U_rz.T)
        r, z = rz[:, :H], rz[:, H:]
        rh = r * h
        n = np.tanh(xp[:, t, 2 * H :] + rh @ params.U.T)
        h_next = z * h + (1.0 - z) * n
        steps.append((h, r, z, n, rh))
        h = h_next
    return h, steps


def sequence_backward(params: GruParams, X, steps, dh):
    """Backpropagate ``dh`` (gradient w.r.t. the final state) through time."""
    H = params.hidden_size
    g = {name: np.zeros_like(getattr(params, name)) for name in ("U_r", "U_z", "U")}
    B, m, I = X.shape
    d_in = np.empty((B, m, 3 * H))
    U_rz = np.concatenate([params.U_r, params.U_z], axis=0)
    for t in reversed(range(m)):
        h_prev, r, z, n, rh = steps[t]
        dz = dh * (h_prev - n)
        dn = dh * (1.0 - z)
        dh_prev = dh * z
        dan = dn * (1.0 - n * n)
        g["U"] += dan.T @ rh
        drh = dan @ params.U
        dr = drh * h_prev
        dh_prev += drh * r
        daz = dz * z * (1.0 - z)
        dar = dr * r * (1.0 - r)
        darz = np.concatenate([dar, daz], axis=1)
        g["U_r"] += dar.T @ h_prev
        g["U_z"] += daz.T @ h_prev
        dh_prev += darz @ U_rz
        d_in[:, t, :H] = dar
        d_in[:, t, H : 2 * H] = daz
        d_in[:, t, 2 * H :] = dan
        dh = dh_prev
    dW_all = d_in.reshape(B * m, 3 * H).T @ X.reshape(B * m, I)
    g["W_r"], g["W_z"], g["W"] = dW_all[:H], dW_all[H : 2 * H], dW_all[2 * H :]
    return g
