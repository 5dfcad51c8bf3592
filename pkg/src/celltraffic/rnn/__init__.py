"""From-scratch GRU network: cell, BPTT, training and forecasting."""

from .cell import GruParams, gru_cell_forward
from .forecast import GRUForecaster, predict_next, predict_next_batch, sliding_windows
from .network import (
    ForwardCache,
    GruNetwork,
    Head,
    backward,
    forward_batch,
    forward_sequence,
    loss,
)
from .training import Adam, TrainConfig, train

__all__ = [
    "Adam", "ForwardCache", "GRUForecaster", "GruNetwork", "GruParams", "Head",
    "TrainConfig", "backward", "forward_batch", "forward_sequence", "gru_cell_forward",
    "loss", "predict_next", "predict_next_batch", "sliding_windows", "train",
]
