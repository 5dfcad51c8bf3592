"""Packet-trace parsing and interval binning.

A trace is a header-less CSV with one packet per line::

    timestamp_s,direction,length_bytes,protocol

Traces are held column-wise in :class:`Trace` so multi-day captures bin in
a few vectorised passes; indexing a trace still yields :class:`PacketRecord`.
"""

from __future__ import annotations

import enum
import io
import math
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import TraceParseError

DEFAULT_TAU = 10.0


class Direction(enum.IntEnum):
    UL = 0
    DL = 1


class Protocol(enum.IntEnum):
    TCP = 0
    UDP = 1
    QUIC = 2
    OTHER = 3


PROTOCOLS = tuple(p.name for p in Protocol)


@dataclass(frozen=True)
class PacketRecord:
    timestamp: float
    direction: Direction
    length: int
    protocol: Protocol

    def __post_init__(self):
        if not self.timestamp >= 0:
            raise ValueError(f"timestamp must be >= 0, got {self.timestamp}")
        if self.length < 1:
            raise ValueError(f"length must be >= 1, got {self.length}")


class Trace(Sequence):
    """Timestamp-sorted packets stored as parallel numpy columns."""

    def __init__(self, timestamp, direction, length, protocol, *, presorted=False):
        ts = np.asarray(timestamp, dtype=np.float64).reshape(-1)
        direction = np.asarray(direction, dtype=np.int8).reshape(-1)
        length = np.asarray(length, dtype=np.int64).reshape(-1)
        protocol = np.asarray(protocol, dtype=np.int8).reshape(-1)
        n = ts.size
        if not (direction.size == length.size == protocol.size == n):
            raise ValueError("trace columns must have equal length")
        if n:
            if not np.all(np.isfinite(ts)) or ts.min() < 0:
                raise ValueError("timestamps must be finite and >= 0")
            if length.min() < 1:
                raise ValueError("packet lengths must be >= 1")
            if direction.min() < 0 or direction.max() > 1:
                raise ValueError("direction codes must be 0 (UL) or 1 (DL)")
            if protocol.min() < 0 or protocol.max() >= len(Protocol):
                raise ValueError("unknown protocol code")
        if not presorted and n > 1 and np.any(np.diff(ts) < 0):
            order = np.argsort(ts, kind="stable")
            ts, direction, length, protocol = (
                ts[order], direction[order], length[order], protocol[order]
            )
        self.timestamp = ts
        self.direction = direction
        self.length = length
        self.protocol = protocol
        for col in (self.timestamp, self.direction, self.length, self.protocol):
            col.flags.writeable = False

    @classmethod
    def from_records(cls, records: Iterable[PacketRecord]) -> "Trace":
        records = list(records)
        return cls(
            [r.timestamp for r in records],
            [int(r.direction) for r in records],
            [r.length for r in records],
            [int(r.protocol) for r in records],
        )

    @classmethod
    def concatenate(cls, traces: Iterable["Trace"]) -> "Trace":
        traces = list(traces)
        if not traces:
            return cls([], [], [], [])
        return cls(
            np.concatenate([t.timestamp for t in traces]),
            np.concatenate([t.direction for t in traces]),
            np.concatenate([t.length for t in traces]),
            np.concatenate([t.protocol for t in traces]),
        )

    def __len__(self):
        return self.timestamp.size

    def __getitem__(self, i):
        if isinstance(i, slice):
            return Trace(
                self.timestamp[i], self.direction[i], self.length[i],
                self.protocol[i], presorted=True,
            )
        return PacketRecord(
            float(self.timestamp[i]),
            Direction(int(self.direction[i])),
            int(self.length[i]),
            Protocol(int(self.protocol[i])),
        )

    def __eq__(self, other):
        if isinstance(other, Trace):
            return (
                np.array_equal(self.timestamp, other.timestamp)
                and np.array_equal(self.direction, other.direction)
                and np.array_equal(self.length, other.length)
                and np.array_equal(self.protocol, other.protocol)
            )
        if isinstance(other, Sequence):
            return len(self) == len(other) and all(a == b for a, b in zip(self, other))
        return NotImplemented

    __hash__ = None

    def __repr__(self):
        span = f"{self.timestamp[-1]:.3f}s" if len(self) else "empty"
        return f"Trace(n={len(self)}, last={span})"


def _as_trace(records) -> Trace:
    return records if isinstance(records, Trace) else Trace.from_records(records)


def _format_timestamp(t: float) -> str:
    # shortest round-tripping digits, never in exponent form
    return np.format_float_positional(t, unique=True, trim="0")


def emit_trace(records, sink=None):
    """Write packets as trace-CSV. Returns the text when ``sink`` is None."""
    trace = _as_trace(records)
    dirs = [d.name for d in Direction]
    lines = [
        f"{_format_timestamp(t)},{dirs[d]},{n},{PROTOCOLS[p]}\n"
        for t, d, n, p in zip(
            trace.timestamp.tolist(), trace.direction.tolist(),
            trace.length.tolist(), trace.protocol.tolist(),
        )
    ]
    text = "".join(lines)
    if sink is None:
        return text
    sink.write(text)
    return None


def parse_trace(source) -> Trace:
    """Parse trace-CSV text (a stream, or a string) into a sorted Trace.

    Blank lines are ignored. Rows are sorted stably by timestamp.
    """
    if isinstance(source, str):
        source = io.StringIO(source)
    ts, dirs, lens, protos = [], [], [], []
    for lineno, raw in enumerate(source, start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise TraceParseError(lineno, f"expected 4 fields, got {len(parts)}")
        t_s, d_s, n_s, p_s = (p.strip() for p in parts)
        try:
            t = float(t_s)
        except ValueError:
            raise TraceParseError(lineno, f"bad timestamp {t_s!r}") from None
        if not math.isfinite(t) or t < 0:
            raise TraceParseError(lineno, f"timestamp must be finite and >= 0: {t_s!r}")
        try:
            n = int(n_s)
        except ValueError:
            raise TraceParseError(lineno, f"bad length {n_s!r}") from None
        if n < 1:
            raise TraceParseError(lineno, f"length must be >= 1: {n_s!r}")
        try:
            d = Direction[d_s]
        except KeyError:
            raise TraceParseError(lineno, f"unknown direction {d_s!r}") from None
        try:
            p = Protocol[p_s]
        except KeyError:
            raise TraceParseError(lineno, f"unknown protocol {p_s!r}") from None
        ts.append(t)
        dirs.append(int(d))
        lens.append(n)
        protos.append(int(p))
    return Trace(ts, dirs, lens, protos)


def read_trace(path) -> Trace:
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_trace(fh)


def write_trace(records, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        emit_trace(records, fh)


@dataclass(frozen=True)
class IntervalFeatures:
    index: int
    ul_count: int
    dl_count: int
    ul_bytes: int
    dl_bytes: int
    ul_dl_ratio: float
    protocol_counts: dict = field(default_factory=dict)


def ul_dl_ratio(ul_count, dl_count):
    """UL:DL packet ratio with the denominator floored at one packet."""
    return np.asarray(ul_count, dtype=np.float64) / np.maximum(
        np.asarray(dl_count, dtype=np.float64), 1.0
    )


class IntervalSeries(Sequence):
    """Per-interval aggregates held as numpy columns.

    Indexing with an integer returns an :class:`IntervalFeatures`; slicing
    returns another series whose ``index`` values are preserved.
    """

    def __init__(self, tau, ul_count, dl_count, ul_bytes, dl_bytes,
                 protocol_counts, start_index=0):
        self.tau = float(tau)
        self.ul_count = np.asarray(ul_count, dtype=np.int64)
        self.dl_count = np.asarray(dl_count, dtype=np.int64)
        self.ul_bytes = np.asarray(ul_bytes, dtype=np.int64)
        self.dl_bytes = np.asarray(dl_bytes, dtype=np.int64)
        self.protocol_counts = np.asarray(protocol_counts, dtype=np.int64).reshape(
            -1, len(Protocol)
        )
        self.start_index = int(start_index)
        n = self.ul_count.size
        for col in (self.dl_count, self.ul_bytes, self.dl_bytes):
            if col.size != n:
                raise ValueError("interval columns must have equal length")
        if self.protocol_counts.shape[0] != n:
            raise ValueError("protocol_counts must have one row per interval")

    @property
    def ul_dl_ratio(self):
        return ul_dl_ratio(self.ul_count, self.dl_count)

    @property
    def index(self):
        return np.arange(self.start_index, self.start_index + len(self))

    def column(self, name):
        if name == "ul_dl_ratio":
            return self.ul_dl_ratio
        if name in PROTOCOLS:
            return self.protocol_counts[:, PROTOCOLS.index(name)]
        return getattr(self, name)

    @classmethod
    def from_features(cls, intervals: Iterable[IntervalFeatures], tau=DEFAULT_TAU):
        intervals = list(intervals)
        protos = [
            [iv.protocol_counts.get(p, 0) for p in PROTOCOLS] for iv in intervals
        ]
        return cls(
            tau,
            [iv.ul_count for iv in intervals],
            [iv.dl_count for iv in intervals],
            [iv.ul_bytes for iv in intervals],
            [iv.dl_bytes for iv in intervals],
            np.asarray(protos, dtype=np.int64).reshape(-1, len(PROTOCOLS)),
            start_index=intervals[0].index if intervals else 0,
        )

    def __len__(self):
        return self.ul_count.size

    def __getitem__(self, i):
        if isinstance(i, slice):
            start, _, step = i.indices(len(self))
            if step != 1:
                raise ValueError("interval series slices must be contiguous")
            return IntervalSeries(
                self.tau, self.ul_count[i], self.dl_count[i], self.ul_bytes[i],
                self.dl_bytes[i], self.protocol_counts[i],
                start_index=self.start_index + start,
            )
        if i < 0:
            i += len(self)
        if not 0 <= i < len(self):
            raise IndexError(i)
        ul, dl = int(self.ul_count[i]), int(self.dl_count[i])
        return IntervalFeatures(
            index=self.start_index + i,
            ul_count=ul,
            dl_count=dl,
            ul_bytes=int(self.ul_bytes[i]),
            dl_bytes=int(self.dl_bytes[i]),
            ul_dl_ratio=ul / max(dl, 1),
            protocol_counts=dict(zip(PROTOCOLS, self.protocol_counts[i].tolist())),
        )

    def aggregate(self, k: int) -> "IntervalSeries":
        """Merge each run of ``k`` consecutive intervals (trailing partial run dropped)."""
        if k < 1:
            raise ValueError("k must be >= 1")
        m = len(self) // k

        def fold(a):
            return a[: m * k].reshape((m, k) + a.shape[1:]).sum(axis=1)

        return IntervalSeries(
            self.tau * k, fold(self.ul_count), fold(self.dl_count),
            fold(self.ul_bytes), fold(self.dl_bytes), fold(self.protocol_counts),
        )

    def __repr__(self):
        return f"IntervalSeries(n={len(self)}, tau={self.tau})"


def n_intervals(horizon: float, tau: float) -> int:
    # guard against 0.3/0.1 == 3.0000000000000004 style overshoot
    return max(0, math.ceil(horizon / tau - 1e-9))


def bin_intervals(records, tau: float = DEFAULT_TAU, horizon: float | None = None) -> IntervalSeries:
    """Bin packets into half-open intervals ``[k*tau, (k+1)*tau)``.

    ``horizon`` defaults to just past the last packet. Packets at or after
    ``horizon`` are dropped. Empty intervals are kept with zero features.
    """
    if not tau > 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    trace = _as_trace(records)
    if horizon is None:
        horizon = (math.floor(trace.timestamp[-1] / tau) + 1) * tau if len(trace) else tau
    if not horizon > 0:
        raise ValueError(f"horizon must be > 0, got {horizon}")
    n = n_intervals(horizon, tau)
    keep = trace.timestamp < horizon
    idx = np.floor(trace.timestamp[keep] / tau).astype(np.int64)
    idx = np.minimum(idx, n - 1)
    d = trace.direction[keep]
    ln = trace.length[keep]
    pr = trace.protocol[keep]
    ul = d == Direction.UL
    dl = ~ul
    k = len(Protocol)
    protos = np.bincount(idx * k + pr, minlength=n * k).reshape(n, k)
    return IntervalSeries(
        tau,
        np.bincount(idx[ul], minlength=n),
        np.bincount(idx[dl], minlength=n),
        np.bincount(idx[ul], weights=ln[ul], minlength=n).astype(np.int64),
        np.bincount(idx[dl], weights=ln[dl], minlength=n).astype(np.int64),
        protos,
    )


class IntervalBinner(TransformerMixin, BaseEstimator):
    """Pipeline step turning a packet trace into an :class:`IntervalSeries`."""

    def __init__(self, tau=DEFAULT_TAU, horizon=None):
        self.tau = tau
        self.horizon = horizon

    def fit(self, X, y=None):
        if not self.tau > 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        return self

    def transform(self, X):
        return bin_intervals(X, self.tau, self.horizon)
