"""Monte Carlo evaluation of forecasters over random training windows.

Every run draws a start offset, fits on ``train_length`` intervals and
forecasts the next ``test_length`` intervals. Persistence is always scored
on the same windows so the relative RMSE compares like with like.
"""

from __future__ import annotations

import csv
import dataclasses
import functools
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .. import arima, synth
from ..features import FeatureSet, build_matrix
from ..ingest import DEFAULT_TAU, IntervalSeries, bin_intervals, read_trace
from ..metrics import rmse
from ..rnn.forecast import GRUForecaster, predict_next_batch, sliding_windows

METHODS = ("persistence", "arima-optimized", "arima-fixed", "rnn")


@dataclass(frozen=True)
class TraceSource:
    """Where intervals come from: a trace-CSV file or a seeded synthetic scenario.

    ``scenario`` is ``"standard"`` (diurnal mixed-app user) or an app profile
    name such as ``"Streaming"``.
    """

    kind: str = "synth"
    scenario: str = "standard"
    seed: int = 0
    days: float = 6.0
    path: str | None = None

    def __post_init__(self):
        if self.kind not in ("synth", "file"):
            raise ValueError(f"unknown trace source kind {self.kind!r}")
        if self.kind == "file" and not self.path:
            raise ValueError("a file source needs a path")
        if self.kind == "synth" and not self.days > 0:
            raise ValueError("days must be > 0")


@dataclass(frozen=True)
class RnnSettings:
    hidden_size: int = 100
    window_length: int = 20
    learning_rate: float = 1e-3
    epochs: int = 10
    batch_size: int = 64
    gradient_clip_norm: float = 5.0


@dataclass(frozen=True)
class ExperimentConfig:
    source: TraceSource = field(default_factory=TraceSource)
    tau: float = DEFAULT_TAU
    feature_set: str = "FS5"
    method: str = "persistence"
    arima_order: tuple | None = None
    arima_grid: tuple = (8, 2, 2)
    validation_fraction: float = 0.2
    train_length: int = 8640
    test_length: int = 2000
    n_runs: int = 37
    horizon: int = 1
    seed: int = 0
    target: str = "ul_count"
    rnn: RnnSettings = field(default_factory=RnnSettings)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.method == "arima-fixed":
            if self.arima_order is None:
                raise ValueError("method arima-fixed needs arima_order")
            o = arima.ArimaOrder.coerce(self.arima_order)
            object.__setattr__(self, "arima_order", (o.p, o.d, o.q))
        object.__setattr__(self, "feature_set", FeatureSet.parse(self.feature_set).name)
        object.__setattr__(self, "arima_grid", tuple(int(v) for v in self.arima_grid))
        if not self.tau > 0:
            raise ValueError("tau must be > 0")
        if self.test_length < 1 or self.n_runs < 1 or self.horizon < 1:
            raise ValueError("test_length, n_runs and horizon must be >= 1")
        if self.train_length < self.min_train_length:
            raise ValueError(
                f"train_length {self.train_length} below the {self.method} minimum "
                f"of {self.min_train_length}"
            )

    @property
    def min_train_length(self) -> int:
        if self.method == "persistence":
            return 1
        if self.method == "rnn":
            return self.rnn.window_length + 1
        if self.method == "arima-fixed":
            p, d, q = self.arima_order
            return max(10 * (p + q) + d, d + 1)
        return 20

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        doc = dataclasses.asdict(self)
        doc["arima_order"] = list(self.arima_order) if self.arima_order else None
        doc["arima_grid"] = list(self.arima_grid)
        return doc

    @classmethod
    def from_dict(cls, doc) -> "ExperimentConfig":
        doc = dict(doc)
        src = doc.pop("source", None) or {}
        rnn = doc.pop("rnn", None) or {}
        unknown = set(doc) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if doc.get("arima_order") is not None:
            doc["arima_order"] = tuple(doc["arima_order"])
        if "arima_grid" in doc:
            doc["arima_grid"] = tuple(doc["arima_grid"])
        return cls(source=TraceSource(**src), rnn=RnnSettings(**rnn), **doc)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class EvalReport:
    config: ExperimentConfig
    starts: list
    run_seeds: list
    per_run_rmse: list
    persistence_rmse: list
    details: list = field(default_factory=list)
    wall_time_s: float = 0.0

    @property
    def mean_rmse(self) -> float:
        return float(np.mean(self.per_run_rmse))

    @property
    def persistence_mean_rmse(self) -> float:
        return float(np.mean(self.persistence_rmse))

    @property
    def relative_rmse(self) -> float:
        return self.mean_rmse / self.persistence_mean_rmse if self.persistence_mean_rmse else float("nan")

    def to_dict(self, include_timing=False) -> dict:
        doc = {
            "config": self.config.to_dict(),
            "starts": list(self.starts),
            "run_seeds": list(self.run_seeds),
            "per_run_rmse": list(self.per_run_rmse),
            "persistence_rmse": list(self.persistence_rmse),
            "mean_rmse": self.mean_rmse,
            "persistence_mean_rmse": self.persistence_mean_rmse,
            "relative_rmse": self.relative_rmse,
            "details": list(self.details),
        }
        if include_timing:
            doc["wall_time_s"] = self.wall_time_s
        return doc

    def to_json(self, include_timing=False) -> str:
        return json.dumps(self.to_dict(include_timing), sort_keys=True)


@functools.lru_cache(maxsize=2)
def _load_trace(source: TraceSource):
    if source.kind == "file":
        return read_trace(source.path), None
    horizon = source.days * synth.SECONDS_PER_DAY
    if source.scenario == "standard":
        trace, _ = synth.standard_trace(source.days, source.seed)
    else:
        profiles = synth.load_profiles()
        if source.scenario not in profiles:
            raise ValueError(f"unknown synthetic scenario {source.scenario!r}")
        trace = synth.generate(profiles[source.scenario], horizon, source.seed)
    return trace, horizon


@functools.lru_cache(maxsize=4)
def load_intervals(source: TraceSource, tau: float) -> IntervalSeries:
    trace, horizon = _load_trace(source)
    return bin_intervals(trace, tau, horizon)


def plan_runs(config: ExperimentConfig, n_intervals: int):
    """Seeded ``(start, run_seed)`` pairs for every Monte Carlo run."""
    need = config.train_length + config.test_length
    if n_intervals < need:
        raise ValueError(
            f"trace has {n_intervals} intervals at tau={config.tau}; "
            f"at least {need} (train_length + test_length) are required"
        )
    rng = np.random.default_rng(config.seed)
    starts = rng.integers(0, n_intervals - need + 1, size=config.n_runs)
    seeds = rng.integers(0, 2**31 - 1, size=config.n_runs)
    return [(int(s), int(r)) for s, r in zip(starts, seeds)]


def _origins(test_start, test_length, n):
    return list(range(test_start, test_start + test_length, n))


def _blocks_to_series(blocks, test_length):
    return blocks.reshape(-1)[:test_length]


def _persistence(y, test_start, test_length, n):
    if n == 1:
        return y[test_start - 1 : test_start + test_length - 1]
    origins = _origins(test_start, test_length, n)
    return _blocks_to_series(np.repeat(y[np.array(origins) - 1][:, None], n, axis=1), test_length)


def _arima_predictions(model, y, start, test_start, test_length, n):
    span = y[start : test_start + test_length]
    local = test_start - start
    if n == 1:
        return arima.one_step_forecasts(model, span, local)
    origins = _origins(local, test_length, n)
    return _blocks_to_series(arima.forecast_origins(model, span, origins, n), test_length)


def run_single(intervals: IntervalSeries, config: ExperimentConfig, start: int, run_seed: int,
               on_fit=None):
    """One Monte Carlo run. Returns ``(method_rmse, persistence_rmse, detail)``.

    ``on_fit(what, lo, hi)`` is called with the interval range ``[lo, hi)``
    handed to every fitting step.
    """
    y = intervals.column(config.target).astype(np.float64)
    train_stop = start + config.train_length
    test_stop = train_stop + config.test_length
    if start < 0 or test_stop > y.size:
        raise ValueError("run window falls outside the trace")
    actual = y[train_stop:test_stop]
    n = config.horizon
    notify = on_fit or (lambda *a: None)
    base = _persistence(y, train_stop, config.test_length, n)
    detail = {}
    if config.method == "persistence":
        pred = base
    elif config.method in ("arima-fixed", "arima-optimized"):
        train_y = y[start:train_stop]
        notify(config.method, start, train_stop)
        if config.method == "arima-fixed":
            order = arima.ArimaOrder.coerce(config.arima_order)
            model = arima.fit_arima(train_y, order)
        else:
            search = arima.ArimaGridSearch(
                arima.default_grid(*config.arima_grid), config.validation_fraction
            ).fit(train_y)
            order, model = search.best_order_, search.model_
        detail["order"] = [order.p, order.d, order.q]
        pred = _arima_predictions(model, y, start, train_stop, config.test_length, n)
    else:
        s = config.rnn
        notify("rnn", start, train_stop)
        est = GRUForecaster(
            feature_set=config.feature_set, target=config.target, hidden_size=s.hidden_size,
            window_length=s.window_length, learning_rate=s.learning_rate, epochs=s.epochs,
            batch_size=s.batch_size, seed=run_seed, gradient_clip_norm=s.gradient_clip_norm,
        ).fit(intervals[start:train_stop])
        m = s.window_length
        ctx = intervals[train_stop - m : test_stop]
        if n == 1:
            pred = est.predict(ctx)
        else:
            Z = est.net_.normalizer.transform(build_matrix(ctx, config.feature_set).samples)
            W = sliding_windows(Z, m)
            origins = [o - (train_stop - m) - m for o in _origins(train_stop, config.test_length, n)]
            pred = _blocks_to_series(predict_next_batch(est.net_, W[origins], n), config.test_length)
        detail["final_train_loss"] = est.loss_curve_[-1]
    return rmse(pred, actual), rmse(base, actual), detail


def _run_one(args):
    intervals, config, start, seed = args
    return run_single(intervals, config, start, seed)


def run_monte_carlo(config: ExperimentConfig, intervals: IntervalSeries | None = None,
                    n_jobs: int = 1, on_fit=None) -> EvalReport:
    """Run ``config.n_runs`` seeded train/test windows and aggregate RMSE."""
    t0 = time.perf_counter()
    if intervals is None:
        intervals = load_intervals(config.source, config.tau)
    plan = plan_runs(config, len(intervals))
    if n_jobs == 1 or on_fit is not None:
        results = [run_single(intervals, config, s, r, on_fit) for s, r in plan]
    else:
        with ProcessPoolExecutor(max_workers=n_jobs if n_jobs > 0 else None) as pool:
            results = list(pool.map(_run_one, [(intervals, config, s, r) for s, r in plan]))
    return EvalReport(
        config=config,
        starts=[s for s, _ in plan],
        run_seeds=[r for _, r in plan],
        per_run_rmse=[r[0] for r in results],
        persistence_rmse=[r[1] for r in results],
        details=[r[2] for r in results],
        wall_time_s=time.perf_counter() - t0,
    )


SWEEP_AXES = ("tau", "train_length", "horizon_n", "feature_set", "method")


def _apply_axis(config, axis, value):
    if axis == "tau":
        return config.replace(tau=float(value))
    if axis == "train_length":
        return config.replace(train_length=int(value))
    if axis == "horizon_n":
        return config.replace(horizon=int(value))
    if axis == "feature_set":
        return config.replace(feature_set=FeatureSet.parse(value).name)
    if axis == "method":
        method, _, order = str(value).partition(":")
        if order:
            return config.replace(method=method, arima_order=tuple(int(v) for v in order.split(",")))
        return config.replace(method=method)
    raise ValueError(f"unknown sweep axis {axis!r}; expected one of {SWEEP_AXES}")


def sweep(config: ExperimentConfig, axis: str, values, n_jobs: int = 1):
    """One Monte Carlo report per axis value, other settings held fixed.

    Returns a list of ``(value, EvalReport)``.
    """
    values = list(values)
    if not values:
        raise ValueError("sweep needs at least one value")
    configs = [_apply_axis(config, axis, v) for v in values]
    return [(v, run_monte_carlo(c, n_jobs=n_jobs)) for v, c in zip(values, configs)]


def write_sweep_table(rows, axis, sink):
    writer = csv.writer(sink, lineterminator="\n")
    writer.writerow([axis, "mean_rmse", "persistence_mean_rmse", "relative_rmse", "n_runs"])
    for value, rep in rows:
        writer.writerow([value, rep.mean_rmse, rep.persistence_mean_rmse, rep.relative_rmse,
                         len(rep.per_run_rmse)])
