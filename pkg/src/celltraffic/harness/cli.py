"""Command-line entry point: ``celltraffic <command> [options]``.

Every command writes its main artifact to ``--out DIR`` when given and to
stdout otherwise. Failures print ``{"error": kind, "message": ...}`` on
stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import io
import json
import sys
from pathlib import Path

import numpy as np

from .. import arima, synth
from ..burst import write_sweep_csv
from ..exceptions import (
    ContractError, DegenerateFitError, DivergenceError, SearchFailedError, TraceParseError,
)
from ..features import FeatureSet, build_matrix, write_features_csv
from ..ingest import DEFAULT_TAU, emit_trace
from ..rnn.forecast import GRUForecaster, predict_next
from ..rnn.network import GruNetwork
from ..rnn.training import TrainConfig
from .experiment import (
    METHODS, SWEEP_AXES, ExperimentConfig, RnnSettings, TraceSource, load_intervals,
    run_monte_carlo, sweep, write_sweep_table,
)
from .tasks import classification_dataset, run_burst_experiment, run_classification_experiment

EXIT_CODES = {
    TraceParseError: 3,
    DegenerateFitError: 4,
    SearchFailedError: 4,
    DivergenceError: 5,
    ContractError: 6,
    ValueError: 2,
    OSError: 7,
}

S = argparse.SUPPRESS


def _opt(args, name, default=None):
    return getattr(args, name, default)


def _globals_parser():
    # defaults are suppressed so flags work before or after the command
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--tau", type=float, default=S, help="interval length in seconds (default 10)")
    p.add_argument("--feature-set", default=S, help="fs1..fs6 (default fs5)")
    p.add_argument("--seed", type=int, default=S, help="random seed (default 0)")
    p.add_argument("--config", default=S, help="JSON experiment config file")
    p.add_argument("--out", default=S, help="output directory (default: stdout)")
    return p


def _source_args(p):
    p.add_argument("--trace", default=S, help="trace CSV file; omit to use a synthetic trace")
    p.add_argument("--scenario", default=S,
                   help="synthetic scenario: 'standard' or an app name (default standard)")
    p.add_argument("--days", type=float, default=S, help="synthetic trace length in days")
    p.add_argument("--trace-seed", type=int, default=S, help="synthetic trace seed (default 0)")


def _rnn_args(p):
    p.add_argument("--hidden-size", type=int, default=S)
    p.add_argument("--window-length", type=int, default=S)
    p.add_argument("--epochs", type=int, default=S)
    p.add_argument("--learning-rate", type=float, default=S)
    p.add_argument("--batch-size", type=int, default=S)


def build_parser() -> argparse.ArgumentParser:
    common = _globals_parser()
    parser = argparse.ArgumentParser(
        prog="celltraffic", parents=[common],
        description="Bin packet traces and benchmark ARIMA and GRU traffic forecasters.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="emit a synthetic trace and labels")
    p.add_argument("--scenario", default="standard",
                   help="'standard', 'classification' or an app name")
    p.add_argument("--days", type=float, default=6.0)
    p.add_argument("--hours-per-app", type=float, default=6.0)

    p = sub.add_parser("bin", parents=[common], help="trace -> interval features CSV")
    _source_args(p)

    p = sub.add_parser("fit-arima", parents=[common], help="fit a fixed-order ARIMA model")
    _source_args(p)
    p.add_argument("--order", required=True, help="p,d,q")
    p.add_argument("--target", default="ul_count")
    p.add_argument("--train-length", type=int, default=None, help="fit on the first N intervals")

    p = sub.add_parser("grid-search", parents=[common], help="select (p,d,q) by validation RMSE")
    _source_args(p)
    p.add_argument("--target", default="ul_count")
    p.add_argument("--p-max", type=int, default=8)
    p.add_argument("--d-max", type=int, default=2)
    p.add_argument("--q-max", type=int, default=2)
    p.add_argument("--validation-fraction", type=float, default=0.2)
    p.add_argument("--train-length", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("train-rnn", parents=[common], help="train a GRU forecaster")
    _source_args(p)
    _rnn_args(p)
    p.add_argument("--target", default="ul_count")
    p.add_argument("--train-length", type=int, default=None)

    p = sub.add_parser("forecast", parents=[common], help="forecast with a saved model")
    _source_args(p)
    p.add_argument("--model", required=True, help="model JSON from fit-arima or train-rnn")
    p.add_argument("-n", "--steps", type=int, default=1)
    p.add_argument("--target", default="ul_count")
    p.add_argument("--until", type=int, default=None, help="use intervals before this index")

    p = sub.add_parser("burst-sweep", parents=[common], help="burst prediction threshold sweep")
    _source_args(p)
    _rnn_args(p)
    p.add_argument("--target", default="ul_count")
    p.add_argument("--threshold-sd", type=float, default=1.0)
    p.add_argument("--start", type=int, default=0)
    p.add_argument("--train-length", type=int, default=8640)
    p.add_argument("--test-length", type=int, default=2000)

    p = sub.add_parser("classify", parents=[common], help="k-fold app classification")
    p.add_argument("--hours-per-app", type=float, default=6.0)
    p.add_argument("--folds", type=int, default=4)
    p.add_argument("--decision-interval", type=float, default=None, help="seconds (default tau)")
    p.add_argument("--shuffle-labels", action="store_true")
    _rnn_args(p)

    p = sub.add_parser("benchmark", parents=[common], help="Monte Carlo forecasting benchmark")
    _source_args(p)
    _rnn_args(p)
    p.add_argument("--method", choices=METHODS, default=S)
    p.add_argument("--order", default=S, help="p,d,q for arima-fixed")
    p.add_argument("--target", default=S)
    p.add_argument("--train-length", type=int, default=S)
    p.add_argument("--test-length", type=int, default=S)
    p.add_argument("--runs", type=int, default=S)
    p.add_argument("--horizon", type=int, default=S)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--timing", action="store_true", help="include wall time in the report")

    p = sub.add_parser("sweep", parents=[common], help="Monte Carlo sweep over one setting")
    _source_args(p)
    _rnn_args(p)
    p.add_argument("--axis", choices=SWEEP_AXES, required=True)
    p.add_argument("--values", required=True,
                   help="comma-separated; method values may carry an order, e.g. arima-fixed:1,0,0;persistence")
    p.add_argument("--method", choices=METHODS, default=S)
    p.add_argument("--order", default=S)
    p.add_argument("--target", default=S)
    p.add_argument("--train-length", type=int, default=S)
    p.add_argument("--test-length", type=int, default=S)
    p.add_argument("--runs", type=int, default=S)
    p.add_argument("--horizon", type=int, default=S)
    p.add_argument("--jobs", type=int, default=1)
    return parser


def _emit(args, name, text):
    out = _opt(args, "out")
    if out is None:
        sys.stdout.write(text)
        return
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    (path / name).write_text(text, encoding="utf-8")


def _tau(args):
    return _opt(args, "tau", DEFAULT_TAU)


def _parse_order(text):
    parts = [int(v) for v in str(text).replace(" ", "").split(",")]
    if len(parts) != 3:
        raise ValueError(f"order must be p,d,q, got {text!r}")
    return tuple(parts)


def _source(args, base: TraceSource | None = None) -> TraceSource:
    base = base or TraceSource()
    if _opt(args, "trace"):
        return TraceSource(kind="file", path=str(args.trace))
    changes = {}
    for arg, name in (("scenario", "scenario"), ("days", "days"), ("trace_seed", "seed")):
        if hasattr(args, arg):
            changes[name] = getattr(args, arg)
    if not changes:
        return base
    return TraceSource(**{**base.__dict__, "kind": "synth", "path": None, **changes})


def _intervals(args):
    return load_intervals(_source(args), _tau(args))


def _train_span(intervals, length):
    if length is None:
        return intervals
    if length > len(intervals):
        raise ValueError(f"train length {length} exceeds the {len(intervals)} available intervals")
    return intervals[:length]


def _rnn_settings(args, base: RnnSettings | None = None) -> RnnSettings:
    base = base or RnnSettings()
    fields = ("hidden_size", "window_length", "epochs", "learning_rate", "batch_size")
    return RnnSettings(**{
        **base.__dict__, **{f: getattr(args, f) for f in fields if hasattr(args, f)}
    })


def cmd_synth(args):
    seed = _opt(args, "seed", 0)
    tau = _tau(args)
    if args.scenario == "standard":
        trace, labels = synth.standard_trace(args.days, seed, tau)
    elif args.scenario == "classification":
        schedule = synth.classification_schedule(args.hours_per_app, seed)
        trace, labels = synth.generate_mixture(schedule, seed, tau)
    else:
        profiles = synth.load_profiles()
        if args.scenario not in profiles:
            raise ValueError(f"unknown scenario {args.scenario!r}")
        trace = synth.generate(profiles[args.scenario], args.days * synth.SECONDS_PER_DAY, seed)
        labels = None
    _emit(args, "trace.csv", emit_trace(trace))
    if labels is not None and _opt(args, "out") is not None:
        _emit(args, "labels.csv", synth.emit_labels(labels))


def cmd_bin(args):
    intervals = _intervals(args)
    buf = io.StringIO()
    write_features_csv(build_matrix(intervals, _opt(args, "feature_set", "FS5")), buf)
    _emit(args, "features.csv", buf.getvalue())


def cmd_fit_arima(args):
    intervals = _train_span(_intervals(args), args.train_length)
    model = arima.fit_arima(intervals.column(args.target).astype(np.float64),
                            _parse_order(args.order))
    doc = model.to_dict()
    doc["target"] = args.target
    doc["tau"] = _tau(args)
    _emit(args, "arima_model.json", json.dumps(doc, indent=2) + "\n")


def cmd_grid_search(args):
    intervals = _train_span(_intervals(args), args.train_length)
    search = arima.ArimaGridSearch(
        arima.default_grid(args.p_max, args.d_max, args.q_max), args.validation_fraction,
        args.jobs,
    ).fit(intervals.column(args.target).astype(np.float64))
    buf = io.StringIO()
    arima.write_grid_csv(search.table_, buf)
    if _opt(args, "out") is not None:
        _emit(args, "grid.csv", buf.getvalue())
    o = search.best_order_
    _emit(args, "best_order.json", json.dumps({"p": o.p, "d": o.d, "q": o.q}) + "\n")


def cmd_train_rnn(args):
    intervals = _train_span(_intervals(args), args.train_length)
    s = _rnn_settings(args)
    est = GRUForecaster(
        feature_set=_opt(args, "feature_set", "FS5"), target=args.target,
        hidden_size=s.hidden_size, window_length=s.window_length, learning_rate=s.learning_rate,
        epochs=s.epochs, batch_size=s.batch_size, seed=_opt(args, "seed", 0),
    ).fit(intervals)
    _emit(args, "rnn_model.json", json.dumps(est.net_.to_dict()) + "\n")


def cmd_forecast(args):
    with open(args.model, encoding="utf-8") as fh:
        doc = json.load(fh)
    intervals = _intervals(args)
    if args.until is not None:
        intervals = intervals[: args.until]
    if "format_version" in doc:
        net = GruNetwork.from_dict(doc)
        fs = FeatureSet.from_names(net.input_feature_names)
        values = predict_next(net, intervals[len(intervals) - net.window_length :], fs, args.steps)
    else:
        model = arima.ArimaModel.from_dict(doc)
        history = intervals.column(doc.get("target", args.target)).astype(np.float64)
        values = arima.forecast(model, history, args.steps)
    _emit(args, "forecast.json", json.dumps({"forecast": [float(v) for v in values]}) + "\n")


def cmd_burst_sweep(args):
    intervals = _intervals(args)
    s = _rnn_settings(args)
    exp = run_burst_experiment(
        intervals, args.start, args.train_length, args.test_length, args.threshold_sd,
        _opt(args, "feature_set", "FS5"), args.target, hidden_size=s.hidden_size,
        window_length=s.window_length, epochs=s.epochs, learning_rate=s.learning_rate,
        batch_size=s.batch_size, seed=_opt(args, "seed", 0),
    )
    if _opt(args, "out") is not None:
        buf = io.StringIO()
        write_sweep_csv(exp.reports, buf)
        _emit(args, "burst_sweep.csv", buf.getvalue())
    _emit(args, "burst_report.json", json.dumps(exp.to_dict(), indent=2) + "\n")


def cmd_classify(args):
    s = _rnn_settings(args, RnnSettings(hidden_size=32, window_length=6, epochs=5))
    fs = _opt(args, "feature_set", "FS5")
    tau = _tau(args)
    seed = _opt(args, "seed", 0)
    W, labels, ends = classification_dataset(args.hours_per_app, seed, tau, fs, s.window_length)
    config = TrainConfig(window_length=s.window_length, learning_rate=s.learning_rate,
                         epochs=s.epochs, batch_size=s.batch_size, seed=seed)
    exp = run_classification_experiment(
        W, labels, ends, args.folds, args.decision_interval, tau, fs, config, s.hidden_size,
        shuffle_labels=args.shuffle_labels, seed=seed,
    )
    _emit(args, "classification.json", json.dumps(exp.to_dict(), indent=2) + "\n")


def _experiment_config(args) -> ExperimentConfig:
    base = ExperimentConfig.load(args.config) if hasattr(args, "config") else ExperimentConfig()
    changes = {"source": _source(args, base.source), "rnn": _rnn_settings(args, base.rnn)}
    mapping = {"tau": "tau", "feature_set": "feature_set", "seed": "seed", "method": "method",
               "target": "target", "train_length": "train_length",
               "test_length": "test_length", "runs": "n_runs", "horizon": "horizon"}
    for arg, name in mapping.items():
        if hasattr(args, arg):
            changes[name] = getattr(args, arg)
    if hasattr(args, "order"):
        changes["arima_order"] = _parse_order(args.order)
    return base.replace(**changes)


def cmd_benchmark(args):
    report = run_monte_carlo(_experiment_config(args), n_jobs=args.jobs)
    _emit(args, "report.json", report.to_json(include_timing=args.timing) + "\n")


def _split_values(axis, text):
    sep = ";" if axis == "method" else ","
    return [v.strip() for v in text.split(sep) if v.strip()]


def cmd_sweep(args):
    rows = sweep(_experiment_config(args), args.axis, _split_values(args.axis, args.values),
                 n_jobs=args.jobs)
    buf = io.StringIO()
    write_sweep_table(rows, args.axis, buf)
    _emit(args, "sweep.csv", buf.getvalue())
    if _opt(args, "out") is not None:
        doc = [{"value": v, "report": r.to_dict()} for v, r in rows]
        _emit(args, "sweep.json", json.dumps(doc, sort_keys=True) + "\n")


COMMANDS = {
    "synth": cmd_synth, "bin": cmd_bin, "fit-arima": cmd_fit_arima,
    "grid-search": cmd_grid_search, "train-rnn": cmd_train_rnn, "forecast": cmd_forecast,
    "burst-sweep": cmd_burst_sweep, "classify": cmd_classify, "benchmark": cmd_benchmark,
    "sweep": cmd_sweep,
}


def _exit_code(exc):
    for kind, code in EXIT_CODES.items():
        if isinstance(exc, kind):
            return code
    return 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if hasattr(args, "feature_set"):
            args.feature_set = FeatureSet.parse(args.feature_set).name
        COMMANDS[args.command](args)
    except Exception as exc:  # reported as machine-readable JSON
        err = {"error": type(exc).__name__, "message": str(exc)}
        sys.stderr.write(json.dumps(err) + "\n")
        return _exit_code(exc)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
