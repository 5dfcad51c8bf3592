import json
import subprocess
import sys

import pytest

from celltraffic.harness.cli import build_parser, main
from celltraffic.ingest import read_trace


@pytest.fixture(scope="module")
def trace_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--days", "0.5", "--seed", "3", "--out", str(out)]) == 0
    return out


def _json_out(capsys):
    return json.loads(capsys.readouterr().out)


def test_synth_writes_trace_and_labels(trace_dir):
    trace = read_trace(trace_dir / "trace.csv")
    assert len(trace) > 1000
    labels = (trace_dir / "labels.csv").read_text().splitlines()
    assert len(labels) == 4320


def test_bin_to_stdout(trace_dir, capsys):
    assert main(["bin", "--trace", str(trace_dir / "trace.csv"), "--feature-set", "fs6"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "ul_count,dl_count,proto_TCP,proto_UDP,proto_QUIC,proto_OTHER"


def test_global_flags_before_command(trace_dir, capsys):
    assert main(["--feature-set", "fs3", "--tau", "60", "bin",
                 "--trace", str(trace_dir / "trace.csv")]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "ul_count"
    # no horizon in a file, so binning ends with the last packet
    assert 700 < len(lines) - 1 <= 720


def test_fit_and_forecast_arima(trace_dir, tmp_path, capsys):
    t = str(trace_dir / "trace.csv")
    assert main(["fit-arima", "--trace", t, "--order", "2,0,1", "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "arima_model.json").read_text())
    assert doc["order"] == {"p": 2, "d": 0, "q": 1}
    assert main(["forecast", "--trace", t, "--model", str(tmp_path / "arima_model.json"), "-n", "3"]) == 0
    assert len(_json_out(capsys)["forecast"]) == 3


def test_grid_search(trace_dir, tmp_path):
    t = str(trace_dir / "trace.csv")
    assert main(["grid-search", "--trace", t, "--p-max", "1", "--d-max", "1", "--q-max", "1",
                 "--out", str(tmp_path)]) == 0
    assert (tmp_path / "grid.csv").read_text().startswith("p,d,q,rmse\n")
    best = json.loads((tmp_path / "best_order.json").read_text())
    assert set(best) == {"p", "d", "q"}


def test_train_rnn_and_forecast(trace_dir, tmp_path, capsys):
    t = str(trace_dir / "trace.csv")
    assert main(["train-rnn", "--trace", t, "--hidden-size", "4", "--epochs", "1",
                 "--window-length", "6", "--out", str(tmp_path)]) == 0
    assert main(["forecast", "--trace", t, "--model", str(tmp_path / "rnn_model.json"),
                 "-n", "2"]) == 0
    values = _json_out(capsys)["forecast"]
    assert len(values) == 2 and all(v >= 0 for v in values)


def test_burst_sweep(trace_dir, tmp_path):
    t = str(trace_dir / "trace.csv")
    assert main(["burst-sweep", "--trace", t, "--hidden-size", "4", "--epochs", "1",
                 "--train-length", "2000", "--test-length", "500", "--out", str(tmp_path)]) == 0
    header = (tmp_path / "burst_sweep.csv").read_text().splitlines()[0]
    assert header == "theta,recall_burst,recall_nonburst,accuracy,tp,fp,tn,fn"
    assert "crossover" in json.loads((tmp_path / "burst_report.json").read_text())


def test_classify(capsys):
    assert main(["classify", "--hours-per-app", "0.5", "--epochs", "1", "--hidden-size", "4"]) == 0
    doc = _json_out(capsys)
    assert doc["feature_set"] == "FS5" and len(doc["confusion"]) == 4


def test_benchmark_with_config(tmp_path, capsys):
    cfg = {"source": {"days": 1.0, "seed": 7}, "method": "arima-fixed", "arima_order": [1, 0, 0],
           "train_length": 2000, "test_length": 200, "n_runs": 2}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    assert main(["benchmark", "--config", str(path)]) == 0
    a = capsys.readouterr().out
    assert main(["benchmark", "--config", str(path), "--runs", "3"]) == 0
    b = json.loads(capsys.readouterr().out)
    assert len(json.loads(a)["per_run_rmse"]) == 2 and len(b["per_run_rmse"]) == 3


def test_sweep_command(tmp_path):
    assert main(["sweep", "--days", "1", "--axis", "method",
                 "--values", "persistence;arima-fixed:1,0,0", "--train-length", "2000",
                 "--test-length", "200", "--runs", "2", "--out", str(tmp_path)]) == 0
    rows = (tmp_path / "sweep.csv").read_text().splitlines()
    assert rows[0].startswith("method,mean_rmse") and len(rows) == 3
    assert len(json.loads((tmp_path / "sweep.json").read_text())) == 2


@pytest.mark.parametrize("argv,kind,code", [
    (["benchmark", "--days", "0.1", "--train-length", "3000"], "ValueError", 2),
    (["fit-arima", "--trace", "/nonexistent.csv", "--order", "1,0,0"], "FileNotFoundError", 7),
    (["bin", "--feature-set", "fs9", "--days", "0.01"], "ValueError", 2),
])
def test_errors_are_machine_readable(argv, kind, code, capsys):
    assert main(argv) == code
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == kind and err["message"]


def test_parse_error_kind(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("0.0,UL,100,TCP\nnot,a,row\n")
    assert main(["bin", "--trace", str(bad)]) == 3
    assert json.loads(capsys.readouterr().err)["error"] == "TraceParseError"


def test_parser_lists_all_commands():
    text = build_parser().format_help()
    for cmd in ("synth", "bin", "fit-arima", "grid-search", "train-rnn", "forecast",
                "burst-sweep", "classify", "benchmark", "sweep"):
        assert cmd in text


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "celltraffic", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "benchmark" in res.stdout
