"""End-to-end tests of the command-line interface (direct main() calls)."""

import json
import os

import numpy as np
import pytest

from mfkrig.cli import EXIT_IO, EXIT_OK, EXIT_VALIDATION, main
from mfkrig.sequential import EnrichmentTrace, TraceEntry, write_trace
from mfkrig.testbed import load_model


def _config(tmp_path, name, **kwargs):
    path = tmp_path / name
    path.write_text(json.dumps(kwargs, indent=2))
    return str(path)


def _fit_config(tmp_path, out, seed=7, sizes=(12, 6), name="fit.json"):
    return _config(
        tmp_path, name,
        problem="forrester",
        sizes=list(sizes),
        seed=seed,
        levels=[
            {"kernel": "squared-exponential", "trend": "constant"},
            {"kernel": "squared-exponential", "trend": "constant",
             "scaling": "constant"},
        ],
        out=str(out),
    )


# ---------------------------------------------------------------------------
# fit


def test_fit_writes_model_files_and_report(tmp_path, capsys):
    out = tmp_path / "model"
    code = main(["fit", "--config", _fit_config(tmp_path, out)])
    assert code == EXIT_OK
    for name in ("model.json", "design_1.csv", "design_2.csv",
                 "level_1.csv", "level_2.csv", "fit_report.txt"):
        assert (out / name).exists(), name
    report = (out / "fit_report.txt").read_text()
    assert "level 2" in report and "scaling coefficients" in report
    assert "fitted 2 levels" in capsys.readouterr().out

    model = load_model(out)
    assert model.level_count == 2
    assert len(model.data.designs[0]) == 12


def test_fit_is_deterministic_across_runs(tmp_path):
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    assert main(["fit", "--config", _fit_config(tmp_path, out_a),
                 "--quiet"]) == EXIT_OK
    assert main(["fit", "--config", _fit_config(tmp_path, out_b,
                                                name="fit2.json"),
                 "--quiet"]) == EXIT_OK
    assert (out_a / "model.json").read_bytes() == \
        (out_b / "model.json").read_bytes()


def test_seed_flag_overrides_config(tmp_path):
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    config = _fit_config(tmp_path, out_a)
    assert main(["fit", "--config", config, "--quiet"]) == EXIT_OK
    assert main(["fit", "--config", config, "--quiet", "--seed", "8",
                 "--out", str(out_b)]) == EXIT_OK
    assert (out_a / "model.json").read_bytes() != \
        (out_b / "model.json").read_bytes()


def test_fit_rejects_growing_sizes(tmp_path, capsys):
    config = _fit_config(tmp_path, tmp_path / "m", sizes=(6, 12))
    assert main(["fit", "--config", config]) == EXIT_VALIDATION
    assert "nonincreasing" in capsys.readouterr().err


def test_fit_missing_data_directory(tmp_path, capsys):
    config = _config(tmp_path, "fit.json", data_dir=str(tmp_path / "nowhere"),
                     level_count=2, out=str(tmp_path / "m"))
    assert main(["fit", "--config", config]) == EXIT_IO
    assert "nowhere" in capsys.readouterr().err


def test_malformed_config_is_io_error(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    assert main(["fit", "--config", str(path)]) == EXIT_IO
    assert "bad.json" in capsys.readouterr().err
    assert main(["fit", "--config", str(tmp_path / "missing.json")]) == EXIT_IO


# ---------------------------------------------------------------------------
# predict


@pytest.fixture()
def fitted_dir(tmp_path):
    out = tmp_path / "model"
    assert main(["fit", "--config", _fit_config(tmp_path, out),
                 "--quiet"]) == EXIT_OK
    return out


def test_predict_grid_contributions_sum(tmp_path, fitted_dir):
    out = tmp_path / "pred"
    config = _config(tmp_path, "predict.json", model_dir=str(fitted_dir),
                     grid=101, bounds=[[0.0, 1.0]], out=str(out))
    assert main(["predict", "--config", config, "--quiet"]) == EXIT_OK
    lines = (out / "predictions.csv").read_text().splitlines()
    assert lines[0] == "x_0,mean_1,mean_2,var_1,var_2,contrib_1,contrib_2"
    assert len(lines) == 102
    table = np.array([[float(c) for c in line.split(",")]
                      for line in lines[1:]])
    total = table[:, 4]
    parts = table[:, 5] + table[:, 6]
    assert np.all(np.abs(parts - total) <= 1e-10 * (1.0 + total))


def test_predict_at_design_points_has_zero_variance(tmp_path, fitted_dir):
    out = tmp_path / "pred"
    config = _config(tmp_path, "predict.json", model_dir=str(fitted_dir),
                     points_file=str(fitted_dir / "design_2.csv"),
                     out=str(out))
    assert main(["predict", "--config", config, "--quiet"]) == EXIT_OK
    lines = (out / "predictions.csv").read_text().splitlines()
    table = np.array([[float(c) for c in line.split(",")]
                      for line in lines[1:]])
    model = load_model(fitted_dir)
    cap = 1e-10 * max(level.sigma2 for level in model.levels)
    assert table.shape[0] == 6
    assert np.all(table[:, 3] <= cap) and np.all(table[:, 4] <= cap)


def test_predict_empty_points_file(tmp_path, fitted_dir):
    pts = tmp_path / "probes.csv"
    pts.write_text("dim_0\n")
    out = tmp_path / "pred"
    config = _config(tmp_path, "predict.json", model_dir=str(fitted_dir),
                     points_file=str(pts), out=str(out))
    assert main(["predict", "--config", config, "--quiet"]) == EXIT_OK
    lines = (out / "predictions.csv").read_text().splitlines()
    assert len(lines) == 1 and lines[0].startswith("x_0,")


def test_predict_dimension_mismatch(tmp_path, fitted_dir, capsys):
    pts = tmp_path / "probes.csv"
    pts.write_text("dim_0,dim_1\n0.5,0.5\n")
    config = _config(tmp_path, "predict.json", model_dir=str(fitted_dir),
                     points_file=str(pts), out=str(tmp_path / "pred"))
    assert main(["predict", "--config", config]) == EXIT_VALIDATION
    assert "dimension" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# sequential


def _sequential_config(tmp_path, out, budget=30.0, name="seq.json", seed=3):
    return _config(
        tmp_path, name,
        problem="forrester",
        sizes=[8, 4],
        seed=seed,
        level_count=2,
        costs=[1.0, 5.0],
        budget=budget,
        rule="imse-threshold",
        refit="never",
        search={"kind": "grid", "n": 129},
        quadrature={"kind": "grid", "n": 128},
        out=str(out),
    )


def test_sequential_writes_trace_and_model(tmp_path):
    out = tmp_path / "run"
    config = _sequential_config(tmp_path, out)
    assert main(["sequential", "--config", config, "--quiet"]) == EXIT_OK
    trace_lines = (out / "trace.csv").read_text().splitlines()
    assert trace_lines[0] == \
        "iter,x_0,level,value_1,value_2,imse_before,imse_after,cum_cost"
    assert len(trace_lines) >= 2
    assert (out / "model" / "model.json").exists()

    # Cumulative cost respects the budget; IMSE mostly decreases.
    rows = [line.split(",") for line in trace_lines[1:]]
    cum = [float(r[-1]) for r in rows]
    assert cum[-1] <= 30.0
    after = [float(r[-2]) for r in rows]
    before = [float(r[-3]) for r in rows]
    drops = sum(1 for a, b in zip(after, before) if a <= b)
    assert drops >= 0.8 * len(rows)


def test_sequential_is_deterministic(tmp_path):
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    assert main(["sequential", "--config",
                 _sequential_config(tmp_path, out_a), "--quiet"]) == EXIT_OK
    assert main(["sequential", "--config",
                 _sequential_config(tmp_path, out_b, name="seq2.json"),
                 "--quiet"]) == EXIT_OK
    assert (out_a / "trace.csv").read_bytes() == \
        (out_b / "trace.csv").read_bytes()


def test_sequential_budget_below_cheapest_run(tmp_path):
    out = tmp_path / "run"
    config = _sequential_config(tmp_path, out, budget=0.5)
    assert main(["sequential", "--config", config, "--quiet"]) == EXIT_OK
    lines = (out / "trace.csv").read_text().splitlines()
    assert len(lines) == 1  # header only


def test_sequential_requires_budget(tmp_path, capsys):
    out = tmp_path / "run"
    config = _config(tmp_path, "seq.json", problem="forrester", sizes=[8, 4],
                     level_count=2, out=str(out))
    assert main(["sequential", "--config", config]) == EXIT_VALIDATION
    assert "budget" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# report


def test_report_from_sequential_trace(tmp_path):
    run = tmp_path / "run"
    assert main(["sequential", "--config",
                 _sequential_config(tmp_path, run), "--quiet"]) == EXIT_OK
    out = tmp_path / "report"
    config = _config(tmp_path, "report.json", trace=str(run / "trace.csv"),
                     costs=[1.0, 5.0], out=str(out))
    assert main(["report", "--config", config, "--quiet"]) == EXIT_OK

    curve = (out / "imse_vs_cost.csv").read_text().splitlines()
    trace_rows = (run / "trace.csv").read_text().splitlines()[1:]
    assert curve[0] == "cum_cost,imse"
    assert len(curve) == len(trace_rows) + 2  # header + initial point
    assert curve[1].startswith("0,")

    hist = (out / "level_hist.csv").read_text().splitlines()
    assert hist[0] == "level,count"
    counts = {int(r.split(",")[0]): int(r.split(",")[1]) for r in hist[1:]}
    assert sum(counts.values()) == len(trace_rows)


def test_report_histogram_matches_hand_built_trace(tmp_path):
    trace = EnrichmentTrace(dimension=1, levels=2)
    cum = 0.0
    for i, level in enumerate([1, 2, 1], start=1):
        cum += 1.0 if level == 1 else 6.0
        trace.entries.append(TraceEntry(i, np.array([0.1 * i]), level,
                                        [0.5] * level, 1.0 / i,
                                        1.0 / (i + 1), cum))
    path = tmp_path / "trace.csv"
    write_trace(trace, path)
    out = tmp_path / "report"
    config = _config(tmp_path, "report.json", trace=str(path),
                     costs=[1.0, 5.0], out=str(out))
    assert main(["report", "--config", config, "--quiet"]) == EXIT_OK
    hist = (out / "level_hist.csv").read_text().splitlines()
    assert hist[1:] == ["1,2", "2,1"]


def test_report_empty_trace_headers_only(tmp_path):
    trace = EnrichmentTrace(dimension=1, levels=2)
    path = tmp_path / "trace.csv"
    write_trace(trace, path)
    out = tmp_path / "report"
    config = _config(tmp_path, "report.json", trace=str(path), out=str(out))
    assert main(["report", "--config", config, "--quiet"]) == EXIT_OK
    assert (out / "imse_vs_cost.csv").read_text() == "cum_cost,imse\n"
    assert (out / "level_hist.csv").read_text() == "level,count\n"


def test_report_rejects_inconsistent_costs(tmp_path, capsys):
    trace = EnrichmentTrace(dimension=1, levels=2)
    trace.entries.append(TraceEntry(1, np.array([0.5]), 2, [1.0, 2.0],
                                    1.0, 0.5, 99.0))
    path = tmp_path / "trace.csv"
    write_trace(trace, path)
    config = _config(tmp_path, "report.json", trace=str(path),
                     costs=[1.0, 5.0], out=str(tmp_path / "report"))
    assert main(["report", "--config", config]) == EXIT_VALIDATION
    assert "cumulative cost" in capsys.readouterr().err


def test_report_malformed_trace_is_io_error(tmp_path, capsys):
    path = tmp_path / "trace.csv"
    path.write_text("iter,x_0,level\n")
    config = _config(tmp_path, "report.json", trace=str(path),
                     out=str(tmp_path / "report"))
    assert main(["report", "--config", config]) == EXIT_IO
    assert "trace.csv:1" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# argument plumbing


def test_missing_config_flag_is_usage_error():
    with pytest.raises(SystemExit):
        main(["fit"])
    with pytest.raises(SystemExit):
        main(["unknown-command", "--config", "x.json"])
