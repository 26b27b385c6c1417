import math
import warnings

import numpy as np
import pytest

from pqcsearch import cli, harness
from pqcsearch.harness import (
    CLASSICAL_SVM,
    GA,
    METHODS,
    MUZERO,
    RANDOM_FLEXIBLE,
    RANDOM_LAYERED,
    REFERENCE,
    BenchmarkConfig,
    ConfigError,
    Dimension,
    HyperoptFailedError,
    MethodReport,
    ReportError,
    RunReport,
    emit_report,
    hyperopt,
    run_pipeline,
)

SMALL = dict(budget=12, hyperopt_trials=3, kta_budget=6, mcts_simulations=4, ga_population=5, top_k=3)


@pytest.fixture(autouse=True)
def quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        yield


def test_config_round_trip():
    cfg = BenchmarkConfig(dataset="synthetic_quantum", methods=(MUZERO, GA), search_gamma=0.1 + 0.2, seed=7)
    text = cfg.to_ini()
    assert "schema_version = 1" in text
    assert BenchmarkConfig.from_ini(text) == cfg
    assert BenchmarkConfig.from_ini(text).to_ini() == text


@pytest.mark.parametrize(
    "text",
    [
        "[protocol]\nbudget = 10\n",
        "[meta]\nschema_version = 9\n",
        "[meta]\nschema_version = 1\n[protocol]\nbudgett = 10\n",
        "[meta]\nschema_version = 1\n[protocol]\nbudget = ten\n",
        "[meta]\nschema_version = 1\n[protocol]\nmethods = muzero, alchemy\n",
        "[meta]\nschema_version = 1\n[rewards]\nreward_match = 3.0\n",
        "[meta]\nschema_version = 1\n[dataset]\ndataset = california\n",
        "not an ini file",
    ],
)
def test_config_errors(text):
    with pytest.raises(ConfigError):
        BenchmarkConfig.from_ini(text)


def test_hyperopt_single_trial_and_determinism():
    space = {"gamma": Dimension(1e-3, 10.0)}
    seen = []
    best, value, hist = hyperopt(space, 1, lambda p: seen.append(p) or 0.0, seed=3)
    assert best == seen[0] and value == 0.0
    a = hyperopt(space, 20, lambda p: -p["gamma"], seed=5)[2]
    b = hyperopt(space, 20, lambda p: -p["gamma"], seed=5)[2]
    assert a == b


def test_hyperopt_finds_gamma_oracle():
    for g0 in (0.003, 0.1, 2.0):
        best, _, _ = hyperopt({"gamma": Dimension(1e-3, 10.0)}, 200, lambda p: -(math.log(p["gamma"]) - math.log(g0)) ** 2, seed=0)
        assert g0 / 3 <= best["gamma"] <= g0 * 3


def test_hyperopt_ties_keep_first_and_failures():
    best, _, hist = hyperopt({"a": Dimension(0, 1, log=False)}, 10, lambda p: 1.0, seed=0)
    assert best == hist[0][0]

    def fail(p):
        raise ValueError("boom")

    with pytest.raises(HyperoptFailedError):
        hyperopt({"a": Dimension(0, 1, log=False)}, 4, fail)


def fake_report(methods):
    ms = [MethodReport(m, 0, test_score=0.5 + i / 10) for i, m in enumerate(methods)]
    return RunReport({"id": "toy", "task": "classification", "N": 10, "d": 2}, "", ms)


def test_emit_report_categories_and_bytes(tmp_path):
    report = fake_report([CLASSICAL_SVM, REFERENCE, MUZERO, RANDOM_LAYERED, RANDOM_FLEXIBLE, GA])
    files = emit_report(report, tmp_path / "a")
    rows = files["csv"].read_text().splitlines()
    assert rows[0] == "method,run,score"
    assert [r.split(",")[0] for r in rows[1:]] == ["CML", "reference", "MuZero", "random-layered", "random-flexible", "GA"]
    emit_report(report, tmp_path / "b")
    for name in ("report.json", "results.jsonl", "summary.txt", "scores.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    again = harness.load_report(tmp_path / "a" / "report.json")
    emit_report(again, tmp_path / "c")
    assert (tmp_path / "c" / "scores.csv").read_bytes() == files["csv"].read_bytes()


def test_emit_report_errors(tmp_path):
    with pytest.raises(ReportError):
        emit_report(fake_report([]), tmp_path)
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(ReportError, match="file"):
        emit_report(fake_report([GA]), blocker / "sub")


def test_pipeline_classical_has_no_circuits():
    report = run_pipeline(BenchmarkConfig(methods=(CLASSICAL_SVM,), out_dir="", **SMALL))
    m = report.methods[0]
    assert m.status == "ok" and m.candidates == [] and m.chosen_circuit is None
    assert 0.5 <= m.test_score <= 1.0


def test_pipeline_budget_determinism_and_leakage(tmp_path):
    cfg = BenchmarkConfig(methods=(MUZERO, RANDOM_LAYERED, GA, REFERENCE), out_dir=str(tmp_path), **SMALL)
    a = run_pipeline(cfg)
    b = run_pipeline(cfg)
    assert a.to_dict(timestamps=False) == b.to_dict(timestamps=False)
    for m in a.methods:
        assert m.status == "ok", m.status
        assert m.evaluations <= cfg.budget
        assert len(m.candidates) <= cfg.top_k
    assert a.leakage == {"reads_before_final": 0, "final_reads": 4}
    assert (tmp_path / "logs" / "muzero_seed0.log").exists()


def test_pipeline_step_failure_marks_report(monkeypatch):
    def broken(*args, **kwargs):
        raise HyperoptFailedError("no candidate could be tuned")

    monkeypatch.setattr(harness, "_tune", broken)
    report = run_pipeline(BenchmarkConfig(methods=(RANDOM_LAYERED,), out_dir="", **SMALL))
    assert report.failed and "hyperopt" in report.methods[0].status
    assert report.methods[0].candidates and report.methods[0].test_score is None


def write_config(tmp_path, **kw):
    path = tmp_path / "bench.ini"
    BenchmarkConfig(out_dir=str(tmp_path / "out"), **{**SMALL, **kw}).save(path)
    return path


def test_cli_exit_codes(tmp_path, monkeypatch, capsys):
    cfg = write_config(tmp_path)
    assert cli.main(["classical", "--config", str(cfg)]) == 0
    assert cli.main(["baseline", "--config", str(cfg), "--method", "random-layered", "--budget", "8", "--seed", "2"]) == 0
    assert (tmp_path / "out" / "baseline" / "scores.csv").exists()
    assert cli.main(["report", "--config", str(cfg)]) == 0
    merged = (tmp_path / "out" / "scores.csv").read_text().splitlines()
    assert merged[0] == "method,run,score" and len(merged) == 3
    assert cli.main(["search", "--config", str(tmp_path / "missing.ini")]) == 2
    bad = tmp_path / "bad.ini"
    bad.write_text("[meta]\nschema_version = 1\n[protocol]\nbudget = -1\n")
    assert cli.main(["evaluate", "--config", str(bad)]) == 2
    assert cli.main(["baseline", "--config", str(cfg), "--method", "muzero"]) == 2
    monkeypatch.setattr(harness, "_tune", lambda *a, **k: (_ for _ in ()).throw(HyperoptFailedError("x")))
    assert cli.main(["reference", "--config", str(cfg)]) == 3
    assert cli.main(["report", "--out", str(tmp_path / "empty")]) == 3
