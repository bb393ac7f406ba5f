#!/usr/bin/env python3
"""
Tests for the benchmark harness: gradient suite, suite runner, report
files and the command line.
"""

import io
import os
import sys
import json
import tempfile
from contextlib import redirect_stderr, redirect_stdout

import numpy as np
import pandas as pd

from experiment_config import ExperimentConfig
from fdn_benchmark import MANIFEST_FILE, cli, collect_records, evaluate_checkpoint, gradient_checks, run_suite
from metrics import REPORT_COLUMNS, PointEval, report_from_points
from models import ModelSpec, count_params
from reporting import acceptance_checks, report
from tasks import TaskSpec
from test_setup import run_tests
from training_system import CONFIG_FILE, METRICS_FILE, RunRecord

TINY_TASK = {"kind": "sine", "n_train": 32, "n_test_id": 20, "n_test_ood": 20}
TINY_MODEL = {"kind": "bayes", "d_hid": 4, "enforce_budget": False}


def _config(output_dir: str, model: dict = None, **overrides) -> ExperimentConfig:
    data = {"task": dict(TINY_TASK), "model": dict(model or TINY_MODEL), "epochs": 2, "batch_size": 16,
            "K_val": 4, "K_test": 4, "seeds": [7], "output_dir": output_dir}
    data.update(overrides)
    return ExperimentConfig.from_dict(data)


def _write_json(path: str, data: dict) -> str:
    with open(path, "w") as f:
        json.dump(data, f)
    return path


def test_gradient_suite_passes():
    results = gradient_checks(seed=0, instances=2)
    failed = [name for name, result in results if not result.passed]
    assert not failed, failed
    names = {name for name, _ in results}
    assert {"matmul", "softplus", "logmeanexp", "beta_elbo", "iwae", "hetero_nll",
            "kl_diag_gaussian", "ic_fdn_beta_elbo"} <= names


def test_suite_trains_then_reuses_runs():
    with tempfile.TemporaryDirectory() as tmp:
        config = _config(tmp, seeds=[7, 8])
        records, entries = run_suite([config], jobs=1, output_dir=tmp)
        assert [e["status"] for e in entries] == ["ok", "ok"]
        assert len(records) == 2

        again, entries = run_suite([config], jobs=1, output_dir=tmp)
        assert [e["status"] for e in entries] == ["cached", "cached"]
        assert [r.metrics.aurc for r in again] == [r.metrics.aurc for r in records]
        with open(os.path.join(tmp, MANIFEST_FILE), "r") as f:
            assert len(json.load(f)["runs"]) == 2
        assert len(collect_records(tmp)) == 2


def test_suite_records_failures_and_continues():
    with tempfile.TemporaryDirectory() as tmp:
        over_budget = _config(tmp, model={"kind": "ic_fdn", "d_hid": 40})
        records, entries = run_suite([over_budget, _config(tmp)], jobs=1, output_dir=tmp)
        assert [e["status"] for e in entries] == ["failed", "ok"]
        assert "BudgetError" in entries[0]["error"]
        assert len(records) == 1


def test_empty_suite_writes_empty_manifest():
    with tempfile.TemporaryDirectory() as tmp:
        records, entries = run_suite([], output_dir=tmp)
        assert records == [] and entries == []
        with open(os.path.join(tmp, MANIFEST_FILE), "r") as f:
            assert json.load(f) == {"runs": []}


def test_report_writes_tables_and_figures():
    with tempfile.TemporaryDirectory() as tmp:
        records, _ = run_suite([_config(tmp)], output_dir=tmp)
        written = report(records, tmp, with_std=True)
        assert list(written) == ["sine"]
        names = {os.path.basename(path) for path in written["sine"]}
        assert names == {"sine.csv", "sine_rc.svg", "sine_scatter.svg", "sine_scatter_id.svg",
                         "sine_scatter_ood.svg", "deltas_sine.svg"}
        for path in written["sine"]:
            assert os.path.getsize(path) > 0
        table = pd.read_csv(os.path.join(tmp, "report", "sine.csv"))
        assert list(table.columns[:8]) == ["model"] + list(REPORT_COLUMNS)
        assert "aurc_std" in table.columns
        with open(os.path.join(tmp, "report", "summary.json"), "r") as f:
            assert json.load(f)["sine"]["bayes"]["aurc"]["n"] == 1


def test_perfect_model_row_leaves_undefined_cells_empty():
    points = [PointEval(float(x), 0.0, 0.0, 0.0, "id" if abs(x) < 2 else "ood") for x in (-3, -1, 1, 3)]
    record = RunRecord(config_hash="perfect", seed=7, model="det_hyper", task="step", run_dir="",
                       checkpoint_path="", best_epoch=0, best_val_mse=0.0, param_count=0, updates=0,
                       metrics=report_from_points(points))
    with tempfile.TemporaryDirectory() as tmp:
        report([record], tmp)
        table = pd.read_csv(os.path.join(tmp, "report", "step.csv"))
    row = table.iloc[0]
    assert row["model"] == "det_hyper"
    assert all(np.isnan(row[column]) for column in ("rho", "b", "a"))
    assert row["aurc"] == 0.0
    assert (row["d_var"], row["d_mse"], row["d_crps"]) == (0.0, 0.0, 0.0)


def test_report_rejects_empty_input():
    with tempfile.TemporaryDirectory() as tmp:
        try:
            report([], tmp)
            raise AssertionError("expected ValueError")
        except ValueError:
            pass


def _desk_frame() -> pd.DataFrame:
    base = {"rho": 0.5, "b": 3.0, "a": 0.0, "aurc": 1.0, "d_var": 0.1, "d_mse": 5.0, "d_crps": 0.5}
    cells = {
        ("quadratic", "ic_fdn"): {"rho": 0.97, "b": 1.0},
        ("quadratic", "lp_fdn"): {"rho": 0.97, "b": 1.1, "a": 0.05},
        ("quadratic", "gauss_hyper"): {"rho": 0.96, "b": 0.9},
        ("quadratic", "mlp_dropout"): {"b": 70.0},
        ("quadratic", "deep_ensemble"): {"b": 18.0},
        ("quadratic", "bayes"): {"b": 23.0},
        ("step", "ic_fdn"): {"rho": 0.9, "b": 1.2},
        ("step", "lp_fdn"): {"rho": 0.85, "b": 1.5},
        ("step", "bayes"): {"b": 200.0},
        ("sine", "ic_fdn"): {"rho": 0.95, "b": 20.0},
        ("sine", "lp_fdn"): {"rho": 0.93, "b": 15.0},
        ("sine", "deep_ensemble"): {"rho": 0.28},
    }
    rows = []
    for task in ("step", "sine", "quadratic"):
        for model in ("mlp_dropout", "deep_ensemble", "bayes", "gauss_hyper", "ic_fdn", "lp_fdn"):
            for seed in (7, 8, 9):
                rows.append({"task": task, "model": model, "seed": seed, **base, **cells.get((task, model), {})})
    return pd.DataFrame(rows)


def test_acceptance_bands_pass_on_calibrated_results():
    checks = acceptance_checks(_desk_frame())
    assert len(checks) == 32
    assert all(c.passed for c in checks), [c for c in checks if not c.passed]


def test_acceptance_flags_single_seed_shift_and_missing_runs():
    frame = _desk_frame()
    flipped = (frame["task"] == "sine") & (frame["model"] == "ic_fdn") & (frame["seed"] == 7)
    frame.loc[flipped, "d_var"] = -0.03
    failed = [c for c in acceptance_checks(frame) if not c.passed]
    assert [(c.task, c.model) for c in failed] == [("sine", "ic_fdn")]
    assert "seed 7" in failed[0].detail

    frame = _desk_frame()
    frame = frame[~((frame["task"] == "quadratic") & (frame["model"] == "lp_fdn"))].copy()
    frame.loc[(frame["task"] == "step") & (frame["model"] == "bayes"), "b"] = 12.0
    failed = [c for c in acceptance_checks(frame) if not c.passed]
    assert {(c.task, c.model) for c in failed} == {("quadratic", "lp_fdn"), ("step", "bayes")}
    assert all(c.detail == "no runs" for c in failed if c.model == "lp_fdn")


def test_cli_accept_without_runs_fails():
    with tempfile.TemporaryDirectory() as tmp:
        with redirect_stderr(io.StringIO()), redirect_stdout(io.StringIO()):
            assert cli(["accept", "--skip-training", "--out", tmp]) == 1


def test_cli_unknown_command_is_usage_error():
    with redirect_stderr(io.StringIO()):
        assert cli(["bogus"]) == 2
        assert cli(["eval"]) == 2


def test_cli_run_reports_budget_violation():
    model = {"kind": "ic_fdn", "d_hid": 40}
    count = count_params(ModelSpec.preset("ic_fdn", d_hid=40)).count
    with tempfile.TemporaryDirectory() as tmp:
        path = _write_json(os.path.join(tmp, "config.json"), {"model": model, "task": dict(TINY_TASK)})
        stderr = io.StringIO()
        with redirect_stderr(stderr):
            assert cli(["run", "--config", path, "--seed", "7", "--out", tmp]) == 1
    assert str(count) in stderr.getvalue()


def test_cli_rejects_unknown_config_keys():
    with tempfile.TemporaryDirectory() as tmp:
        path = _write_json(os.path.join(tmp, "config.json"), {"epochz": 3})
        with redirect_stderr(io.StringIO()):
            assert cli(["run", "--config", path, "--out", tmp]) == 1


def test_cli_run_then_eval_reproduces_metrics():
    with tempfile.TemporaryDirectory() as tmp:
        config_path = _write_json(os.path.join(tmp, "tiny.json"), _config(tmp).to_dict())
        out = io.StringIO()
        with redirect_stdout(out):
            assert cli(["run", "--config", config_path, "--seed", "7", "--out", tmp]) == 0
        run_hash = json.loads(out.getvalue())["hash"]
        run_dir = os.path.join(tmp, run_hash)
        with open(os.path.join(run_dir, METRICS_FILE), "r") as f:
            saved = json.load(f)

        out = io.StringIO()
        with redirect_stdout(out):
            code = cli(["eval", "--checkpoint", os.path.join(run_dir, "ckpt.bin"),
                        "--config", os.path.join(run_dir, CONFIG_FILE), "--seed", "7", "--K-test", "4"])
        assert code == 0
        assert json.loads(out.getvalue())["aurc"] == saved["aurc"]

        direct = evaluate_checkpoint(os.path.join(run_dir, "ckpt.bin"), TaskSpec(**TINY_TASK), 4, 7)
        assert direct.aurc == saved["aurc"]


def test_cli_gradcheck_succeeds():
    with redirect_stdout(io.StringIO()):
        assert cli(["gradcheck", "--instances", "1"]) == 0


def main():
    tests = [
        test_gradient_suite_passes,
        test_suite_trains_then_reuses_runs,
        test_suite_records_failures_and_continues,
        test_empty_suite_writes_empty_manifest,
        test_report_writes_tables_and_figures,
        test_perfect_model_row_leaves_undefined_cells_empty,
        test_report_rejects_empty_input,
        test_acceptance_bands_pass_on_calibrated_results,
        test_acceptance_flags_single_seed_shift_and_missing_runs,
        test_cli_unknown_command_is_usage_error,
        test_cli_run_reports_budget_violation,
        test_cli_rejects_unknown_config_keys,
        test_cli_run_then_eval_reproduces_metrics,
        test_cli_gradcheck_succeeds,
        test_cli_accept_without_runs_fails,
    ]
    return run_tests("Benchmark Harness Tests", tests)


if __name__ == "__main__":
    sys.exit(0 if main() else 1)
