"""
Benchmark Reporting
Per-task summary tables (seed means, optional std) and the SVG figures:
risk-coverage curves, MSE-vs-Var scatters with the MSE = Var guide, and
OOD-minus-ID delta bars. Also the desk-scale acceptance bands checked on
seed means.
"""

import os
import json
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import matplotlib

matplotlib.use("Agg")
from matplotlib import pyplot as plt

from metrics import REPORT_COLUMNS, PointEval, aurc
from models import BENCHMARK_KINDS, MODEL_KINDS
from training_system import RunRecord

logger = logging.getLogger(__name__)

DELTA_COLUMNS = ("d_mse", "d_var", "d_crps")


def _cell(record: RunRecord, column: str) -> float:
    """A metric value, NaN when the metric is absent for this run."""
    report = record.metrics
    if column == "rho" and not report.rho_defined:
        return np.nan
    value = getattr(report, column)
    return np.nan if value is None else float(value)


def records_frame(records: List[RunRecord]) -> pd.DataFrame:
    rows = []
    for record in records:
        if record.metrics is None:
            logger.warning(f"Run {record.config_hash} has no metrics; left out of the report")
            continue
        row = {"task": record.task, "model": record.model, "seed": record.seed}
        row.update({column: _cell(record, column) for column in REPORT_COLUMNS})
        rows.append(row)
    return pd.DataFrame(rows, columns=["task", "model", "seed"] + list(REPORT_COLUMNS))


def _model_order(models) -> List[str]:
    known = [kind for kind in MODEL_KINDS if kind in set(models)]
    return known + sorted(set(models) - set(known))


def summary_table(frame: pd.DataFrame, task: str, with_std: bool = False) -> pd.DataFrame:
    """Rows are models, columns the report metrics; each cell is the mean over seeds."""
    subset = frame[frame["task"] == task]
    grouped = subset.groupby("model")[list(REPORT_COLUMNS)]
    table = grouped.mean()
    if with_std:
        std = grouped.std(ddof=0).add_suffix("_std")
        table = table.join(std)
    table = table.reindex(_model_order(table.index))
    table.index.name = "model"
    return table


def _risk_curve(points: List[PointEval]) -> Tuple[np.ndarray, np.ndarray]:
    curve = aurc(points)
    return curve.coverage, curve.risk


def _pooled_points(records: List[RunRecord], split: Optional[str] = None) -> List[PointEval]:
    points = [p for r in records for p in r.metrics.points]
    return [p for p in points if split is None or p.split == split]


def plot_risk_coverage(by_model: Dict[str, List[RunRecord]], task: str, path: str) -> None:
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for model, runs in by_model.items():
        points = _pooled_points(runs)
        if not points:
            continue
        coverage, risk = _risk_curve(points)
        mean_aurc = np.mean([r.metrics.aurc for r in runs])
        ax.plot(coverage, risk, linewidth=1.2, label=f"{model} (AURC {mean_aurc:.3g})")
    ax.set_xlabel("coverage")
    ax.set_ylabel("risk (MSE of retained points)")
    ax.set_title(f"{task}: risk-coverage")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def plot_scatter(by_model: Dict[str, List[RunRecord]], task: str, path: str, split: Optional[str] = None) -> None:
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for model, runs in by_model.items():
        points = _pooled_points(runs, split)
        if not points:
            continue
        ax.scatter([p.variance for p in points], [p.squared_error for p in points],
                   s=6, alpha=0.5, label=model)
    ax.axline((0.0, 0.0), slope=1.0, color="grey", linestyle="--", linewidth=1.0, label="MSE = Var")
    ax.set_xlabel("predicted variance")
    ax.set_ylabel("squared error")
    ax.set_title(f"{task}: MSE vs Var" + (f" ({split.upper()})" if split else ""))
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def plot_deltas(table: pd.DataFrame, task: str, path: str) -> None:
    fig, ax = plt.subplots(figsize=(7, 4.5))
    positions = np.arange(len(table.index))
    width = 0.8 / len(DELTA_COLUMNS)
    for i, column in enumerate(DELTA_COLUMNS):
        ax.bar(positions + (i - 1) * width, table[column].to_numpy(dtype=float), width, label=column)
    ax.axhline(0.0, color="black", linewidth=0.8)
    ax.set_xticks(positions)
    ax.set_xticklabels(table.index, rotation=20)
    ax.set_ylabel("OOD mean - ID mean")
    ax.set_title(f"{task}: shift deltas")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def _json_value(value) -> Optional[float]:
    return None if value is None or not np.isfinite(value) else float(value)


def summary_record(frame: pd.DataFrame) -> Dict:
    """{task: {model: {metric: {mean, std, n}}}}; absent cells are null."""
    summary: Dict = {}
    for (task, model), group in frame.groupby(["task", "model"]):
        cells = {}
        for column in REPORT_COLUMNS:
            values = group[column].dropna().to_numpy(dtype=float)
            cells[column] = {
                "mean": _json_value(values.mean()) if values.size else None,
                "std": _json_value(values.std()) if values.size else None,
                "n": int(values.size),
            }
        summary.setdefault(task, {})[model] = cells
    return summary


def report(records: List[RunRecord], out_dir: str, with_std: bool = False) -> Dict[str, List[str]]:
    """Write tables and figures under `<out_dir>/report`; returns the files per task."""
    frame = records_frame(records)
    if frame.empty:
        raise ValueError("report needs at least one run with metrics")
    report_dir = os.path.join(out_dir, "report")
    os.makedirs(report_dir, exist_ok=True)

    written: Dict[str, List[str]] = {}
    for task in sorted(frame["task"].unique()):
        runs = [r for r in records if r.task == task and r.metrics is not None]
        by_model = {m: [r for r in runs if r.model == m] for m in _model_order({r.model for r in runs})}
        table = summary_table(frame, task, with_std)

        files = [os.path.join(report_dir, f"{task}.csv")]
        table.to_csv(files[0], na_rep="", float_format="%.6g")
        files.append(os.path.join(report_dir, f"{task}_rc.svg"))
        plot_risk_coverage(by_model, task, files[-1])
        for split, suffix in ((None, ""), ("id", "_id"), ("ood", "_ood")):
            files.append(os.path.join(report_dir, f"{task}_scatter{suffix}.svg"))
            plot_scatter(by_model, task, files[-1], split)
        files.append(os.path.join(report_dir, f"deltas_{task}.svg"))
        plot_deltas(table, task, files[-1])
        written[task] = files
        logger.info(f"Report for {task}: {len(by_model)} models, {len(runs)} runs")

    with open(os.path.join(report_dir, "summary.json"), "w") as f:
        json.dump(summary_record(frame), f, indent=2, default=str)
    logger.info(f"Report written to {report_dir}")
    return written


# Desk-scale acceptance bands on seed means: (label, task, models, [(column, low, high)]).
SEED_MEAN_BANDS = [
    ("quadratic: FDN slope, intercept and rank", "quadratic", ("ic_fdn", "lp_fdn", "gauss_hyper"),
     [("b", 0.7, 1.6), ("a", -0.1, 0.1), ("rho", 0.95, np.inf)]),
    ("quadratic: baselines under-scale variance", "quadratic", ("mlp_dropout", "deep_ensemble", "bayes"),
     [("b", 5.0, np.inf)]),
    ("step: FDN slope and rank", "step", ("ic_fdn", "lp_fdn"), [("rho", 0.8, np.inf), ("b", 0.7, 2.0)]),
    ("step: Bayes slope", "step", ("bayes",), [("b", 20.0, np.inf)]),
    ("sine: FDN keeps rank, under-scales variance", "sine", ("ic_fdn", "lp_fdn"),
     [("rho", 0.9, np.inf), ("b", 10.0, np.inf)]),
    ("sine: ensemble rank", "sine", ("deep_ensemble",), [("rho", -np.inf, 0.6)]),
]
UNDER_SCALE_RATIO = 10.0


@dataclass
class AcceptanceCheck:
    label: str
    task: str
    model: str
    passed: bool
    detail: str


def _band_check(label: str, task: str, model: str, means: pd.Series, bands) -> AcceptanceCheck:
    failures = []
    for column, low, high in bands:
        value = means.get(column, np.nan)
        if not np.isfinite(value):
            failures.append(f"{column} undefined")
        elif not low <= value <= high:
            failures.append(f"{column}={value:.4g} outside [{low:g}, {high:g}]")
    shown = ", ".join(f"{column}={means.get(column, np.nan):.4g}" for column, _, _ in bands)
    return AcceptanceCheck(label, task, model, not failures, "; ".join(failures) or shown)


def acceptance_checks(frame: pd.DataFrame) -> List[AcceptanceCheck]:
    """Evaluate the desk-scale bands on a `records_frame`; missing runs fail their checks."""
    checks = []
    means = frame.groupby(["task", "model"])[list(REPORT_COLUMNS)].mean() if not frame.empty else None

    def cell_means(task: str, model: str) -> Optional[pd.Series]:
        if means is None or (task, model) not in means.index:
            return None
        return means.loc[(task, model)]

    for label, task, models, bands in SEED_MEAN_BANDS:
        for model in models:
            row = cell_means(task, model)
            if row is None:
                checks.append(AcceptanceCheck(label, task, model, False, "no runs"))
            else:
                checks.append(_band_check(label, task, model, row, bands))

    for model in ("ic_fdn", "lp_fdn"):
        row = cell_means("sine", model)
        label = "sine: d_mse far above d_var"
        if row is None:
            checks.append(AcceptanceCheck(label, "sine", model, False, "no runs"))
            continue
        passed = bool(row["d_var"] > 0 and row["d_mse"] >= UNDER_SCALE_RATIO * row["d_var"])
        checks.append(AcceptanceCheck(label, "sine", model, passed,
                                      f"d_mse={row['d_mse']:.4g}, d_var={row['d_var']:.4g}"))

    for task in ("step", "sine", "quadratic"):
        for model in BENCHMARK_KINDS:
            runs = frame[(frame["task"] == task) & (frame["model"] == model)] if not frame.empty else frame
            label = "shift widens variance and error"
            if runs.empty:
                checks.append(AcceptanceCheck(label, task, model, False, "no runs"))
                continue
            bad = runs[~((runs["d_var"] > 0) & (runs["d_mse"] > 0))]
            detail = ", ".join(f"seed {int(r.seed)}: d_var={r.d_var:.4g}, d_mse={r.d_mse:.4g}"
                               for r in bad.itertuples()) or f"{len(runs)} runs"
            checks.append(AcceptanceCheck(label, task, model, bad.empty, detail))
    return checks
