#!/usr/bin/env python3
"""
FDN Benchmark
Trains the model grid on the synthetic tasks, re-scores checkpoints, builds
the report, checks the acceptance bands and runs the gradient suite from
the command line.
"""

import os
import sys
import json
import logging
import argparse
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from autodiff import GradCheckReport, ParamStore, Rng, grad_check, logmeanexp
from experiment_config import ConfigError, ExperimentConfig, Settings, config_hash, load_config, load_suite
from metrics import MetricsReport, evaluate_model
from models import ModelSpec, build_model, load_checkpoint
from prob_losses import (SIGMA_FLOOR, DiagGaussian, PriorSpec, beta_elbo_loss, data_nll, hetero_nll,
                         iwae_loss, kl_diag_gaussian)
from reporting import acceptance_checks, records_frame, report
from tasks import TaskSpec
from training_system import RunRecord, dataset_for, is_complete, load_record, minibatch_loss, train

logger = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.json"


def configure_logging(settings: Settings) -> None:
    """File and console logging, level from FDN_LOG_LEVEL."""
    logging.basicConfig(
        level=getattr(logging, settings.log_level, logging.INFO),
        format='%(asctime)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(settings.log_file),
            logging.StreamHandler()
        ]
    )


def _execute(config: ExperimentConfig, seed: int) -> Tuple[Dict, Optional[RunRecord]]:
    """Run or reuse one (config, seed); never raises."""
    run_hash = config_hash(config, seed)
    run_dir = os.path.join(config.output_dir, run_hash)
    entry = {"hash": run_hash, "model": config.model.kind, "task": config.task.kind,
             "seed": int(seed), "status": "ok", "run_dir": run_dir}
    try:
        if is_complete(run_dir):
            logger.warning(f"Skipping {config.model.kind}/{config.task.kind}/seed {seed}: {run_hash} already complete")
            entry["status"] = "cached"
            return entry, load_record(run_dir)
        return entry, train(config, seed)
    except Exception as e:
        logger.error(f"Run {config.model.kind}/{config.task.kind}/seed {seed} failed: {e}")
        entry["status"] = "failed"
        entry["error"] = f"{type(e).__name__}: {e}"
        return entry, None


def write_manifest(entries: List[Dict], output_dir: str) -> str:
    os.makedirs(output_dir, exist_ok=True)
    path = os.path.join(output_dir, MANIFEST_FILE)
    with open(path, "w") as f:
        json.dump({"runs": entries}, f, indent=2, default=str)
    return path


def run_suite(configs: List[ExperimentConfig], jobs: int = 1,
              output_dir: Optional[str] = None) -> Tuple[List[RunRecord], List[Dict]]:
    """Every (config, seed) pair; failures are recorded and the suite carries on."""
    work = [(config, seed) for config in configs for seed in config.seeds]
    if output_dir is None:
        output_dir = configs[0].output_dir if configs else "out"
    logger.info(f"Starting suite: {len(work)} runs on {max(1, jobs)} worker(s)")

    if jobs <= 1 or len(work) <= 1:
        results = [_execute(config, seed) for config, seed in work]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_execute, config, seed) for config, seed in work]
            results = [future.result() for future in futures]

    entries = [entry for entry, _ in results]
    records = [record for _, record in results if record is not None]
    write_manifest(entries, output_dir)

    failed = sum(1 for e in entries if e["status"] == "failed")
    cached = sum(1 for e in entries if e["status"] == "cached")
    logger.info(f"Suite completed: {len(entries) - failed - cached} trained, {cached} cached, {failed} failed")
    return records, entries


def evaluate_checkpoint(path: str, task: TaskSpec, K_test: int = 100, seed: int = 7) -> MetricsReport:
    """Re-score a saved model on the (task, seed) test grids."""
    model = load_checkpoint(path)
    dataset = dataset_for(task, seed)
    return evaluate_model(model, dataset, K_test, Rng.for_run(seed, model.kind, task.kind, "eval"))


def collect_records(output_dir: str) -> List[RunRecord]:
    """Load every complete run directory under `output_dir`."""
    records = []
    if not os.path.isdir(output_dir):
        return records
    for name in sorted(os.listdir(output_dir)):
        run_dir = os.path.join(output_dir, name)
        if os.path.isdir(run_dir) and is_complete(run_dir):
            try:
                records.append(load_record(run_dir))
            except Exception as e:
                logger.error(f"Cannot load run {run_dir}: {e}")
    return records


# Gradient suite: each case builds (params, loss_fn) from a seeded stream.

def _param(rng: Rng, shape, kind: str = "any") -> np.ndarray:
    value = rng.normal(shape)
    if kind == "positive":
        return 0.5 + np.abs(value)
    if kind == "away_from_zero":
        return np.sign(value) * (0.1 + np.abs(value))
    return value


_OP_CASES: List[Tuple[str, Callable, tuple, Optional[tuple], str, str]] = [
    ("matmul", lambda a, b: (a @ b).square().sum(), (3, 4), (4, 2), "any", "any"),
    ("batched_matmul", lambda a, b: (a @ b).tanh().sum(), (2, 3, 4), (2, 4, 2), "any", "any"),
    ("add", lambda a, b: (a + b).square().sum(), (3, 4), (4,), "any", "any"),
    ("sub", lambda a, b: (a - b).square().sum(), (3, 4), (3, 1), "any", "any"),
    ("mul", lambda a, b: (a * b).sum(), (3, 4), (3, 4), "any", "any"),
    ("div", lambda a, b: (a / b).sum(), (3, 4), (3, 4), "any", "positive"),
    ("square", lambda a, b: a.square().sum(), (3, 4), None, "any", "any"),
    ("exp", lambda a, b: a.exp().sum(), (3, 4), None, "any", "any"),
    ("log", lambda a, b: a.log().sum(), (3, 4), None, "positive", "any"),
    ("tanh", lambda a, b: a.tanh().square().sum(), (3, 4), None, "any", "any"),
    ("relu", lambda a, b: a.relu().square().sum(), (3, 4), None, "away_from_zero", "any"),
    ("sigmoid", lambda a, b: a.sigmoid().square().sum(), (3, 4), None, "any", "any"),
    ("softplus", lambda a, b: a.softplus().square().sum(), (3, 4), None, "any", "any"),
    ("sum", lambda a, b: (a.sum(axis=1, keepdims=True) * a).sum(), (3, 4), None, "any", "any"),
    ("mean", lambda a, b: a.mean(axis=0).square().sum(), (3, 4), None, "any", "any"),
    ("reshape", lambda a, b: (a.reshape(4, 3).swapaxes(0, 1) * a).sum(), (3, 4), None, "any", "any"),
    ("index", lambda a, b: a[1:, ::2].square().sum() + a[[0, 0, 2]].exp().sum(), (3, 4), None, "any", "any"),
    ("repeat_rows", lambda a, b: (a.repeat_rows(3).square() * np.arange(36.0).reshape(9, 4)).sum(),
     (3, 4), None, "any", "any"),
    ("logmeanexp", lambda a, b: logmeanexp(a, axis=0).sum(), (3, 4), None, "any", "any"),
]


def _op_case(rng: Rng, fn: Callable, a_shape, b_shape, a_kind, b_kind) -> Tuple[ParamStore, Callable]:
    params = ParamStore()
    a = params.add("a", _param(rng, a_shape, a_kind))
    b = params.add("b", _param(rng, b_shape, b_kind)) if b_shape else None
    return params, lambda: fn(a, b)


def _loss_cases(rng: Rng) -> Dict[str, Tuple[ParamStore, Callable]]:
    y = rng.normal(4)
    cases = {}

    params = ParamStore()
    mu, r = params.add("mu", rng.normal((3, 4))), params.add("r", rng.normal(4))
    cases["beta_elbo"] = (params, lambda: beta_elbo_loss(-data_nll(y, mu), r.square(), 0.3).sum())

    params = ParamStore()
    mu, lp = params.add("mu", rng.normal((3, 4))), params.add("lp", rng.normal((3, 4)))
    cases["iwae"] = (params, lambda: iwae_loss(-data_nll(y, mu), lp, lp.square() * -0.5).sum())

    params = ParamStore()
    mu, s = params.add("mu", rng.normal((3, 4))), params.add("s", rng.normal((3, 4)))
    cases["hetero_nll"] = (params, lambda: hetero_nll(y, mu, s.exp()).sum())

    params = ParamStore()
    m, rho = params.add("m", rng.normal((3, 4))), params.add("rho", rng.normal((3, 4)))
    cases["kl_diag_gaussian"] = (params, lambda: kl_diag_gaussian(
        DiagGaussian(m, rho.softplus() + SIGMA_FLOOR), PriorSpec(0.5 + float(np.abs(y[0])))))

    spec = ModelSpec(kind="ic_fdn", d_hid=1, d_hyper=2, enforce_budget=False)
    model = build_model(spec, rng.child("ic_fdn"))
    x, target, noise_seed = rng.normal(1), rng.normal(1), int(rng.permutation(1000)[0])
    config = ExperimentConfig(model=spec, K_train=2)
    cases["ic_fdn_beta_elbo"] = (model.params, lambda: minibatch_loss(
        model, config, x, target, 0.5, Rng(noise_seed)))
    return cases


def gradient_checks(seed: int = 0, instances: int = 20, eps: float = 1e-5,
                    rtol: float = 1e-4) -> List[Tuple[str, GradCheckReport]]:
    """Operator and loss gradients against central differences on randomized instances."""
    results = []
    for i in range(instances):
        rng = Rng(seed, ("gradcheck", str(i)))
        for name, fn, a_shape, b_shape, a_kind, b_kind in _OP_CASES:
            params, loss_fn = _op_case(rng.child(name), fn, a_shape, b_shape, a_kind, b_kind)
            results.append((name, grad_check(loss_fn, params, eps=eps, rtol=rtol)))
        for name, (params, loss_fn) in _loss_cases(rng.child("losses")).items():
            results.append((name, grad_check(loss_fn, params, eps=eps, rtol=rtol)))
    return results


def _cmd_run(args, settings: Settings) -> int:
    config = load_config(args.config, settings)
    if args.out:
        config = replace(config, output_dir=args.out)
    seeds = [args.seed] if args.seed is not None else config.seeds
    status = 0
    for seed in seeds:
        try:
            record = train(config, seed)
            print(json.dumps({"hash": record.config_hash, "seed": seed, **record.metrics.to_json()},
                             indent=2, default=str))
        except Exception as e:
            logger.error(f"Run {config.model.kind}/{config.task.kind}/seed {seed} failed: {e}")
            print(f"error: {e}", file=sys.stderr)
            status = 1
    return status


def _cmd_suite(args, settings: Settings) -> int:
    out = args.out or settings.output_dir
    configs = [replace(c, output_dir=out) for c in load_suite(args.config, settings)]
    if args.seed is not None:
        configs = [replace(c, seeds=[args.seed]) for c in configs]
    records, entries = run_suite(configs, args.jobs or settings.jobs, out)
    if records:
        report(records, out, with_std=args.std)
    return 1 if any(e["status"] == "failed" for e in entries) else 0


def _cmd_eval(args, settings: Settings) -> int:
    task = load_config(args.config, settings).task if args.config else TaskSpec(kind=args.task)
    result = evaluate_checkpoint(args.checkpoint, task, args.K_test, 7 if args.seed is None else args.seed)
    print(json.dumps(result.to_json(), indent=2, default=str))
    return 0


def _cmd_report(args, settings: Settings) -> int:
    out = args.out or settings.output_dir
    records = collect_records(out)
    if not records:
        logger.error(f"No finished runs found under {out}")
        return 1
    written = report(records, out, with_std=args.std)
    for task, files in written.items():
        print(f"{task}: {', '.join(files)}")
    return 0


def _cmd_accept(args, settings: Settings) -> int:
    out = args.out or settings.output_dir
    if args.skip_training:
        records = collect_records(out)
    else:
        configs = [replace(c, output_dir=out) for c in load_suite(args.config, settings)]
        records, _ = run_suite(configs, args.jobs or settings.jobs, out)
    frame = records_frame(records)
    if frame.empty:
        logger.error(f"No finished runs found under {out}")
        return 1
    report(records, out, with_std=True)
    checks = acceptance_checks(frame)
    failed = [c for c in checks if not c.passed]
    print(f"{'status':<6} {'task':<10} {'model':<14} check")
    for c in checks:
        print(f"{'ok' if c.passed else 'FAIL':<6} {c.task:<10} {c.model:<14} {c.label} ({c.detail})")
    print(f"{len(checks) - len(failed)}/{len(checks)} acceptance checks passed")
    if failed:
        logger.warning(f"{len(failed)} acceptance checks failed under {out}")
    return 1 if failed else 0


def _cmd_gradcheck(args, settings: Settings) -> int:
    results = gradient_checks(seed=0 if args.seed is None else args.seed, instances=args.instances)
    worst: Dict[str, float] = {}
    for name, result in results:
        worst[name] = max(worst.get(name, 0.0), max(result.deviations.values(), default=0.0))
    failed = [name for name, result in results if not result.passed]
    print(f"{'check':<20} {'max rel dev':>12}  status")
    for name, dev in worst.items():
        print(f"{name:<20} {dev:>12.3e}  {'FAIL' if name in failed else 'ok'}")
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fdn_benchmark", description="Functional distribution network benchmark")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train one config")
    run.add_argument("--config", help="experiment config JSON (defaults when omitted)")
    run.add_argument("--seed", type=int, help="single seed instead of the config's seed list")
    run.add_argument("--out", help="output directory")

    suite = sub.add_parser("suite", help="train the benchmark matrix and build the report")
    suite.add_argument("--config", help="suite JSON (full matrix when omitted)")
    suite.add_argument("--seed", type=int, help="single seed for every run")
    suite.add_argument("--out", help="output directory")
    suite.add_argument("--jobs", type=int, help="worker processes")
    suite.add_argument("--std", action="store_true", help="add std columns to the tables")

    ev = sub.add_parser("eval", help="re-score a checkpoint")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--task", default="sine", choices=["step", "sine", "quadratic"])
    ev.add_argument("--config", help="take the task spec from this config instead of --task")
    ev.add_argument("--seed", type=int, help="dataset/eval seed (default 7)")
    ev.add_argument("--K-test", dest="K_test", type=int, default=100)

    rep = sub.add_parser("report", help="tables and figures from finished runs")
    rep.add_argument("--out", help="output directory holding the run directories")
    rep.add_argument("--std", action="store_true")

    acc = sub.add_parser("accept", help="train the desk-scale suite and check the calibration bands")
    acc.add_argument("--config", help="suite JSON (full matrix, seeds 7 8 9 when omitted)")
    acc.add_argument("--out", help="output directory")
    acc.add_argument("--jobs", type=int, help="worker processes")
    acc.add_argument("--skip-training", dest="skip_training", action="store_true",
                     help="check the runs already under --out")

    grad = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    grad.add_argument("--seed", type=int)
    grad.add_argument("--instances", type=int, default=20)
    return parser


COMMANDS = {
    "run": _cmd_run,
    "suite": _cmd_suite,
    "eval": _cmd_eval,
    "report": _cmd_report,
    "gradcheck": _cmd_gradcheck,
    "accept": _cmd_accept,
}


def cli(argv: Optional[List[str]] = None) -> int:
    """Parse `argv` and dispatch; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 2 if e.code not in (0, None) else 0
    try:
        settings = Settings.from_env()
        return COMMANDS[args.command](args, settings)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return 1


def main():
    """Main entry point."""
    settings = Settings.from_env()
    configure_logging(settings)
    logger.info("Starting FDN benchmark")
    sys.exit(cli())


if __name__ == "__main__":
    main()
