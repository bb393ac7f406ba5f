#!/usr/bin/env python3
"""
Training System
Runs one (model, task, seed) experiment: minibatch training with a
beta-weighted KL term, per-epoch validation on the interpolation grid,
best-checkpoint selection and the run directory on disk.
"""

import os
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from autodiff import Adam, Rng, Tensor, forward_backward
from experiment_config import ExperimentConfig, config_hash
from metrics import MetricsReport, PointEval, evaluate_model, points_frame
from models import BaseModel, DeepEnsemble, build_model, count_params, save_checkpoint
from prob_losses import beta_at, beta_elbo_loss, data_nll, hetero_nll, iwae_loss
from tasks import Dataset, TaskSpec, make_dataset

logger = logging.getLogger(__name__)

CONFIG_FILE = "config.json"
CHECKPOINT_FILE = "ckpt.bin"
POINTS_FILE = "points.csv"
METRICS_FILE = "metrics.json"
TRACE_FILE = "trace.json"


class DivergenceError(RuntimeError):
    """Raised when the training loss stops being finite."""

    def __init__(self, epoch: int, step: int, value: float):
        self.epoch = epoch
        self.step = step
        self.value = value
        super().__init__(f"loss diverged to {value} at epoch {epoch}, step {step}")


@dataclass
class RunRecord:
    """Everything one training run leaves behind."""
    config_hash: str
    seed: int
    model: str
    task: str
    run_dir: str
    checkpoint_path: str
    best_epoch: int
    best_val_mse: float
    param_count: int
    updates: int
    val_mse_trace: List[float] = field(default_factory=list)
    loss_trace: List[float] = field(default_factory=list)
    beta_trace: List[float] = field(default_factory=list)
    metrics: Optional[MetricsReport] = None

    def trace_json(self) -> Dict:
        record = asdict(self)
        record.pop("metrics")
        return record


def dataset_for(task: TaskSpec, seed: int) -> Dataset:
    """The data stream depends on (task, seed) only, so every model sees the same points."""
    return make_dataset(task, Rng.for_run(seed, "dataset", task.kind, "data"))


def validate(model: BaseModel, dataset: Dataset, K: int, rng: Rng) -> float:
    """Mean squared error of the K-draw predictive mean on the ID grid."""
    val = dataset.subset("test_id")
    mean, _, _ = model.predict(val.x, K, rng).moments()
    return float(np.mean((val.y - mean) ** 2))


def minibatch_loss(model: BaseModel, config: ExperimentConfig, x: np.ndarray, y: np.ndarray,
                   beta: float, rng: Rng) -> Tensor:
    """Batch-averaged objective for K_train sampled paths."""
    iwae = config.objective == "iwae"
    paths = model.sample_paths(x, config.K_train, rng, log_densities=iwae)
    if iwae:
        logliks = -data_nll(y, paths.means, paths.variances)
        per_example = iwae_loss(logliks, paths.log_prior, paths.log_q)
    elif config.likelihood == "heteroscedastic":
        per_example = hetero_nll(y, paths.means, paths.variances) + paths.kl * beta
    else:
        per_example = beta_elbo_loss(-data_nll(y, paths.means), paths.kl, beta)
    return per_example.mean()


class TrainingSystem:
    """Trains one model on one task for one seed and writes its run directory."""

    def __init__(self, config: ExperimentConfig, seed: int):
        self.config = config
        self.seed = int(seed)
        self.kind = config.model.kind
        self.task = config.task.kind
        self.hash = config_hash(config, seed)
        self.run_dir = os.path.join(config.output_dir, self.hash)

        self.verdict = count_params(config.model, strict=True)
        self.dataset = dataset_for(config.task, seed)
        self.train_set = self.dataset.subset("train")
        self.model = build_model(config.model, self._stream("init"))

        noise = "dropout-mask" if self.kind == "mlp_dropout" else "weight-noise"
        self.noise_rng = self._stream(noise)
        self.shuffle_rng = self._stream("shuffle")
        self.validate_rng = self._stream("validate")

        self.updates = 0
        self.loss_trace: List[float] = []
        self.beta_trace: List[float] = []

    def _stream(self, purpose: str) -> Rng:
        return Rng.for_run(self.seed, self.kind, self.task, purpose)

    def _learners(self) -> List[BaseModel]:
        if isinstance(self.model, DeepEnsemble):
            return self.model.members
        return [self.model]

    def train_epoch(self, learner: BaseModel, optimizer: Adam, shuffle: Rng, noise: Rng, epoch: int) -> None:
        n = len(self.train_set)
        order = shuffle.permutation(n)
        for step, start in enumerate(range(0, n, self.config.batch_size)):
            idx = order[start:start + self.config.batch_size]
            beta = beta_at(self.updates, self.config.beta)
            loss = minibatch_loss(learner, self.config, self.train_set.x[idx], self.train_set.y[idx], beta, noise)
            value = float(loss)
            if not np.isfinite(value):
                raise DivergenceError(epoch, step, value)
            grads = forward_backward(loss, learner.params)
            optimizer.step(grads, lr=self.config.lr)
            self.loss_trace.append(value)
            self.beta_trace.append(beta)
            self.updates += 1

    def run(self, save: bool = True) -> RunRecord:
        config = self.config
        epochs = config.epochs_per_member
        learners = self._learners()
        logger.info(
            f"Training {self.kind} on {self.task} (seed {self.seed}, {self.verdict.count} params, "
            f"{epochs} epochs x {len(learners)} learner(s)) -> {self.hash}"
        )

        optimizers = [Adam(learner.params, lr=config.lr) for learner in learners]
        if len(learners) > 1:
            shuffles = [self.shuffle_rng.child(f"member{m}") for m in range(len(learners))]
            noises = [self.noise_rng.child(f"member{m}") for m in range(len(learners))]
        else:
            shuffles, noises = [self.shuffle_rng], [self.noise_rng]

        val_trace: List[float] = []
        best_state, best_epoch, best_mse = None, -1, np.inf
        for epoch in range(epochs):
            for learner, optimizer, shuffle, noise in zip(learners, optimizers, shuffles, noises):
                self.train_epoch(learner, optimizer, shuffle, noise, epoch)
                learner.trained = True

            val_mse = validate(self.model, self.dataset, config.K_val, self.validate_rng.child(f"epoch{epoch}"))
            if not np.isfinite(val_mse):
                raise DivergenceError(epoch, self.updates, val_mse)
            val_trace.append(val_mse)
            logger.debug(
                f"epoch {epoch}: loss {self.loss_trace[-1]:.6f}, beta {self.beta_trace[-1]:.5f}, "
                f"val mse {val_mse:.6f}"
            )
            if val_mse < best_mse:
                best_state, best_epoch, best_mse = self.model.params.state_dict(), epoch, val_mse
                logger.info(f"{self.hash}: new best val mse {val_mse:.6f} at epoch {epoch}")

        self.model.params.load_state_dict(best_state)
        self.model.trained = True
        report = evaluate_model(self.model, self.dataset, config.K_test, self._stream("eval"))

        record = RunRecord(
            config_hash=self.hash,
            seed=self.seed,
            model=self.kind,
            task=self.task,
            run_dir=self.run_dir,
            checkpoint_path=os.path.join(self.run_dir, CHECKPOINT_FILE),
            best_epoch=best_epoch,
            best_val_mse=best_mse,
            param_count=self.verdict.count,
            updates=self.updates,
            val_mse_trace=val_trace,
            loss_trace=list(self.loss_trace),
            beta_trace=list(self.beta_trace),
            metrics=report,
        )
        if save:
            self.save_record(record)
        logger.info(
            f"Finished {self.kind}/{self.task}/seed {self.seed}: best epoch {best_epoch}, "
            f"rho {report.rho:.3f}, aurc {report.aurc:.5f}"
        )
        return record

    def save_record(self, record: RunRecord) -> None:
        """Write config, checkpoint, per-point CSV, metrics and traces."""
        os.makedirs(self.run_dir, exist_ok=True)
        with open(os.path.join(self.run_dir, CONFIG_FILE), "w") as f:
            json.dump(replace(self.config, seeds=[self.seed]).to_dict(), f, indent=2, default=str)
        save_checkpoint(self.model, record.checkpoint_path)
        points_frame(record.metrics.points).to_csv(
            os.path.join(self.run_dir, POINTS_FILE), index=False, float_format="%.17g")
        with open(os.path.join(self.run_dir, METRICS_FILE), "w") as f:
            json.dump(record.metrics.to_json(), f, indent=2, default=str)
        with open(os.path.join(self.run_dir, TRACE_FILE), "w") as f:
            json.dump(record.trace_json(), f, indent=2, default=str)
        logger.info(f"Saved run {record.config_hash} to {self.run_dir}")


def train(config: ExperimentConfig, seed: int, save: bool = True) -> RunRecord:
    return TrainingSystem(config, seed).run(save=save)


def is_complete(run_dir: str) -> bool:
    return all(os.path.exists(os.path.join(run_dir, name))
               for name in (CONFIG_FILE, CHECKPOINT_FILE, POINTS_FILE, METRICS_FILE, TRACE_FILE))


def load_points(path: str) -> List[PointEval]:
    frame = pd.read_csv(path, float_precision="round_trip")
    return [
        PointEval(float(row.x), float(row.mse), float(row.var), float(row.crps), str(row.split))
        for row in frame.itertuples(index=False)
    ]


def load_record(run_dir: str) -> RunRecord:
    """Rebuild a RunRecord from a finished run directory without retraining."""
    with open(os.path.join(run_dir, TRACE_FILE), "r") as f:
        trace = json.load(f)
    with open(os.path.join(run_dir, METRICS_FILE), "r") as f:
        report = MetricsReport.from_json(json.load(f))
    report.points = load_points(os.path.join(run_dir, POINTS_FILE))
    trace["run_dir"] = run_dir
    trace["checkpoint_path"] = os.path.join(run_dir, CHECKPOINT_FILE)
    return RunRecord(metrics=report, **trace)
