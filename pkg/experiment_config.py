"""
Experiment Configuration
Nested dataclass records with the benchmark defaults built in, JSON
loading, suite-matrix expansion, environment overrides and config hashing.
"""

import os
import json
import hashlib
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Dict, List, Optional

from dotenv import load_dotenv

from models import BENCHMARK_KINDS, MODEL_PRESETS, VARIATIONAL_KINDS, ModelSpec
from prob_losses import BetaSchedule
from tasks import TASK_KINDS, TaskSpec

logger = logging.getLogger(__name__)

OBJECTIVES = ("beta_elbo", "iwae")
LIKELIHOODS = ("homoscedastic", "heteroscedastic")
DEFAULT_SEEDS = [7, 8, 9]


class ConfigError(ValueError):
    """Raised for malformed or inconsistent configuration."""


@dataclass
class Settings:
    """Process-level settings read from the environment (.env supported)."""
    output_dir: str = "out"
    jobs: int = 1
    log_level: str = "INFO"
    log_file: str = "fdn_benchmark.log"
    epochs: Optional[int] = None

    @classmethod
    def from_env(cls) -> "Settings":
        load_dotenv()
        epochs = os.getenv("FDN_EPOCHS")
        try:
            return cls(
                output_dir=os.getenv("FDN_OUTPUT_DIR", "out"),
                jobs=int(os.getenv("FDN_JOBS", 1)),
                log_level=os.getenv("FDN_LOG_LEVEL", "INFO").upper(),
                log_file=os.getenv("FDN_LOG_FILE", "fdn_benchmark.log"),
                epochs=int(epochs) if epochs else None,
            )
        except ValueError as e:
            raise ConfigError(f"invalid environment setting: {e}")


@dataclass
class ExperimentConfig:
    task: TaskSpec = field(default_factory=TaskSpec)
    model: ModelSpec = field(default_factory=lambda: ModelSpec.preset("ic_fdn"))
    epochs: int = 400
    batch_size: int = 64
    lr: float = 1e-3
    K_train: int = 1
    K_val: int = 100
    K_test: int = 100
    beta: BetaSchedule = field(default_factory=BetaSchedule)
    objective: str = "beta_elbo"
    likelihood: str = "homoscedastic"
    seeds: List[int] = field(default_factory=lambda: list(DEFAULT_SEEDS))
    output_dir: str = "out"

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"unknown objective '{self.objective}', expected one of {OBJECTIVES}")
        if self.likelihood not in LIKELIHOODS:
            raise ConfigError(f"unknown likelihood '{self.likelihood}', expected one of {LIKELIHOODS}")
        if self.objective == "iwae" and self.model.kind not in VARIATIONAL_KINDS:
            raise ConfigError(f"the iwae objective needs a variational model, got {self.model.kind}")
        for name in ("epochs", "batch_size", "K_train", "K_val", "K_test"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.model.likelihood != self.likelihood:
            self.model = replace(self.model, likelihood=self.likelihood)

    @property
    def epochs_per_member(self) -> int:
        """Epoch-split budget: ensembles divide the epochs among their members."""
        if self.model.kind == "deep_ensemble":
            return max(1, self.epochs // self.model.M)
        return self.epochs

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Optional[Dict], settings: Optional[Settings] = None) -> "ExperimentConfig":
        data = dict(data or {})
        _reject_unknown(data, cls, "config")
        try:
            if "task" in data:
                task = dict(data["task"])
                _reject_unknown(task, TaskSpec, "task")
                data["task"] = TaskSpec(**task)
            if "model" in data:
                model = dict(data["model"])
                _reject_unknown(model, ModelSpec, "model")
                kind = model.pop("kind", "ic_fdn")
                data["model"] = ModelSpec.preset(kind, **model)
            if "beta" in data:
                beta = dict(data["beta"])
                _reject_unknown(beta, BetaSchedule, "beta")
                data["beta"] = BetaSchedule(**beta)
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e))
        if settings is not None:
            data.setdefault("output_dir", settings.output_dir)
            if settings.epochs is not None:
                data.setdefault("epochs", settings.epochs)
        return cls(**data)


def _reject_unknown(data: Dict, record, label: str) -> None:
    known = {f.name for f in fields(record)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown {label} keys: {sorted(unknown)}")


def load_config(path: Optional[str], settings: Optional[Settings] = None) -> ExperimentConfig:
    """Read a JSON config; an absent path or empty file gives the defaults."""
    data = {}
    if path:
        try:
            with open(path, "r") as f:
                text = f.read().strip()
            data = json.loads(text) if text else {}
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}")
    return ExperimentConfig.from_dict(data, settings)


def expand_suite(data: Optional[Dict], settings: Optional[Settings] = None) -> List[ExperimentConfig]:
    """One config per (model, task); each keeps the suite's seed list."""
    data = dict(data or {})
    unknown = set(data) - {"base", "models", "tasks", "seeds"}
    if unknown:
        raise ConfigError(f"unknown suite keys: {sorted(unknown)}")
    base = dict(data.get("base", {}))
    models = data.get("models", list(BENCHMARK_KINDS))
    tasks = data.get("tasks", list(TASK_KINDS))
    seeds = data.get("seeds", base.get("seeds", list(DEFAULT_SEEDS)))

    configs = []
    for model in models:
        model = {"kind": model} if isinstance(model, str) else dict(model)
        if model.get("kind") not in MODEL_PRESETS:
            raise ConfigError(f"unknown model kind in suite: {model.get('kind')}")
        for task in tasks:
            task = {"kind": task} if isinstance(task, str) else dict(task)
            merged = dict(base)
            merged["model"] = {**base.get("model", {}), **model}
            merged["task"] = {**base.get("task", {}), **task}
            merged["seeds"] = list(seeds)
            configs.append(ExperimentConfig.from_dict(merged, settings))
    return configs


def load_suite(path: Optional[str], settings: Optional[Settings] = None) -> List[ExperimentConfig]:
    data = {}
    if path:
        try:
            with open(path, "r") as f:
                text = f.read().strip()
            data = json.loads(text) if text else {}
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read suite {path}: {e}")
    return expand_suite(data, settings)


def _canonical(value):
    """JSON-ready copy with every number as a float repr, so 1 and 1.0 hash alike."""
    if isinstance(value, bool) or value is None or isinstance(value, str):
        return value
    if isinstance(value, (int, float)):
        return repr(float(value))
    if isinstance(value, dict):
        return {k: _canonical(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_canonical(v) for v in value]
    return value


def config_hash(config: ExperimentConfig, seed: int) -> str:
    """Stable run id: content hash of the config (seed list and output dir excluded) plus the seed."""
    body = config.to_dict()
    body.pop("seeds")
    body.pop("output_dir")
    body["seed"] = int(seed)
    text = json.dumps(_canonical(body), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]
