"""
Synthetic 1D Regression Tasks
Noiseless targets on an interpolation region [-l, l] with test grids on the
region itself and on the extrapolation band l < |x| < L.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
import pandas as pd

from autodiff import Rng

logger = logging.getLogger(__name__)

TASK_KINDS = ("step", "sine", "quadratic")
SPLITS = ("train", "test_id", "test_ood")

DEFAULT_TASK_PARAMS: Dict[str, Dict[str, float]] = {
    "step": {"at_zero": 0.5},
    "sine": {"amplitude": 1.54, "frequency": 2.39},
    "quadratic": {"a": 0.43, "c": -0.41},
}


@dataclass
class TaskSpec:
    kind: str = "sine"
    params: Dict[str, float] = field(default_factory=dict)
    l: float = 2.0
    L: float = 4.0
    n_train: int = 256
    n_test_id: int = 200
    n_test_ood: int = 200

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind '{self.kind}', expected one of {TASK_KINDS}")
        if not 0 < self.l < self.L:
            raise ValueError(f"need 0 < l < L, got l={self.l}, L={self.L}")
        if min(self.n_train, self.n_test_id, self.n_test_ood) < 1:
            raise ValueError("every split needs at least one point")
        unknown = set(self.params) - set(DEFAULT_TASK_PARAMS[self.kind])
        if unknown:
            raise ValueError(f"unknown {self.kind} parameters: {sorted(unknown)}")

    @property
    def coefficients(self) -> Dict[str, float]:
        merged = dict(DEFAULT_TASK_PARAMS[self.kind])
        merged.update(self.params)
        return merged


def target_fn(kind: str, x, params: Optional[Dict[str, float]] = None):
    """Noiseless target f(x); works on scalars and arrays."""
    if kind not in TASK_KINDS:
        raise ValueError(f"unknown task kind '{kind}'")
    p = dict(DEFAULT_TASK_PARAMS[kind])
    p.update(params or {})
    x = np.asarray(x, dtype=np.float64)
    if kind == "step":
        y = np.heaviside(x, p["at_zero"])
    elif kind == "sine":
        y = p["amplitude"] * np.sin(p["frequency"] * x)
    else:
        y = p["a"] * x * x + p["c"]
    return float(y) if y.ndim == 0 else y


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray
    split: np.ndarray
    task: str = ""

    def __len__(self):
        return len(self.x)

    def subset(self, split: str) -> "Dataset":
        if split == "test":
            return self.aggregate()
        mask = self.split == split
        return Dataset(self.x[mask], self.y[mask], self.split[mask], self.task)

    def aggregate(self) -> "Dataset":
        """Pooled ID and OOD test points."""
        mask = (self.split == "test_id") | (self.split == "test_ood")
        return Dataset(self.x[mask], self.y[mask], self.split[mask], self.task)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"x": self.x, "y": self.y, "split": self.split})

    def to_csv(self, path: str) -> None:
        self.to_frame().to_csv(path, index=False, float_format="%.17g")

    @classmethod
    def from_csv(cls, path: str, task: str = "") -> "Dataset":
        frame = pd.read_csv(path, dtype={"x": np.float64, "y": np.float64, "split": str},
                            float_precision="round_trip")
        return cls(frame["x"].to_numpy(), frame["y"].to_numpy(), frame["split"].to_numpy(dtype=object), task)


def _lobe_grid(l: float, L: float, n: int) -> np.ndarray:
    """n evenly spaced points strictly inside (l, L)."""
    return np.linspace(l, L, n + 2)[1:-1]


def make_dataset(spec: TaskSpec, rng: Rng) -> Dataset:
    x_train = rng.uniform(-spec.l, spec.l, spec.n_train)
    x_id = np.linspace(-spec.l, spec.l, spec.n_test_id)
    n_left = spec.n_test_ood // 2
    x_ood = np.concatenate([
        -_lobe_grid(spec.l, spec.L, n_left)[::-1],
        _lobe_grid(spec.l, spec.L, spec.n_test_ood - n_left),
    ])
    x = np.concatenate([x_train, x_id, x_ood])
    split = np.array(["train"] * spec.n_train + ["test_id"] * spec.n_test_id
                     + ["test_ood"] * spec.n_test_ood, dtype=object)
    y = target_fn(spec.kind, x, spec.coefficients)
    logger.debug(f"Built {spec.kind} dataset: {spec.n_train} train, {spec.n_test_id} ID, {spec.n_test_ood} OOD")
    return Dataset(x, y, split, spec.kind)
