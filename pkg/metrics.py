"""
Calibration Metrics
Squared error, epistemic variance, Spearman rank agreement, the MSE-Var
least-squares fit, closed-form CRPS for Gaussian mixtures, the
risk-coverage curve and the OOD-minus-ID deltas.
"""

import math
import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.stats import norm, rankdata

from autodiff import Rng
from models import BaseModel, PredictiveMixture
from tasks import Dataset

logger = logging.getLogger(__name__)

REPORT_COLUMNS = ("rho", "b", "a", "aurc", "d_var", "d_mse", "d_crps")
POINT_COLUMNS = ("x", "split", "mse", "var", "crps")


class MetricsError(ValueError):
    """Raised when a metric is undefined for its inputs."""


@dataclass
class PointEval:
    x: float
    squared_error: float
    variance: float
    crps: float
    split: str

    def __post_init__(self):
        if self.squared_error < 0 or self.variance < 0 or self.crps < 0:
            raise MetricsError(f"negative error, variance or CRPS at x={self.x}")


@dataclass
class MetricsReport:
    mse_id: float
    mse_ood: float
    var_id: float
    var_ood: float
    crps_id: float
    crps_ood: float
    rho: float
    rho_defined: bool
    b: Optional[float]
    a: Optional[float]
    aurc: float
    d_var: float
    d_mse: float
    d_crps: float
    rho_id: Optional[float] = None
    rho_ood: Optional[float] = None
    points: List[PointEval] = field(default_factory=list, repr=False)

    def to_json(self) -> Dict:
        record = {name: getattr(self, name) for name in REPORT_COLUMNS}
        record.update({k: v for k, v in asdict(self).items() if k not in REPORT_COLUMNS and k != "points"})
        return record

    @classmethod
    def from_json(cls, record: Dict) -> "MetricsReport":
        return cls(**{k: v for k, v in record.items() if k in cls.__dataclass_fields__ and k != "points"})


def spearman_rho(a: Sequence[float], b: Sequence[float]) -> Tuple[float, bool]:
    """Pearson correlation of average ranks; (0.0, False) when either input is constant."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise MetricsError(f"spearman_rho needs two equal-length sequences of >= 2 values, got {a.shape}, {b.shape}")
    ra = rankdata(a, method="average")
    rb = rankdata(b, method="average")
    ra -= ra.mean()
    rb -= rb.mean()
    denom = math.sqrt(float(ra @ ra) * float(rb @ rb))
    if denom == 0.0:
        return 0.0, False
    return float(np.clip((ra @ rb) / denom, -1.0, 1.0)), True


def _as_arrays(evals) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(evals, tuple):
        return np.asarray(evals[0], dtype=np.float64), np.asarray(evals[1], dtype=np.float64)
    return (np.array([e.variance for e in evals], dtype=np.float64),
            np.array([e.squared_error for e in evals], dtype=np.float64))


def mse_var_fit(evals) -> Tuple[float, float]:
    """OLS of squared error on variance: MSE ~ a + b * Var. Returns (a, b).

    `evals` is a list of PointEval or a (variances, squared_errors) tuple.
    """
    var, err = _as_arrays(evals)
    if var.size < 2:
        raise MetricsError("mse_var_fit needs at least two points")
    var_c = var - var.mean()
    sxx = float(var_c @ var_c)
    if sxx == 0.0:
        raise MetricsError("predicted variance has zero spread; slope is undefined")
    b = float(var_c @ (err - err.mean())) / sxx
    a = float(err.mean() - b * var.mean())
    return a, b


def crps_gaussian(mu, sigma, y):
    """Closed-form CRPS of N(mu, sigma^2) at y."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0):
        raise MetricsError("crps_gaussian needs sigma > 0")
    z = (np.asarray(y, dtype=np.float64) - mu) / sigma
    crps = sigma * (z * (2.0 * norm.cdf(z) - 1.0) + 2.0 * norm.pdf(z) - 1.0 / math.sqrt(math.pi))
    return float(crps) if np.ndim(crps) == 0 else crps


def _a_term(m: np.ndarray, s2: np.ndarray) -> np.ndarray:
    s = np.sqrt(s2)
    u = m / s
    return m * (2.0 * norm.cdf(u) - 1.0) + 2.0 * s * norm.pdf(u)


def crps_mixture_batch(means: np.ndarray, variances: np.ndarray, y: np.ndarray) -> np.ndarray:
    """CRPS of uniform Gaussian mixtures, means/variances (B, K), targets (B,)."""
    means = np.atleast_2d(means)
    variances = np.atleast_2d(variances)
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    K = means.shape[1]
    first = _a_term(y[:, None] - means, variances).mean(axis=1)
    pair = _a_term(means[:, :, None] - means[:, None, :], variances[:, :, None] + variances[:, None, :])
    second = 0.5 * pair.sum(axis=(1, 2)) / (K * K)
    return np.maximum(first - second, 0.0)


def crps_mixture(mix: PredictiveMixture, y: float) -> float:
    return float(crps_mixture_batch(mix.means[None, :], mix.variances[None, :], np.array([y]))[0])


@dataclass
class RiskCoverage:
    coverage: np.ndarray
    risk: np.ndarray
    aurc: float


def aurc(evals) -> RiskCoverage:
    """Abstain on the highest-variance points first; AURC is the mean prefix risk.

    `evals` is a list of PointEval or a (variances, squared_errors) tuple.
    """
    var, err = _as_arrays(evals)
    n = var.size
    if n < 1:
        raise MetricsError("aurc needs at least one point")
    order = np.argsort(var, kind="stable")
    counts = np.arange(1, n + 1)
    risk = np.cumsum(err[order]) / counts
    return RiskCoverage(counts / n, risk, float(risk.mean()))


def points_frame(points: List[PointEval]) -> pd.DataFrame:
    return pd.DataFrame({
        "x": [p.x for p in points],
        "split": [p.split for p in points],
        "mse": [p.squared_error for p in points],
        "var": [p.variance for p in points],
        "crps": [p.crps for p in points],
    }, columns=list(POINT_COLUMNS))


def report_from_points(points: List[PointEval]) -> MetricsReport:
    """Aggregate per-point evaluations into the split means, pooled fits and deltas."""
    split = np.array([p.split for p in points])
    var = np.array([p.variance for p in points])
    err = np.array([p.squared_error for p in points])
    crps = np.array([p.crps for p in points])
    id_mask, ood_mask = split == "id", split == "ood"
    if not id_mask.any() or not ood_mask.any():
        raise MetricsError("evaluation needs both ID and OOD points")

    means = {}
    for name, values in (("mse", err), ("var", var), ("crps", crps)):
        means[f"{name}_id"] = float(np.mean(values[id_mask]))
        means[f"{name}_ood"] = float(np.mean(values[ood_mask]))

    rho, defined = spearman_rho(var, err) if len(points) >= 2 else (0.0, False)
    if not defined:
        logger.warning("Spearman rho undefined (constant variance or error); reported as 0")
    try:
        a, b = mse_var_fit((var, err))
    except MetricsError as e:
        logger.warning(f"MSE-Var fit skipped: {e}")
        a, b = None, None

    per_split = {}
    for name, mask in (("rho_id", id_mask), ("rho_ood", ood_mask)):
        if mask.sum() >= 2:
            value, ok = spearman_rho(var[mask], err[mask])
            per_split[name] = value if ok else None

    return MetricsReport(
        rho=rho, rho_defined=defined, b=b, a=a,
        aurc=aurc((var, err)).aurc,
        d_var=means["var_ood"] - means["var_id"],
        d_mse=means["mse_ood"] - means["mse_id"],
        d_crps=means["crps_ood"] - means["crps_id"],
        points=points, **means, **per_split,
    )


def evaluate_model(model: BaseModel, dataset: Dataset, K_test: int, rng: Rng) -> MetricsReport:
    """Score every ID and OOD test point with a K_test-component predictive mixture."""
    test = dataset.aggregate()
    for split in ("test_id", "test_ood"):
        if not np.any(test.split == split):
            raise MetricsError(f"dataset has no '{split}' points")
    batch = model.predict(test.x, K_test, rng)
    mean, var_epi, _ = batch.moments()
    sq_err = (test.y - mean) ** 2
    crps = crps_mixture_batch(batch.means, batch.variances, test.y)
    points = [
        PointEval(float(x), float(e), float(v), float(c), "id" if s == "test_id" else "ood")
        for x, e, v, c, s in zip(test.x, sq_err, var_epi, crps, test.split)
    ]
    return report_from_points(points)
