"""
Model Zoo
Every model is a distribution over base-network weights q(theta | x); the
predictive is the K-component mixture (1/K) sum_k N(y; mu_k, sigma2_k).

Base network: scalar input, one hidden layer of width d_hid, scalar mean
head (plus a variance head in heteroscedastic mode).
"""

import json
import logging
from dataclasses import asdict, dataclass, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from autodiff import ParamStore, Rng, Tensor, activation, no_grad
from prob_losses import SIGMA_FLOOR, DiagGaussian, PriorSpec, kl_diag_gaussian

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1
RHO_Y_CLIP = 10.0

MODEL_KINDS = ("mlp_dropout", "deep_ensemble", "bayes", "gauss_hyper", "ic_fdn", "lp_fdn", "det_hyper")
VARIATIONAL_KINDS = ("bayes", "gauss_hyper", "ic_fdn", "lp_fdn")
BENCHMARK_KINDS = ("mlp_dropout", "deep_ensemble", "bayes", "gauss_hyper", "ic_fdn", "lp_fdn")

# Benchmark grid; gauss_hyper runs at width 26 (not 24) to land inside the budget.
MODEL_PRESETS: Dict[str, Dict] = {
    "mlp_dropout": {"d_hid": 333},
    "deep_ensemble": {"d_hid": 64, "M": 10, "enforce_budget": False},
    "bayes": {"d_hid": 166},
    "gauss_hyper": {"d_hid": 26, "d_hyper": 5, "d_h": 9},
    "ic_fdn": {"d_hid": 23, "d_hyper": 6},
    "lp_fdn": {"d_hid": 24, "d_hyper": 5},
    "det_hyper": {"d_hid": 23, "d_hyper": 6},
}


class ModelError(RuntimeError):
    """Raised when a model cannot produce a prediction."""


class CheckpointError(ValueError):
    """Raised when a checkpoint file cannot be decoded."""


class BudgetError(ValueError):
    """Raised when a model's parameter count misses its budget."""

    def __init__(self, kind: str, count: int, target: int, tolerance: float):
        self.kind = kind
        self.count = count
        self.target = target
        self.tolerance = tolerance
        super().__init__(
            f"{kind} has {count} trainable parameters, outside {target} ± {tolerance:.0%}"
        )


@dataclass
class ModelSpec:
    kind: str
    d_hid: int
    d_hyper: int = 0
    d_h: int = 0
    M: int = 1
    dropout_p: float = 0.1
    target_params: int = 1000
    tolerance: float = 0.05
    activation: str = "tanh"
    hyper_activation: str = "relu"
    likelihood: str = "homoscedastic"
    prior_sigma0: float = 1.0
    rho_init: float = -3.0
    rho_head_scale: float = 1.0
    enforce_budget: bool = True

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind '{self.kind}', expected one of {MODEL_KINDS}")
        if self.likelihood not in ("homoscedastic", "heteroscedastic"):
            raise ValueError(f"unknown likelihood '{self.likelihood}'")
        if self.d_hid < 1:
            raise ValueError(f"d_hid must be positive, got {self.d_hid}")
        if self.kind in ("gauss_hyper", "ic_fdn", "lp_fdn", "det_hyper") and self.d_hyper < 1:
            raise ValueError(f"{self.kind} needs d_hyper >= 1")
        if self.kind == "gauss_hyper" and self.d_h < 1:
            raise ValueError("gauss_hyper needs d_h >= 1")
        if self.M < 1:
            raise ValueError(f"ensemble size M must be >= 1, got {self.M}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must lie in [0, 1), got {self.dropout_p}")
        activation(self.activation)
        activation(self.hyper_activation)
        if self.rho_head_scale < 0:
            raise ValueError(f"rho_head_scale must be non-negative, got {self.rho_head_scale}")

    @classmethod
    def preset(cls, kind: str, **overrides) -> "ModelSpec":
        if kind not in MODEL_PRESETS:
            raise ValueError(f"unknown model kind '{kind}', expected one of {MODEL_KINDS}")
        values = dict(MODEL_PRESETS[kind])
        values.update(overrides)
        return cls(kind=kind, **values)

    @property
    def d_out(self) -> int:
        return 2 if self.likelihood == "heteroscedastic" else 1

    @property
    def layer_shapes(self) -> List[Tuple[int, int]]:
        return [(1, self.d_hid), (self.d_hid, self.d_out)]


@dataclass
class BudgetVerdict:
    count: int
    target: int
    tolerance: float

    @property
    def deviation(self) -> float:
        return abs(self.count - self.target) / self.target

    @property
    def within(self) -> bool:
        return self.deviation <= self.tolerance


@dataclass
class LayerPosterior:
    """Diagonal Gaussian over one layer's (W, b); a leading row axis when batched."""
    mu_W: Tensor
    sigma_W: Tensor
    mu_b: Tensor
    sigma_b: Tensor

    def __post_init__(self):
        if self.mu_W.shape != self.sigma_W.shape or self.mu_b.shape != self.sigma_b.shape:
            raise ModelError("posterior mean and scale shapes differ")
        floor = min(self.sigma_W.data.min(initial=np.inf), self.sigma_b.data.min(initial=np.inf))
        if floor < SIGMA_FLOOR:
            raise ModelError(f"posterior sigma {floor:.3e} below floor {SIGMA_FLOOR}")

    @classmethod
    def from_rho(cls, mu_W: Tensor, rho_W: Tensor, mu_b: Tensor, rho_b: Tensor) -> "LayerPosterior":
        return cls(mu_W, rho_W.softplus() + SIGMA_FLOOR, mu_b, rho_b.softplus() + SIGMA_FLOOR)

    @property
    def rows(self) -> int:
        """Leading batch size, 0 for a global posterior."""
        return self.mu_W.shape[0] if self.mu_W.ndim == 3 else 0

    def repeat_rows(self, times: int) -> "LayerPosterior":
        return LayerPosterior(
            self.mu_W.repeat_rows(times), self.sigma_W.repeat_rows(times),
            self.mu_b.repeat_rows(times), self.sigma_b.repeat_rows(times),
        )

    def kl(self, prior: PriorSpec) -> Tensor:
        keep = 1 if self.rows else 0
        return (kl_diag_gaussian(DiagGaussian(self.mu_W, self.sigma_W), prior, keep)
                + kl_diag_gaussian(DiagGaussian(self.mu_b, self.sigma_b), prior, keep))

    def log_densities(self, W: Tensor, b: Tensor, prior: PriorSpec) -> Tuple[Tensor, Tensor]:
        """(log p0(W, b), log q(W, b)), one value per sampled row."""
        q_W, q_b = DiagGaussian(self.mu_W, self.sigma_W), DiagGaussian(self.mu_b, self.sigma_b)
        return (prior.log_prob(W, 1) + prior.log_prob(b, 1),
                q_W.log_prob(W, 1) + q_b.log_prob(b, 1))


@dataclass
class ConditioningSignal:
    variant: str
    value: Tensor

    def __post_init__(self):
        if self.variant not in ("IC", "LP"):
            raise ValueError(f"conditioning variant must be IC or LP, got '{self.variant}'")


@dataclass
class PredictiveMixture:
    """Uniformly weighted Gaussian mixture over K weight draws."""
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=np.float64).reshape(-1)
        self.variances = np.broadcast_to(
            np.asarray(self.variances, dtype=np.float64), self.means.shape).copy()
        if self.means.size < 1:
            raise ValueError("a mixture needs at least one component")
        if not np.all(self.variances > 0):
            raise ValueError("mixture variances must be positive")

    @property
    def K(self) -> int:
        return self.means.size

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.K, 1.0 / self.K)


@dataclass
class MixtureBatch:
    """Mixtures for B inputs: means and variances of shape (B, K), KL of shape (B,)."""
    means: np.ndarray
    variances: np.ndarray
    kl: np.ndarray

    def __len__(self):
        return self.means.shape[0]

    def __getitem__(self, i: int) -> PredictiveMixture:
        return PredictiveMixture(self.means[i], self.variances[i])

    def moments(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        mean = self.means.mean(axis=1)
        var_epi = ((self.means - mean[:, None]) ** 2).mean(axis=1)
        return mean, var_epi, var_epi + self.variances.mean(axis=1)


@dataclass
class PathSample:
    """K sampled forward paths for B inputs, still on the tape."""
    means: Tensor
    variances: Optional[Tensor]
    kl: Tensor
    log_prior: Optional[Tensor] = None
    log_q: Optional[Tensor] = None

    def to_batch(self) -> MixtureBatch:
        means = self.means.data.T.copy()
        variances = np.ones_like(means) if self.variances is None else self.variances.data.T.copy()
        kl = np.broadcast_to(self.kl.data, (means.shape[0],)).copy()
        return MixtureBatch(means, variances, kl)


def predictive_moments(mix: PredictiveMixture) -> Tuple[float, float, float]:
    """(mean, epistemic variance, total variance) by the law of total variance."""
    mean = float(mix.means.mean())
    var_epi = float(((mix.means - mean) ** 2).mean())
    return mean, var_epi, var_epi + float(mix.variances.mean())


def _base_init(rng: Rng, fan_in: int, fan_out: int) -> Tuple[np.ndarray, np.ndarray]:
    scale = 1.0 / np.sqrt(fan_in)
    return rng.normal((fan_in, fan_out)) * scale, rng.normal(fan_out) * scale


def sample_layer(post: LayerPosterior, rng: Rng,
                 noise: Optional[Tuple[np.ndarray, np.ndarray]] = None) -> Tuple[Tensor, Tensor]:
    """W = mu_W + sigma_W * z_W, b = mu_b + sigma_b * z_b."""
    z_W, z_b = noise if noise is not None else (rng.normal(post.mu_W.shape), rng.normal(post.mu_b.shape))
    return post.mu_W + post.sigma_W * z_W, post.mu_b + post.sigma_b * z_b


class Hypernet:
    """A(s): s -> d_hyper -> (mu_W, rho_W, mu_b, rho_b) for each target layer.

    The mean heads start close to constant in s; the rho heads get the full
    `rho_scale / sqrt(d_hyper)` init so sigma already moves with the signal.
    An unbounded `act` (relu) lets rho keep changing outside the training range.
    """

    MU_HEAD_SCALE = 0.1

    def __init__(self, params: ParamStore, prefix: str, d_in: int, d_hyper: int,
                 targets: List[Tuple[int, int]], rng: Rng, rho_init: float, act: str,
                 rho_scale: float = 1.0):
        self.d_in = d_in
        self.targets = targets
        self.act = activation(act)
        self.out_dim = sum(2 * i * o + 2 * o for i, o in targets)

        W1, b1 = _base_init(rng, d_in, d_hyper)
        self.W1 = params.add(f"{prefix}.fc1.W", W1)
        self.b1 = params.add(f"{prefix}.fc1.b", b1)

        # output bias starts at a plain base-network init with sigma = floor + softplus(rho_init)
        bias, column_scale = [], []
        for i, o in targets:
            mu_W, mu_b = _base_init(rng, i, o)
            bias += [mu_W.reshape(-1), np.full(i * o, rho_init), mu_b, np.full(o, rho_init)]
            column_scale += [np.full(i * o, self.MU_HEAD_SCALE), np.full(i * o, rho_scale),
                             np.full(o, self.MU_HEAD_SCALE), np.full(o, rho_scale)]
        W2 = rng.normal((d_hyper, self.out_dim)) * np.concatenate(column_scale) / np.sqrt(d_hyper)
        self.W2 = params.add(f"{prefix}.fc2.W", W2)
        self.b2 = params.add(f"{prefix}.fc2.b", np.concatenate(bias))

    def __call__(self, signal: Tensor, rho_override: Optional[float] = None) -> List[Tuple[Tensor, ...]]:
        if signal.ndim != 2 or signal.shape[1] != self.d_in:
            raise ModelError(f"hypernetwork expects signals of width {self.d_in}, got shape {signal.shape}")
        rows = signal.shape[0]
        out = self.act(signal @ self.W1 + self.b1) @ self.W2 + self.b2
        heads, start = [], 0
        for i, o in self.targets:
            sizes = (i * o, i * o, o, o)
            parts = []
            for size in sizes:
                parts.append(out[:, start:start + size])
                start += size
            mu_W, rho_W, mu_b, rho_b = parts
            if rho_override is not None:
                rho_W = Tensor(np.full(rho_W.shape, rho_override))
                rho_b = Tensor(np.full(rho_b.shape, rho_override))
            heads.append((mu_W.reshape(rows, i, o), rho_W.reshape(rows, i, o), mu_b, rho_b))
        return heads


class BaseModel:
    """Shared plumbing: parameters, head, prediction."""

    has_kl = False

    def __init__(self, spec: ModelSpec, rng: Rng):
        self.spec = spec
        self.params = ParamStore()
        self.prior = PriorSpec(spec.prior_sigma0)
        self.act = activation(spec.activation)
        self.trained = False

    @property
    def kind(self) -> str:
        return self.spec.kind

    @property
    def param_count(self) -> int:
        return self.params.count

    def sample_paths(self, x: np.ndarray, K: int, rng: Rng, log_densities: bool = False) -> PathSample:
        raise NotImplementedError

    def _head(self, out: Tensor) -> Tuple[Tensor, Optional[Tensor]]:
        means = out[..., 0]
        if self.spec.likelihood != "heteroscedastic":
            return means, None
        sigma = out[..., 1].clip(-RHO_Y_CLIP, RHO_Y_CLIP).softplus() + SIGMA_FLOOR
        return means, sigma.square()

    @staticmethod
    def _check_finite(a: Tensor, layer: int) -> None:
        if not np.all(np.isfinite(a.data)):
            raise ModelError(f"non-finite activation in layer {layer}")

    def predict(self, x: np.ndarray, K: int, rng: Rng) -> MixtureBatch:
        if K < 1:
            raise ValueError(f"K must be >= 1, got {K}")
        with no_grad():
            return self.sample_paths(np.asarray(x, dtype=np.float64).reshape(-1), K, rng).to_batch()

    def forward(self, x: float, K: int, rng: Rng) -> Tuple[PredictiveMixture, float]:
        batch = self.predict(np.array([x]), K, rng)
        return batch[0], float(batch.kl[0])


class FDNNet(BaseModel):
    """Input-conditioned weight distributions, one hypernetwork per base layer.

    IC conditions every layer on x. LP conditions layer l on the sampled
    activation a_{l-1} of the same path, so its KL is averaged over paths.
    """

    has_kl = True

    def __init__(self, spec: ModelSpec, rng: Rng):
        super().__init__(spec, rng)
        self.variant = "LP" if spec.kind == "lp_fdn" else "IC"
        self.rho_override: Optional[float] = None
        self.hypernets = []
        for layer, (d_in, d_out) in enumerate(spec.layer_shapes):
            signal_dim = 1 if self.variant == "IC" else d_in
            self.hypernets.append(Hypernet(
                self.params, f"hyper{layer}", signal_dim, spec.d_hyper, [(d_in, d_out)],
                rng.child(f"hyper{layer}"), spec.rho_init, spec.hyper_activation, spec.rho_head_scale,
            ))

    def force_rho(self, value: Optional[float]) -> None:
        """Pin every rho output to `value` (None restores the learned heads)."""
        self.rho_override = value

    def hypernet_forward(self, signal: ConditioningSignal, layer: int) -> LayerPosterior:
        if signal.variant != self.variant:
            raise ModelError(f"{self.kind} takes {self.variant} signals, got {signal.variant}")
        mu_W, rho_W, mu_b, rho_b = self.hypernets[layer](signal.value, self.rho_override)[0]
        return LayerPosterior.from_rho(mu_W, rho_W, mu_b, rho_b)

    def _draw(self, post: LayerPosterior, rng: Rng) -> Tuple[Tensor, Tensor]:
        return sample_layer(post, rng)

    def sample_paths(self, x: np.ndarray, K: int, rng: Rng, log_densities: bool = False) -> PathSample:
        B = len(x)
        x_t = Tensor(np.asarray(x, dtype=np.float64).reshape(B, 1))
        a = x_t.repeat_rows(K)
        kl = Tensor(np.zeros(B))
        log_p = log_q = Tensor(np.zeros(K * B)) if log_densities else None
        n_layers = len(self.spec.layer_shapes)

        for layer in range(n_layers):
            if self.variant == "IC":
                post = self.hypernet_forward(ConditioningSignal("IC", x_t), layer)
                kl = kl + post.kl(self.prior)
                post = post.repeat_rows(K)
            else:
                post = self.hypernet_forward(ConditioningSignal("LP", a), layer)
                kl = kl + post.kl(self.prior).reshape(K, B).mean(axis=0)
            W, b = self._draw(post, rng)
            if log_densities:
                lp, lq = post.log_densities(W, b, self.prior)
                log_p, log_q = log_p + lp, log_q + lq
            d_in, d_out = self.spec.layer_shapes[layer]
            a = (a.reshape(K * B, 1, d_in) @ W).reshape(K * B, d_out) + b
            if layer < n_layers - 1:
                a = self.act(a)
            self._check_finite(a, layer)

        means, variances = self._head(a.reshape(K, B, self.spec.d_out))
        if log_densities:
            return PathSample(means, variances, kl, log_p.reshape(K, B), log_q.reshape(K, B))
        return PathSample(means, variances, kl)


class DetHyperNet(FDNNet):
    """Degenerate q = delta(theta - G(x)): the IC layout with only the mean heads used."""

    has_kl = False

    def _draw(self, post: LayerPosterior, rng: Rng) -> Tuple[Tensor, Tensor]:
        return post.mu_W, post.mu_b

    def sample_paths(self, x: np.ndarray, K: int, rng: Rng, log_densities: bool = False) -> PathSample:
        paths = super().sample_paths(x, 1, rng)
        return PathSample(paths.means, paths.variances, Tensor(np.zeros(len(x))))


class GlobalPosteriorModel(BaseModel):
    """q(theta) independent of x: one weight draw per path shared by the whole batch."""

    has_kl = True

    def posteriors(self) -> List[LayerPosterior]:
        raise NotImplementedError

    def sample_paths(self, x: np.ndarray, K: int, rng: Rng, log_densities: bool = False) -> PathSample:
        B = len(x)
        a = Tensor(np.asarray(x, dtype=np.float64).reshape(1, B, 1))
        posts = self.posteriors()
        kl = Tensor(0.0)
        log_p = log_q = Tensor(np.zeros(K)) if log_densities else None
        for layer, post in enumerate(posts):
            kl = kl + post.kl(self.prior)
            noise = (rng.normal((K,) + post.mu_W.shape), rng.normal((K,) + post.mu_b.shape))
            W, b = sample_layer(post, rng, noise)
            if log_densities:
                lp, lq = post.log_densities(W, b, self.prior)
                log_p, log_q = log_p + lp, log_q + lq
            a = a @ W + b.reshape(K, 1, b.shape[-1])
            if layer < len(posts) - 1:
                a = self.act(a)
            self._check_finite(a, layer)
        means, variances = self._head(a)
        kl = kl * np.ones(B)
        if log_densities:
            ones = np.ones((1, B))
            return PathSample(means, variances, kl, log_p.reshape(K, 1) * ones, log_q.reshape(K, 1) * ones)
        return PathSample(means, variances, kl)


class BayesNet(GlobalPosteriorModel):
    """Bayes-by-backprop: (mu, rho) per weight held as global trainables."""

    def __init__(self, spec: ModelSpec, rng: Rng):
        super().__init__(spec, rng)
        self.layers = []
        for layer, (d_in, d_out) in enumerate(spec.layer_shapes):
            mu_W, mu_b = _base_init(rng.child(f"fc{layer}"), d_in, d_out)
            self.layers.append((
                self.params.add(f"fc{layer}.mu_W", mu_W),
                self.params.add(f"fc{layer}.rho_W", np.full((d_in, d_out), spec.rho_init)),
                self.params.add(f"fc{layer}.mu_b", mu_b),
                self.params.add(f"fc{layer}.rho_b", np.full(d_out, spec.rho_init)),
            ))

    def posteriors(self) -> List[LayerPosterior]:
        return [LayerPosterior.from_rho(*layer) for layer in self.layers]


class GaussHyperNet(GlobalPosteriorModel):
    """A learnable latent h mapped by one hypernetwork trunk to a global posterior."""

    def __init__(self, spec: ModelSpec, rng: Rng):
        super().__init__(spec, rng)
        self.h = self.params.add("h", rng.child("latent").normal(spec.d_h))
        self.rho_override: Optional[float] = None
        self.trunk = Hypernet(self.params, "trunk", spec.d_h, spec.d_hyper, spec.layer_shapes,
                              rng.child("trunk"), spec.rho_init, spec.hyper_activation, spec.rho_head_scale)

    def force_rho(self, value: Optional[float]) -> None:
        self.rho_override = value

    def posteriors(self) -> List[LayerPosterior]:
        heads = self.trunk(self.h.reshape(1, self.spec.d_h), self.rho_override)
        d_out_shapes = self.spec.layer_shapes
        posts = []
        for (mu_W, rho_W, mu_b, rho_b), (i, o) in zip(heads, d_out_shapes):
            posts.append(LayerPosterior.from_rho(
                mu_W.reshape(i, o), rho_W.reshape(i, o), mu_b.reshape(o), rho_b.reshape(o)))
        return posts


class MLPNet(BaseModel):
    """One-hidden-layer MLP; inverted dropout on the hidden layer at train and test time."""

    def __init__(self, spec: ModelSpec, rng: Rng):
        super().__init__(spec, rng)
        self.layers = []
        for layer, (d_in, d_out) in enumerate(spec.layer_shapes):
            W, b = _base_init(rng.child(f"fc{layer}"), d_in, d_out)
            self.layers.append((self.params.add(f"fc{layer}.W", W), self.params.add(f"fc{layer}.b", b)))

    def sample_paths(self, x: np.ndarray, K: int, rng: Rng, log_densities: bool = False) -> PathSample:
        B = len(x)
        (W1, b1), (W2, b2) = self.layers
        h = self.act(Tensor(np.asarray(x, dtype=np.float64).reshape(1, B, 1)) @ W1 + b1)
        self._check_finite(h, 0)
        p = self.spec.dropout_p
        if p > 0.0:
            h = h * (rng.bernoulli(1.0 - p, (K, B, self.spec.d_hid)) / (1.0 - p))
        else:
            h = h * np.ones((K, 1, 1))
        out = h @ W2 + b2
        self._check_finite(out, 1)
        means, variances = self._head(out)
        return PathSample(means, variances, Tensor(np.zeros(B)))


class DeepEnsemble(BaseModel):
    """M independently initialised MLPs; the mixture has one component per member."""

    def __init__(self, spec: ModelSpec, rng: Rng):
        super().__init__(spec, rng)
        member_spec = replace(spec, kind="mlp_dropout", dropout_p=0.0, M=1, enforce_budget=False)
        self.members = [MLPNet(member_spec, rng.child(f"member{m}")) for m in range(spec.M)]
        self.params = ParamStore.merged({f"m{m}": member.params for m, member in enumerate(self.members)})

    @property
    def trained(self) -> bool:
        return all(member.trained for member in getattr(self, "members", []))

    @trained.setter
    def trained(self, value: bool) -> None:
        for member in getattr(self, "members", []):
            member.trained = value

    def sample_paths(self, x: np.ndarray, K: int, rng: Rng, log_densities: bool = False) -> PathSample:
        untrained = [m for m, member in enumerate(self.members) if not member.trained]
        if untrained:
            raise ModelError(f"ensemble members {untrained} have not been trained")
        with no_grad():
            paths = [member.sample_paths(x, 1, rng) for member in self.members]
        means = np.concatenate([p.means.data for p in paths], axis=0)
        variances = None
        if paths[0].variances is not None:
            variances = Tensor(np.concatenate([p.variances.data for p in paths], axis=0))
        return PathSample(Tensor(means), variances, Tensor(np.zeros(len(x))))


MODEL_CLASSES = {
    "mlp_dropout": MLPNet,
    "deep_ensemble": DeepEnsemble,
    "bayes": BayesNet,
    "gauss_hyper": GaussHyperNet,
    "ic_fdn": FDNNet,
    "lp_fdn": FDNNet,
    "det_hyper": DetHyperNet,
}


def build_model(spec: ModelSpec, rng: Rng) -> BaseModel:
    return MODEL_CLASSES[spec.kind](spec, rng)


def count_params(spec: ModelSpec, strict: bool = False) -> BudgetVerdict:
    """Exact trainable-parameter count, hypernetworks and latents included."""
    verdict = BudgetVerdict(build_model(spec, Rng(0)).param_count, spec.target_params, spec.tolerance)
    if not verdict.within:
        if strict and spec.enforce_budget:
            raise BudgetError(spec.kind, verdict.count, verdict.target, verdict.tolerance)
        logger.warning(
            f"{spec.kind}: {verdict.count} parameters is {verdict.deviation:.1%} off the "
            f"{verdict.target} budget" + ("" if spec.enforce_budget else " (budget not enforced)")
        )
    return verdict


def save_checkpoint(model: BaseModel, path: str) -> None:
    meta = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "model_spec": asdict(model.spec),
        "trained": bool(model.trained),
    }
    arrays = model.params.state_dict()
    arrays["__meta__"] = np.array(json.dumps(meta, sort_keys=True))
    with open(path, "wb") as f:
        np.savez(f, **arrays)


def load_checkpoint(path: str) -> BaseModel:
    try:
        with np.load(path, allow_pickle=False) as archive:
            meta = json.loads(str(archive["__meta__"]))
            state = {name: archive[name] for name in archive.files if name != "__meta__"}
    except (OSError, KeyError, ValueError) as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}")
    if meta.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format {meta.get('format_version')}")
    model = build_model(ModelSpec(**meta["model_spec"]), Rng(0))
    model.params.load_state_dict(state)
    model.trained = meta.get("trained", True)
    return model
