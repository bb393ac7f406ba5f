"""
Autodiff Core
Minimal reverse-mode differentiation over float64 NumPy arrays, a named
parameter store, the Adam optimizer and seeded random streams.
"""

import contextlib
import logging
import zlib
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

logger = logging.getLogger(__name__)

ArrayLike = Union[float, int, np.ndarray, "Tensor"]

_grad_enabled = True


class GradientError(ValueError):
    """Raised when a gradient cannot be computed or is not usable."""


@contextlib.contextmanager
def no_grad():
    """Build values without recording the tape."""
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A float64 array that records how it was computed."""

    __array_priority__ = 100

    def __init__(self, data: ArrayLike, requires_grad: bool = False, name: Optional[str] = None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None

    # -- basic properties ---------------------------------------------------

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def item(self) -> float:
        return float(self)

    def __float__(self) -> float:
        if self.size != 1:
            raise TypeError(f"only size-1 tensors convert to float, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self):
        return len(self.data)

    # -- graph construction -------------------------------------------------

    @staticmethod
    def _node(data: np.ndarray, parents: Sequence["Tensor"], backward) -> "Tensor":
        out = Tensor(data)
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other: ArrayLike) -> "Tensor":
        other = as_tensor(other)
        return Tensor._node(self.data + other.data, (self, other), lambda g: (g, g))

    __radd__ = __add__

    def __sub__(self, other: ArrayLike) -> "Tensor":
        other = as_tensor(other)
        return Tensor._node(self.data - other.data, (self, other), lambda g: (g, -g))

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return as_tensor(other) - self

    def __mul__(self, other: ArrayLike) -> "Tensor":
        other = as_tensor(other)
        a, b = self.data, other.data
        return Tensor._node(a * b, (self, other), lambda g: (g * b, g * a))

    __rmul__ = __mul__

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        other = as_tensor(other)
        a, b = self.data, other.data
        return Tensor._node(a / b, (self, other), lambda g: (g / b, -g * a / (b * b)))

    def __rtruediv__(self, other: ArrayLike) -> "Tensor":
        return as_tensor(other) / self

    def __neg__(self) -> "Tensor":
        return Tensor._node(-self.data, (self,), lambda g: (-g,))

    def __matmul__(self, other: ArrayLike) -> "Tensor":
        other = as_tensor(other)
        a, b = self.data, other.data

        def backward(g):
            ga = g @ np.swapaxes(b, -1, -2) if b.ndim > 1 else np.multiply.outer(g, b)
            gb = np.swapaxes(a, -1, -2) @ g if a.ndim > 1 else np.multiply.outer(a, g)
            return ga, gb

        return Tensor._node(a @ b, (self, other), backward)

    # -- elementwise functions ----------------------------------------------

    def square(self) -> "Tensor":
        a = self.data
        return Tensor._node(a * a, (self,), lambda g: (2.0 * a * g,))

    def exp(self) -> "Tensor":
        out = np.exp(self.data)
        return Tensor._node(out, (self,), lambda g: (g * out,))

    def log(self) -> "Tensor":
        a = self.data
        return Tensor._node(np.log(a), (self,), lambda g: (g / a,))

    def tanh(self) -> "Tensor":
        out = np.tanh(self.data)
        return Tensor._node(out, (self,), lambda g: (g * (1.0 - out * out),))

    def relu(self) -> "Tensor":
        a = self.data
        return Tensor._node(np.maximum(a, 0.0), (self,), lambda g: (g * (a > 0.0),))

    def sigmoid(self) -> "Tensor":
        out = expit(self.data)
        return Tensor._node(out, (self,), lambda g: (g * out * (1.0 - out),))

    def softplus(self) -> "Tensor":
        a = self.data
        return Tensor._node(np.logaddexp(0.0, a), (self,), lambda g: (g * expit(a),))

    def clip(self, low: float, high: float) -> "Tensor":
        a = self.data
        inside = (a >= low) & (a <= high)
        return Tensor._node(np.clip(a, low, high), (self,), lambda g: (g * inside,))

    # -- reductions and shape -----------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        shape = self.shape

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor._node(self.data.sum(axis=axis, keepdims=keepdims), (self,), backward)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            n = self.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            n = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        original = self.shape
        return Tensor._node(self.data.reshape(shape), (self,), lambda g: (g.reshape(original),))

    def swapaxes(self, a: int, b: int) -> "Tensor":
        return Tensor._node(np.swapaxes(self.data, a, b), (self,), lambda g: (np.swapaxes(g, a, b),))

    @property
    def T(self) -> "Tensor":
        return self.swapaxes(-1, -2)

    def __getitem__(self, index) -> "Tensor":
        if isinstance(index, Tensor):
            index = index.data.astype(int)
        shape = self.shape
        parts = index if isinstance(index, tuple) else (index,)
        fancy = any(isinstance(p, (list, np.ndarray)) for p in parts)

        def backward(g):
            full = np.zeros(shape)
            if fancy:
                np.add.at(full, index, g)
            else:
                full[index] = g
            return (full,)

        return Tensor._node(self.data[index], (self,), backward)

    def repeat_rows(self, times: int) -> "Tensor":
        """Stack `times` copies along a new flattened leading axis (row k*n + i)."""
        n = self.shape[0]
        rest = self.shape[1:]
        data = np.tile(self.data, (times,) + (1,) * len(rest))
        return Tensor._node(data, (self,), lambda g: (g.reshape((times, n) + rest).sum(axis=0),))

    # -- reverse pass -------------------------------------------------------

    def backward(self, retain_graph: bool = False) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's `.grad`."""
        if self.size != 1:
            raise GradientError(f"backward needs a scalar output, got shape {self.shape}")
        if not self.requires_grad:
            raise GradientError("output is detached from every trainable leaf")

        order: List[Tensor] = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))

        grads: Dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                pg = _unbroadcast(np.asarray(pg, dtype=np.float64), parent.shape)
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg
            if not retain_graph:
                node._parents = ()
                node._backward = None


def as_tensor(value: ArrayLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def logmeanexp(values: Tensor, axis: int = 0) -> Tensor:
    """log(mean(exp(values))) along `axis` with a max shift."""
    values = as_tensor(values)
    shift = np.max(values.data, axis=axis, keepdims=True)
    shift = np.where(np.isfinite(shift), shift, 0.0)
    inner = (values - shift).exp().mean(axis=axis, keepdims=True).log() + shift
    return inner.reshape(tuple(n for i, n in enumerate(inner.shape) if i != axis % values.ndim))


ACTIVATIONS: Dict[str, Callable[[Tensor], Tensor]] = {
    "tanh": Tensor.tanh,
    "relu": Tensor.relu,
    "sigmoid": Tensor.sigmoid,
}


def activation(name: str) -> Callable[[Tensor], Tensor]:
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ValueError(f"unknown activation '{name}', expected one of {sorted(ACTIVATIONS)}")


class ParamStore:
    """Named trainable tensors; names are unique."""

    def __init__(self):
        self._params: Dict[str, Tensor] = {}

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise KeyError(f"parameter '{name}' already registered")
        tensor = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> List[str]:
        return list(self._params)

    @property
    def count(self) -> int:
        return sum(t.size for t in self._params.values())

    def zero_grad(self) -> None:
        for tensor in self._params.values():
            tensor.grad = None

    def grads(self) -> Dict[str, np.ndarray]:
        return {
            name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
            for name, t in self._params.items()
        }

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._params.items()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(state)
        unexpected = set(state) - set(self._params)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, tensor in self._params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != tensor.shape:
                raise ValueError(f"shape mismatch for '{name}': {value.shape} vs {tensor.shape}")
            tensor.data = value.copy()

    @classmethod
    def merged(cls, stores: Dict[str, "ParamStore"]) -> "ParamStore":
        """A view whose tensors are shared with `stores`, names prefixed."""
        view = cls()
        for prefix, store in stores.items():
            for name, tensor in store.items():
                key = f"{prefix}.{name}"
                if key in view._params:
                    raise KeyError(f"parameter '{key}' already registered")
                view._params[key] = tensor
        return view


def forward_backward(output: Tensor, params: ParamStore) -> Dict[str, np.ndarray]:
    """Run the reverse pass from a scalar output; one gradient per parameter."""
    params.zero_grad()
    value = output.data.copy()
    output.backward()
    grads = params.grads()
    assert np.array_equal(value, output.data)
    return grads


@dataclass
class GradCheckReport:
    """Per-parameter max relative deviation between analytic and numeric gradients."""
    rtol: float
    deviations: Dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(dev <= self.rtol for dev in self.deviations.values())

    @property
    def failures(self) -> List[str]:
        return [name for name, dev in self.deviations.items() if dev > self.rtol]


def grad_check(loss_fn: Callable[[], Tensor], params: ParamStore, eps: float = 1e-5,
               rtol: float = 1e-4, floor: float = 1e-6,
               analytic: Optional[Dict[str, np.ndarray]] = None) -> GradCheckReport:
    """Compare analytic gradients of `loss_fn` against central differences.

    `loss_fn` must be deterministic: any noise it uses has to be drawn once,
    outside, and reused on every call. Pass `analytic` to check a supplied
    gradient map instead of the one the tape computes.
    """
    loss = loss_fn()
    if not np.all(np.isfinite(loss.data)):
        raise GradientError("loss is not finite")
    if analytic is None:
        analytic = forward_backward(loss, params) if loss.requires_grad else {
            name: np.zeros_like(t.data) for name, t in params.items()
        }

    report = GradCheckReport(rtol=rtol)
    with no_grad():
        for name, tensor in params.items():
            numeric = np.zeros_like(tensor.data)
            flat = tensor.data.reshape(-1)
            for i in range(flat.size):
                original = flat[i]
                flat[i] = original + eps
                up = float(loss_fn())
                flat[i] = original - eps
                down = float(loss_fn())
                flat[i] = original
                if not (np.isfinite(up) and np.isfinite(down)):
                    raise GradientError(f"loss is not finite while perturbing '{name}'")
                numeric.reshape(-1)[i] = (up - down) / (2.0 * eps)
            a = analytic[name]
            scale = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), floor)
            report.deviations[name] = float(np.max(np.abs(a - numeric) / scale)) if a.size else 0.0
    return report


class Adam:
    """Adam with bias correction; moment buffers persist across steps."""

    def __init__(self, params: ParamStore, lr: float = 1e-3, betas: Tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(t.data) for name, t in params.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in params.items()}

    def step(self, grads: Dict[str, np.ndarray], lr: Optional[float] = None, t: Optional[int] = None) -> None:
        """Validate every gradient, then update; a rejected step leaves params and moments untouched."""
        lr = self.lr if lr is None else lr
        t = self.t + 1 if t is None else t
        if t < 1:
            raise ValueError(f"Adam step index must be >= 1, got {t}")
        for name, tensor in self.params.items():
            g = grads[name]
            if g.shape != tensor.shape:
                raise GradientError(f"gradient for '{name}' has shape {g.shape}, expected {tensor.shape}")
            if not np.all(np.isfinite(g)):
                raise GradientError(f"non-finite gradient for parameter '{name}'")

        self.t = t
        for name, tensor in self.params.items():
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            m_hat = self.m[name] / (1.0 - self.beta1 ** self.t)
            v_hat = self.v[name] / (1.0 - self.beta2 ** self.t)
            tensor.data = tensor.data - lr * m_hat / (np.sqrt(v_hat) + self.eps)


def adam_step(params: ParamStore, grads: Dict[str, np.ndarray], lr: float, t: int,
              optimizer: Optional[Adam] = None) -> Adam:
    """One Adam update; pass the returned optimizer back in to keep its moments."""
    optimizer = optimizer or Adam(params, lr=lr)
    optimizer.step(grads, lr=lr, t=t)
    return optimizer


def _stream_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


class Rng:
    """Seeded stream; named children are independent of each other and of the parent."""

    def __init__(self, seed: int, path: Tuple[str, ...] = ()):
        self.seed = int(seed)
        self.path = tuple(path)
        sequence = np.random.SeedSequence(entropy=self.seed, spawn_key=tuple(_stream_key(p) for p in self.path))
        self._gen = np.random.Generator(np.random.PCG64(sequence))

    @classmethod
    def for_run(cls, seed: int, model: str, task: str, purpose: str) -> "Rng":
        return cls(seed, (model, task, purpose))

    def child(self, name: str) -> "Rng":
        return Rng(self.seed, self.path + (name,))

    def normal(self, size=None) -> np.ndarray:
        return self._gen.standard_normal(size)

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None) -> np.ndarray:
        return self._gen.uniform(low, high, size)

    def bernoulli(self, p: float, size=None) -> np.ndarray:
        return (self._gen.random(size) < p).astype(np.float64)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def __repr__(self):
        return f"Rng(seed={self.seed}, path={'/'.join(self.path) or '-'})"
