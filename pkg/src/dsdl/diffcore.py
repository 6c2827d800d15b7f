"""Layers with hand-written backward passes, SGD, and a gradient checker.

Batches are column-major in the mathematical sense: a batch of ``B``
vectors of size ``n`` is an ``n x B`` matrix, so a dense layer computes
``W @ X + b``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from .numerics import ShapeError, as_matrix


class OrderError(RuntimeError):
    """backward() called without a matching forward()."""


class NonDeterministicClosure(RuntimeError):
    pass


@dataclass
class Param:
    value: np.ndarray
    grad: np.ndarray = field(init=False)
    momentum_buf: np.ndarray = field(init=False)

    def __post_init__(self):
        self.value = np.array(self.value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.momentum_buf = np.zeros_like(self.value)


class ParamStore:
    """Ordered name -> Param map shared by every layer of a model."""

    def __init__(self):
        self._entries: dict[str, Param] = {}

    def add(self, name: str, value) -> Param:
        if name in self._entries:
            raise KeyError(f"duplicate parameter {name!r}")
        p = Param(as_matrix(value, name))
        self._entries[name] = p
        return p

    def __getitem__(self, name: str) -> Param:
        return self._entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def items(self):
        return self._entries.items()

    def zero_grads(self) -> None:
        for p in self._entries.values():
            p.grad[...] = 0.0

    def values(self) -> dict[str, np.ndarray]:
        return {k: p.value.copy() for k, p in self._entries.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for k, v in values.items():
            p = self._entries[k]
            v = np.asarray(v, dtype=np.float64)
            if v.shape != p.value.shape:
                raise ShapeError(f"{k}: expected {p.value.shape}, got {v.shape}")
            p.value[...] = v


class Layer:
    """forward() caches what backward() needs; backward() consumes it once."""

    def __init__(self):
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, upstream: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _take_cache(self):
        if self._cache is None:
            raise OrderError(f"{type(self).__name__}.backward() without a pending forward()")
        cache, self._cache = self._cache, None
        return cache


def uniform_init(rng: np.random.Generator, out_dim: int, in_dim: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(in_dim)
    return rng.uniform(-bound, bound, size=(out_dim, in_dim))


class FullyConnected(Layer):
    def __init__(self, params: ParamStore, name: str, in_dim: int, out_dim: int,
                 with_bias: bool = True, rng: np.random.Generator | None = None):
        super().__init__()
        if in_dim <= 0 or out_dim <= 0:
            raise ValueError("layer dimensions must be positive")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_dim, self.out_dim = in_dim, out_dim
        self.W = params.add(f"{name}.W", uniform_init(rng, out_dim, in_dim))
        self.b = params.add(f"{name}.b", np.zeros((out_dim, 1))) if with_bias else None

    def forward(self, x):
        x = as_matrix(x, "input")
        if x.shape[0] != self.in_dim:
            raise ShapeError(f"FullyConnected expects {self.in_dim} rows, got {x.shape[0]}")
        self._cache = x
        out = self.W.value @ x
        if self.b is not None:
            out = out + self.b.value
        return out

    def backward(self, upstream):
        x = self._take_cache()
        upstream = as_matrix(upstream, "upstream")
        if upstream.shape != (self.out_dim, x.shape[1]):
            raise ShapeError(f"FullyConnected upstream shape {upstream.shape}")
        self.W.grad += upstream @ x.T
        if self.b is not None:
            self.b.grad += upstream.sum(axis=1, keepdims=True)
        return self.W.value.T @ upstream


class TiedTransposed(Layer):
    """Applies ``W.T`` of another dense layer, sharing its storage and gradient."""

    def __init__(self, source: FullyConnected):
        super().__init__()
        self.W = source.W
        self.in_dim, self.out_dim = source.out_dim, source.in_dim

    def forward(self, x):
        x = as_matrix(x, "input")
        if x.shape[0] != self.in_dim:
            raise ShapeError(f"TiedTransposed expects {self.in_dim} rows, got {x.shape[0]}")
        self._cache = x
        return self.W.value.T @ x

    def backward(self, upstream):
        x = self._take_cache()
        # d/dW of (W.T x) is x @ upstream.T, the transpose of the untied case
        self.W.grad += x @ upstream.T
        return self.W.value @ upstream


class LeakyReLU(Layer):
    def __init__(self, slope: float = 0.2):
        super().__init__()
        if slope < 0:
            raise ValueError("slope must be >= 0")
        self.slope = float(slope)

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        self._cache = x >= 0
        return np.where(self._cache, x, self.slope * x)

    def backward(self, upstream):
        mask = self._take_cache()
        return np.where(mask, upstream, self.slope * upstream)


class Sequential(Layer):
    def __init__(self, *layers: Layer):
        super().__init__()
        self.layers = list(layers)

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, upstream):
        for layer in reversed(self.layers):
            upstream = layer.backward(upstream)
        return upstream


def sigmoid_forward(x) -> np.ndarray:
    # exp of a non-positive argument only, so |x| in the hundreds is safe
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid_backward(y: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Gradient through the sigmoid given its output ``y``."""
    return upstream * y * (1.0 - y)


def sgd_step(params: ParamStore, lr: float, momentum: float = 0.9,
             weight_decay: float = 1e-4) -> None:
    """SGD with momentum and coupled (L2) weight decay, in place."""
    for p in params._entries.values():
        g = p.grad + weight_decay * p.value if weight_decay else p.grad
        p.momentum_buf *= momentum
        p.momentum_buf += g
        if lr:
            p.value -= lr * p.momentum_buf


def lr_schedule(epoch: int, lr0: float = 0.01, step: int = 40, gamma: float = 0.1) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return lr0 * gamma ** (epoch // step)


@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float]
    rtol: float

    @property
    def failing(self) -> list[str]:
        return [k for k, v in self.max_rel_error.items() if not v <= self.rtol]

    @property
    def passed(self) -> bool:
        return not self.failing

    def lines(self) -> list[str]:
        return [f"{'PASS' if v <= self.rtol else 'FAIL'} {k:<24s} max rel err {v:.3e}"
                for k, v in self.max_rel_error.items()]


def grad_check(closure: Callable[[], float], params: ParamStore, rtol: float = 1e-4,
               step: float = 1e-5, abs_floor: float = 1e-6) -> GradCheckReport:
    """Compare analytic gradients with central differences, entry by entry.

    ``closure`` evaluates the loss at the current parameter values and
    accumulates analytic gradients into ``params``. The relative error of
    an entry is ``|a - n| / max(|a|, |n|, abs_floor)`` so entries that are
    zero up to rounding do not dominate the report.
    """
    params.zero_grads()
    loss0 = closure()
    analytic = {k: p.grad.copy() for k, p in params.items()}
    params.zero_grads()
    if closure() != loss0:
        raise NonDeterministicClosure("closure returned different losses for identical parameters")

    report = {}
    for name, p in params.items():
        worst = 0.0
        flat = p.value.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = closure()
            flat[i] = orig - step
            down = closure()
            flat[i] = orig
            numeric = (up - down) / (2.0 * step)
            a = analytic[name].reshape(-1)[i]
            denom = max(abs(a), abs(numeric), abs_floor)
            worst = max(worst, abs(a - numeric) / denom)
        report[name] = worst
    params.zero_grads()
    return GradCheckReport(report, rtol)
