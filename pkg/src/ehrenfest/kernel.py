"""Rate kernels on the unit square, their node discretizations, and the
shared quadrature rule.

Every module in the package evaluates functions only at the grid nodes
``j/m`` for ``j = 1..m`` and integrates with the right-endpoint Riemann sum
of weight ``1/m``.  This keeps the continuum operators and their ``N``-box
counterparts on exactly the same footing.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DomainError, ShapeError

__all__ = [
    "RateKernel",
    "DiscreteKernel",
    "GridSpec",
    "eval_kernel",
    "discretize",
    "quadrature",
    "builtin_function",
    "nodes",
    "node_values",
]

_NODE_TOL = 1e-9


def nodes(n: int) -> np.ndarray:
    """Return the ``n`` right-endpoint nodes ``(1/n, 2/n, ..., 1)``."""
    return np.arange(1, n + 1, dtype=float) / n


def node_values(f, n: int) -> np.ndarray:
    """Values of ``f`` at the ``n`` nodes: callables are evaluated, arrays length-checked."""
    if callable(f):
        x = nodes(n)
        return np.broadcast_to(np.asarray(f(x), dtype=float), x.shape).copy()
    a = np.asarray(f, dtype=float)
    if a.shape != (n,):
        raise ShapeError(f"expected {n} node values, got shape {a.shape}")
    return a


def _check_unit(x, name):
    a = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(a)) or np.any(a < 0.0) or np.any(a > 1.0):
        raise DomainError(f"{name} must lie in [0, 1]")
    return a


@dataclass(frozen=True)
class RateKernel:
    """Positive transition-rate function ``lambda(x, y)`` on ``[0,1]^2``.

    Build instances through :meth:`constant`, :meth:`product`,
    :meth:`general` or :meth:`table`.  Callables must accept numpy arrays
    and broadcast.
    """

    kind: str
    func: Optional[Callable] = None
    lambda1: Optional[Callable] = None
    lambda2: Optional[Callable] = None
    samples: Optional[np.ndarray] = field(default=None, repr=False)
    value: Optional[float] = None

    @classmethod
    def constant(cls, value: float = 1.0) -> "RateKernel":
        if not value > 0:
            raise DomainError("constant rate must be positive")
        return cls(kind="constant", value=float(value))

    @classmethod
    def product(cls, lambda1: Callable, lambda2: Callable) -> "RateKernel":
        return cls(kind="product", lambda1=lambda1, lambda2=lambda2)

    @classmethod
    def general(cls, func: Callable) -> "RateKernel":
        return cls(kind="general", func=func)

    @classmethod
    def table(cls, samples) -> "RateKernel":
        """Kernel known only at the nodes ``(i/n, j/n)`` of an ``n x n`` table."""
        a = np.array(samples, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ShapeError("rate table must be a square matrix")
        if np.any(~(a > 0)):
            raise DomainError("rate table entries must be strictly positive")
        a.setflags(write=False)
        return cls(kind="table", samples=a)

    @property
    def is_product(self) -> bool:
        """True when the kernel factorizes as ``lambda1(x) * lambda2(y)``."""
        return self.kind in ("product", "constant")

    def marginals(self, xs) -> tuple[np.ndarray, np.ndarray]:
        """Evaluate ``(lambda1, lambda2)`` at ``xs``; product kernels only."""
        xs = np.asarray(xs, dtype=float)
        if self.kind == "constant":
            return np.full(xs.shape, self.value), np.ones(xs.shape)
        if self.kind != "product":
            raise DomainError("kernel is not of product form")
        l1 = np.broadcast_to(np.asarray(self.lambda1(xs), dtype=float), xs.shape)
        l2 = np.broadcast_to(np.asarray(self.lambda2(xs), dtype=float), xs.shape)
        return l1.copy(), l2.copy()

    def _table_index(self, a):
        n = self.samples.shape[0]
        scaled = a * n
        idx = np.rint(scaled).astype(int)
        if np.any(np.abs(scaled - idx) > _NODE_TOL) or np.any(idx < 1):
            raise DomainError(f"table kernel is only defined at the nodes j/{n}")
        return idx - 1

    def matrix(self, xs, ys) -> np.ndarray:
        """Return the matrix ``lambda(xs[i], ys[j])``."""
        xs = _check_unit(xs, "x").reshape(-1)
        ys = _check_unit(ys, "y").reshape(-1)
        shape = (xs.size, ys.size)
        if self.kind == "constant":
            return np.full(shape, self.value)
        if self.kind == "product":
            l1, _ = self.marginals(xs)
            _, l2 = self.marginals(ys)
            return np.outer(l1, l2)
        if self.kind == "general":
            out = self.func(xs[:, None], ys[None, :])
            return np.broadcast_to(np.asarray(out, dtype=float), shape).copy()
        return self.samples[np.ix_(self._table_index(xs), self._table_index(ys))]

    def __call__(self, x, y) -> float:
        return eval_kernel(self, x, y)


def eval_kernel(k: RateKernel, x: float, y: float) -> float:
    """Evaluate ``lambda(x, y)`` at a single point of the unit square."""
    _check_unit(x, "x")
    _check_unit(y, "y")
    return float(k.matrix([x], [y])[0, 0])


@dataclass(frozen=True)
class DiscreteKernel:
    """Kernel sampled on the ``n`` box nodes.

    ``rates[i, j] = lambda((i+1)/n, (j+1)/n)`` (0-based storage) and
    ``row_intensity`` holds the row sums.  ``jump_cdf`` is a flattened
    per-row cumulative table, offset by row index, used by the simulator to
    draw destinations with a single ``searchsorted``.
    """

    n: int
    rates: np.ndarray = field(repr=False)
    row_intensity: np.ndarray = field(repr=False)
    jump_cdf: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        cdf = np.cumsum(self.rates / self.row_intensity[:, None], axis=1)
        cdf[:, -1] = 1.0
        cdf += np.arange(self.n, dtype=float)[:, None]
        flat = cdf.ravel()
        for a in (self.rates, self.row_intensity, flat):
            a.setflags(write=False)
        object.__setattr__(self, "jump_cdf", flat)

    @property
    def exit_rate(self) -> np.ndarray:
        """Per-ball clock rate ``row_intensity / n`` for each box."""
        return self.row_intensity / self.n


def discretize(k: RateKernel, n: int) -> DiscreteKernel:
    if n < 1:
        raise DomainError("box count must be at least 1")
    x = nodes(n)
    rates = k.matrix(x, x)
    if np.any(~(rates > 0)):
        raise DomainError("kernel must be strictly positive at every node pair")
    return DiscreteKernel(n=n, rates=rates, row_intensity=rates.sum(axis=1))


@dataclass(frozen=True)
class GridSpec:
    """Uniform spatial grid with nodes ``j/m`` and quadrature weight ``1/m``."""

    m: int

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 2:
            raise DomainError("grid needs at least 2 nodes")

    @property
    def weight(self) -> float:
        return 1.0 / self.m

    @property
    def nodes(self) -> np.ndarray:
        return nodes(self.m)

    def sample(self, f) -> np.ndarray:
        """Node values of ``f``; arrays are length-checked, callables evaluated."""
        return node_values(f, self.m)


def quadrature(f, g: GridSpec) -> float:
    """Right-endpoint Riemann sum ``(1/m) * sum_j f(j/m)``."""
    a = np.asarray(f, dtype=float)
    if a.shape[-1:] != (g.m,):
        raise ShapeError(f"expected {g.m} node values, got shape {a.shape}")
    return a.sum(axis=-1) / g.m


# Built-in one-dimensional profiles, addressed by expression ids such as
# "constant(2)", "affine(1, 0.5)" or "sinusoid(0, 0.3)".
_BUILTINS = {
    "constant": (1, lambda c: (lambda x: np.full(np.shape(x), c, dtype=float))),
    "affine": (2, lambda a, b: (lambda x: a + b * np.asarray(x, dtype=float))),
    "sinusoid": (2, lambda a, b: (lambda x: a + b * np.sin(2 * math.pi * np.asarray(x, dtype=float)))),
}
_EXPR = re.compile(r"^\s*([a-z]+)\s*\(([^()]*)\)\s*$")


def builtin_function(expr: str) -> Callable:
    """Resolve an expression id to a vectorized callable on ``[0, 1]``.

    Supported ids: ``constant(c)``, ``affine(a, b)`` for ``a + b*x`` and
    ``sinusoid(a, b)`` for ``a + b*sin(2*pi*x)``.
    """
    m = _EXPR.match(str(expr))
    if not m or m.group(1) not in _BUILTINS:
        raise DomainError(f"unknown expression id {expr!r}; use one of {sorted(_BUILTINS)}")
    arity, factory = _BUILTINS[m.group(1)]
    try:
        args = [float(a) for a in m.group(2).split(",") if a.strip()]
    except ValueError:
        raise DomainError(f"non-numeric argument in {expr!r}") from None
    if len(args) != arity:
        raise DomainError(f"{m.group(1)} takes {arity} argument(s), got {len(args)}")
    return factory(*args)
