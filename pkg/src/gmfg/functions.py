"""Scalar functions on [0, 1] with exact antiderivatives.

Eigenfunctions and initial-mean profiles are built from these so that the
cell averages ``N * int_{P_q} f`` used by the finite-population strategy are
closed-form rather than quadrature estimates.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Any

import numpy as np

from .errors import ValidationError


class Function1D:
    """A real function on [0, 1] that knows its own antiderivative."""

    def __call__(self, x):
        raise NotImplementedError

    def antiderivative(self, x):
        raise NotImplementedError

    def breakpoints(self) -> np.ndarray:
        """Points where the function may be discontinuous."""
        return np.empty(0)

    def integral(self, a=0.0, b=1.0):
        return self.antiderivative(b) - self.antiderivative(a)

    def cell_means(self, n: int) -> np.ndarray:
        """``n * int_{P_q} f`` for the n-uniform partition."""
        edges = np.linspace(0.0, 1.0, n + 1)
        F = self.antiderivative(edges)
        return n * np.diff(F)

    def sup_abs(self, resolution: int = 4096) -> float:
        x = np.linspace(0.0, 1.0, resolution + 1)
        x = np.union1d(x, np.clip(self.breakpoints(), 0.0, 1.0))
        return float(np.max(np.abs(self(x))))

    def scaled(self, c: float) -> "Function1D":
        return Scaled(self, float(c))

    def to_dict(self) -> dict[str, Any]:
        raise NotImplementedError


@dataclass(frozen=True)
class Constant(Function1D):
    value: float

    def __call__(self, x):
        return np.full(np.shape(x), self.value, dtype=float) if np.ndim(x) else float(self.value)

    def antiderivative(self, x):
        return self.value * np.asarray(x, dtype=float)

    def to_dict(self):
        return {"kind": "constant", "value": self.value}


@dataclass(frozen=True)
class Linear(Function1D):
    """c0 + c1 * x."""

    c0: float
    c1: float

    def __call__(self, x):
        return self.c0 + self.c1 * np.asarray(x, dtype=float)

    def antiderivative(self, x):
        x = np.asarray(x, dtype=float)
        return self.c0 * x + 0.5 * self.c1 * x * x

    def to_dict(self):
        return {"kind": "linear", "c0": self.c0, "c1": self.c1}


@dataclass(frozen=True)
class Trig(Function1D):
    """amp * cos(omega * x) or amp * sin(omega * x)."""

    amp: float
    omega: float
    kind: str = "cos"

    def __post_init__(self):
        if self.kind not in ("cos", "sin"):
            raise ValidationError(f"trig kind must be 'cos' or 'sin', got {self.kind!r}")
        if self.omega == 0.0:
            raise ValidationError("trig frequency must be nonzero")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "cos":
            return self.amp * np.cos(self.omega * x)
        return self.amp * np.sin(self.omega * x)

    def antiderivative(self, x):
        x = np.asarray(x, dtype=float)
        s = np.sin(self.omega * x) if self.kind == "cos" else -np.cos(self.omega * x)
        # sin(k pi) and cos(k pi + pi/2) round to ~1e-16; snap so full periods integrate to exactly 0
        s = np.where(np.abs(s) < 1e-15, 0.0, s)
        return self.amp * s / self.omega

    def to_dict(self):
        return {"kind": "trig", "amp": self.amp, "omega": self.omega, "form": self.kind}


@dataclass(frozen=True)
class ShiftedPower(Function1D):
    """scale * (x + shift) ** power, with x + shift > 0 on [0, 1]."""

    scale: float
    shift: float
    power: float

    def __post_init__(self):
        if self.shift <= 0.0:
            raise ValidationError("shift must be positive so the base stays positive on [0, 1]")
        if self.power == -1.0:
            raise ValidationError("power -1 is not supported")

    def __call__(self, x):
        return self.scale * (np.asarray(x, dtype=float) + self.shift) ** self.power

    def antiderivative(self, x):
        p1 = self.power + 1.0
        return self.scale * (np.asarray(x, dtype=float) + self.shift) ** p1 / p1

    def to_dict(self):
        return {"kind": "shifted_power", "scale": self.scale, "shift": self.shift, "power": self.power}


class PiecewiseConstant(Function1D):
    """Value ``values[q]`` on cell P_q of the n-uniform partition (last cell closed)."""

    def __init__(self, values):
        v = np.array(values, dtype=float).ravel()
        if v.size == 0:
            raise ValidationError("piecewise-constant function needs at least one cell")
        v.setflags(write=False)
        self.values = v
        self.n = v.size
        self._cum = np.concatenate(([0.0], np.cumsum(v) / self.n))

    def __eq__(self, other):
        return isinstance(other, PiecewiseConstant) and np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash(self.values.tobytes())

    def __repr__(self):
        return f"PiecewiseConstant(n={self.n})"

    def cell_index(self, x):
        return np.minimum((np.asarray(x, dtype=float) * self.n).astype(np.int64), self.n - 1)

    def __call__(self, x):
        return self.values[self.cell_index(x)]

    def antiderivative(self, x):
        x = np.asarray(x, dtype=float)
        q = self.cell_index(x)
        return self._cum[q] + (x - q / self.n) * self.values[q]

    def breakpoints(self):
        return np.linspace(0.0, 1.0, self.n + 1)[1:-1]

    def to_dict(self):
        return {"kind": "piecewise_constant", "values": self.values.tolist()}


@dataclass(frozen=True)
class Scaled(Function1D):
    base: Function1D
    factor: float

    def __call__(self, x):
        return self.factor * self.base(x)

    def antiderivative(self, x):
        return self.factor * self.base.antiderivative(x)

    def breakpoints(self):
        return self.base.breakpoints()

    def to_dict(self):
        return {"kind": "scaled", "factor": self.factor, "base": self.base.to_dict()}


@dataclass(frozen=True)
class Sum(Function1D):
    terms: tuple

    def __call__(self, x):
        return sum(t(x) for t in self.terms)

    def antiderivative(self, x):
        return sum(t.antiderivative(x) for t in self.terms)

    def breakpoints(self):
        pts = [t.breakpoints() for t in self.terms]
        return np.unique(np.concatenate(pts)) if pts else np.empty(0)

    def to_dict(self):
        return {"kind": "sum", "terms": [t.to_dict() for t in self.terms]}


def from_dict(d: dict[str, Any]) -> Function1D:
    kind = d.get("kind")
    if kind == "constant":
        return Constant(float(d["value"]))
    if kind == "linear":
        return Linear(float(d["c0"]), float(d["c1"]))
    if kind == "trig":
        return Trig(float(d["amp"]), float(d["omega"]), d.get("form", "cos"))
    if kind == "shifted_power":
        return ShiftedPower(float(d["scale"]), float(d["shift"]), float(d["power"]))
    if kind == "piecewise_constant":
        return PiecewiseConstant(d["values"])
    if kind == "scaled":
        return Scaled(from_dict(d["base"]), float(d["factor"]))
    if kind == "sum":
        return Sum(tuple(from_dict(t) for t in d["terms"]))
    raise ValidationError(f"unknown function kind {kind!r}")


@lru_cache(maxsize=None)
def _gauss_legendre(order: int):
    return np.polynomial.legendre.leggauss(order)


def inner_product(u: Function1D, v: Function1D, panels: int = 1024, order: int = 8) -> float:
    """``int_0^1 u v`` by composite Gauss-Legendre on panels aligned with all breakpoints.

    Exact for products of piecewise-constant functions and accurate to
    roughly machine precision for the smooth closed forms used here.
    A constant factor reduces to the exact antiderivative of the other.
    """
    if isinstance(u, Constant):
        return float(u.value * v.integral())
    if isinstance(v, Constant):
        return float(v.value * u.integral())
    edges = np.union1d(np.linspace(0.0, 1.0, panels + 1), np.concatenate([u.breakpoints(), v.breakpoints()]))
    edges = edges[(edges >= 0.0) & (edges <= 1.0)]
    nodes, weights = _gauss_legendre(order)
    a, b = edges[:-1, None], edges[1:, None]
    half = 0.5 * (b - a)
    x = (a + b) * 0.5 + half * nodes[None, :]
    return float(np.sum(half * weights[None, :] * u(x) * v(x)))


def l1_distance(u: Function1D, v: Function1D, panels: int = 4096, order: int = 8) -> float:
    """``int_0^1 |u - v|`` with breakpoint-aligned Gauss-Legendre panels."""
    edges = np.union1d(np.linspace(0.0, 1.0, panels + 1), np.concatenate([u.breakpoints(), v.breakpoints()]))
    edges = edges[(edges >= 0.0) & (edges <= 1.0)]
    nodes, weights = _gauss_legendre(order)
    a, b = edges[:-1, None], edges[1:, None]
    half = 0.5 * (b - a)
    x = (a + b) * 0.5 + half * nodes[None, :]
    return float(np.sum(half * weights[None, :] * np.abs(u(x) - v(x))))
