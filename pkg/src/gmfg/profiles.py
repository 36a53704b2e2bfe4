"""Initial-mean profiles mu(alpha) = E x_0^alpha and their per-node step versions."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .functions import Constant, Function1D, Linear, PiecewiseConstant, Sum, Trig, l1_distance
from .graphon import parse_kernel_name

PROFILES = {
    "constant": ("c",),
    "linear": ("c0", "c1"),
    "cosine": ("c", "amp", "k"),
    "sine": ("c", "amp", "k"),
}


def profile_from_name(text: str) -> Function1D:
    """Build a named profile, e.g. ``"cosine{c=1,amp=0.5,k=1}"`` = c + amp cos(2 pi k alpha)."""
    name, params = parse_kernel_name(text)
    if name not in PROFILES:
        raise ValidationError(f"unknown mean profile {name!r}; known: {sorted(PROFILES)}")
    unknown = set(params) - set(PROFILES[name])
    if unknown:
        raise ValidationError(f"profile {name!r} does not take parameters {sorted(unknown)}")
    if name == "constant":
        return Constant(params.get("c", 1.0))
    if name == "linear":
        return Linear(params.get("c0", 0.0), params.get("c1", 1.0))
    c, amp, k = params.get("c", 0.0), params.get("amp", 1.0), params.get("k", 1.0)
    wave = Trig(amp, 2.0 * math.pi * k, "cos" if name == "cosine" else "sin")
    return Sum((Constant(c), wave)) if c != 0.0 else wave


@dataclass(frozen=True)
class MeanProfile:
    """mu on [0, 1] together with the per-node means mu_q of an N-node graph."""

    mu: Function1D
    nodes: tuple[float, ...]
    bound: float

    def __post_init__(self):
        if self.mu.sup_abs() > self.bound + 1e-12:
            raise ValidationError(f"profile exceeds its declared bound C_mu={self.bound}")

    @property
    def N(self) -> int:
        return len(self.nodes)

    @property
    def step(self) -> PiecewiseConstant:
        return PiecewiseConstant(self.nodes)

    def l1_error(self) -> float:
        return l1_distance(self.mu, self.step)


def sample_profile(mu: Function1D, N: int, rule: str = "left") -> np.ndarray:
    """Per-node means: ``left`` samples mu((q-1)/N) like the graph weights, ``cell_average`` uses N int_{P_q} mu."""
    if rule == "left":
        return np.asarray(mu(np.arange(N) / N), dtype=float) * np.ones(N)
    if rule == "cell_average":
        return mu.cell_means(N)
    raise ValidationError(f"unknown sampling rule {rule!r}")


def make_profile(mu: Function1D, N: int, rule: str = "left", nodes=None, bound: float | None = None) -> MeanProfile:
    vals = np.asarray(nodes if nodes is not None else sample_profile(mu, N, rule), dtype=float)
    if vals.shape != (N,):
        raise ValidationError(f"expected {N} node means, got shape {vals.shape}")
    if bound is None:
        bound = max(mu.sup_abs(), float(np.max(np.abs(vals))))
    return MeanProfile(mu, tuple(float(v) for v in vals), float(bound))
