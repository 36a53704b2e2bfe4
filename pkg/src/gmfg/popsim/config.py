"""Population configuration and the unilateral-deviation library."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ValidationError
from ..graphon import validate_adjacency

TRACK_POSITIONS = (0.0, 0.25, 0.5, 0.75)


@dataclass(frozen=True)
class PopulationConfig:
    """N nodes, |C_l| agents attached to node l, Gaussian initial law N(mu_q, v_q).

    Agents are stored contiguously by cluster: cluster l owns indices
    offsets[l] .. offsets[l+1]-1.
    """

    adjacency: np.ndarray
    cluster_sizes: tuple
    mu_nodes: tuple
    var_nodes: tuple
    paths: int = 1000
    seed: int = 0
    C_sigma: float = math.inf
    track: tuple | None = None
    scheme: str = "euler"
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        M = np.array(self.adjacency, dtype=float)
        validate_adjacency(M)
        M.setflags(write=False)
        object.__setattr__(self, "adjacency", M)
        N = M.shape[0]
        sizes = tuple(int(c) for c in self.cluster_sizes)
        if len(sizes) != N:
            raise ValidationError(f"expected {N} cluster sizes, got {len(sizes)}")
        if any(c < 1 for c in sizes) or any(c != s for c, s in zip(self.cluster_sizes, sizes)):
            raise ValidationError("cluster sizes must be positive integers")
        object.__setattr__(self, "cluster_sizes", sizes)
        for name in ("mu_nodes", "var_nodes"):
            v = tuple(float(x) for x in getattr(self, name))
            if len(v) != N:
                raise ValidationError(f"{name} must have length N={N}, got {len(v)}")
            if not all(math.isfinite(x) for x in v):
                raise ValidationError(f"{name} must be finite")
            object.__setattr__(self, name, v)
        if any(v < 0 for v in self.var_nodes):
            raise ValidationError("initial variances must be >= 0")
        if any(v > self.C_sigma for v in self.var_nodes):
            raise ValidationError(f"initial variances exceed C_sigma={self.C_sigma}")
        if int(self.paths) != self.paths or self.paths < 1:
            raise ValidationError(f"paths must be a positive integer, got {self.paths}")
        if int(self.seed) != self.seed or not 0 <= int(self.seed) < 2**64:
            raise ValidationError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        object.__setattr__(self, "paths", int(self.paths))
        object.__setattr__(self, "seed", int(self.seed))
        if self.scheme not in ("euler", "heun"):
            raise ValidationError(f"scheme must be 'euler' or 'heun', got {self.scheme!r}")
        track = self.default_track() if self.track is None else tuple(int(i) for i in self.track)
        for i in track:
            if not 0 <= i < self.K:
                raise ValidationError(f"tracked agent {i} outside [0, {self.K})")
        object.__setattr__(self, "track", tuple(dict.fromkeys(track)))

    @property
    def N(self) -> int:
        return self.adjacency.shape[0]

    @property
    def K(self) -> int:
        return int(sum(self.cluster_sizes))

    @property
    def min_cluster(self) -> int:
        return min(self.cluster_sizes)

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate(([0], np.cumsum(self.cluster_sizes))).astype(np.int64)

    @property
    def cluster_of(self) -> np.ndarray:
        return np.repeat(np.arange(self.N), self.cluster_sizes)

    def first_agent(self, q: int) -> int:
        return int(self.offsets[q])

    def default_track(self) -> tuple:
        N = len(self.cluster_sizes)
        offsets = np.concatenate(([0], np.cumsum(self.cluster_sizes)))
        qs = dict.fromkeys(min(int(math.floor(pos * N)), N - 1) for pos in TRACK_POSITIONS)
        return tuple(int(offsets[q]) for q in qs)

    def with_(self, **kw) -> "PopulationConfig":
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d.update(kw)
        return PopulationConfig(**d)

    def to_dict(self) -> dict:
        return {
            "N": self.N,
            "adjacency": self.adjacency.tolist(),
            "cluster_sizes": list(self.cluster_sizes),
            "mu_nodes": list(self.mu_nodes),
            "var_nodes": list(self.var_nodes),
            "paths": self.paths,
            "seed": self.seed,
            "C_sigma": None if math.isinf(self.C_sigma) else self.C_sigma,
            "track": list(self.track),
            "scheme": self.scheme,
        }


DEVIATION_KINDS = ("equilibrium", "limit_best_response", "zero_control", "scaled_feedback", "custom_affine")


@dataclass(frozen=True)
class Gains:
    """Deviating control v = alpha * u_o(x) + k0 + k1 x + kg g_bar + kz z_bar on grid nodes."""

    alpha: float
    k0: np.ndarray
    k1: np.ndarray
    kg: np.ndarray
    kz: np.ndarray

    @property
    def is_identity(self) -> bool:
        return self.alpha == 1.0 and not any(np.any(a != 0.0) for a in (self.k0, self.k1, self.kg, self.kz))


def _node_array(v, n, name):
    a = np.asarray(v, dtype=float)
    if a.ndim == 0:
        return np.full(n, float(a))
    if a.shape != (n,):
        raise ValidationError(f"{name} must be a scalar or have one value per grid node ({n}), got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValidationError(f"{name} must be finite")
    return a.copy()


@dataclass(frozen=True)
class DeviationSpec:
    """One agent switches to an alternative affine feedback; all others keep u_o."""

    agent: int
    kind: str
    gamma: float = 1.0
    k0: object = 0.0
    k1: object = 0.0

    def __post_init__(self):
        if self.kind not in DEVIATION_KINDS:
            raise ValidationError(f"unknown deviation {self.kind!r}; known: {DEVIATION_KINDS}")
        if int(self.agent) != self.agent or self.agent < 0:
            raise ValidationError(f"deviating agent must be a nonnegative index, got {self.agent}")
        if not math.isfinite(self.gamma):
            raise ValidationError("gamma must be finite")
        for name in ("k0", "k1"):
            v = getattr(self, name)
            if isinstance(v, (list, np.ndarray)):
                object.__setattr__(self, name, tuple(float(x) for x in v))

    @property
    def label(self) -> str:
        if self.kind == "scaled_feedback":
            return f"scaled_feedback({self.gamma:g})"
        return self.kind

    def gains(self, p, f: np.ndarray) -> Gains:
        n = len(f)
        zeros = np.zeros(n)
        c = p.gain
        if self.kind in ("equilibrium", "limit_best_response"):
            return Gains(1.0, zeros, zeros, zeros, zeros)
        if self.kind == "zero_control":
            return Gains(0.0, zeros, zeros, zeros, zeros)
        if self.kind == "scaled_feedback":
            d = self.gamma - 1.0
            return Gains(1.0, zeros, -d * c * np.asarray(f, dtype=float), np.full(n, -d * c), zeros)
        return Gains(0.0, _node_array(self.k0, n, "k0"), _node_array(self.k1, n, "k1"), zeros, zeros)

    def to_dict(self):
        d = {"agent": self.agent, "kind": self.kind}
        if self.kind == "scaled_feedback":
            d["gamma"] = self.gamma
        if self.kind == "custom_affine":
            d["k0"] = list(self.k0) if isinstance(self.k0, tuple) else self.k0
            d["k1"] = list(self.k1) if isinstance(self.k1, tuple) else self.k1
        return d
