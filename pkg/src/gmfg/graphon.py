"""Graphons, step graphons, the graphon operator and the sectional norms.

Quadrature is the composite midpoint rule on a grid of ``m * N`` points that
nests the N-uniform partition, so every cell holds exactly ``m`` nodes and
cell-constant functions integrate exactly.
"""
from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import DomainError, ValidationError
from .functions import Function1D, PiecewiseConstant, ShiftedPower, l1_distance

ADJACENCY_HEADER = "# gmfg-adjacency v1, N={n}"


@dataclass(frozen=True)
class PartitionGrid:
    """N-uniform partition of [0, 1] with ``m`` midpoint nodes per cell."""

    N: int
    m: int = 8

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ValidationError(f"partition size must be a positive integer, got {self.N}")
        if int(self.m) != self.m or self.m < 1:
            raise ValidationError(f"nodes per cell must be a positive integer, got {self.m}")

    @property
    def n_points(self) -> int:
        return self.N * self.m

    @property
    def points(self) -> np.ndarray:
        return (np.arange(self.n_points) + 0.5) / self.n_points

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.n_points, 1.0 / self.n_points)

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.N + 1)

    def cell_of(self, x) -> np.ndarray:
        return np.minimum((np.asarray(x, dtype=float) * self.N).astype(np.int64), self.N - 1)

    def cell_integrals(self, values: np.ndarray) -> np.ndarray:
        """``int_{P_q} phi`` for a grid function (last axis = grid)."""
        v = np.asarray(values, dtype=float)
        return v.reshape(v.shape[:-1] + (self.N, self.m)).sum(-1) / self.n_points


def _check_unit(x, name):
    x = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(x)) or np.any(x < 0.0) or np.any(x > 1.0):
        raise DomainError(f"{name} must lie in [0, 1]")
    return x


class Graphon:
    """Symmetric kernel M: [0,1]^2 -> [-1,1] acting on L^2[0,1]."""

    label = "graphon"

    def values(self, alpha, beta) -> np.ndarray:
        """Vectorised kernel values without domain checks."""
        raise NotImplementedError

    def __call__(self, alpha, beta):
        a = _check_unit(alpha, "alpha")
        b = _check_unit(beta, "beta")
        return self.values(a, b)

    def eval(self, alpha: float, beta: float) -> float:
        return float(self(alpha, beta))

    def kernel_matrix(self, grid: PartitionGrid) -> np.ndarray:
        x = grid.points
        return self.values(x[:, None], x[None, :])

    def to_dict(self) -> dict:
        raise NotImplementedError


def _sinusoidal(a, b):
    return -np.cos(2.0 * np.pi * (a - b))


def _uniform_attachment(a, b):
    return 1.0 - np.maximum(a, b)


def rank_one_vector() -> ShiftedPower:
    """v(x) = 1 / (sqrt(2) (x + 1/2)^(1/4))."""
    return ShiftedPower(1.0 / math.sqrt(2.0), 0.5, -0.25)


def _rank_one(a_coef):
    v = rank_one_vector()
    return lambda a, b: a_coef * v(a) * v(b)


@dataclass(frozen=True)
class KernelSpec:
    factory: Callable[..., Callable]
    params: tuple[str, ...] = ()
    defaults: dict = field(default_factory=dict)


KERNELS: dict[str, KernelSpec] = {
    "sinusoidal": KernelSpec(lambda: _sinusoidal),
    "uniform_attachment": KernelSpec(lambda: _uniform_attachment),
    "rank_one": KernelSpec(_rank_one, ("a",), {"a": 1.0}),
}

_NAME_RE = re.compile(r"^\s*([A-Za-z_][A-Za-z0-9_]*)\s*(?:\{(.*)\})?\s*$")


def parse_kernel_name(text: str) -> tuple[str, dict]:
    """``"rank_one{a=0.5}"`` -> ``("rank_one", {"a": 0.5})``."""
    m = _NAME_RE.match(text)
    if not m:
        raise ValidationError(f"cannot parse kernel name {text!r}")
    name, body = m.group(1), m.group(2)
    params = {}
    if body:
        for item in body.split(","):
            if not item.strip():
                continue
            key, sep, val = item.partition("=")
            if not sep:
                raise ValidationError(f"kernel parameter {item!r} is not of the form key=value")
            try:
                params[key.strip()] = float(val)
            except ValueError:
                raise ValidationError(f"kernel parameter {key.strip()!r} is not a number: {val.strip()!r}") from None
    return name, params


class AnalyticGraphon(Graphon):
    def __init__(self, name: str, **params):
        if name not in KERNELS:
            raise ValidationError(f"unknown kernel {name!r}; known: {sorted(KERNELS)}")
        spec = KERNELS[name]
        unknown = set(params) - set(spec.params)
        if unknown:
            raise ValidationError(f"kernel {name!r} does not take parameters {sorted(unknown)}")
        full = {**spec.defaults, **{k: float(v) for k, v in params.items()}}
        if name == "rank_one" and not -1.0 <= full["a"] <= 1.0:
            raise ValidationError("rank_one coefficient a must lie in [-1, 1]")
        self.name = name
        self.params = full
        self._fn = spec.factory(*(full[p] for p in spec.params))

    @classmethod
    def from_name(cls, text: str) -> "AnalyticGraphon":
        name, params = parse_kernel_name(text)
        return cls(name, **params)

    @property
    def label(self):
        if not self.params:
            return self.name
        body = ",".join(f"{k}={v!r}" for k, v in sorted(self.params.items()))
        return f"{self.name}{{{body}}}"

    def values(self, alpha, beta):
        return self._fn(np.asarray(alpha, dtype=float), np.asarray(beta, dtype=float))

    def to_dict(self):
        return {"variant": "analytic", "name": self.name, "params": dict(self.params)}

    def __repr__(self):
        return f"AnalyticGraphon({self.label})"


class FiniteRankGraphon(Graphon):
    """sum_l lambda_l f_l(alpha) f_l(beta)."""

    label = "finite_rank"

    def __init__(self, terms):
        self.terms = tuple((float(lam), fn) for lam, fn in terms)
        if not self.terms:
            raise ValidationError("finite-rank graphon needs at least one term")

    def values(self, alpha, beta):
        a = np.asarray(alpha, dtype=float)
        b = np.asarray(beta, dtype=float)
        out = 0.0
        for lam, fn in self.terms:
            out = out + lam * fn(a) * fn(b)
        return out

    def to_dict(self):
        return {"variant": "finite_rank", "terms": [{"lambda": lam, "f": fn.to_dict()} for lam, fn in self.terms]}


class StepGraphon(Graphon):
    """M^[N](alpha, beta) = m_{ql} on P_q x P_l."""

    label = "step"

    def __init__(self, matrix):
        M = np.array(matrix, dtype=float)
        validate_adjacency(M)
        M.setflags(write=False)
        self.matrix = M
        self.N = M.shape[0]
        self.grid = PartitionGrid(self.N)

    def values(self, alpha, beta):
        q = np.minimum((np.asarray(alpha, dtype=float) * self.N).astype(np.int64), self.N - 1)
        r = np.minimum((np.asarray(beta, dtype=float) * self.N).astype(np.int64), self.N - 1)
        return self.matrix[q, r]

    def to_dict(self):
        return {"variant": "step", "matrix": self.matrix.tolist()}

    def __repr__(self):
        return f"StepGraphon(N={self.N})"


def validate_adjacency(M: np.ndarray) -> None:
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] == 0:
        raise ValidationError(f"adjacency matrix must be square and nonempty, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValidationError("adjacency matrix has non-finite entries")
    if not np.array_equal(M, M.T):
        i, j = np.argwhere(M != M.T)[0]
        raise ValidationError(f"adjacency matrix is not symmetric: m[{i},{j}]={M[i, j]} vs m[{j},{i}]={M[j, i]}")
    if np.any(np.abs(M) > 1.0):
        raise ValidationError("adjacency entries must lie in [-1, 1]")


def step_from_matrix(M) -> StepGraphon:
    return StepGraphon(M)


def sample_from_graphon(g: Graphon, N: int) -> np.ndarray:
    """Deterministic weights m_ij = M((i-1)/N, (j-1)/N)."""
    if int(N) != N or N < 1:
        raise ValidationError(f"N must be a positive integer, got {N}")
    x = np.arange(N) / N
    M = np.asarray(g(x[:, None], x[None, :]), dtype=float)
    # analytic kernels can be asymmetric at rounding level
    return 0.5 * (M + M.T)


def apply_operator(g: Graphon, phi, grid: PartitionGrid) -> np.ndarray:
    """(M phi)(alpha) = int M(alpha, beta) phi(beta) d beta at every grid node."""
    phi = np.asarray(phi, dtype=float)
    if phi.shape[-1] != grid.n_points:
        raise ValidationError(f"grid function has {phi.shape[-1]} samples, grid has {grid.n_points}")
    K = g.kernel_matrix(grid)
    return phi @ K.T * (1.0 / grid.n_points)


def _cell_row_integrals(diff: Callable, grid: PartitionGrid, chunk: int = 512) -> np.ndarray:
    """I[i, q] = int_{P_q} D(alpha_i, beta) d beta, evaluated in row chunks."""
    x = grid.points
    out = np.empty((grid.n_points, grid.N))
    for s in range(0, grid.n_points, chunk):
        block = diff(x[s : s + chunk, None], x[None, :])
        out[s : s + chunk] = grid.cell_integrals(block)
    return out


def sectional_l1_error(M: Graphon, M_step: Graphon, N: int | None = None, m: int = 8) -> float:
    """E_N = max_q N * int_0^1 | int_{P_q} (M - M_step)(alpha, beta) d beta | d alpha.

    The inner cell integral is taken before the absolute value.
    """
    if N is None:
        if not isinstance(M_step, StepGraphon):
            raise ValidationError("N is required unless the second graphon is a step graphon")
        N = M_step.N
    grid = PartitionGrid(N, m)
    inner = _cell_row_integrals(lambda a, b: M.values(a, b) - M_step.values(a, b), grid)
    return float(N * np.max(np.abs(inner).sum(axis=0) / grid.n_points))


def mean_l1_error(mu: Function1D, mu_nodes) -> float:
    """E_N' = int_0^1 |mu^[N] - mu|."""
    return l1_distance(mu, PiecewiseConstant(mu_nodes))


def cut_norm_lower_bound(g: Graphon, resolution: int, m: int = 8, exhaustive_cap: int = 12) -> float:
    """Lower bound on the cut norm from unions of grid cells.

    Exhaustive over row subsets up to ``exhaustive_cap`` cells; above that an
    alternating sign-split heuristic seeded by the leading singular vectors.
    For a fixed row set the best column set is exact (take the columns of one
    sign), so the search only enumerates rows.
    """
    if int(resolution) != resolution or resolution < 1:
        raise ValidationError("resolution must be a positive integer")
    grid = PartitionGrid(resolution, m)
    K = g.kernel_matrix(grid) / grid.n_points**2
    C = K.reshape(resolution, m, resolution, m).sum(axis=(1, 3))

    def best_for_rows(mask):
        col = C[mask].sum(axis=0)
        return max(col[col > 0].sum(), -col[col < 0].sum())

    best = 0.0
    if resolution <= exhaustive_cap:
        for bits in itertools.product((False, True), repeat=resolution):
            mask = np.array(bits)
            if mask.any():
                best = max(best, best_for_rows(mask))
        return float(best)

    u, _, vt = np.linalg.svd(C)
    seeds = [u[:, 0] > 0, u[:, 0] < 0, vt[0] > 0, vt[0] < 0, np.ones(resolution, bool)]
    for rows in seeds:
        for _ in range(50):
            if not rows.any():
                break
            col = C[rows].sum(axis=0)
            sign = 1.0 if col[col > 0].sum() >= -col[col < 0].sum() else -1.0
            cols = sign * col > 0
            best = max(best, abs(C[np.ix_(rows, cols)].sum()))
            row = C[:, cols].sum(axis=1)
            new_rows = sign * row > 0
            if np.array_equal(new_rows, rows):
                break
            rows = new_rows
    return float(best)


def save_adjacency_csv(path, M) -> None:
    M = np.asarray(M, dtype=float)
    validate_adjacency(M)
    lines = [ADJACENCY_HEADER.format(n=M.shape[0])]
    lines += [",".join(repr(float(v)) for v in row) for row in M]
    Path(path).write_text("\n".join(lines) + "\n")


def load_adjacency_csv(path) -> np.ndarray:
    text = Path(path).read_text().splitlines()
    if not text:
        raise ValidationError(f"{path}: empty adjacency file")
    m = re.match(r"^#\s*gmfg-adjacency\s+v1\s*,\s*N\s*=\s*(\d+)\s*$", text[0])
    if not m:
        raise ValidationError(f"{path}:1: expected header '# gmfg-adjacency v1, N=<N>'")
    n = int(m.group(1))
    rows = []
    for lineno, line in enumerate(text[1:], start=2):
        if not line.strip():
            continue
        try:
            rows.append([float(v) for v in line.split(",")])
        except ValueError:
            raise ValidationError(f"{path}:{lineno}: non-numeric entry") from None
        if len(rows[-1]) != n:
            raise ValidationError(f"{path}:{lineno}: expected {n} entries, got {len(rows[-1])}")
    if len(rows) != n:
        raise ValidationError(f"{path}: expected {n} rows, got {len(rows)}")
    M = np.array(rows)
    validate_adjacency(M)
    return M


def graphon_from_dict(d: dict) -> Graphon:
    from .functions import from_dict

    variant = d.get("variant")
    if variant == "analytic":
        return AnalyticGraphon(d["name"], **d.get("params", {}))
    if variant == "step":
        return StepGraphon(d["matrix"])
    if variant == "finite_rank":
        return FiniteRankGraphon([(t["lambda"], from_dict(t["f"])) for t in d["terms"]])
    raise ValidationError(f"unknown graphon variant {variant!r}")
