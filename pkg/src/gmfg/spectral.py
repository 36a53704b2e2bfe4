"""Eigenpairs of finite-rank graphon operators.

Closed forms for the registered kernels, a numeric decomposition for step
graphons, and diagnostics (orthonormality, the sup-norm bound
``|f_l| <= 1 / min |lambda|``, truncation error of infinite-rank kernels).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ValidationError
from .functions import Function1D, PiecewiseConstant, Trig, from_dict, inner_product
from .graphon import AnalyticGraphon, FiniteRankGraphon, Graphon, PartitionGrid, StepGraphon, rank_one_vector, sectional_l1_error

RANK_TOL = 1e-10


class RankError(ValidationError):
    def __init__(self, message, rank):
        super().__init__(message)
        self.rank = rank


@dataclass(frozen=True)
class EigenPair:
    lam: float
    f: Function1D
    inner_one: float
    inner_mu: float | None = None

    def __post_init__(self):
        if abs(self.lam) <= RANK_TOL:
            raise ValidationError(f"eigenvalue {self.lam} is not bounded away from zero")

    def cell_means(self, N: int) -> np.ndarray:
        return self.f.cell_means(N)


@dataclass(frozen=True)
class SpectralBasis:
    pairs: tuple[EigenPair, ...]
    source: str = ""
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.pairs:
            raise ValidationError("spectral basis is empty")

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def __getitem__(self, i):
        return self.pairs[i]

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([p.lam for p in self.pairs])

    @property
    def inner_one(self) -> np.ndarray:
        return np.array([p.inner_one for p in self.pairs])

    @property
    def inner_mu(self) -> np.ndarray:
        if any(p.inner_mu is None for p in self.pairs):
            raise ValidationError("basis has no mean profile attached; call with_profile first")
        return np.array([p.inner_mu for p in self.pairs])

    def with_profile(self, mu: Function1D) -> "SpectralBasis":
        pairs = tuple(replace(p, inner_mu=inner_product(mu, p.f)) for p in self.pairs)
        return replace(self, pairs=pairs)

    def graphon(self) -> FiniteRankGraphon:
        return FiniteRankGraphon([(p.lam, p.f) for p in self.pairs])

    def cell_means(self, N: int) -> np.ndarray:
        """C[q, l] = N int_{P_q} f_l, exact."""
        return np.stack([p.cell_means(N) for p in self.pairs], axis=1)

    def to_dict(self) -> dict:
        return {
            "source": self.source,
            "pairs": [
                {"lambda": p.lam, "eigenfunction": p.f.to_dict(), "inner_one": p.inner_one, "inner_mu": p.inner_mu}
                for p in self.pairs
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SpectralBasis":
        pairs = tuple(
            EigenPair(float(p["lambda"]), from_dict(p["eigenfunction"]), float(p["inner_one"]), p.get("inner_mu"))
            for p in d["pairs"]
        )
        return cls(pairs, d.get("source", ""))


def _pair(lam, f, mu):
    return EigenPair(float(lam), f, float(f.integral()), None if mu is None else inner_product(mu, f))


def rank_one_norm_sq() -> float:
    """||v||_2^2 = int_0^1 1 / (2 sqrt(x + 1/2)) dx."""
    return math.sqrt(1.5) - math.sqrt(0.5)


def analytic_eigenpairs(kernel_name: str, params: dict | None = None, mu: Function1D | None = None, modes: int | None = None) -> SpectralBasis:
    params = dict(params or {})
    if kernel_name == "sinusoidal":
        root2 = math.sqrt(2.0)
        w = 2.0 * math.pi
        pairs = (_pair(-0.5, Trig(root2, w, "cos"), mu), _pair(-0.5, Trig(root2, w, "sin"), mu))
        return SpectralBasis(pairs, "sinusoidal")
    if kernel_name == "uniform_attachment":
        if modes is None or modes < 1:
            raise ValidationError("uniform_attachment is infinite rank; give the number of odd modes to keep")
        pairs = []
        for j in range(modes):
            k = 2 * j + 1
            pairs.append(_pair(4.0 / (k * k * math.pi**2), Trig(math.sqrt(2.0), k * math.pi / 2.0, "cos"), mu))
        return SpectralBasis(tuple(pairs), f"uniform_attachment[{modes}]", {"modes": modes})
    if kernel_name == "rank_one":
        a = float(params.get("a", 1.0))
        if a == 0.0:
            raise ValidationError("rank_one with a=0 has no nonzero eigenvalue")
        nsq = rank_one_norm_sq()
        v = rank_one_vector()
        f = replace(v, scale=v.scale / math.sqrt(nsq))
        return SpectralBasis((_pair(a * nsq, f, mu),), AnalyticGraphon("rank_one", a=a).label)
    raise ValidationError(f"no closed-form eigenpairs for kernel {kernel_name!r}")


def _order(lams: np.ndarray) -> np.ndarray:
    # descending |lambda|, ties (to 1e-9) by descending signed value
    key_abs = np.round(np.abs(lams), 9)
    return np.lexsort((-lams, -key_abs))


def numeric_eigenpairs(g: StepGraphon, d: int, mu: Function1D | None = None) -> SpectralBasis:
    """Eigenpairs of a step graphon from the symmetric eigendecomposition of M_N / N."""
    if not isinstance(g, StepGraphon):
        raise ValidationError("numeric eigenpairs need a step graphon")
    if d < 1 or d > g.N:
        raise ValidationError(f"d must lie in [1, N={g.N}], got {d}")
    lams, vecs = np.linalg.eigh(g.matrix / g.N)
    nonzero = np.abs(lams) > RANK_TOL
    rank = int(nonzero.sum())
    if rank < d:
        raise RankError(f"step graphon has rank {rank}, fewer than the requested d={d}", rank)
    lams, vecs = lams[nonzero], vecs[:, nonzero]
    idx = _order(lams)[:d]
    pairs = []
    for i in idx:
        v = vecs[:, i]
        first = np.flatnonzero(np.abs(v) > 1e-12)[0]
        if v[first] < 0:
            v = -v
        pairs.append(_pair(lams[i], PiecewiseConstant(math.sqrt(g.N) * v), mu))
    return SpectralBasis(tuple(pairs), f"step[N={g.N}]")


def orthonormality_residual(b: SpectralBasis, grid: PartitionGrid | None = None) -> np.ndarray:
    """Gram matrix minus identity; exact panel quadrature unless a grid is given."""
    d = len(b)
    G = np.empty((d, d))
    if grid is None:
        for i in range(d):
            for j in range(i, d):
                G[i, j] = G[j, i] = inner_product(b[i].f, b[j].f)
    else:
        F = np.stack([p.f(grid.points) for p in b])
        G = F @ F.T / grid.n_points
    return G - np.eye(d)


def eigenfunction_bound_check(b: SpectralBasis, tol: float = 1e-6, resolution: int = 8192) -> dict:
    bound = 1.0 / float(np.min(np.abs(b.lambdas)))
    sups = [p.f.sup_abs(resolution) for p in b]
    violations = [i for i, s in enumerate(sups) if s > bound + tol]
    return {"bound": bound, "sup_abs": sups, "violations": violations, "ok": not violations}


def truncation_sectional_error(full_kernel: Graphon, truncated: Graphon | SpectralBasis, N: int, m: int = 8) -> float:
    """Sectional L1 distance max_q N ||(truncated - full) 1_{P_q}||_1."""
    if isinstance(truncated, SpectralBasis):
        truncated = truncated.graphon()
    return sectional_l1_error(truncated, full_kernel, N=N, m=m)


def truncation_error_bound(modes: int) -> float:
    """Closed-form upper bound for the uniform-attachment truncation.

    sum over the dropped odd k of 16 / (k^2 pi^3), i.e.
    16/pi^3 * (pi^2/8 - sum_{kept odd k} 1/k^2).
    """
    kept = sum(1.0 / (2 * j + 1) ** 2 for j in range(modes))
    return 16.0 / math.pi**3 * (math.pi**2 / 8.0 - kept)


def spectral_projector(b: SpectralBasis, grid: PartitionGrid, lam: float, tol: float = 1e-6) -> np.ndarray:
    """Grid matrix of the projector onto the eigenspace of ``lam``."""
    F = np.stack([p.f(grid.points) for p in b if abs(p.lam - lam) <= tol])
    return F.T @ F / grid.n_points
