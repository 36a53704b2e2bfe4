"""delta_K and ladder studies of the finite-population approximation."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AssumptionViolated, ValidationError
from .graphon import StepGraphon, mean_l1_error, sectional_l1_error
from .limit import solve_limit
from .popsim import PathBundle, estimate_epsilon, gap_statistics, simulate_closed_loop

GAP_METRICS = ("z_sq", "z_second_moment", "x_sq", "x_second_moment", "cost")
SCHEMA_VERSION = 1


def delta_k(E_N: float, E_N_prime: float, min_cluster: int) -> float:
    """delta_K = E_N^2 + E_N'^2 + 1 / min_l |C_l|."""
    if E_N < 0 or E_N_prime < 0:
        raise ValidationError("E_N and E_N' must be nonnegative")
    if int(min_cluster) != min_cluster or min_cluster < 1:
        raise ValidationError(f"min cluster size must be a positive integer, got {min_cluster}")
    return E_N * E_N + E_N_prime * E_N_prime + 1.0 / min_cluster


def fit_slope(x, y) -> float | None:
    """Least-squares slope of log y against log x; None when undefined."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if x.size < 2 or np.any(x <= 0) or np.any(y <= 0) or np.unique(x).size < 2:
        return None
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


@dataclass(frozen=True)
class LadderPoint:
    N: int
    cluster_size: int
    E_N: float
    E_N_prime: float
    delta_K: float
    feasible: bool
    gaps: dict = field(default_factory=dict)
    epsilon: dict = field(default_factory=dict)
    note: str = ""

    def to_dict(self):
        return {"N": self.N, "min_cluster": self.cluster_size, "E_N": self.E_N, "E_N_prime": self.E_N_prime,
                "delta_K": self.delta_K, "feasible": self.feasible, "gaps": self.gaps, "epsilon": self.epsilon,
                "note": self.note}


@dataclass(frozen=True)
class ConvergenceReport:
    points: tuple
    slopes: dict

    def to_dict(self):
        return {"schema_version": SCHEMA_VERSION, "points": [p.to_dict() for p in self.points], "slopes": self.slopes}

    def rows(self):
        """Tidy rows: one per ladder point per metric."""
        for p in self.points:
            base = {"N": p.N, "min_cluster": p.cluster_size, "delta_K": p.delta_K}
            yield {**base, "metric": "E_N", "value": p.E_N, "stderr": 0.0}
            yield {**base, "metric": "E_N_prime", "value": p.E_N_prime, "stderr": 0.0}
            for m in GAP_METRICS:
                if m in p.gaps:
                    yield {**base, "metric": m, "value": p.gaps[m]["value"], "stderr": p.gaps[m]["stderr"]}
            if p.epsilon:
                yield {**base, "metric": "epsilon_hat", "value": p.epsilon["epsilon_hat"], "stderr": 0.0}
                yield {**base, "metric": "epsilon_upper_95", "value": p.epsilon["epsilon_upper_95"], "stderr": 0.0}

    def to_csv(self, path, run_id: str = "") -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# schema_version: {SCHEMA_VERSION}, run_id: {run_id}\n")
            w = csv.writer(fh)
            w.writerow(["N", "min_cluster", "delta_K", "metric", "value", "stderr"])
            for r in self.rows():
                w.writerow([r["N"], r["min_cluster"], repr(r["delta_K"]), r["metric"], repr(float(r["value"])),
                            repr(float(r["stderr"]))])


def point_errors(scenario, N: int, cluster_size: int, cfg=None):
    """(E_N, E_N', delta_K) for one ladder point."""
    cfg = cfg or scenario.population(N, cluster_size)
    E_N = sectional_l1_error(scenario.limit_graphon(), StepGraphon(cfg.adjacency))
    E_Np = mean_l1_error(scenario.mu(), cfg.mu_nodes)
    return E_N, E_Np, delta_k(E_N, E_Np, cfg.min_cluster)


def run_ladder(scenario, ladder=None, paths: int | None = None, seed: int | None = None, threads: int = 1,
               epsilon: bool = True, backend: str | None = None) -> ConvergenceReport:
    """Evaluate gaps and epsilon-hat at every (N, cluster size) and fit log-log slopes against delta_K.

    All points share one seed, so each point's noise is a pure function of
    (seed, path, agent).
    """
    ladder = [tuple(p) for p in (scenario.ladder() or [] if ladder is None else ladder)]
    if not ladder:
        raise ValidationError("ladder is empty")
    for a, b in zip(ladder, ladder[1:]):
        if not (b[0] > a[0] and b[1] > a[1]):
            raise ValidationError("ladder must be strictly increasing in both N and cluster size")
    scenario = scenario.override(seed=seed, paths=paths)
    p, grid = scenario.model(), scenario.grid()
    try:
        sol = solve_limit(p, scenario.basis(), grid)
        failure = None
    except AssumptionViolated as exc:
        sol, failure = None, str(exc)
    points = []
    for N, c in ladder:
        cfg = scenario.population(N, c)
        E_N, E_Np, dK = point_errors(scenario, N, c, cfg)
        if sol is None:
            points.append(LadderPoint(N, c, E_N, E_Np, dK, False, note=failure))
            continue
        bundle = PathBundle(cfg.seed, cfg.paths, cfg.K, grid)
        out = simulate_closed_loop(cfg, sol, bundle, threads=threads, backend=backend)
        gaps = gap_statistics(out)
        eps = {}
        if epsilon:
            devs = scenario.deviations(cfg)
            if devs:
                eps = estimate_epsilon(cfg, sol, devs, base=out, bundle=bundle, delta_K=dK, threads=threads,
                                       backend=backend).to_dict()
        points.append(LadderPoint(N, c, E_N, E_Np, dK, True, gaps, eps))
    ok = [q for q in points if q.feasible]
    slopes = {m: fit_slope([q.delta_K for q in ok], [q.gaps[m]["value"] for q in ok]) for m in GAP_METRICS}
    if ok and all(q.epsilon for q in ok):
        slopes["epsilon_hat"] = fit_slope([q.delta_K for q in ok], [q.epsilon["epsilon_hat"] for q in ok])
    return ConvergenceReport(tuple(points), slopes)
