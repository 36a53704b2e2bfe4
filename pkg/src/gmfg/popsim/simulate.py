"""Finite-population Monte Carlo under the constructed decentralised strategies.

Every agent j in cluster q uses u_j = -(B/2R)(f_t x_j + g_bar^q_t), where
g_bar^q is the cluster average of the limit offset field evaluated on the
path's common-noise realisation.  The coupling z^{oq} is recomputed from the
current empirical cluster means at every step.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..errors import NumericalError, ValidationError
from ..limit import LimitSolution, integrate_modes
from ._backend import get_sweep
from .bundle import PathBundle
from .config import DeviationSpec, PopulationConfig

SCHEMA_VERSION = 1
Z_95 = 1.6448536269514722  # one-sided 95% normal quantile


def _mean_se(a: np.ndarray, axis=0):
    a = np.asarray(a, dtype=float)
    n = a.shape[axis]
    mean = a.mean(axis=axis)
    se = a.std(axis=axis, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(mean)
    # identical samples (noise-free runs) have exactly zero spread
    se = np.where(np.ptp(a, axis=axis) == 0, 0.0, se)
    return mean, se


def limit_fields(sol: LimitSolution, N: int, dW0: np.ndarray, mode_scheme: str = "euler"):
    """(z_bar, g_bar), each (P, M+1, N), on the given common-noise increments."""
    z = integrate_modes(sol, dW0, mode_scheme)
    g = sol.K[None] * z + sol.Phi[None]
    C, w = sol.cell_weights(N)
    zbar = np.ascontiguousarray(z @ C.T)
    gbar = np.ascontiguousarray(g @ C.T + sol.g_ring[None, :, None] * w[None, None, :])
    return zbar, gbar


def feedback_control(sol: LimitSolution, k: int, x, gbar_q):
    """u = -(B/2R)(f_{t_k} x + g_bar^q_{t_k})."""
    return -sol.params.gain * (sol.f[k] * np.asarray(x) + gbar_q)


def cost(x: np.ndarray, u: np.ndarray, nu: np.ndarray, p, dt: float) -> np.ndarray:
    """Per-path cost: trapezoid of Q (x - nu)^2 + R u^2 plus Q_T (x_T - nu_T)^2.

    Arrays have the time axis last, shape (..., M+1).
    """
    x, u, nu = (np.asarray(a, dtype=float) for a in (x, u, nu))
    run = p.Q * (x - nu) ** 2 + p.R * u * u
    w = np.full(run.shape[-1], dt)
    w[0] = w[-1] = 0.5 * dt
    return run @ w + p.QT * (x[..., -1] - nu[..., -1]) ** 2


@dataclass(frozen=True)
class SimOutput:
    n_paths: int
    track: np.ndarray  # tracked agent indices
    track_cluster: np.ndarray
    zo: np.ndarray  # (P, M+1, N) empirical cluster fields z^{oq}
    zbar: np.ndarray  # (P, M+1, N) limit cluster fields
    gbar: np.ndarray  # (P, M+1, N)
    traj: np.ndarray  # (P, M+1, n_track)
    track_cost: np.ndarray  # (P, n_track)
    cost_mean: np.ndarray  # (K,)
    cost_se: np.ndarray  # (K,)
    backend: str
    scheme: str
    deviation: DeviationSpec | None = None
    limit_traj: np.ndarray | None = None  # (P, M+1, n_track) limiting y-bar
    limit_cost: np.ndarray | None = None  # (P, n_track)
    meta: dict = field(default_factory=dict, compare=False)

    def column(self, agent: int) -> int:
        hits = np.flatnonzero(self.track == agent)
        if hits.size == 0:
            raise ValidationError(f"agent {agent} was not tracked in this run")
        return int(hits[0])

    def agent_cost(self, agent: int) -> np.ndarray:
        return self.track_cost[:, self.column(agent)]

    def controls(self, sol: LimitSolution, agent: int) -> np.ndarray:
        """Realised equilibrium control of a tracked agent, shape (P, M+1)."""
        j = self.column(agent)
        q = self.track_cluster[j]
        return -sol.params.gain * (sol.f[None, :] * self.traj[:, :, j] + self.gbar[:, :, q])


def _block_limiting(sol, x0, dw, dW0, zbar, gbar, track, track_q, heun):
    p, dt, f = sol.params, sol.grid.dt, sol.f
    A, B, D, c = p.A, p.B, p.D, p.gain
    M = dw.shape[1]
    y = x0[:, track].copy()
    Y = np.empty((y.shape[0], M + 1, y.shape[1]))
    acc = np.zeros_like(y)
    for k in range(M + 1):
        gk, zk = gbar[:, k, track_q], zbar[:, k, track_q]
        u = -c * (f[k] * y + gk)
        Y[:, k] = y
        dev = y - p.H * (zk + p.eta)
        acc += (0.5 * dt if k in (0, M) else dt) * (p.Q * dev * dev + p.R * u * u)
        if k == M:
            acc += p.QT * dev * dev
            break
        F = A * y + B * u + D * zk
        noise = p.Sigma * dw[:, k][:, track] + p.Sigma0 * dW0[:, k, None]
        if heun:
            yp = y + F * dt + noise
            up = -c * (f[k + 1] * yp + gbar[:, k + 1, track_q])
            Fp = A * yp + B * up + D * zbar[:, k + 1, track_q]
            y = y + 0.5 * (F + Fp) * dt + noise
        else:
            y = y + F * dt + noise
    return Y, acc


def simulate_closed_loop(cfg: PopulationConfig, sol: LimitSolution, bundle: PathBundle | None = None,
                         deviation: DeviationSpec | None = None, *, limiting: bool = True, threads: int = 1,
                         backend: str | None = None, mode_scheme: str = "euler",
                         block_elems: int = 8_000_000) -> SimOutput:
    """Simulate all K agents on every path of the bundle (optionally with one deviator)."""
    grid = sol.grid
    if bundle is None:
        bundle = PathBundle(cfg.seed, cfg.paths, cfg.K, grid)
    if bundle.grid != grid:
        raise ValidationError(f"bundle grid {bundle.grid} does not match solution grid {grid}")
    if bundle.n_agents != cfg.K:
        raise ValidationError(f"bundle has {bundle.n_agents} agents, population has {cfg.K}")
    p = sol.params
    name, sweep = get_sweep(backend)
    N, K, M = cfg.N, cfg.K, grid.M_steps
    offsets = cfg.offsets
    cl = cfg.cluster_of
    track = list(cfg.track)
    if deviation is not None:
        if deviation.agent >= K:
            raise ValidationError(f"deviating agent {deviation.agent} outside [0, {K})")
        if deviation.agent not in track:
            track.append(deviation.agent)
    track = np.array(track, dtype=np.int64)
    track_q = cl[track]
    mu_a = np.repeat(np.asarray(cfg.mu_nodes), cfg.cluster_sizes)
    sd_a = np.sqrt(np.repeat(np.asarray(cfg.var_nodes), cfg.cluster_sizes))
    prm = np.array([p.A, p.B, p.D, p.Sigma, p.Sigma0, p.eta, p.H, p.Q, p.QT, p.R])
    mN = np.ascontiguousarray(cfg.adjacency, dtype=float)
    heun = 1 if cfg.scheme == "heun" else 0
    if deviation is not None:
        gains = deviation.gains(p, sol.f)
        dev_args = (deviation.agent, gains.alpha, gains.k0, gains.k1, gains.kg, gains.kz)
    else:
        z = np.zeros(M + 1)
        dev_args = (-1, 1.0, z, z, z, z)

    def run(idx):
        # overflow surfaces as non-finite states, reported below with the step index
        with np.errstate(over="ignore", invalid="ignore"):
            return _run(idx)

    def _run(idx):
        dW0 = bundle.common(idx)
        xi, dw = bundle.agents(idx)
        x0 = np.ascontiguousarray(mu_a + sd_a * xi)
        zbar, gbar = limit_fields(sol, N, dW0, mode_scheme)
        P = idx.size
        cost_b = np.empty((P, K))
        zo = np.empty((P, M + 1, N))
        traj = np.empty((P, M + 1, track.size))
        sweep(x0, dw, dW0, gbar, zbar, sol.f, mN, offsets, prm, grid.dt, heun, *dev_args, track, cost_b, zo, traj)
        lim = _block_limiting(sol, x0, dw, dW0, zbar, gbar, track, track_q, heun) if limiting else (None, None)
        return (cost_b.sum(axis=0), (cost_b * cost_b).sum(axis=0), cost_b[:, track], zo, zbar, gbar, traj) + lim + (
            cost_b.min(axis=0), cost_b.max(axis=0))

    blocks = list(bundle.blocks(block_elems))
    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(run, blocks))
    else:
        results = [run(b) for b in blocks]

    s1 = np.sum([r[0] for r in results], axis=0)
    s2 = np.sum([r[1] for r in results], axis=0)
    n = bundle.paths
    cost_mean = s1 / n
    var = np.maximum(s2 - n * cost_mean**2, 0.0) / (n - 1) if n > 1 else np.zeros(K)
    spread = np.max([r[10] for r in results], axis=0) - np.min([r[9] for r in results], axis=0)
    var[spread == 0] = 0.0
    cat = lambda i: np.concatenate([r[i] for r in results], axis=0)  # noqa: E731
    zo = cat(3)
    if not np.all(np.isfinite(zo)):
        step = int(np.flatnonzero(~np.all(np.isfinite(zo), axis=(0, 2)))[0])
        raise NumericalError(f"non-finite state in the population simulation at step {step}")
    return SimOutput(
        n, track, track_q, zo, cat(4), cat(5), cat(6), cat(2), cost_mean, np.sqrt(var / n), name, cfg.scheme,
        deviation, cat(7) if limiting else None, cat(8) if limiting else None,
    )


def simulate_limiting(cfg: PopulationConfig, sol: LimitSolution, bundle: PathBundle | None = None,
                      agents=None, mode_scheme: str = "euler", block_elems: int = 8_000_000):
    """Limiting trajectories y-bar^i and costs for the given agents on the bundle's noise.

    Returns (trajectories (P, M+1, n), costs (P, n)).
    """
    grid = sol.grid
    if bundle is None:
        bundle = PathBundle(cfg.seed, cfg.paths, cfg.K, grid)
    agents = np.array(cfg.track if agents is None else agents, dtype=np.int64)
    cl = cfg.cluster_of
    mu_a = np.repeat(np.asarray(cfg.mu_nodes), cfg.cluster_sizes)
    sd_a = np.sqrt(np.repeat(np.asarray(cfg.var_nodes), cfg.cluster_sizes))
    Ys, Js = [], []
    for idx in bundle.blocks(block_elems):
        dW0 = bundle.common(idx)
        xi, dw = bundle.agents(idx)
        zbar, gbar = limit_fields(sol, cfg.N, dW0, mode_scheme)
        Y, J = _block_limiting(sol, mu_a + sd_a * xi, dw, dW0, zbar, gbar, agents, cl[agents], cfg.scheme == "heun")
        Ys.append(Y)
        Js.append(J)
    return np.concatenate(Ys), np.concatenate(Js)


def simulate_deviation(cfg: PopulationConfig, sol: LimitSolution, bundle: PathBundle | None, dev: DeviationSpec,
                       **kw) -> SimOutput:
    """Full re-simulation with agent ``dev.agent`` using the deviation; others keep u_o."""
    kw.setdefault("limiting", False)
    return simulate_closed_loop(cfg, sol, bundle, deviation=dev, **kw)


# ----------------------------------------------------------------------------
# deviation costs via the exact linear difference system


def perturbation_costs(cfg: PopulationConfig, sol: LimitSolution, base: SimOutput, dev: DeviationSpec):
    """Per-path (J_i(u_o), J_i(v, u_o^{-i})) from a baseline Euler run without re-simulating.

    With common random numbers the deviated population differs from the
    baseline by a state that obeys a linear recursion: non-deviating agents
    of one cluster share the same offset, so the difference lives in N + 1
    dimensions.  The Euler recursion below is the exact difference of the two
    Euler schemes, so the result agrees with full re-simulation up to
    rounding.
    """
    if base.scheme != "euler":
        raise ValidationError("the perturbation route mirrors the Euler scheme only; use full re-simulation")
    if base.deviation is not None:
        raise ValidationError("baseline must be the undeviated equilibrium run")
    p, f, dt = sol.params, sol.f, sol.grid.dt
    c, kappa = p.gain, p.kappa
    i = dev.agent
    j = base.column(i)
    q = int(base.track_cluster[j])
    n = cfg.cluster_sizes[q]
    N, M = cfg.N, sol.grid.M_steps
    mNT = np.asarray(cfg.adjacency).T / N
    gains = dev.gains(p, f)
    x = base.traj[:, :, j]
    zo_q = base.zo[:, :, q]
    gb, zb = base.gbar[:, :, q], base.zbar[:, :, q]
    P = x.shape[0]
    dl = np.zeros((P, N))
    di = np.zeros(P)
    Lb = np.empty((P, M + 1))
    Ld = np.empty((P, M + 1))
    xd = np.empty((P, M + 1))
    zd = np.empty((P, M + 1))
    for k in range(M + 1):
        dxbar = dl.copy()
        dxbar[:, q] = ((n - 1) * dl[:, q] + di) / n
        dzo = dxbar @ mNT
        u = -c * (f[k] * x[:, k] + gb[:, k])
        xt = x[:, k] + di
        du = ((gains.alpha - 1.0) * u - gains.alpha * c * f[k] * di
              + gains.k0[k] + gains.k1[k] * xt + gains.kg[k] * gb[:, k] + gains.kz[k] * zb[:, k])
        v = u + du
        zt = zo_q[:, k] + dzo[:, q]
        Lb[:, k] = p.R * u * u
        Ld[:, k] = p.R * v * v
        xd[:, k], zd[:, k] = xt, zt
        if k < M:
            dl = dl + ((p.A - kappa * f[k]) * dl + p.D * dzo) * dt
            di = di + (p.A * di + p.B * du + p.D * dzo[:, q]) * dt
    nu_b = p.H * (zo_q + p.eta)
    nu_d = p.H * (zd + p.eta)
    w = np.full(M + 1, dt)
    w[0] = w[-1] = 0.5 * dt
    Jb = (p.Q * (x - nu_b) ** 2 + Lb) @ w + p.QT * (x[:, -1] - nu_b[:, -1]) ** 2
    Jd = (p.Q * (xd - nu_d) ** 2 + Ld) @ w + p.QT * (xd[:, -1] - nu_d[:, -1]) ** 2
    return Jb, Jd


@dataclass(frozen=True)
class EpsilonReport:
    entries: tuple  # dicts per (agent, deviation)
    epsilon: float
    epsilon_upper: float
    delta_K_sqrt: float | None
    route: str

    def to_dict(self):
        return {"epsilon_hat": self.epsilon, "epsilon_upper_95": self.epsilon_upper,
                "delta_K_sqrt": self.delta_K_sqrt, "route": self.route, "entries": list(self.entries)}


def estimate_epsilon(cfg: PopulationConfig, sol: LimitSolution, deviations, base: SimOutput | None = None,
                     bundle: PathBundle | None = None, route: str = "auto", delta_K: float | None = None,
                     threads: int = 1, backend: str | None = None) -> EpsilonReport:
    """epsilon-hat = max over (agent, deviation) of [mean CRN gain J(u_o) - J(v)]_+.

    The upper bound adds the one-sided 95% normal quantile times the standard
    error of the path-level differences.
    """
    deviations = list(deviations)
    if not deviations:
        raise ValidationError("deviation library is empty")
    sizes = set(cfg.cluster_sizes)
    covered = {cfg.cluster_sizes[cfg.cluster_of[d.agent]] for d in deviations if d.agent < cfg.K}
    if any(d.agent >= cfg.K for d in deviations):
        raise ValidationError("deviating agent index outside the population")
    if not sizes <= covered:
        raise ValidationError(f"sampled agents must cover every cluster size; missing {sorted(sizes - covered)}")
    if route == "auto":
        route = "perturbation" if cfg.scheme == "euler" else "full"
    if route not in ("perturbation", "full"):
        raise ValidationError(f"unknown route {route!r}")
    if bundle is None:
        bundle = PathBundle(cfg.seed, cfg.paths, cfg.K, sol.grid)
    agents = sorted({d.agent for d in deviations})
    if base is None or any(a not in base.track for a in agents) or base.deviation is not None:
        track = tuple(dict.fromkeys(tuple(cfg.track) + tuple(agents)))
        base = simulate_closed_loop(cfg.with_(track=track), sol, bundle, limiting=False, threads=threads, backend=backend)
    entries = []
    for d in deviations:
        if route == "perturbation":
            Jb, Jd = perturbation_costs(cfg, sol, base, d)
        else:
            Jb = base.agent_cost(d.agent)
            Jd = simulate_deviation(cfg, sol, bundle, d, threads=threads, backend=backend).agent_cost(d.agent)
        gain, se = _mean_se(Jb - Jd)
        entries.append({"agent": int(d.agent), "deviation": d.label, "J_equilibrium": float(Jb.mean()),
                        "J_deviation": float(Jd.mean()), "gain": float(gain), "stderr": float(se),
                        "upper_95": float(gain + Z_95 * se)})
    eps = max(0.0, max(e["gain"] for e in entries))
    eps_up = max(0.0, max(e["upper_95"] for e in entries))
    return EpsilonReport(tuple(entries), eps, eps_up, None if delta_K is None else math.sqrt(delta_K), route)


# ----------------------------------------------------------------------------
# gap statistics


def _sup_stat(a: np.ndarray):
    """a has shape (P, M+1, n): mean over paths, sup over (t, n), SE at the argmax."""
    mean, se = _mean_se(a, axis=0)
    k, j = np.unravel_index(int(np.argmax(mean)), mean.shape)
    return {"value": float(mean[k, j]), "stderr": float(se[k, j]), "node": int(k), "index": int(j)}


def gap_statistics(out: SimOutput, limit_traj: np.ndarray | None = None, limit_cost: np.ndarray | None = None) -> dict:
    """Estimates of the four mean-field gaps and the cost gap, each with a standard error."""
    yl = out.limit_traj if limit_traj is None else limit_traj
    Jl = out.limit_cost if limit_cost is None else limit_cost
    rep = {
        "z_sq": _sup_stat((out.zo - out.zbar) ** 2),
        "z_second_moment": _sup_stat(np.abs(out.zo**2 - out.zbar**2)),
    }
    if yl is not None:
        rep["x_sq"] = _sup_stat((out.traj - yl) ** 2)
        rep["x_second_moment"] = _sup_stat(np.abs(out.traj**2 - yl**2))
        diff = out.track_cost - Jl
        m, se = _mean_se(diff)
        j = int(np.argmax(np.abs(m)))
        rep["cost"] = {"value": float(abs(m[j])), "stderr": float(se[j]), "index": j, "agent": int(out.track[j])}
    return rep


# ----------------------------------------------------------------------------
# export


def write_field_csv(path, run_id: str, out: SimOutput, t: np.ndarray, max_paths: int) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema_version: {SCHEMA_VERSION}, run_id: {run_id}\n")
        w = csv.writer(fh)
        w.writerow(["run_id", "path", "node", "t", "z_oq", "z_bar_q"])
        for pth in range(min(max_paths, out.n_paths)):
            for k in range(t.size):
                for q in range(out.zo.shape[2]):
                    w.writerow([run_id, pth, q + 1, repr(float(t[k])), repr(float(out.zo[pth, k, q])),
                                repr(float(out.zbar[pth, k, q]))])


def write_cost_csv(path, run_id: str, out: SimOutput) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema_version: {SCHEMA_VERSION}, run_id: {run_id}\n")
        w = csv.writer(fh)
        w.writerow(["run_id", "agent", "J_hat", "stderr"])
        for i in range(out.cost_mean.size):
            w.writerow([run_id, i, repr(float(out.cost_mean[i])), repr(float(out.cost_se[i]))])
