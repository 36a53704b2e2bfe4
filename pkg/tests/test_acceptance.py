"""Acceptance criteria 1-8.

Each test records one ``ACCEPTANCE <n> PASS|FAIL`` line; the lines are
printed in the pytest terminal summary (see conftest.py) and also when the
module is run directly with ``python tests/test_acceptance.py``.
"""
from __future__ import annotations

import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from gmfg.cli import main
from gmfg.convergence import run_ladder
from gmfg.functions import Constant
from gmfg.graphon import AnalyticGraphon, StepGraphon, sample_from_graphon, sectional_l1_error
from gmfg.limit import ModelParams, TimeGrid, fbsde_residual, simulate_modes, solve_f, solve_g_ring, solve_limit
from gmfg.popsim import PopulationConfig, feedback_control, simulate_closed_loop
from gmfg.scenario import Scenario
from gmfg.spectral import (
    analytic_eigenpairs, eigenfunction_bound_check, numeric_eigenpairs, truncation_sectional_error,
)

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"
RESULTS: dict[int, str] = {}


def report(n: int, ok: bool, detail: str) -> None:
    line = f"ACCEPTANCE {n} {'PASS' if ok else 'FAIL'}: {detail}"
    RESULTS[n] = line
    print(line)


NS = ModelParams(A=1, B=2, D=1, Sigma=1, Sigma0=1, eta=1, H=2, Q=1.5, QT=1.5, R=2, T=1)
GENERIC = ModelParams(A=0.3, B=1.0, D=0.8, Sigma=0.5, Sigma0=1.0, eta=0.5, H=1.2, Q=1.0, QT=0.5, R=1.0, T=1.0)


# ---------------------------------------------------------------- 1


def test_criterion_1_closed_forms():
    t0 = time.perf_counter()
    grid = TimeGrid(1.0, 200)
    t = grid.nodes
    f = solve_f(NS, grid)
    err_f = float(np.max(np.abs(f - 3.0)))
    g_ring = solve_g_ring(NS, grid)
    err_g = float(np.max(np.abs(g_ring + 3 * (np.exp(2 * (t - 1)) + 1))))

    sol = solve_limit(NS, analytic_eigenpairs("sinusoidal", mu=Constant(1.0)), grid)
    mps = simulate_modes(sol, 20, seed=7)
    modes_ok = (np.all(mps.z == 0.0) and np.array_equal(mps.g[..., 0], mps.g[..., 1])
                and np.all(sol.q1 == 0.0))

    # (c) N=16, q=3: realised closed-loop controls against the closed form
    N, q = 16, 3
    coef = (N / math.pi) * math.sin(math.pi / N) * math.sin(math.pi * ((2 * q - 1) / N + 0.25))
    cfg = PopulationConfig(sample_from_graphon(AnalyticGraphon("sinusoidal"), N), [20] * N, [1.0] * N, [0.5] * N,
                           paths=20, seed=7)
    agent = cfg.first_agent(q - 1)
    out = simulate_closed_loop(cfg.with_(track=(agent,)), sol, limiting=False)
    x = out.traj[:, :, 0]
    u = out.controls(sol, agent)
    g1 = mps.g[:, :, 0]  # same seed, same paths: the mode solution the simulation used
    closed = -1.5 * x - coef * g1 + 1.5 * (np.exp(2 * (t - 1)) + 1)
    err_u = float(np.max(np.abs(u - closed)))
    # the same identity at arbitrary (t, x) with a nonzero synthetic g^1 = g^2
    rng = np.random.default_rng(3)
    synth_g = rng.normal(size=(50, t.size))
    C, w = sol.cell_weights(N)
    gbar_q = synth_g * (C[q - 1, 0] + C[q - 1, 1]) + sol.g_ring[None] * w[q - 1]
    xs = rng.normal(scale=3.0, size=(50, t.size))
    u_impl = np.stack([feedback_control(sol, k, xs[:, k], gbar_q[:, k]) for k in range(t.size)], axis=1)
    closed_s = -1.5 * xs - coef * synth_g + 1.5 * (np.exp(2 * (t - 1)) + 1)
    err_u = max(err_u, float(np.max(np.abs(u_impl - closed_s))))
    dt = time.perf_counter() - t0

    ok = err_f <= 1e-8 and err_g <= 1e-6 and err_u <= 1e-10 and modes_ok and dt < 1.0
    report(1, ok, f"|f-3|={err_f:.2e}, |g_ring - closed form|={err_g:.2e}, |u - closed form|={err_u:.2e}, "
                  f"z=0/g1=g2/q1=0: {modes_ok}, {dt:.2f}s")
    assert ok


# ---------------------------------------------------------------- 2


def test_criterion_2_spectral_facts():
    t0 = time.perf_counter()
    b = analytic_eigenpairs("sinusoidal")
    lam_ok = bool(np.all(b.lambdas == -0.5))
    num = numeric_eigenpairs(StepGraphon(sample_from_graphon(AnalyticGraphon("sinusoidal"), 32)), 2)
    num_err = float(np.max(np.abs(num.lambdas + 0.5)))
    rep = eigenfunction_bound_check(b)
    dt = time.perf_counter() - t0
    ok = lam_ok and num_err <= 0.05 and rep["ok"] and max(rep["sup_abs"]) <= rep["bound"] and dt < 5
    report(2, ok, f"analytic lambdas {b.lambdas.tolist()}, N=32 numeric error {num_err:.2e}, "
                  f"sup|f|={max(rep['sup_abs']):.6f} <= {rep['bound']:g}, {dt:.2f}s")
    assert ok


# ---------------------------------------------------------------- 3


def test_criterion_3_norm_bounds():
    t0 = time.perf_counter()
    sin = AnalyticGraphon("sinusoidal")
    en = {N: sectional_l1_error(sin, StepGraphon(sample_from_graphon(sin, N))) for N in (8, 16, 32, 64)}
    en_ok = all(v <= 4 * math.pi / N for N, v in en.items())
    ua = AnalyticGraphon("uniform_attachment")
    trunc = analytic_eigenpairs("uniform_attachment", modes=5)
    gt = {N: truncation_sectional_error(ua, trunc, N, m=64) for N in (16, 32, 64)}
    bound_ok = all(v <= 0.0258 for v in gt.values())
    near_ok = abs(gt[64] - 0.0257) <= 5e-4
    dt = time.perf_counter() - t0
    ok = en_ok and bound_ok and near_ok and dt < 10
    report(3, ok, f"E_N <= 4pi/N: {en_ok}; G~ <= 0.0258: {bound_ok} "
                  f"(G~ at N=16/32/64 = {gt[16]:.5f}/{gt[32]:.5f}/{gt[64]:.5f}); "
                  f"|G~(64) - 0.0257| <= 5e-4: {near_ok}; {dt:.2f}s")
    # The quadrature value of G~ sits well below the closed-form tail bound 0.025716;
    # the 'approximately 0.0257' target is that bound, not the norm. Recorded as unattainable.
    assert ok


# ---------------------------------------------------------------- 4

_RATIOS: list[float] = []


@settings(max_examples=25, deadline=None, derandomize=True)
@given(A=st.floats(-0.5, 0.5), B=st.floats(0.5, 1.5), D=st.floats(-1, 1), S0=st.floats(0, 1),
       eta=st.floats(-1, 1), H=st.floats(-1.5, 1.5), Q=st.floats(0, 2), QT=st.floats(0, 1), R=st.floats(0.5, 2),
       a=st.floats(-1, 1))
def _refinement_property(A, B, D, S0, eta, H, Q, QT, R, a):
    assume(abs(a) > 0.05)
    p = ModelParams(A=A, B=B, D=D, Sigma=0.5, Sigma0=S0, eta=eta, H=H, Q=Q, QT=QT, R=R, T=1.0)
    basis = analytic_eigenpairs("rank_one", {"a": a}, mu=Constant(1.0))
    S = []
    for M in (40, 80, 160):
        s = solve_limit(p, basis, TimeGrid(1.0, M))
        S.append(np.column_stack([s.f, s.g_ring, s.K, s.Phi])[:: M // 10])
    e1, e2 = np.max(np.abs(S[0] - S[1])), np.max(np.abs(S[1] - S[2]))
    assume(e2 > 1e-11)
    _RATIOS.append(float(e1 / e2))
    assert 8.0 <= e1 / e2 <= 32.0


def test_criterion_4_ode_fbsde_consistency():
    t0 = time.perf_counter()
    _RATIOS.clear()
    try:
        _refinement_property()
        ratio_ok = True
    except AssertionError:
        ratio_ok = False
    sol = solve_limit(NS, analytic_eigenpairs("sinusoidal", mu=Constant(1.0)), TimeGrid(1.0, 200))
    det = max(r["max_mean_abs_defect"] for r in fbsde_residual(sol, simulate_modes(sol, 100, seed=1)))
    basis = analytic_eigenpairs("rank_one", {"a": 1.0}, mu=Constant(1.0))
    assert basis.inner_one[0] != 0
    sto = []
    for M in (400, 800):
        s = solve_limit(GENERIC, basis, TimeGrid(1.0, M))
        sto.append(fbsde_residual(s, simulate_modes(s, 10_000, seed=4))[0]["max_mean_abs_defect"])
    halving = sto[1] / sto[0]
    dt = time.perf_counter() - t0
    ok = ratio_ok and det < 1e-6 and 0.35 <= halving <= 0.65 and dt < 30
    report(4, ok, f"RK4 refinement ratios in [{min(_RATIOS):.2f}, {max(_RATIOS):.2f}] over {len(_RATIOS)} cases; "
                  f"deterministic defect {det:.2e}; stochastic defect {sto[0]:.3e} -> {sto[1]:.3e} "
                  f"(ratio {halving:.3f}); {dt:.1f}s")
    assert ok


# ---------------------------------------------------------------- 5, 6


@pytest.fixture(scope="module")
def ladder():
    t0 = time.perf_counter()
    sc = Scenario.load(SCENARIOS / "sinusoidal_ladder.toml")
    rep = run_ladder(sc)
    return rep, time.perf_counter() - t0, sc


@pytest.mark.slow
def test_criterion_5_gap_decay(ladder):
    rep, elapsed, sc = ladder
    pts = rep.points
    z = [p.gaps["z_sq"]["value"] for p in pts]
    c = [p.gaps["cost"]["value"] for p in pts]
    dk = [p.delta_K for p in pts]
    dec = lambda v: all(b < a for a, b in zip(v, v[1:]))  # noqa: E731
    slope = rep.slopes["z_sq"]
    paths = sc.config["population"]["paths"]
    ok = (all(p.feasible for p in pts) and dec(z) and dec(c) and slope is not None and 0.5 <= slope <= 1.5
          and paths == 2000 and sc.config["grid"]["M_steps"] == 200 and elapsed < 120 * len(pts))
    report(5, ok, f"delta_K {[round(v, 4) for v in dk]}; sup E|z-zbar|^2 {[f'{v:.3e}' for v in z]}; "
                  f"|J - J*| {[f'{v:.3e}' for v in c]}; slope {slope:.3f}; {paths} paths; {elapsed:.0f}s")
    assert ok


@pytest.mark.slow
def test_criterion_6_empirical_epsilon_nash(ladder):
    rep, elapsed, _ = ladder
    ordering, bounded, lines = True, True, []
    kinds = set()
    for p in rep.points:
        e = p.epsilon
        eps, up = e["epsilon_hat"], e["epsilon_upper_95"]
        for ent in e["entries"]:
            kinds.add(ent["deviation"])
            ordering &= ent["J_equilibrium"] <= ent["J_deviation"] + eps + 1e-12
        bounded &= 0.0 <= eps <= up
        lines.append(f"(N={p.N},|C|={p.cluster_size}) eps={eps:.3e} upper={up:.3e}")
    eps = [p.epsilon["epsilon_hat"] for p in rep.points]
    ups = [p.epsilon["epsilon_upper_95"] for p in rep.points]
    decay = all(b <= ua + 1e-15 for ua, b in zip(ups, eps[1:]))
    library = kinds == {"zero_control", "scaled_feedback(0.5)", "scaled_feedback(1.5)"}
    ok = ordering and bounded and decay and library and elapsed < 180
    report(6, ok, "; ".join(lines) + f"; ordering {ordering}, non-increasing within CI {decay}")
    assert ok


@pytest.mark.slow
def test_epsilon_regression_baseline(ladder):
    """(N=8, |C|=40), seed 7, 2000 paths: every library deviation is costly, so epsilon-hat = 0."""
    rep, _, _ = ladder
    p = next(p for p in rep.points if (p.N, p.cluster_size) == (8, 40))
    assert p.epsilon["epsilon_hat"] == 0.0
    worst = max(e["gain"] for e in p.epsilon["entries"])
    assert worst == pytest.approx(-0.402552498230, abs=1e-8)  # frozen from the first run (seed 7)


# ---------------------------------------------------------------- 7


def lqr_oracle(p: ModelParams, x0: float) -> float:
    """x0^2 f_0 / 2 with f_0 from the closed-form Riccati solution."""
    k = p.kappa
    disc = math.sqrt(p.A * p.A + 2 * k * p.Q)
    rp, rm = (p.A + disc) / k, (p.A - disc) / k
    C = (2 * p.QT - rp) / (2 * p.QT - rm)
    rho = C * math.exp(-k * (rp - rm) * p.T)
    f0 = (rp - rm * rho) / (1 - rho)
    return 0.5 * f0 * x0 * x0


def test_criterion_7_degenerate_lqr():
    t0 = time.perf_counter()
    p = ModelParams(A=0.4, B=1.0, D=0.0, Sigma=0.0, Sigma0=0.0, eta=0.7, H=0.0, Q=1.0, QT=0.5, R=0.8, T=1.0)
    x0 = 1.3
    basis = numeric_eigenpairs(StepGraphon(np.ones((1, 1))), 1, mu=Constant(x0))
    sol = solve_limit(p, basis, TimeGrid(1.0, 400))
    cfg = PopulationConfig(np.ones((1, 1)), [5], [x0], [0.0], paths=1, scheme="heun")
    out = simulate_closed_loop(cfg, sol, limiting=False)
    realised = float(out.cost_mean.max())
    spread = float(np.ptp(out.cost_mean))
    oracle = lqr_oracle(p, x0)
    err = abs(realised - oracle)
    dt = time.perf_counter() - t0
    ok = err <= 1e-4 and spread == 0.0 and dt < 10
    report(7, ok, f"realised cost {realised:.8f} vs closed-form x0^2 f0/2 = {oracle:.8f} "
                  f"(|diff|={err:.2e}, Heun, dt=T/400); {dt:.2f}s")
    assert ok


# ---------------------------------------------------------------- 8


def test_criterion_8_determinism(tmp_path):
    t0 = time.perf_counter()
    runs = [("solve-limit", "rank_one.toml", []), ("simulate", "network_security.toml", ["--paths", "60"]),
            ("deviate", "network_security.toml", ["--paths", "60"]),
            ("converge", "sinusoidal_ladder.toml", ["--paths", "30"])]
    same, compared = True, 0
    for cmd, scen, extra in runs:
        dirs = []
        for rep in range(2):
            d = tmp_path / f"{cmd}-{rep}"
            assert main([cmd, str(SCENARIOS / scen), *extra, "--out", str(d)]) == 0
            dirs.append(d)
        names = sorted(f.name for f in dirs[0].iterdir())
        same &= names == sorted(f.name for f in dirs[1].iterdir())
        for n in names:
            compared += 1
            same &= (dirs[0] / n).read_bytes() == (dirs[1] / n).read_bytes()
    dt = time.perf_counter() - t0
    report(8, same, f"{compared} output files byte-identical across reruns of all four commands; {dt:.1f}s")
    assert same


if __name__ == "__main__":  # pragma: no cover
    sys.exit(pytest.main([__file__, "-q"]))
