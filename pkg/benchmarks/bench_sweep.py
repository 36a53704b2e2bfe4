"""Compare the compiled and numpy closed-loop sweeps.

The noise and the limit fields are generated once and shared, so the
timings isolate the K-agent sweep itself.  An end-to-end timing of
``simulate_closed_loop`` (which also draws the noise) is reported for context.

    python benchmarks/bench_sweep.py --N 16 --cluster 160 --paths 200
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from gmfg.functions import Constant
from gmfg.graphon import AnalyticGraphon, sample_from_graphon
from gmfg.limit import ModelParams, TimeGrid, solve_limit
from gmfg.popsim import PathBundle, PopulationConfig, get_sweep, limit_fields, simulate_closed_loop
from gmfg.spectral import analytic_eigenpairs


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--N", type=int, default=16)
    ap.add_argument("--cluster", type=int, default=160)
    ap.add_argument("--paths", type=int, default=100)
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    p = ModelParams.network_security()
    sol = solve_limit(p, analytic_eigenpairs("sinusoidal", mu=Constant(1.0)), TimeGrid(1.0, args.steps))
    N, c = args.N, args.cluster
    cfg = PopulationConfig(sample_from_graphon(AnalyticGraphon("sinusoidal"), N), [c] * N, [1.0] * N, [0.5] * N,
                           paths=args.paths, seed=1)
    bundle = PathBundle(cfg.seed, cfg.paths, cfg.K, sol.grid)
    idx = np.arange(cfg.paths)
    dW0 = bundle.common(idx)
    xi, dw = bundle.agents(idx)
    x0 = 1.0 + np.sqrt(0.5) * xi
    zbar, gbar = limit_fields(sol, N, dW0)
    prm = np.array([p.A, p.B, p.D, p.Sigma, p.Sigma0, p.eta, p.H, p.Q, p.QT, p.R])
    track = np.array(cfg.track, dtype=np.int64)
    zeros = np.zeros(args.steps + 1)
    M = args.steps

    def kernel(name):
        _, fn = get_sweep(name)
        cost = np.empty((cfg.paths, cfg.K))
        zo = np.empty((cfg.paths, M + 1, N))
        traj = np.empty((cfg.paths, M + 1, track.size))
        fn(x0, dw, dW0, gbar, zbar, sol.f, np.ascontiguousarray(cfg.adjacency), cfg.offsets, prm, sol.grid.dt, 0,
           -1, 1.0, zeros, zeros, zeros, zeros, track, cost, zo, traj)
        return cost, zo

    print(f"K = {cfg.K} agents, {cfg.paths} paths, {M} steps  ({cfg.K * cfg.paths * M:.2e} agent-steps)")
    backends = ["python"]
    try:
        get_sweep("cython")
        backends.append("cython")
    except ImportError:
        print("compiled sweep not built; timing the numpy fallback only")
    ref = {b: kernel(b) for b in backends}
    if len(backends) == 2:
        diff = max(np.max(np.abs(ref["python"][0] - ref["cython"][0])), np.max(np.abs(ref["python"][1] - ref["cython"][1])))
        print(f"max |python - cython| over costs and fields: {diff:.2e}")
    kt = {b: best_of(lambda b=b: kernel(b), args.repeat) for b in backends}
    et = {b: best_of(lambda b=b: simulate_closed_loop(cfg, sol, bundle, limiting=False, backend=b), 1) for b in backends}
    print(f"{'backend':<8} {'kernel s':>10} {'end-to-end s':>14}")
    for b in backends:
        print(f"{b:<8} {kt[b]:>10.3f} {et[b]:>14.3f}")
    if len(backends) == 2:
        print(f"kernel speed-up {kt['python'] / kt['cython']:.1f}x, end-to-end {et['python'] / et['cython']:.1f}x")


if __name__ == "__main__":
    main()
