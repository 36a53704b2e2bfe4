"""Command-line entry point: ``gmfg <solve-limit|simulate|deviate|converge> scenario.toml``.

Exit codes: 0 success, 1 configuration/validation error, 2 solvability
assumption violated, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from .convergence import point_errors, run_ladder
from .errors import AssumptionViolated, GmfgError, ValidationError
from .limit import fbsde_residual, simulate_modes, solve_limit
from .popsim import BACKEND, PathBundle, estimate_epsilon, gap_statistics, simulate_closed_loop
from .popsim.simulate import write_cost_csv, write_field_csv
from .scenario import SCHEMA_VERSION, Scenario

EXIT_OK, EXIT_CONFIG, EXIT_ASSUMPTION, EXIT_NUMERICAL = 0, 1, 2, 3


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_json(path: Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(_clean(payload), fh, indent=1, sort_keys=False)
        fh.write("\n")


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors are configuration errors, not exit 2
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="gmfg", description="Linear-quadratic graphon mean field games with common noise.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in (("solve-limit", "solve the limit equilibrium ODEs"),
                        ("simulate", "simulate the finite population and measure mean-field gaps"),
                        ("deviate", "estimate the empirical epsilon of the epsilon-Nash property"),
                        ("converge", "run a ladder study over (N, cluster size)")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("scenario", help="scenario TOML file")
        p.add_argument("--seed", type=int, default=None, help="unsigned 64-bit seed (overrides the scenario)")
        p.add_argument("--paths", type=int, default=None, help="Monte Carlo path count (overrides the scenario)")
        p.add_argument("--threads", type=int, default=1, help="worker threads for path blocks")
        p.add_argument("--out", default=None, help="output directory (default: $GMFG_OUT or ./gmfg-out)")
    return ap


def _out_dir(args, scenario: Scenario) -> Path:
    d = args.out or os.environ.get("GMFG_OUT") or scenario.config["outputs"].get("dir") or "gmfg-out"
    path = Path(d)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _header(command: str, scenario: Scenario) -> dict:
    return {"schema_version": SCHEMA_VERSION, "command": command, "run_id": scenario.run_id(command),
            "scenario": scenario.name}


def cmd_solve_limit(scenario: Scenario, out: Path, args) -> None:
    sol = solve_limit(scenario.model(), scenario.basis(), scenario.grid())
    payload = _header("solve-limit", scenario)
    payload.update(sol.to_dict())
    write_json(out / "limit_solution.json", payload)
    o = scenario.config["outputs"]
    if o["mode_csv"]:
        pop = scenario.config["population"]
        mps = simulate_modes(sol, max(1, o["mode_csv_paths"]), pop["seed"])
        mps.to_csv(out / "mode_paths.csv", sol.grid)
        write_json(out / "fbsde_residual.json", {**_header("solve-limit", scenario), "residual": fbsde_residual(sol, mps)})


def cmd_simulate(scenario: Scenario, out: Path, args) -> None:
    sol = solve_limit(scenario.model(), scenario.basis(), scenario.grid())
    cfg = scenario.population()
    E_N, E_Np, dK = point_errors(scenario, cfg.N, cfg.min_cluster, cfg)
    res = simulate_closed_loop(cfg, sol, threads=args.threads)
    head = _header("simulate", scenario)
    summary = {**head, "backend": BACKEND, "seed": cfg.seed, "paths": cfg.paths, "N": cfg.N, "K": cfg.K,
               "E_N": E_N, "E_N_prime": E_Np, "delta_K": dK, "gaps": gap_statistics(res),
               "tracked_agents": res.track, "tracked_cost_mean": res.track_cost.mean(axis=0),
               "config": scenario.config}
    write_json(out / "simulation_summary.json", summary)
    t = sol.grid.nodes
    write_field_csv(out / "cluster_fields.csv", head["run_id"], res, t, scenario.config["outputs"]["field_csv_paths"])
    write_cost_csv(out / "agent_costs.csv", head["run_id"], res)


def cmd_deviate(scenario: Scenario, out: Path, args) -> None:
    sol = solve_limit(scenario.model(), scenario.basis(), scenario.grid())
    cfg = scenario.population()
    devs = scenario.deviations(cfg)
    if not devs:
        raise ValidationError(f"{scenario.path}: deviation library is empty; add [[deviations]] tables")
    _, _, dK = point_errors(scenario, cfg.N, cfg.min_cluster, cfg)
    bundle = PathBundle(cfg.seed, cfg.paths, cfg.K, sol.grid)
    rep = estimate_epsilon(cfg, sol, devs, bundle=bundle, delta_K=dK, threads=args.threads)
    write_json(out / "epsilon_report.json", {**_header("deviate", scenario), "backend": BACKEND, "seed": cfg.seed,
                                             "paths": cfg.paths, **rep.to_dict(), "config": scenario.config})


def cmd_converge(scenario: Scenario, out: Path, args) -> None:
    if scenario.ladder() is None:
        raise ValidationError(f"{scenario.path}: scenario has no [ladder] table")
    rep = run_ladder(scenario, threads=args.threads)
    head = _header("converge", scenario)
    write_json(out / "convergence.json", {**head, "backend": BACKEND, **rep.to_dict(), "config": scenario.config})
    rep.to_csv(out / "convergence.csv", head["run_id"])


COMMANDS = {"solve-limit": cmd_solve_limit, "simulate": cmd_simulate, "deviate": cmd_deviate, "converge": cmd_converge}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.threads < 1:
            raise ValidationError("--threads must be at least 1")
        scenario = Scenario.load(args.scenario).override(seed=args.seed, paths=args.paths)
        out = _out_dir(args, scenario)
        write_json(out / "resolved_config.json", {**_header(args.command, scenario), "config": scenario.config})
        COMMANDS[args.command](scenario, out, args)
    except AssumptionViolated as exc:
        print(f"gmfg: assumption violated: {exc}", file=sys.stderr)
        return EXIT_ASSUMPTION
    except ValidationError as exc:
        print(f"gmfg: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except GmfgError as exc:
        print(f"gmfg: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except FloatingPointError as exc:
        print(f"gmfg: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(f"gmfg {args.command}: wrote outputs to {out}")
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
