"""TOML scenarios: parsing, validation with line-precise messages, and model assembly."""
from __future__ import annotations

import copy
import hashlib
import json
import math
import re
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

from .errors import GmfgError, ValidationError
from .functions import Function1D, PiecewiseConstant
from .graphon import AnalyticGraphon, Graphon, StepGraphon, load_adjacency_csv, parse_kernel_name, sample_from_graphon
from .limit import ModelParams, TimeGrid
from .popsim.config import DEVIATION_KINDS, DeviationSpec, PopulationConfig
from .profiles import profile_from_name, sample_profile
from .spectral import SpectralBasis, analytic_eigenpairs, numeric_eigenpairs

SCHEMA_VERSION = 1

DEFAULTS = {
    "model": {"A": 0.0, "B": 1.0, "D": 0.0, "Sigma": 0.0, "Sigma0": 0.0, "eta": 0.0, "H": 0.0,
              "Q": 0.0, "Q_T": 0.0, "R": 1.0, "T": 1.0},
    "grid": {"M_steps": 200},
    "graphon": {},
    "spectral": {"method": "analytic"},
    "mu": {"profile": "constant{c=1}", "rule": "left", "variance": 0.0},
    "population": {"N": 8, "cluster_size": 10, "paths": 1000, "seed": 0, "scheme": "euler"},
    "deviations": [],
    "outputs": {"field_csv_paths": 5, "mode_csv": False, "mode_csv_paths": 5},
}

ALLOWED = {
    "model": set(DEFAULTS["model"]),
    "grid": {"M_steps"},
    "graphon": {"kernel", "params", "adjacency_file"},
    "spectral": {"method", "d", "modes"},
    "mu": {"profile", "nodes", "rule", "bound", "variance", "C_sigma"},
    "population": {"N", "cluster_size", "cluster_sizes", "paths", "seed", "scheme", "track"},
    "deviation": {"kind", "agent", "gamma", "k0", "k1"},
    "ladder": {"points"},
    "outputs": {"dir", "field_csv_paths", "mode_csv", "mode_csv_paths"},
}
TOP = {"schema_version", "name", "description", "model", "grid", "graphon", "spectral", "mu", "population",
       "deviations", "ladder", "outputs"}


class ScenarioError(ValidationError):
    pass


def _locate(text: str, table: str | None, key: str | None) -> int | None:
    """1-based line of ``key`` inside ``[table]`` (or of the table header when key is None)."""
    current = None
    header = re.compile(r"^\s*\[\[?\s*([A-Za-z0-9_.\-]+)\s*\]\]?")
    for n, line in enumerate(text.splitlines(), 1):
        m = header.match(line)
        if m:
            current = m.group(1)
            if key is None and current == table:
                return n
            continue
        if key is not None and current == table and re.match(rf"^\s*{re.escape(key)}\s*=", line):
            return n
    return None


@dataclass
class Scenario:
    """A resolved scenario: every default filled in, every constraint checked."""

    config: dict
    path: Path | None = None

    # -- loading ---------------------------------------------------------
    @classmethod
    def load(cls, path) -> "Scenario":
        path = Path(path)
        if not path.is_file():
            raise ScenarioError(f"{path}: scenario file not found")
        text = path.read_text()
        return cls.from_text(text, path)

    @classmethod
    def from_text(cls, text: str, path: Path | None = None) -> "Scenario":
        where = str(path) if path else "<scenario>"
        try:
            raw = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ScenarioError(f"{where}: TOML syntax error: {exc}") from None

        def fail(table, key, msg):
            line = _locate(text, table, key) or (_locate(text, table, None) if table else None)
            loc = f"{where}:{line}" if line else where
            name = f"{table}.{key}" if table and key else (table or key)
            raise ScenarioError(f"{loc}: {name}: {msg}")

        try:
            cfg = cls._resolve(raw, fail, path)
        except ScenarioError:
            raise
        except GmfgError as exc:  # semantic errors raised while assembling inner types
            raise ScenarioError(f"{where}: {exc}") from None
        return cls(cfg, path)

    @staticmethod
    def _resolve(raw: dict, fail, path: Path | None) -> dict:
        unknown = set(raw) - TOP
        if unknown:
            fail(None, sorted(unknown)[0], f"unknown top-level key; allowed: {sorted(TOP)}")
        version = raw.get("schema_version")
        if version != SCHEMA_VERSION:
            fail(None, "schema_version", f"expected schema_version = {SCHEMA_VERSION}, got {version!r}")
        cfg = copy.deepcopy(DEFAULTS)
        cfg["schema_version"] = SCHEMA_VERSION
        cfg["name"] = str(raw.get("name", path.stem if path else "scenario"))
        if "description" in raw:
            cfg["description"] = str(raw["description"])
        for table in ("model", "grid", "graphon", "spectral", "mu", "population", "outputs", "ladder"):
            if table not in raw:
                continue
            if not isinstance(raw[table], dict):
                fail(None, table, "must be a table")
            bad = set(raw[table]) - ALLOWED[table]
            if bad:
                fail(table, sorted(bad)[0], f"unknown key; allowed: {sorted(ALLOWED[table])}")
            cfg.setdefault(table, {}).update(raw[table])

        # model
        for k, v in cfg["model"].items():
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                fail("model", k, f"must be a finite number, got {v!r}")
            cfg["model"][k] = float(v)
        try:
            ModelParams.from_dict(cfg["model"])
        except ValidationError as exc:
            key = next((k for k in cfg["model"] if k in str(exc) or k.replace("_", "") in str(exc)), None)
            fail("model", key, str(exc))
        m = cfg["grid"]["M_steps"]
        if isinstance(m, bool) or not isinstance(m, int) or m < 1:
            fail("grid", "M_steps", f"must be a positive integer, got {m!r}")

        # graphon
        gr = cfg["graphon"]
        if ("kernel" in gr) == ("adjacency_file" in gr):
            fail("graphon", None, "give exactly one of 'kernel' or 'adjacency_file'")
        if "kernel" in gr:
            try:
                name, params = parse_kernel_name(gr["kernel"])
                params.update(gr.get("params", {}))
                AnalyticGraphon(name, **params)
            except ValidationError as exc:
                fail("graphon", "kernel", str(exc))
            gr["kernel"], gr["params"] = name, params
        else:
            f = Path(gr["adjacency_file"])
            if not f.is_absolute() and path is not None:
                f = path.parent / f
            if not f.is_file():
                fail("graphon", "adjacency_file", f"file not found: {f}")
            try:
                load_adjacency_csv(f)
            except ValidationError as exc:
                fail("graphon", "adjacency_file", str(exc))
            gr["adjacency_file"] = str(f.resolve())

        # spectral
        sp = cfg["spectral"]
        method = sp.get("method")
        if method not in ("analytic", "numeric", "truncated"):
            fail("spectral", "method", f"must be 'analytic', 'numeric' or 'truncated', got {method!r}")
        if method == "numeric" and (not isinstance(sp.get("d"), int) or sp["d"] < 1):
            fail("spectral", "d", "numeric decomposition needs a positive integer d")
        if method == "truncated" and (not isinstance(sp.get("modes"), int) or sp["modes"] < 1):
            fail("spectral", "modes", "truncated decomposition needs a positive integer 'modes'")
        if method in ("analytic", "truncated") and "kernel" not in gr:
            fail("spectral", "method", f"method {method!r} needs a named kernel, not an adjacency file")
        if method == "numeric" and "kernel" in gr:
            fail("spectral", "method", "method 'numeric' needs an adjacency file")
        if method == "analytic" and gr.get("kernel") == "uniform_attachment":
            fail("spectral", "method", "uniform_attachment has infinite rank; use method = 'truncated'")
        if method == "truncated" and gr.get("kernel") != "uniform_attachment":
            fail("spectral", "method", "truncation is only defined for uniform_attachment; use 'analytic'")

        # population
        pop = cfg["population"]
        adj_N = None
        if "adjacency_file" in gr:
            adj_N = load_adjacency_csv(gr["adjacency_file"]).shape[0]
            if "N" in raw.get("population", {}) and pop["N"] != adj_N:
                fail("population", "N", f"adjacency file has N={adj_N}")
            pop["N"] = adj_N
        for k in ("N", "paths", "seed"):
            v = pop[k]
            if isinstance(v, bool) or not isinstance(v, int) or v < (0 if k == "seed" else 1):
                fail("population", k, f"must be a {'nonnegative' if k == 'seed' else 'positive'} integer, got {v!r}")
        if pop["seed"] >= 2**64:
            fail("population", "seed", "must fit in 64 bits")
        if "cluster_sizes" in pop:
            cs = pop.pop("cluster_sizes")
            pop.pop("cluster_size", None)
            if not isinstance(cs, list) or len(cs) != pop["N"] or any(
                    isinstance(c, bool) or not isinstance(c, int) or c < 1 for c in cs):
                fail("population", "cluster_sizes", f"must be {pop['N']} positive integers")
            pop["cluster_sizes"] = cs
        else:
            c = pop.pop("cluster_size")
            if isinstance(c, bool) or not isinstance(c, int) or c < 1:
                fail("population", "cluster_size", f"must be a positive integer, got {c!r}")
            pop["cluster_sizes"] = [c] * pop["N"]
        if pop["scheme"] not in ("euler", "heun"):
            fail("population", "scheme", f"must be 'euler' or 'heun', got {pop['scheme']!r}")
        if "track" in pop and (not isinstance(pop["track"], list) or not all(
                isinstance(i, int) and 0 <= i < sum(pop["cluster_sizes"]) for i in pop["track"])):
            fail("population", "track", "must be a list of agent indices")

        # mean profile
        mu = cfg["mu"]
        if "nodes" in raw.get("mu", {}):
            nodes = mu["nodes"]
            if not isinstance(nodes, list) or len(nodes) != pop["N"] or not all(
                    isinstance(v, (int, float)) and not isinstance(v, bool) for v in nodes):
                fail("mu", "nodes", f"must be a list of {pop['N']} numbers")
            mu["nodes"] = [float(v) for v in nodes]
            mu.pop("profile", None)
        else:
            try:
                profile_from_name(mu["profile"])
            except ValidationError as exc:
                fail("mu", "profile", str(exc))
        if mu["rule"] not in ("left", "cell_average"):
            fail("mu", "rule", f"must be 'left' or 'cell_average', got {mu['rule']!r}")
        var = mu["variance"]
        var_list = var if isinstance(var, list) else [var] * pop["N"]
        if len(var_list) != pop["N"] or not all(isinstance(v, (int, float)) and v >= 0 for v in var_list):
            fail("mu", "variance", f"must be a nonnegative number or {pop['N']} of them")
        if "C_sigma" in mu and any(v > mu["C_sigma"] for v in var_list):
            fail("mu", "variance", f"exceeds C_sigma={mu['C_sigma']}")

        # deviations
        devs = raw.get("deviations", [])
        if not isinstance(devs, list):
            fail(None, "deviations", "must be an array of tables [[deviations]]")
        out = []
        for d in devs:
            bad = set(d) - ALLOWED["deviation"]
            if bad:
                fail("deviations", sorted(bad)[0], f"unknown key; allowed: {sorted(ALLOWED['deviation'])}")
            if d.get("kind") not in DEVIATION_KINDS:
                fail("deviations", "kind", f"must be one of {DEVIATION_KINDS}, got {d.get('kind')!r}")
            if "agent" in d and (not isinstance(d["agent"], int) or not 0 <= d["agent"] < sum(pop["cluster_sizes"])):
                fail("deviations", "agent", f"agent index {d['agent']!r} outside the population")
            for k in ("k0", "k1"):
                if k in d and isinstance(d[k], list) and len(d[k]) != cfg["grid"]["M_steps"] + 1:
                    fail("deviations", k, f"needs one value per grid node ({cfg['grid']['M_steps'] + 1})")
            out.append(dict(d))
        cfg["deviations"] = out

        # ladder
        if "ladder" in cfg:
            pts = cfg["ladder"].get("points")
            if not isinstance(pts, list) or not pts or not all(
                    isinstance(p, list) and len(p) == 2 and all(isinstance(v, int) and v >= 1 for v in p) for p in pts):
                fail("ladder", "points", "must be a nonempty list of [N, cluster_size] integer pairs")
            for a, b in zip(pts, pts[1:]):
                if not (b[0] > a[0] and b[1] > a[1]):
                    fail("ladder", "points", "ladder must be strictly increasing in both N and cluster size")
            if "adjacency_file" in gr and len(pts) > 1:
                fail("ladder", "points", "a fixed adjacency file cannot be refined along a ladder")

        # outputs
        o = cfg["outputs"]
        for k in ("field_csv_paths", "mode_csv_paths"):
            if not isinstance(o[k], int) or o[k] < 0:
                fail("outputs", k, "must be a nonnegative integer")
        if not isinstance(o["mode_csv"], bool):
            fail("outputs", "mode_csv", "must be true or false")
        return cfg

    # -- overrides -------------------------------------------------------
    def override(self, *, seed=None, paths=None) -> "Scenario":
        cfg = copy.deepcopy(self.config)
        if seed is not None:
            if not 0 <= int(seed) < 2**64:
                raise ScenarioError(f"--seed must be an unsigned 64-bit integer, got {seed}")
            cfg["population"]["seed"] = int(seed)
        if paths is not None:
            if int(paths) < 1:
                raise ScenarioError(f"--paths must be positive, got {paths}")
            cfg["population"]["paths"] = int(paths)
        return Scenario(cfg, self.path)

    # -- assembly --------------------------------------------------------
    @property
    def name(self) -> str:
        return self.config["name"]

    def model(self) -> ModelParams:
        return ModelParams.from_dict(self.config["model"])

    def grid(self) -> TimeGrid:
        return TimeGrid(self.config["model"]["T"], self.config["grid"]["M_steps"])

    def mu(self) -> Function1D:
        m = self.config["mu"]
        if "nodes" in m:
            return PiecewiseConstant(m["nodes"])
        return profile_from_name(m["profile"])

    def kernel(self) -> Graphon:
        gr = self.config["graphon"]
        if "kernel" in gr:
            return AnalyticGraphon(gr["kernel"], **gr["params"])
        return StepGraphon(load_adjacency_csv(gr["adjacency_file"]))

    def basis(self) -> SpectralBasis:
        sp, gr = self.config["spectral"], self.config["graphon"]
        mu = self.mu()
        if sp["method"] == "analytic":
            return analytic_eigenpairs(gr["kernel"], gr["params"], mu)
        if sp["method"] == "truncated":
            return analytic_eigenpairs(gr["kernel"], gr["params"], mu, modes=sp["modes"])
        return numeric_eigenpairs(self.kernel(), sp["d"], mu)

    def limit_graphon(self) -> Graphon:
        """The graphon the limit problem is posed on (a truncation when one is used)."""
        if self.config["spectral"]["method"] == "analytic":
            return self.kernel()
        return self.basis().graphon()

    def adjacency(self, N: int | None = None) -> np.ndarray:
        gr = self.config["graphon"]
        if "adjacency_file" in gr:
            return load_adjacency_csv(gr["adjacency_file"])
        return sample_from_graphon(self.kernel(), N or self.config["population"]["N"])

    def population(self, N: int | None = None, cluster_size: int | None = None) -> PopulationConfig:
        pop, m = self.config["population"], self.config["mu"]
        N = N or pop["N"]
        sizes = pop["cluster_sizes"] if cluster_size is None else [cluster_size] * N
        if len(sizes) != N:
            sizes = [sizes[0]] * N
        if "nodes" in m:
            if N != len(m["nodes"]):
                raise ScenarioError("per-node means cannot be resampled at a different N")
            nodes = m["nodes"]
        else:
            nodes = sample_profile(self.mu(), N, m["rule"])
        var = m["variance"] if isinstance(m["variance"], list) else [m["variance"]] * N
        track = pop.get("track") if cluster_size is None and N == pop["N"] else None
        return PopulationConfig(self.adjacency(N), tuple(sizes), tuple(nodes), tuple(var), pop["paths"], pop["seed"],
                                m.get("C_sigma", math.inf), None if track is None else tuple(track), pop["scheme"])

    def deviations(self, cfg: PopulationConfig) -> list[DeviationSpec]:
        """Deviation library; entries without an agent apply to every tracked agent."""
        out = []
        for d in self.config["deviations"]:
            agents = [d["agent"]] if "agent" in d else list(cfg.track)
            for a in agents:
                if a >= cfg.K:
                    raise ScenarioError(f"deviating agent {a} outside the population of {cfg.K}")
                out.append(DeviationSpec(a, d["kind"], float(d.get("gamma", 1.0)), d.get("k0", 0.0), d.get("k1", 0.0)))
        return out

    def ladder(self) -> list[tuple[int, int]] | None:
        lad = self.config.get("ladder")
        return None if lad is None else [tuple(p) for p in lad["points"]]

    def run_id(self, command: str) -> str:
        blob = json.dumps({"command": command, "config": self.config}, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]
