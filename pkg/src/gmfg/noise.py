"""Seeded random streams shared by the mode simulation and the population simulation.

Every Monte Carlo path owns two independent substreams derived from
``(seed, path)``: stream 0 carries the common-noise increments dW0 and
stream 1 carries the agents' initial draws followed by their idiosyncratic
increments.  Because the streams depend only on (seed, path), any strategy
variant re-simulated on the same path sees identical noise.
"""
from __future__ import annotations

import numpy as np

COMMON, AGENTS = 0, 1


def path_rng(seed: int, path: int, stream: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(path), int(stream)))
    return np.random.Generator(np.random.PCG64(ss))


def common_increments(seed: int, paths: range | np.ndarray, n_steps: int, dt: float) -> np.ndarray:
    """dW0 with shape (len(paths), n_steps)."""
    paths = np.asarray(paths, dtype=np.int64)
    out = np.empty((paths.size, n_steps))
    sd = np.sqrt(dt)
    for i, p in enumerate(paths):
        out[i] = path_rng(seed, p, COMMON).standard_normal(n_steps) * sd
    return out


def agent_draws(seed: int, path: int, n_agents: int, n_steps: int, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Standard-normal initial draws (n_agents,) and increments dw (n_steps, n_agents)."""
    rng = path_rng(seed, path, AGENTS)
    z0 = rng.standard_normal(n_agents)
    dw = rng.standard_normal((n_steps, n_agents))
    dw *= np.sqrt(dt)
    return z0, dw
