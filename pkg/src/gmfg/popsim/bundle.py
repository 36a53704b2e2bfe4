"""Common-random-number path bundles."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError
from ..limit import TimeGrid
from ..noise import agent_draws, common_increments


@dataclass(frozen=True)
class PathBundle:
    """All noise for ``paths`` Monte Carlo paths as a pure function of (seed, path, agent).

    Nothing is stored: every block is regenerated on demand from the per-path
    substreams, so any strategy variant simulated on the same bundle sees
    identical dW0, dw^i and initial draws.
    """

    seed: int
    paths: int
    n_agents: int
    grid: TimeGrid

    def __post_init__(self):
        if self.paths < 1 or self.n_agents < 1:
            raise ValidationError("bundle needs at least one path and one agent")

    def common(self, idx) -> np.ndarray:
        return common_increments(self.seed, idx, self.grid.M_steps, self.grid.dt)

    def agents(self, idx) -> tuple[np.ndarray, np.ndarray]:
        """Standard-normal initial draws (P, K) and increments dw (P, M, K)."""
        idx = np.asarray(idx)
        M, K = self.grid.M_steps, self.n_agents
        xi = np.empty((idx.size, K))
        dw = np.empty((idx.size, M, K))
        for r, p in enumerate(idx):
            xi[r], dw[r] = agent_draws(self.seed, int(p), K, M, self.grid.dt)
        return xi, dw

    def blocks(self, block_elems: int = 8_000_000):
        """Consecutive path ranges whose dw block stays below ``block_elems`` doubles."""
        per = max(1, block_elems // (self.grid.M_steps * self.n_agents))
        for start in range(0, self.paths, per):
            yield np.arange(start, min(start + per, self.paths))
