"""Limit equilibrium of the LQ graphon mean field game with common noise.

Under a finite-rank graphon the equilibrium decouples into one scalar
forward-backward problem per eigenpair (lambda_l, f_l).  With the affine
ansatz g^l = K^l z^l + Phi^l every mode reduces to a Riccati equation for K^l
and a linear equation for Phi^l.  All ODEs here are integrated backward from
T with classical RK4 on one augmented state vector, so every right-hand side
sees the Riccati solution f at exactly the same RK stage values.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import AssumptionViolated, NumericalError, ValidationError
from .noise import common_increments
from .spectral import EigenPair, SpectralBasis

BLOWUP = 1e6
SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ModelParams:
    A: float = 0.0
    B: float = 1.0
    D: float = 0.0
    Sigma: float = 0.0
    Sigma0: float = 0.0
    eta: float = 0.0
    H: float = 0.0
    Q: float = 0.0
    QT: float = 0.0
    R: float = 1.0
    T: float = 1.0

    def __post_init__(self):
        for name in ("A", "B", "D", "Sigma", "Sigma0", "eta", "H", "Q", "QT", "R", "T"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not math.isfinite(v):
                raise ValidationError(f"model parameter {name} must be a finite real, got {v!r}")
            object.__setattr__(self, name, float(v))
        for name in ("Q", "QT", "Sigma", "Sigma0"):
            if getattr(self, name) < 0:
                raise ValidationError(f"model parameter {name} must be >= 0")
        for name in ("R", "T"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"model parameter {name} must be > 0")

    @property
    def kappa(self) -> float:
        """B^2 / 2R."""
        return self.B * self.B / (2.0 * self.R)

    @property
    def gain(self) -> float:
        """B / 2R, the factor in u = -(B/2R)(f x + g)."""
        return self.B / (2.0 * self.R)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("A", "B", "D", "Sigma", "Sigma0", "eta", "H", "Q", "QT", "R", "T")}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        d = dict(d)
        if "Q_T" in d:
            d["QT"] = d.pop("Q_T")
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValidationError(f"unknown model parameters {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def network_security(cls, Sigma: float = 1.0, T: float = 1.0) -> "ModelParams":
        """A=D=eta=Sigma0=1, B=R=H=2, Q=Q_T=3/2."""
        return cls(A=1, B=2, D=1, Sigma=Sigma, Sigma0=1, eta=1, H=2, Q=1.5, QT=1.5, R=2, T=T)


@dataclass(frozen=True)
class TimeGrid:
    T: float
    M_steps: int

    def __post_init__(self):
        if not (self.T > 0 and math.isfinite(self.T)):
            raise ValidationError(f"horizon T must be positive, got {self.T}")
        if int(self.M_steps) != self.M_steps or self.M_steps < 1:
            raise ValidationError(f"M_steps must be a positive integer, got {self.M_steps}")
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "M_steps", int(self.M_steps))

    @property
    def dt(self) -> float:
        return self.T / self.M_steps

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.M_steps + 1)

    def refine(self, factor: int = 2) -> "TimeGrid":
        return TimeGrid(self.T, self.M_steps * factor)

    def to_dict(self):
        return {"T": self.T, "M_steps": self.M_steps}


def _rk4_backward(rhs: Callable[[np.ndarray], np.ndarray], y_T: np.ndarray, grid: TimeGrid,
                  check: Callable[[np.ndarray, int], None] | None = None) -> np.ndarray:
    """Integrate the autonomous system y' = rhs(y) backward from y(T) = y_T.

    Returns an array of shape (M+1, len(y_T)) indexed by grid node.  The
    terminal row is assigned, not integrated.
    """
    M, h = grid.M_steps, grid.dt
    Y = np.empty((M + 1, len(y_T)))
    Y[M] = y_T
    y = np.array(y_T, dtype=float)
    for k in range(M, 0, -1):
        k1 = rhs(y)
        k2 = rhs(y - 0.5 * h * k1)
        k3 = rhs(y - 0.5 * h * k2)
        k4 = rhs(y - h * k3)
        y = y - (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if check is not None:
            check(y, k - 1)
        elif not np.all(np.isfinite(y)):
            raise NumericalError(f"non-finite value in backward integration at node {k - 1}")
        Y[k - 1] = y
    return Y


def _riccati_rhs(p: ModelParams):
    kappa, A, Q = p.kappa, p.A, p.Q
    return lambda f: kappa * f * f - 2.0 * A * f - 2.0 * Q


def solve_f(p: ModelParams, grid: TimeGrid) -> np.ndarray:
    """f' - (B^2/2R) f^2 + 2 A f + 2 Q = 0, f(T) = 2 Q_T."""
    rhs = _riccati_rhs(p)
    return _rk4_backward(lambda y: rhs(y), np.array([2.0 * p.QT]), grid)[:, 0]


def solve_g_ring(p: ModelParams, grid: TimeGrid) -> np.ndarray:
    """d g/dt = -(A - kappa f) g + 2 Q H eta, g(T) = -2 Q_T H eta."""
    fr = _riccati_rhs(p)
    kappa, A, c = p.kappa, p.A, 2.0 * p.Q * p.H * p.eta

    def rhs(y):
        f, g = y
        return np.array([fr(f), -(A - kappa * f) * g + c])

    return _rk4_backward(rhs, np.array([2.0 * p.QT, -2.0 * p.QT * p.H * p.eta]), grid)[:, 1]


def _modes_rhs(p: ModelParams, lams: np.ndarray, ones: np.ndarray):
    """Right-hand side of the augmented state [f, g_ring, K_1..K_d, Phi_1..Phi_d]."""
    kappa, A, D, Q, H, eta = p.kappa, p.A, p.D, p.Q, p.H, p.eta
    d = lams.size
    fr = _riccati_rhs(p)
    forcing = 2.0 * Q * H * eta * ones

    def rhs(y):
        f, g = y[0], y[1]
        K, Phi = y[2:2 + d], y[2 + d:]
        out = np.empty_like(y)
        out[0] = fr(f)
        out[1] = -(A - kappa * f) * g + 2.0 * Q * H * eta
        out[2:2 + d] = kappa * lams * K * K - (2.0 * A - 2.0 * kappa * f + D * lams) * K - D * f + 2.0 * Q * H
        out[2 + d:] = -(A - kappa * f - kappa * lams * K) * Phi + forcing
        return out

    return rhs


def _terminal(p: ModelParams, ones: np.ndarray) -> np.ndarray:
    d = ones.size
    y = np.empty(2 + 2 * d)
    y[0] = 2.0 * p.QT
    y[1] = -2.0 * p.QT * p.H * p.eta
    y[2:2 + d] = -2.0 * p.QT * p.H
    y[2 + d:] = -2.0 * p.QT * p.H * p.eta * ones
    return y


# ----------------------------------------------------------------------------
# monotonicity (Peng-Wu type) feasibility


@dataclass(frozen=True)
class MonotonicityReport:
    lam: float
    branch: str  # "negative", "positive" or "infeasible"
    beta: float  # largest certified margin (0 when infeasible)
    margins: dict  # branch -> uniform margin over the grid (may be <= 0)
    terminal: dict  # branch -> whether the terminal sign condition holds

    @property
    def feasible(self) -> bool:
        return self.branch != "infeasible"

    def to_dict(self):
        return {"lambda": self.lam, "branch": self.branch, "beta": self.beta,
                "margins": self.margins, "terminal": self.terminal}


def _branch_margin(c: np.ndarray, D: float, lam: float, kappa: float, sign: int) -> float:
    """Largest beta for which the sign condition holds at every grid node (-inf if none).

    sign = -1: D lam x y + c x^2 - kappa lam y^2 <= -beta x^2 (negative branch).
    sign = +1: the same form >= beta x^2 (positive branch).
    """
    kl = kappa * lam
    if sign < 0:
        if kl < 0:
            return -math.inf
        if kl == 0:
            return float(np.min(-c)) if D * lam == 0 else -math.inf
        return float(np.min(-c - D * D * lam / (4.0 * kappa)))
    if kl > 0:
        return -math.inf
    if kl == 0:
        return float(np.min(c)) if D * lam == 0 else -math.inf
    return float(np.min(c + D * D * lam / (4.0 * kappa)))


def check_monotonicity(p: ModelParams, lam: float, f: np.ndarray) -> MonotonicityReport:
    """Feasibility of the monotonicity condition for one mode.

    Checks whether D lam x y + (2QH - D f_t) x^2 - kappa lam y^2 is bounded by
    -beta x^2 (negative branch, with Q_T H < 0) or by +beta x^2 from below
    (positive branch, with Q_T H > 0) for some beta > 0 uniformly over the grid.
    """
    c = 2.0 * p.Q * p.H - p.D * np.asarray(f, dtype=float)
    margins = {"negative": _branch_margin(c, p.D, lam, p.kappa, -1),
               "positive": _branch_margin(c, p.D, lam, p.kappa, +1)}
    terminal = {"negative": p.QT * p.H < 0, "positive": p.QT * p.H > 0}
    best, beta = "infeasible", 0.0
    for name in ("negative", "positive"):
        if terminal[name] and margins[name] > 0 and margins[name] > beta:
            best, beta = name, margins[name]
    return MonotonicityReport(float(lam), best, beta, margins, terminal)


# ----------------------------------------------------------------------------
# mode equations


@dataclass(frozen=True)
class ModeSolution:
    K: np.ndarray
    Phi: np.ndarray
    q1: np.ndarray


def _check_blowup(p: ModelParams, grid: TimeGrid, d: int, lams: np.ndarray, f_hint: Callable[[], np.ndarray] | None):
    t = grid.nodes

    def check(y, k):
        K = y[2:2 + d]
        bad = ~np.isfinite(y[2:2 + d]) | (np.abs(K) > BLOWUP)
        if np.any(bad):
            l = int(np.flatnonzero(bad)[0])
            note = ""
            if f_hint is not None:
                rep = check_monotonicity(p, lams[l], f_hint())
                if rep.feasible:
                    note = ("; a solution exists by the monotonicity condition "
                            f"({rep.branch} branch, beta={rep.beta:.4g}) but the decoupled computation is unavailable")
            raise AssumptionViolated(
                f"Riccati blow-up in mode {l + 1} (lambda={lams[l]:.6g}): |K| exceeds {BLOWUP:g} at t={t[k]:.6g}{note}",
                mode=l + 1, time=float(t[k]))
        if not np.all(np.isfinite(y)):
            raise NumericalError(f"non-finite value in backward integration at t={t[k]:.6g}")

    return check


def _solve_all(p: ModelParams, grid: TimeGrid, lams: np.ndarray, ones: np.ndarray) -> np.ndarray:
    d = lams.size
    check = _check_blowup(p, grid, d, lams, lambda: solve_f(p, grid))
    return _rk4_backward(_modes_rhs(p, lams, ones), _terminal(p, ones), grid, check)


def solve_mode(p: ModelParams, pair: EigenPair, grid: TimeGrid, f: np.ndarray | None = None) -> ModeSolution:
    """K^l, Phi^l and q^{1l} = Sigma0 lambda <1, f_l> K^l for one eigenpair.

    If ``f`` is given it must be the Riccati solution on ``grid``; the
    integration recomputes it internally at the RK stages.
    """
    lams, ones = np.array([pair.lam]), np.array([pair.inner_one])
    Y = _solve_all(p, grid, lams, ones)
    if f is not None and (len(f) != grid.M_steps + 1 or not np.allclose(f, Y[:, 0], rtol=1e-12, atol=1e-12)):
        raise ValidationError("f does not match the Riccati solution on this grid")
    K, Phi = Y[:, 2], Y[:, 3]
    return ModeSolution(K, Phi, p.Sigma0 * pair.lam * pair.inner_one * K)


@dataclass(frozen=True)
class LimitSolution:
    params: ModelParams
    grid: TimeGrid
    basis: SpectralBasis
    f: np.ndarray
    g_ring: np.ndarray
    K: np.ndarray  # (M+1, d)
    Phi: np.ndarray  # (M+1, d)
    monotonicity: tuple = field(default=())

    @property
    def d(self) -> int:
        return len(self.basis)

    @property
    def q1(self) -> np.ndarray:
        p, b = self.params, self.basis
        return p.Sigma0 * (b.lambdas * b.inner_one)[None, :] * self.K

    @property
    def a(self) -> np.ndarray:
        """Mode drift slope a^l(t) = A - kappa f + D lambda - kappa lambda K^l."""
        p, lam = self.params, self.basis.lambdas[None, :]
        return p.A - p.kappa * self.f[:, None] + p.D * lam - p.kappa * lam * self.K

    @property
    def b(self) -> np.ndarray:
        """Mode drift offset b^l(t) = -kappa lambda Phi^l."""
        return -self.params.kappa * self.basis.lambdas[None, :] * self.Phi

    @property
    def c(self) -> np.ndarray:
        """Mode diffusion c^l = Sigma0 lambda <f_l, 1>."""
        return self.params.Sigma0 * self.basis.lambdas * self.basis.inner_one

    @property
    def z0(self) -> np.ndarray:
        return self.basis.lambdas * self.basis.inner_mu

    def cell_weights(self, N: int) -> tuple[np.ndarray, np.ndarray]:
        """C[q, l] = N int_{P_q} f_l and w_q = N int_{P_q} (1 - sum_l <1,f_l> f_l)."""
        C = self.basis.cell_means(N)
        return C, 1.0 - C @ self.basis.inner_one

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "params": self.params.to_dict(),
            "grid": self.grid.to_dict(),
            "basis": self.basis.to_dict(),
            "t": self.grid.nodes.tolist(),
            "f": self.f.tolist(),
            "g_ring": self.g_ring.tolist(),
            "modes": [
                {"l": l + 1, "lambda": float(self.basis.lambdas[l]), "K": self.K[:, l].tolist(),
                 "Phi": self.Phi[:, l].tolist(), "q1": self.q1[:, l].tolist(), "a": self.a[:, l].tolist(),
                 "b": self.b[:, l].tolist(), "c": float(self.c[l]), "z0": float(self.z0[l])}
                for l in range(self.d)
            ],
            "monotonicity": [r.to_dict() for r in self.monotonicity],
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")


def solve_limit(p: ModelParams, basis: SpectralBasis, grid: TimeGrid) -> LimitSolution:
    """Solve f, g_ring and every mode; raises AssumptionViolated on Riccati escape."""
    if p.T != grid.T:
        raise ValidationError(f"grid horizon {grid.T} differs from model horizon {p.T}")
    basis.inner_mu  # noqa: B018 -- fail early if no mean profile is attached
    Y = _solve_all(p, grid, basis.lambdas, basis.inner_one)
    d = len(basis)
    f = Y[:, 0].copy()
    reports = tuple(check_monotonicity(p, lam, f) for lam in basis.lambdas)
    return LimitSolution(p, grid, basis, f, Y[:, 1].copy(), Y[:, 2:2 + d].copy(), Y[:, 2 + d:].copy(), reports)


# ----------------------------------------------------------------------------
# mode SDE


@dataclass(frozen=True)
class ModePathSet:
    dW0: np.ndarray  # (P, M)
    z: np.ndarray  # (P, M+1, d)
    g: np.ndarray  # (P, M+1, d)
    paths: np.ndarray  # path indices
    seed: int
    scheme: str = "euler"

    @property
    def n_paths(self) -> int:
        return self.dW0.shape[0]

    def to_csv(self, path, grid: TimeGrid, max_paths: int | None = None) -> None:
        t = grid.nodes
        n = self.n_paths if max_paths is None else min(max_paths, self.n_paths)
        with open(path, "w", newline="") as fh:
            fh.write(f"# schema_version: {SCHEMA_VERSION}, seed: {self.seed}, scheme: {self.scheme}\n")
            w = csv.writer(fh)
            w.writerow(["path", "t", "l", "z_l", "g_l"])
            for i in range(n):
                for k in range(t.size):
                    for l in range(self.z.shape[2]):
                        w.writerow([int(self.paths[i]), repr(float(t[k])), l + 1,
                                    repr(float(self.z[i, k, l])), repr(float(self.g[i, k, l]))])


def integrate_modes(sol: LimitSolution, dW0: np.ndarray, scheme: str = "euler") -> np.ndarray:
    """Mode states z^l on each path for the given common-noise increments."""
    P, M = dW0.shape
    if M != sol.grid.M_steps:
        raise ValidationError(f"noise has {M} steps, grid has {sol.grid.M_steps}")
    a, b, c, dt = sol.a, sol.b, sol.c, sol.grid.dt
    z = np.empty((P, M + 1, sol.d))
    z[:, 0, :] = sol.z0[None, :]
    if scheme == "euler":
        for k in range(M):
            z[:, k + 1] = z[:, k] + (a[k] * z[:, k] + b[k]) * dt + c * dW0[:, k, None]
    elif scheme == "exponential":
        for k in range(M):
            ah = a[k] * dt
            e = np.exp(ah)
            phi1 = np.where(np.abs(ah) > 1e-12, np.expm1(ah) / np.where(ah == 0, 1.0, ah), 1.0)
            z[:, k + 1] = e * (z[:, k] + c * dW0[:, k, None]) + b[k] * phi1 * dt
    else:
        raise ValidationError(f"unknown SDE scheme {scheme!r}")
    return z


def simulate_modes(sol: LimitSolution, paths: int, seed: int, scheme: str = "euler", first_path: int = 0) -> ModePathSet:
    idx = np.arange(first_path, first_path + paths)
    dW0 = common_increments(seed, idx, sol.grid.M_steps, sol.grid.dt)
    z = integrate_modes(sol, dW0, scheme)
    g = sol.K[None] * z + sol.Phi[None]
    return ModePathSet(dW0, z, g, idx, int(seed), scheme)


def strategy_fields(sol: LimitSolution, N: int, mps: ModePathSet) -> tuple[np.ndarray, np.ndarray]:
    """Cluster averages (z_bar, g_bar), each of shape (P, M+1, N)."""
    C, w = sol.cell_weights(N)
    zbar = mps.z @ C.T
    gbar = mps.g @ C.T + sol.g_ring[None, :, None] * w[None, None, :]
    return zbar, gbar


def fbsde_residual(sol: LimitSolution, mps: ModePathSet) -> list[dict]:
    """Monte Carlo defect of the backward equation per mode.

    At node t_k the defect is g_k minus (terminal value + trapezoid integral of
    the drift over [t_k, T] - left-point Ito sum of q^1 dW0 over [t_k, T]).
    Reports the node maximising the mean absolute defect and its standard error.
    """
    p, dt = sol.params, sol.grid.dt
    b = sol.basis
    out = []
    for l in range(sol.d):
        z, g = mps.z[:, :, l], mps.g[:, :, l]
        one = b.inner_one[l]
        h = (p.A - p.kappa * sol.f)[None] * g + (p.D * sol.f - 2 * p.Q * p.H)[None] * z - 2 * p.Q * p.H * p.eta * one
        terminal = -2.0 * p.QT * p.H * (z[:, -1] + p.eta * one)
        drift = 0.5 * dt * (h[:, :-1] + h[:, 1:])
        ito = sol.q1[:-1, l][None] * mps.dW0
        # reverse cumulative sums over [t_k, T]
        tail = np.zeros_like(g)
        tail[:, :-1] = np.cumsum((drift - ito)[:, ::-1], axis=1)[:, ::-1]
        defect = np.abs(g - (terminal[:, None] + tail))
        mean = defect.mean(axis=0)
        k = int(np.argmax(mean))
        se = float(defect[:, k].std(ddof=1) / math.sqrt(defect.shape[0])) if defect.shape[0] > 1 else 0.0
        out.append({"mode": l + 1, "max_mean_abs_defect": float(mean[k]), "stderr": se, "t": float(sol.grid.nodes[k])})
    return out
