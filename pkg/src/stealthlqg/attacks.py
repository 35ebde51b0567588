"""Attack strategies: the zero attack, fixed paths, heuristic attacks and the optimal constructions.

Deterministic kinds hand the simulator node arrays via ``paths(grid, d, m)``; the random and
feedback kinds implement ``batch(k, xc_hat, xa_hat, dx, draws)`` for a stack of paths at node ``k``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coeffs import GridFunction, TimeGrid, sample
from .io import read_csv, write_csv
from .ode import RK8, integrate
from .synthesis import (
    AdaptiveRhoGains,
    AgentGains,
    DetAttackGains,
    DetCoefficients,
    FilterGains,
    model_coefficients,
    solve_adaptive_rho,
    solve_adaptive_tau,
    solve_f_phi_c_phi,
)


class ContractError(ValueError):
    pass


class AttackStrategy:
    kind = "abstract"
    deterministic = True  # rho, tau are fixed functions of time
    needs_state = False

    def paths(self, grid: TimeGrid, d: int, m: int):
        """Node arrays ``(rho (n_nodes, d), tau (n_nodes, m))`` for deterministic kinds."""
        raise ContractError(f"{self.kind} attack has no deterministic path")

    def draws(self, base_seed, path_indices, grid, d, m):
        return None

    def batch(self, k, xc_hat, xa_hat, dx, draws=None):
        raise ContractError(f"{self.kind} attack is consumed through paths(grid, d, m)")

    def describe(self) -> dict:
        return {"kind": self.kind}


@dataclass(frozen=True, eq=False)
class ZeroAttack(AttackStrategy):
    kind = "zero"

    def paths(self, grid, d, m):
        return np.zeros((grid.n_nodes, d)), np.zeros((grid.n_nodes, m))


@dataclass(frozen=True, eq=False)
class DeterministicPath(AttackStrategy):
    rho: GridFunction
    tau: GridFunction
    label: str = "path"
    kind = "deterministic"

    def __post_init__(self):
        if self.rho.grid != self.tau.grid:
            raise ContractError("rho and tau live on different grids")

    @property
    def grid(self):
        return self.rho.grid

    def paths(self, grid, d, m):
        if grid != self.grid:
            raise ContractError(f"attack path grid {self.grid} does not match {grid}")
        return self.rho.values.reshape(grid.n_nodes, d), self.tau.values.reshape(grid.n_nodes, m)

    def batch(self, k, xc_hat, xa_hat, dx, draws=None):
        n = xc_hat.shape[0]
        r = self.rho.values[k].reshape(-1)
        t = self.tau.values[k].reshape(-1)
        return np.broadcast_to(r, (n, r.size)), np.broadcast_to(t, (n, t.size))

    def describe(self):
        return {"kind": self.kind, "label": self.label,
                "rho_sup": float(np.max(np.abs(self.rho.values), initial=0.0)),
                "tau_sup": float(np.max(np.abs(self.tau.values), initial=0.0))}


@dataclass(frozen=True, eq=False)
class GaussianWhite(AttackStrategy):
    """i.i.d. standard normal values per step, held constant over the step, times ``std * scale``.

    Draws come from a per-path stream derived from ``(base_seed, path, 1 + seed_offset)``,
    so every path gets a fresh attack realization.
    """

    std_rho: float = 1.0
    std_tau: float = 1.0
    seed_offset: int = 0
    scale: float = 1.0
    kind = "gaussian"
    deterministic = False

    def draws(self, base_seed, path_indices, grid, d, m):
        out = np.empty((len(path_indices), grid.n_nodes, d + m))
        for i, idx in enumerate(path_indices):
            ss = np.random.SeedSequence([int(base_seed), int(idx), 1 + int(self.seed_offset)])
            out[i] = np.random.default_rng(ss).standard_normal((grid.n_nodes, d + m))
        return out

    def batch(self, k, xc_hat, xa_hat, dx, draws=None):
        if draws is None:
            raise ContractError("GaussianWhite needs its per-path draws")
        d = xc_hat.shape[1]
        z = draws[:, k]
        return self.scale * self.std_rho * z[:, :d], self.scale * self.std_tau * z[:, d:]

    def describe(self):
        return {"kind": self.kind, "std_rho": self.std_rho, "std_tau": self.std_tau,
                "seed_offset": self.seed_offset, "scale": self.scale}


@dataclass(frozen=True, eq=False)
class SinusoidAttack(AttackStrategy):
    """``rho_t = amp sin(omega t) 1`` and ``tau_t = -amp sin(omega t) 1``."""

    amplitude: float = 1.0
    omega: float = 8 * np.pi
    kind = "sinusoid"

    def values(self, t, d, m):
        s = self.amplitude * np.sin(self.omega * t)
        return np.full(d, s), np.full(m, -s)

    def paths(self, grid, d, m):
        s = self.amplitude * np.sin(self.omega * grid.times)[:, None]
        return np.repeat(s, d, axis=1), np.repeat(-s, m, axis=1)

    def as_path(self, grid, d, m) -> DeterministicPath:
        rho, tau = self.paths(grid, d, m)
        return DeterministicPath(GridFunction(grid, rho, "cubic"), GridFunction(grid, tau, "cubic"),
                                 "sinusoid")

    def describe(self):
        return {"kind": self.kind, "amplitude": self.amplitude, "omega": self.omega}


@dataclass(frozen=True, eq=False)
class AdaptiveFeedback(AttackStrategy):
    """``rho = -P^{-1}(e_c + e_dx)^T (F^phi phi + f^phi)`` with ``phi = (x^c, x^a, dx)``, ``tau`` a path."""

    rho_gains: AdaptiveRhoGains
    tau: GridFunction
    Pinv: GridFunction
    kind = "adaptive"
    deterministic = False
    needs_state = True

    def __post_init__(self):
        if not self.rho_gains.completed:
            raise ContractError("adaptive strategy needs f^phi solved")
        d = self.Pinv.shape[0]
        I = np.eye(d)
        e_rho_t = np.hstack([I, np.zeros((d, d)), I])
        L = -np.einsum("kij,jl,klm->kim", self.Pinv.values, e_rho_t, self.rho_gains.F_phi.values)
        l0 = -np.einsum("kij,jl,kl->ki", self.Pinv.values, e_rho_t, self.rho_gains.f_phi.values)
        object.__setattr__(self, "_L", L)
        object.__setattr__(self, "_l", l0)

    @property
    def grid(self):
        return self.tau.grid

    def feedback(self, k, xc_hat, xa_hat, dx):
        phi = np.concatenate([xc_hat, xa_hat, dx], axis=-1)
        return phi @ self._L[k].T + self._l[k]

    def batch(self, k, xc_hat, xa_hat, dx, draws=None):
        rho = self.feedback(k, xc_hat, xa_hat, dx)
        t = self.tau.values[k].reshape(-1)
        return rho, np.broadcast_to(t, (rho.shape[0], t.size))

    def describe(self):
        return {"kind": self.kind, "tau_sup": float(np.max(np.abs(self.tau.values), initial=0.0))}


def eval_attack(strategy: AttackStrategy, t: float, x_c_hat=None, x_a_hat=None, delta_x=None,
                grid: TimeGrid | None = None, d: int | None = None, m: int | None = None,
                draws=None):
    """Single-path dispatch at grid time ``t``; returns ``(rho, tau)`` vectors."""
    if isinstance(strategy, SinusoidAttack):
        if d is None or m is None:
            raise ContractError("sinusoid evaluation needs the dimensions d, m")
        return strategy.values(t, d, m)
    grid = grid or getattr(strategy, "grid", None)
    if isinstance(strategy, ZeroAttack):
        if d is None or m is None:
            raise ContractError("zero attack evaluation needs the dimensions d, m")
        return np.zeros(d), np.zeros(m)
    if grid is None:
        raise ContractError("grid required to locate t")
    k = int(round(t / grid.h))
    if abs(k * grid.h - t) > 1e-9 * max(1.0, grid.T) or not 0 <= k <= grid.n_steps:
        raise ContractError(f"t={t} is not a grid node")
    if strategy.needs_state and (x_c_hat is None or x_a_hat is None or delta_x is None):
        raise ContractError("feedback strategy evaluated without state vectors")
    if x_c_hat is None:
        x_c_hat = np.zeros(d or 1)
        x_a_hat = delta_x = x_c_hat
    args = [np.atleast_2d(np.asarray(v, dtype=float)) for v in (x_c_hat, x_a_hat, delta_x)]
    if draws is not None:
        draws = np.asarray(draws)[None]
    rho, tau = strategy.batch(k, *args, draws=draws)
    return np.array(rho[0]), np.array(tau[0])


# ---------------------------------------------------------------------------
# optimal constructions


@dataclass(frozen=True, eq=False)
class DetMeanPath:
    m_c: GridFunction
    m_a: GridFunction

    @property
    def delta(self) -> GridFunction:
        return GridFunction(self.m_c.grid, self.m_c.values - self.m_a.values, "cubic")


def det_mean_rhs(model, filt, agent, det: DetAttackGains):
    coef = DetCoefficients(model, filt, agent)
    d = model.d

    def rhs(t, mm):
        k = coef(t)
        M, g = det.M.at(t, "cubic"), det.g.at(t, "cubic")
        y = M @ mm + g
        mc, ma = mm[:d], mm[d:]
        dmc = k.c.A @ mc - k.KF @ ma + k.alpha - k.c.Pinv @ y[:d]
        dma = (k.c.A - k.KF) @ ma + k.alpha - k.Lam @ y[d:]
        return np.concatenate([dmc, dma])

    return rhs, coef


def build_optimal_det(model, filt: FilterGains, agent: AgentGains, det: DetAttackGains,
                      tableau=RK8):
    """Closed-loop mean paths and the optimal deterministic ``(rho*, tau*)`` on the grid."""
    d, g = model.d, model.grid
    rhs, coef = det_mean_rhs(model, filt, agent, det)
    mm = integrate(rhs, np.concatenate([model.x0, model.x0]), g, tableau=tableau)
    rho, tau = [], []
    for k, t in enumerate(g.times):
        c = coef(t)
        y = det.M[k] @ mm[k] + det.g[k]
        mc, ma = mm[k][:d], mm[k][d:]
        R = filt.R[k]
        rho.append(-c.c.Pinv @ y[:d])
        tau.append(-c.c.H @ R @ y[d:] - c.c.H @ (mc - ma))
    path = DeterministicPath(GridFunction(g, np.array(rho), "cubic"),
                             GridFunction(g, np.array(tau), "cubic"), "optimal-det")
    means = DetMeanPath(GridFunction(g, mm.values[:, :d], "cubic"),
                        GridFunction(g, mm.values[:, d:], "cubic"))
    return path, means


def pinv_path(model) -> GridFunction:
    mc = model_coefficients(model)
    return GridFunction(model.grid, np.array([mc(t).Pinv for t in model.grid.times]))


def adaptive_from_gains(model, rho_gains: AdaptiveRhoGains, tau: GridFunction) -> AdaptiveFeedback:
    return AdaptiveFeedback(rho_gains, tau, pinv_path(model))


def build_optimal_adaptive(model, filt: FilterGains, agent: AgentGains, tableau=RK8):
    """Run the hierarchical pipeline and return ``(strategy, tau_gains)``."""
    rho = solve_adaptive_rho(model, filt, agent, tableau)
    tau = solve_adaptive_tau(model, filt, agent, rho, tableau)
    rho = solve_f_phi_c_phi(model, filt, agent, rho, tau.tau_star, tableau)
    return adaptive_from_gains(model, rho, tau.tau_star), tau


# ---------------------------------------------------------------------------
# CSV exchange


def export_attack_csv(path, strategy: DeterministicPath, config_sha=None):
    g = strategy.grid
    rho = strategy.rho.values.reshape(g.n_nodes, -1)
    tau = strategy.tau.values.reshape(g.n_nodes, -1)
    header = ["t"] + [f"rho_{i + 1}" for i in range(rho.shape[1])] + \
             [f"tau_{i + 1}" for i in range(tau.shape[1])]
    return write_csv(path, header, np.hstack([g.times[:, None], rho, tau]), config_sha)


def import_attack_csv(path, grid: TimeGrid | None = None) -> DeterministicPath:
    header, data = read_csv(path)
    if header[0] != "t":
        raise ValueError(f"{path}: first column must be t")
    rcols = [i for i, h in enumerate(header) if h.startswith("rho_")]
    tcols = [i for i, h in enumerate(header) if h.startswith("tau_")]
    t = data[:, 0]
    if grid is None:
        grid = TimeGrid(float(t[-1]), len(t) - 1)
    if len(t) != grid.n_nodes or np.max(np.abs(t - grid.times)) > 1e-9 * max(1.0, grid.T):
        raise ValueError(f"{path}: time column does not match the model grid")
    return DeterministicPath(GridFunction(grid, data[:, rcols], "cubic"),
                             GridFunction(grid, data[:, tcols], "cubic"), f"imported:{path}")


def sinusoid_path(grid, d, m, amplitude=1.0, omega=8 * np.pi) -> DeterministicPath:
    return SinusoidAttack(amplitude, omega).as_path(grid, d, m)


def path_from_functions(grid, rho_fn, tau_fn, label="custom") -> DeterministicPath:
    return DeterministicPath(sample(grid, rho_fn, "cubic"), sample(grid, tau_fn, "cubic"), label)
