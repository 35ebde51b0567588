"""Objective evaluation: exact moment quadrature for deterministic attacks, Monte Carlo for any."""

from __future__ import annotations

import functools
import weakref
from dataclasses import asdict, dataclass, field

import numpy as np

from .attacks import AdaptiveFeedback, AttackStrategy, DeterministicPath, ZeroAttack
from .coeffs import GridFunction, symmetrize
from .detect import (
    chi2_stats,
    detection_summary,
    log_likelihood_batch,
    stealth_integrand,
    stealth_quadratic_batch,
)
from .io import write_csv
from .ode import integrate, quadrature
from .sim import SimPlan, TrajectoryBatch, make_plan, simulate_batch
from .synthesis import (
    AgentGains,
    adaptive_coefficients,
    agent_at,
    model_coefficients,
    phi0,
)


@dataclass(frozen=True, eq=False)
class MomentState:
    m: GridFunction  # (m^c, m^a)
    Sigma: GridFunction  # covariance of (X^c, Xa_hat)

    @property
    def d(self):
        return self.m.shape[0] // 2

    @property
    def m_c(self):
        return self.m.values[:, :self.d]

    @property
    def m_a(self):
        return self.m.values[:, self.d:]

    @property
    def Sigma_cc(self):
        return self.Sigma.values[:, :self.d, :self.d]

    @property
    def Sigma_aa(self):
        return self.Sigma.values[:, self.d:, self.d:]


class _MomentCoefficients:
    def __init__(self, model, filt, agent):
        self.model, self.filt, self.agent = model, filt, agent
        self.mc = model_coefficients(model)
        self._cache = {}

    def __call__(self, t):
        v = self._cache.get(t)
        if v is None:
            c = self.mc(t)
            d = self.model.d
            _, Tc, Th, Lam = self.filt.at(t, c.H)
            F, f = agent_at(self.agent, t)
            KF = c.K @ F
            Acal = np.zeros((2 * d, 2 * d))
            Acal[:d, :d] = c.A
            Acal[:d, d:] = -KF
            Acal[d:, :d] = Th
            Acal[d:, d:] = c.A - KF - Th
            VV = np.zeros((2 * d, 2 * d))
            VV[:d, :d] = self.mc.VV
            VV[d:, d:] = Lam
            alpha = c.a - 0.5 * c.K @ f
            v = (Acal, VV, np.concatenate([alpha, alpha]), Tc)
            if len(self._cache) < 100_000:
                self._cache[t] = v
        return v


_SIGMA_CACHE: "weakref.WeakKeyDictionary[AgentGains, tuple]" = weakref.WeakKeyDictionary()


def _moment_coefficients(model, filt, agent):
    hit = _SIGMA_CACHE.get(agent)
    if hit is not None and hit[0] is model and hit[1] is filt:
        return hit[2], hit[3]
    coef = _MomentCoefficients(model, filt, agent)
    d = model.d
    S0 = np.zeros((2 * d, 2 * d))
    S0[:d, :d] = model.R0

    def rhs(t, S):
        A, VV, _, _ = coef(t)
        return A @ S + S @ A.T + VV

    Sigma = integrate(rhs, S0, model.grid, project=symmetrize)
    _SIGMA_CACHE[agent] = (model, filt, coef, Sigma)
    return coef, Sigma


def solve_sigma(model, filt, agent) -> GridFunction:
    """Attack-independent covariance of ``(X^c, Xa_hat)``; solved once per gain set."""
    return _moment_coefficients(model, filt, agent)[1]


def solve_moments(model, filt, agent, strategy: DeterministicPath) -> MomentState:
    coef, Sigma = _moment_coefficients(model, filt, agent)
    rho, tau = strategy.rho, strategy.tau
    rho = rho if rho.interp == "cubic" else rho.smooth()
    tau = tau if tau.interp == "cubic" else tau.smooth()

    def rhs(t, mm):
        A, _, alpha2, Tc = coef(t)
        drive = np.concatenate([rho.at(t).reshape(-1), Tc @ tau.at(t).reshape(-1)])
        return A @ mm + drive + alpha2

    m = integrate(rhs, np.concatenate([model.x0, model.x0]), model.grid)
    return MomentState(m, Sigma)


def D_terms(model, agent, moments: MomentState) -> dict:
    """The four integrals making up the degradation, each by trapezoid quadrature."""
    mc = model_coefficients(model)
    g = model.grid
    tr_q, mean_q, tr_k, mean_k = (np.empty(g.n_nodes) for _ in range(4))
    for k, t in enumerate(g.times):
        c = mc(t)
        F, f = agent.F[k], agent.f_vec[k]
        e = moments.m_c[k] - c.r
        tr_q[k] = np.trace(c.Q @ moments.Sigma_cc[k])
        mean_q[k] = e @ c.Q @ e
        tr_k[k] = np.trace(F @ c.K @ F @ moments.Sigma_aa[k])
        v = F @ moments.m_a[k] + 0.5 * f
        mean_k[k] = v @ c.K @ v
    return {name: quadrature(v, g) for name, v in
            (("trace_Q", tr_q), ("mean_Q", mean_q), ("trace_K", tr_k), ("mean_K", mean_k))}


def exact_D(model, filt, agent, strategy: DeterministicPath) -> float:
    return float(sum(D_terms(model, agent, solve_moments(model, filt, agent, strategy)).values()))


@dataclass
class ObjectiveReport:
    D: float
    S: float
    rho_energy: float
    objective: float
    lam: float
    method: str
    D_se: float | None = None
    S_se: float | None = None
    rho_energy_se: float | None = None
    objective_se: float | None = None
    n_paths: int | None = None
    base_seed: int | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _energy_integrand(model, rho):
    mc = model_coefficients(model)
    rv = rho.values.reshape(model.grid.n_nodes, model.d)
    return np.array([0.5 * rv[k] @ mc(t).P @ rv[k] for k, t in enumerate(model.grid.times)])


def exact_objective(model, filt, agent, strategy: DeterministicPath, lam: float | None = None,
                    moments: MomentState | None = None) -> ObjectiveReport:
    """Exact ``S - lam D + 1/2 int rho' P rho`` for a deterministic attack."""
    lam = model.lam if lam is None else float(lam)
    if isinstance(strategy, ZeroAttack):
        g = model.grid
        strategy = DeterministicPath(GridFunction(g, np.zeros((g.n_nodes, model.d)), "cubic"),
                                     GridFunction(g, np.zeros((g.n_nodes, model.m)), "cubic"), "zero")
    moments = moments or solve_moments(model, filt, agent, strategy)
    terms = D_terms(model, agent, moments)
    D = float(sum(terms.values()))
    delta = moments.m_c - moments.m_a
    S = quadrature(stealth_integrand(model, filt, delta, strategy.tau), model.grid)
    E = quadrature(_energy_integrand(model, strategy.rho), model.grid)
    return ObjectiveReport(D=D, S=S, rho_energy=E, objective=S - lam * D + E, lam=lam,
                           method="exact-quadrature", extra={"D_terms": terms})


# ---------------------------------------------------------------------------
# adaptive feedback: the closed loop on phi = (x^c, x^a, dx) stays linear-Gaussian


@dataclass(frozen=True, eq=False)
class AdaptiveMoments:
    mean: GridFunction  # E phi, 3d
    cov: GridFunction  # Cov phi, 3d x 3d
    rho_mean: GridFunction


def adaptive_moments(model, filt, agent, strategy: AdaptiveFeedback) -> AdaptiveMoments:
    coef = adaptive_coefficients(model, filt, agent)
    Fp, fp, tau = strategy.rho_gains.F_phi, strategy.rho_gains.f_phi, strategy.tau.smooth()
    n = 3 * model.d

    def mean_rhs(t, m):
        k = coef(t)
        return (k.D - k.O @ Fp.at(t, "cubic")) @ m + k.d + k.G @ tau.at(t).reshape(-1) \
            - k.O @ fp.at(t, "cubic")

    def cov_rhs(t, C):
        k = coef(t)
        Acl = k.D - k.O @ Fp.at(t, "cubic")
        return Acl @ C + C @ Acl.T + k.Sigma

    mean = integrate(mean_rhs, phi0(model), model.grid)
    cov = integrate(cov_rhs, np.zeros((n, n)), model.grid, project=symmetrize)
    rho = np.array([strategy.feedback(k, *np.split(mean[k], 3)) for k in range(model.grid.n_nodes)])
    return AdaptiveMoments(mean, cov, GridFunction(model.grid, rho, "cubic"))


def exact_adaptive_objective(model, filt, agent, strategy: AdaptiveFeedback,
                             lam: float | None = None) -> ObjectiveReport:
    """Degradation, stealthiness and energy of the adaptive feedback from its Gaussian moments."""
    lam = model.lam if lam is None else float(lam)
    mom = adaptive_moments(model, filt, agent, strategy)
    mc = model_coefficients(model)
    d, g = model.d, model.grid
    cs, ce, cd = slice(0, d), slice(d, 2 * d), slice(2 * d, 3 * d)
    Dv, Sv, Ev = (np.empty(g.n_nodes) for _ in range(3))
    for k, t in enumerate(g.times):
        c = mc(t)
        m, C = mom.mean[k], mom.cov[k]
        F, f = agent.F[k], agent.f_vec[k]
        e = m[cs] - c.r
        v = F @ m[ce] + 0.5 * f
        Dv[k] = (np.trace(c.Q @ (C[cs, cs] + filt.R[k])) + e @ c.Q @ e
                 + np.trace(F @ c.K @ F @ C[ce, ce]) + v @ c.K @ v)
        w = c.H @ m[cd] + strategy.tau[k]
        HSH = c.H.T @ mc.Sw_inv @ c.H
        Sv[k] = 0.5 * (np.trace(HSH @ C[cd, cd]) + w @ mc.Sw_inv @ w)
        L = strategy._L[k]
        r = L @ m + strategy._l[k]
        Ev[k] = 0.5 * (np.trace(L.T @ c.P @ L @ C) + r @ c.P @ r)
    D, S, E = (quadrature(v, g) for v in (Dv, Sv, Ev))
    return ObjectiveReport(D=D, S=S, rho_energy=E, objective=S - lam * D + E, lam=lam,
                           method="exact-moments")


def exact_report(model, filt, agent, strategy, lam=None) -> ObjectiveReport:
    """Exact evaluation for any strategy that admits one (deterministic or adaptive feedback)."""
    if isinstance(strategy, AdaptiveFeedback):
        return exact_adaptive_objective(model, filt, agent, strategy, lam)
    if isinstance(strategy, (DeterministicPath, ZeroAttack)):
        return exact_objective(model, filt, agent, strategy, lam)
    if strategy.deterministic:
        g = model.grid
        rho, tau = strategy.paths(g, model.d, model.m)
        path = DeterministicPath(GridFunction(g, rho, "cubic"), GridFunction(g, tau, "cubic"),
                                 strategy.kind)
        return exact_objective(model, filt, agent, path, lam)
    raise TypeError(f"no exact evaluator for {strategy.kind} attacks")


# ---------------------------------------------------------------------------
# Monte Carlo


def _mc_reduce(plan: SimPlan, batch: TrajectoryBatch, chi2_window: int):
    h = plan.grid.h
    X, U, RHO = batch.X_c[:, :-1], batch.u_a[:, :-1], batch.rho[:, :-1]
    e = X - plan.r[None, :-1]
    cost = (np.einsum("nki,kij,nkj->n", e, plan.Q[:-1], e)
            + np.einsum("nki,kij,nkj->n", U, plan.S[:-1], U)) * h
    energy = 0.5 * h * np.einsum("nki,kij,nkj->n", RHO, plan.P[:-1], RHO)
    out = {
        "D": cost,
        "ll": log_likelihood_batch(plan, batch),
        "S_quad": stealth_quadratic_batch(plan, batch),
        "energy": energy,
    }
    if chi2_window:
        out["chi2"] = chi2_stats(batch.dI, chi2_window, h)[1]
    return out


def mc_samples(model, filt, agent, strategy: AttackStrategy, n_paths: int, base_seed: int,
               workers: int = 1, chi2_window: int = 50, plan=None) -> dict:
    """Per-path reduced statistics (arrays in path-index order)."""
    reducer = functools.partial(_mc_reduce, chi2_window=chi2_window)
    return simulate_batch(model, filt, agent, strategy, n_paths, base_seed, workers=workers,
                          reducer=reducer, plan=plan)


def _mean_se(x):
    x = np.asarray(x, dtype=float)
    se = float(x.std(ddof=1) / np.sqrt(len(x))) if len(x) > 1 else 0.0
    return float(x.mean()), se


def report_from_samples(samples: dict, lam: float, n_paths: int, base_seed: int) -> ObjectiveReport:
    obj = samples["ll"] - lam * samples["D"] + samples["energy"]
    D, D_se = _mean_se(samples["D"])
    S, S_se = _mean_se(samples["ll"])
    E, E_se = _mean_se(samples["energy"])
    O, O_se = _mean_se(obj)
    Sq, Sq_se = _mean_se(samples["S_quad"])
    return ObjectiveReport(D=D, S=S, rho_energy=E, objective=O, lam=lam, method="monte-carlo",
                           D_se=D_se, S_se=S_se, rho_energy_se=E_se, objective_se=O_se,
                           n_paths=n_paths, base_seed=base_seed,
                           extra={"S_quadratic": Sq, "S_quadratic_se": Sq_se})


def mc_objective(model, filt, agent, strategy: AttackStrategy, n_paths: int, base_seed: int,
                 workers: int = 1, chi2_window: int = 50, lam: float | None = None,
                 with_detection: bool = False):
    """Monte Carlo objective report; the stealth term is the self-scored log-likelihood."""
    lam = model.lam if lam is None else float(lam)
    plan = make_plan(model, filt, agent)
    samples = mc_samples(model, filt, agent, strategy, n_paths, base_seed, workers, chi2_window, plan)
    rep = report_from_samples(samples, lam, n_paths, base_seed)
    if not with_detection:
        return rep
    starts = np.arange(samples["chi2"].shape[1]) * chi2_window if chi2_window else []
    det = detection_summary(samples["ll"], samples.get("chi2", np.zeros((n_paths, 0))), starts,
                            chi2_window * model.m, model, strategy)
    return rep, det


# ---------------------------------------------------------------------------
# output

SWEEP_HEADER = ["lambda", "D", "S", "energy", "objective", "D_se", "S_se", "energy_se",
                "objective_se"]


def sweep_rows(reports):
    nan = float("nan")
    for r in reports:
        yield [r.lam, r.D, r.S, r.rho_energy, r.objective,
               nan if r.D_se is None else r.D_se, nan if r.S_se is None else r.S_se,
               nan if r.rho_energy_se is None else r.rho_energy_se,
               nan if r.objective_se is None else r.objective_se]


def write_sweep_csv(path, reports, config_sha=None):
    return write_csv(path, SWEEP_HEADER, list(sweep_rows(reports)), config_sha)

