"""Gain ODE systems: filter covariance, agent LQ gains, and the optimal attack gains.

Conventions: ``Sw = sigma_W sigma_W^T``, ``K = B S^{-1} B^T``, ``T_cal = R H^T Sw^{-1}``,
``Theta = T_cal H`` and ``Lambda = T_cal Sw T_cal^T``.  The adaptive systems live
on the augmented state ``phi = (x^c, x^a, dx)`` of dimension ``3d``.
"""

from __future__ import annotations

import logging
import math
import weakref
from dataclasses import dataclass, field, replace
from types import SimpleNamespace

import numpy as np

from .coeffs import GridFunction, sym_sqrt_inv, symmetrize
from .model import SystemModel
from .ode import RK8, OdeDivergence, integrate, quadrature

log = logging.getLogger(__name__)


class SolverDivergence(OdeDivergence):
    """A gain Riccati system escaped; ``bound`` carries the sufficient horizon bound if known."""

    def __init__(self, msg, t=None, system="", bound=None):
        super().__init__(msg, t)
        self.system = system
        self.bound = bound


# ---------------------------------------------------------------------------
# coefficient evaluation


class ModelCoefficients:
    """Cached pointwise evaluation of model coefficients and their simple products."""

    def __init__(self, model: SystemModel):
        self.model = model
        self.Sw = model.sigma_W @ model.sigma_W.T
        self.Sw_sqrt, self.Sw_isqrt, self.Sw_inv = sym_sqrt_inv(self.Sw)
        self.VV = model.sigma_V @ model.sigma_V.T
        self._cache: dict[float, SimpleNamespace] = {}

    def __call__(self, t: float) -> SimpleNamespace:
        c = self._cache.get(t)
        if c is None:
            m = self.model
            A, B, S, P = m.A(t), m.B(t), m.S(t), m.P(t)
            Sinv = np.linalg.inv(S)
            c = SimpleNamespace(
                A=A, B=B, H=m.H(t), a=m.a(t)[:, 0], h=m.h(t)[:, 0], Q=m.Q(t), S=S,
                r=m.r(t)[:, 0], P=P, Sinv=Sinv, Pinv=np.linalg.inv(P), K=symmetrize(B @ Sinv @ B.T),
            )
            if len(self._cache) < 200_000:
                self._cache[t] = c
        return c


_COEF_CACHE: "weakref.WeakKeyDictionary[SystemModel, ModelCoefficients]" = weakref.WeakKeyDictionary()


def model_coefficients(model: SystemModel) -> ModelCoefficients:
    mc = _COEF_CACHE.get(model)
    if mc is None:
        mc = _COEF_CACHE[model] = ModelCoefficients(model)
    return mc


# ---------------------------------------------------------------------------
# filter and agent


@dataclass(frozen=True, eq=False)
class FilterGains:
    R: GridFunction
    T_cal: GridFunction
    Theta: GridFunction
    Lambda: GridFunction
    Sw: np.ndarray
    Sw_inv: np.ndarray
    Sw_isqrt: np.ndarray

    def at(self, t, H):
        """``(R, T_cal, Theta, Lambda)`` at an arbitrary time, built from interpolated ``R``."""
        R = self.R.at(t, "cubic")
        Tc = R @ H.T @ self.Sw_inv
        return R, Tc, Tc @ H, symmetrize(Tc @ self.Sw @ Tc.T)


@dataclass(frozen=True, eq=False)
class AgentGains:
    F: GridFunction
    f_vec: GridFunction
    K: GridFunction


def _derived_filter(model, R: GridFunction) -> FilterGains:
    mc = model_coefficients(model)
    Tc, Th, Lam = [], [], []
    for k, t in enumerate(model.grid.times):
        H = mc(t).H
        tk = R[k] @ H.T @ mc.Sw_inv
        Tc.append(tk)
        Th.append(tk @ H)
        Lam.append(symmetrize(tk @ mc.Sw @ tk.T))
    g = model.grid
    return FilterGains(R, GridFunction(g, np.array(Tc)), GridFunction(g, np.array(Th)),
                       GridFunction(g, np.array(Lam)), mc.Sw, mc.Sw_inv, mc.Sw_isqrt)


def filter_rhs(model):
    mc = model_coefficients(model)

    def rhs(t, R):
        c = mc(t)
        RH = R @ c.H.T
        return c.A @ R + R @ c.A.T + mc.VV - RH @ mc.Sw_inv @ RH.T

    return rhs


def solve_filter(model: SystemModel, tableau=RK8) -> FilterGains:
    """Forward filtering Riccati equation from ``R0``."""
    R = integrate(filter_rhs(model), model.R0, model.grid, tableau=tableau, project=symmetrize)
    return _derived_filter(model, R)


def agent_rhs(model):
    mc = model_coefficients(model)
    d = model.d

    def rhs(t, X):
        c = mc(t)
        F, f = X[:, :d], X[:, d]
        FK = F @ c.K
        dF = -(c.A.T @ F + F @ c.A + c.Q - FK @ F)
        df = -(c.A.T @ f + 2 * F @ c.a - 2 * c.Q @ c.r - FK @ f)
        return np.column_stack([dF, df])

    return rhs


def _sym_block(d):
    def project(X):
        X = X.copy()
        X[:, :d] = symmetrize(X[:, :d])
        return X
    return project


def solve_agent(model: SystemModel, tableau=RK8) -> AgentGains:
    """Backward LQ tracking gains ``F``, ``f`` with zero terminal data."""
    d, g = model.d, model.grid
    X = integrate(agent_rhs(model), np.zeros((d, d + 1)), g, backward=True,
                  tableau=tableau, project=_sym_block(d))
    mc = model_coefficients(model)
    K = np.array([mc(t).K for t in g.times])
    return AgentGains(GridFunction(g, X.values[:, :, :d], "cubic"),
                      GridFunction(g, X.values[:, :, d], "cubic"), GridFunction(g, K))


def agent_at(agent: AgentGains, t):
    return agent.F.at(t, "cubic"), agent.f_vec.at(t, "cubic")


# ---------------------------------------------------------------------------
# existence interval of the deterministic-attack system


def _sup_norm(gf_values) -> float:
    return float(max(np.linalg.norm(v, 2) for v in gf_values))


def existence_bound(model: SystemModel, filt: FilterGains, agent: AgentGains) -> float:
    """Sufficient horizon bound for the deterministic-attack Riccati system.

    Returns ``inf`` when the denominator vanishes.
    """
    mc = model_coefficients(model)
    times = model.grid.times
    A = [mc(t).A for t in times]
    Q = [mc(t).Q for t in times]
    Pinv = [mc(t).Pinv for t in times]
    K = agent.K.values
    F = agent.F.values
    KF = [K[k] @ F[k] for k in range(len(times))]
    FKF = [F[k] @ K[k] @ F[k] for k in range(len(times))]
    AmKF = [A[k] - KF[k] for k in range(len(times))]
    b_P = max(_sup_norm(A), _sup_norm(AmKF)) + _sup_norm(KF)
    p = 2 * model.lam * max(_sup_norm(Q), _sup_norm(FKF)) + b_P
    q = max(_sup_norm(Pinv), _sup_norm(filt.Lambda.values)) + b_P
    if p * q <= 0.0:
        return math.inf
    return (math.pi / 2) / math.sqrt(p * q)


# ---------------------------------------------------------------------------
# deterministic attack


@dataclass(frozen=True, eq=False)
class DetAttackGains:
    M: GridFunction  # [[Fc, Fa], [Gc, Ga]], 2d x 2d
    g: GridFunction  # (f_rho, g_tau), 2d
    bound: float
    warnings: tuple = ()

    @property
    def d(self):
        return self.M.shape[0] // 2

    def _block(self, i, j):
        d = self.d
        return GridFunction(self.M.grid, self.M.values[:, i * d:(i + 1) * d, j * d:(j + 1) * d], "cubic")

    @property
    def Fc(self):
        return self._block(0, 0)

    @property
    def Fa(self):
        return self._block(0, 1)

    @property
    def Gc(self):
        return self._block(1, 0)

    @property
    def Ga(self):
        return self._block(1, 1)

    @property
    def f_rho(self):
        return GridFunction(self.g.grid, self.g.values[:, :self.d], "cubic")

    @property
    def g_tau(self):
        return GridFunction(self.g.grid, self.g.values[:, self.d:], "cubic")


def _blocks(rows, d):
    """Assemble a block matrix from a nested list of d x d blocks (``None`` means zero)."""
    out = np.zeros((len(rows) * d, len(rows[0]) * d))
    for i, row in enumerate(rows):
        for j, blk in enumerate(row):
            if blk is not None:
                out[i * d:(i + 1) * d, j * d:(j + 1) * d] = blk
    return out


class _Memo:
    """Per-time memo for coefficient assemblies; RK stage times repeat across solves."""

    def __init__(self):
        self._cache = {}

    def __call__(self, t):
        v = self._cache.get(t)
        if v is None:
            v = self._build(t)
            if len(self._cache) < 100_000:
                self._cache[t] = v
        return v


class DetCoefficients(_Memo):
    """Block coefficients of the deterministic-attack Riccati system at time ``t``."""

    def __init__(self, model, filt, agent):
        super().__init__()
        self.model, self.filt, self.agent = model, filt, agent
        self.mc = model_coefficients(model)

    def _build(self, t):
        c = self.mc(t)
        d, lam = self.model.d, self.model.lam
        _, Tc, Th, Lam = self.filt.at(t, c.H)
        F, f = agent_at(self.agent, t)
        KF = c.K @ F
        Pcal = _blocks([[c.A, -KF], [None, c.A - KF]], d)
        Rcal = _blocks([[c.Pinv, None], [None, Lam]], d)
        Qcal = _blocks([[-2 * lam * c.Q, None], [None, -2 * lam * F @ KF]], d)
        alpha = c.a - 0.5 * c.K @ f
        src = np.concatenate([2 * lam * c.Q @ c.r, -lam * F @ c.K @ f])
        return SimpleNamespace(c=c, F=F, f=f, KF=KF, Lam=Lam, Tc=Tc, Theta=Th, Pcal=Pcal,
                               Rcal=Rcal, Qcal=Qcal, alpha=alpha, src=src)


def det_rhs(model, filt, agent):
    coef = DetCoefficients(model, filt, agent)
    n = 2 * model.d

    def rhs(t, X):
        k = coef(t)
        M, g = X[:, :n], X[:, n]
        MR = M @ k.Rcal
        dM = -(k.Pcal.T @ M + M @ k.Pcal - MR @ M + k.Qcal)
        dg = -((k.Pcal.T - MR) @ g + M @ np.concatenate([k.alpha, k.alpha]) + k.src)
        return np.column_stack([dM, dg])

    return rhs


def solve_det_attack(model, filt, agent, tableau=RK8) -> DetAttackGains:
    """Coupled backward system for ``Fc, Fa, Gc, Ga, f_rho, g_tau`` (stacked as one state)."""
    n = 2 * model.d
    bound = existence_bound(model, filt, agent)
    warn = ()
    if model.lam > 0 and model.T >= bound:
        warn = (f"horizon T={model.T} is not below the sufficient existence bound {bound:.4g}",)
        log.warning(warn[0])
    try:
        X = integrate(det_rhs(model, filt, agent), np.zeros((n, n + 1)), model.grid,
                      backward=True, tableau=tableau, project=_sym_block(n))
    except OdeDivergence as exc:
        raise SolverDivergence(
            f"deterministic-attack gains diverged at t={exc.t:.4g} (lambda={model.lam}); "
            f"sufficient horizon bound is {bound:.4g}", exc.t, "det", bound) from exc
    return DetAttackGains(GridFunction(model.grid, X.values[:, :, :n], "cubic"),
                          GridFunction(model.grid, X.values[:, :, n], "cubic"), bound, warn)


# ---------------------------------------------------------------------------
# adaptive attack


@dataclass(frozen=True, eq=False)
class AdaptiveRhoGains:
    F_phi: GridFunction
    trace_constant: float  # lam * int Tr(Q R) dt, dropped from the value function
    f_phi: GridFunction | None = None
    c_phi: GridFunction | None = None
    tau: GridFunction | None = None

    @property
    def completed(self) -> bool:
        return self.f_phi is not None


@dataclass(frozen=True, eq=False)
class AdaptiveTauGains:
    F_tau: GridFunction
    f_tau: GridFunction
    Phi0: np.ndarray
    G: GridFunction
    Q_F: GridFunction
    tau_star: GridFunction
    f_phi: GridFunction  # from the reflected closed loop
    loop_gap: float = 0.0  # sup |tau rebuilt from the closed loop - tau_star|


class AdaptiveCoefficients(_Memo):
    """Coefficients of the adaptive-attack systems on ``phi = (x^c, x^a, dx)``."""

    def __init__(self, model, filt, agent):
        super().__init__()
        self.model, self.filt, self.agent = model, filt, agent
        self.mc = model_coefficients(model)
        d = model.d
        I, Z = np.eye(d), np.zeros((d, d))
        self.e_c = np.vstack([I, Z, Z])
        self.e_a = np.vstack([Z, I, Z])
        self.e_dx = np.vstack([Z, Z, I])
        self.e_rho = self.e_c + self.e_dx

    def _build(self, t):
        c = self.mc(t)
        lam, d = self.model.lam, self.model.d
        _, Tc, Th, Lam = self.filt.at(t, c.H)
        F, f = agent_at(self.agent, t)
        KF = c.K @ F
        D = _blocks([[c.A, -KF, None], [Th, c.A - KF - Th, None], [None, None, c.A - Th]], d)
        alpha = c.a - 0.5 * c.K @ f
        dphi = np.concatenate([alpha, alpha, np.zeros(d)])
        O = self.e_rho @ c.Pinv @ self.e_rho.T
        ell = 2 * lam * self.e_c @ c.Q @ c.r - lam * self.e_a @ F @ c.K @ f
        HSH = c.H.T @ self.mc.Sw_inv @ c.H
        Qphi = (0.5 * self.e_dx @ HSH @ self.e_dx.T - lam * self.e_a @ F @ KF @ self.e_a.T
                - lam * self.e_c @ c.Q @ self.e_c.T)
        G = np.vstack([np.zeros((d, Tc.shape[1])), Tc, -Tc])
        Sigma = _blocks([[Lam, Lam, None], [Lam, Lam, None], [None, None, None]], d)
        Cphi = -lam * (c.r @ c.Q @ c.r + 0.25 * f @ c.K @ f)
        return SimpleNamespace(c=c, F=F, f=f, KF=KF, Tc=Tc, Theta=Th, Lam=Lam, D=D, d=dphi,
                               O=O, ell=ell, Qphi=symmetrize(Qphi), G=G, Sigma=Sigma, Cphi=Cphi)

    def tau_terms(self, k, tau):
        """``(d^tau, ell^tau, C^tau)`` for an observation attack value ``tau``."""
        Sw_inv = self.mc.Sw_inv
        return k.G @ tau, self.e_dx @ k.c.H.T @ Sw_inv @ tau, 0.5 * tau @ Sw_inv @ tau


_ADAPTIVE_CACHE: "weakref.WeakKeyDictionary[AgentGains, tuple]" = weakref.WeakKeyDictionary()


def adaptive_coefficients(model, filt, agent) -> AdaptiveCoefficients:
    """Shared (memoized) coefficient object for one ``(model, filter, agent)`` triple."""
    hit = _ADAPTIVE_CACHE.get(agent)
    if hit is not None and hit[0] is model and hit[1] is filt:
        return hit[2]
    coef = AdaptiveCoefficients(model, filt, agent)
    _ADAPTIVE_CACHE[agent] = (model, filt, coef)
    return coef


def F_phi_rhs(model, filt, agent):
    coef = adaptive_coefficients(model, filt, agent)

    def rhs(t, F):
        k = coef(t)
        return -(-F @ k.O @ F + F @ k.D + k.D.T @ F + 2 * k.Qphi)

    return rhs


def trace_constant(model, filt) -> float:
    mc = model_coefficients(model)
    vals = np.array([np.trace(mc(t).Q @ filt.R[k]) for k, t in enumerate(model.grid.times)])
    return model.lam * quadrature(vals, model.grid)


def solve_adaptive_rho(model, filt, agent, tableau=RK8) -> AdaptiveRhoGains:
    """Backward Riccati equation for ``F^phi``; the tau-dependent parts are solved later."""
    n = 3 * model.d
    try:
        F = integrate(F_phi_rhs(model, filt, agent), np.zeros((n, n)), model.grid,
                      backward=True, tableau=tableau, project=symmetrize)
    except OdeDivergence as exc:
        raise SolverDivergence(
            f"adaptive F^phi diverged at t={exc.t:.4g} (lambda={model.lam}); "
            "try a smaller lambda or a shorter horizon", exc.t, "F_phi") from exc
    return AdaptiveRhoGains(F, trace_constant(model, filt))


def phi0(model) -> np.ndarray:
    return np.concatenate([model.x0, model.x0, np.zeros(model.d)])


class _TauCoefficients(_Memo):
    def __init__(self, model, filt, agent, rho_gains):
        super().__init__()
        self.coef = adaptive_coefficients(model, filt, agent)
        self.F_phi = rho_gains.F_phi
        self.Sw = self.coef.mc.Sw
        self.Sw_inv = self.coef.mc.Sw_inv

    def _build(self, s):
        k = self.coef(s)
        Fp = self.F_phi.at(s, "cubic")
        QF = Fp @ k.G @ self.Sw + self.coef.e_dx @ k.c.H.T
        At = k.D.T - Fp @ k.O - QF @ k.G.T
        N = symmetrize(QF @ self.Sw_inv @ QF.T)
        Ocal = symmetrize(k.O + k.G @ self.Sw @ k.G.T)
        return SimpleNamespace(k=k, Fp=Fp, QF=QF, At=At, N=N, Ocal=Ocal, b=Fp @ k.d + k.ell)


def tau_rhs(model, filt, agent, rho_gains):
    tc = _TauCoefficients(model, filt, agent, rho_gains)
    n = 3 * model.d
    Phi0 = phi0(model)

    def rhs(s, X):
        z = tc(s)
        Ft, ft = X[:, :n], X[:, n]
        w = ft + Phi0
        dF = Ft @ z.At + z.At.T @ Ft - Ft @ z.N @ Ft - z.Ocal
        df = Ft @ (z.b - z.N @ w) + z.At.T @ w + z.k.d
        return np.column_stack([dF, df])

    return rhs, tc


def tau_from_gains(z, Ft, ft, f_phi, Phi0, Sw):
    """Optimal observation attack at one time from the stored gains."""
    return -z.QF.T @ (Ft @ f_phi + ft + Phi0) - Sw @ z.k.G.T @ f_phi


def solve_adaptive_tau(model, filt, agent, rho_gains: AdaptiveRhoGains,
                       tableau=RK8) -> AdaptiveTauGains:
    """Forward system for ``(F^tau, f^tau)`` then the time-reflected closed loop for ``tau*``."""
    g = model.grid
    n = 3 * model.d
    Phi0 = phi0(model)
    rhs, tc = tau_rhs(model, filt, agent, rho_gains)
    try:
        X = integrate(rhs, np.zeros((n, n + 1)), g, tableau=tableau, project=_sym_block(n))
    except OdeDivergence as exc:
        raise SolverDivergence(
            f"adaptive F^tau diverged at t={exc.t:.4g} (lambda={model.lam}); "
            "the observation-attack system is only solvable on short horizons", exc.t,
            "F_tau") from exc
    F_tau = GridFunction(g, X.values[:, :, :n], "cubic")
    f_tau = GridFunction(g, X.values[:, :, n], "cubic")

    T = g.T

    def u_rhs(t, U):
        s = T - t
        z = tc(s)
        Ft, ft = F_tau.at(s, "cubic"), f_tau.at(s, "cubic")
        return z.At @ U + z.b - z.N @ (Ft @ U + ft + Phi0)

    U = integrate(u_rhs, np.zeros(n), g, tableau=tableau)
    f_phi = GridFunction(g, U.values[::-1].copy(), "cubic")

    taus, Gs, QFs = [], [], []
    for k, s in enumerate(g.times):
        z = tc(s)
        taus.append(tau_from_gains(z, F_tau[k], f_tau[k], f_phi[k], Phi0, tc.Sw))
        Gs.append(z.k.G)
        QFs.append(z.QF)
    tau_star = GridFunction(g, np.array(taus), "cubic")
    return AdaptiveTauGains(F_tau, f_tau, Phi0, GridFunction(g, np.array(Gs)),
                            GridFunction(g, np.array(QFs)), tau_star, f_phi)


def f_phi_c_rhs(model, filt, agent, rho_gains, tau: GridFunction):
    coef = adaptive_coefficients(model, filt, agent)
    n = 3 * model.d
    F_phi = rho_gains.F_phi

    def rhs(t, X):
        k = coef(t)
        Fp = F_phi.at(t, "cubic")
        f = X[:n]
        dt_, lt_, Ct_ = coef.tau_terms(k, tau.at(t, "cubic"))
        dd = k.d + dt_
        Of = k.O @ f
        df = -(-Fp @ Of + Fp @ dd + k.D.T @ f + k.ell + lt_)
        dc = -(0.5 * np.sum(k.Sigma * Fp) - 0.5 * f @ Of + f @ dd + k.Cphi + Ct_)
        return np.concatenate([df, [dc]])

    return rhs


def solve_f_phi_c_phi(model, filt, agent, rho_gains: AdaptiveRhoGains, tau: GridFunction,
                      tableau=RK8) -> AdaptiveRhoGains:
    """Backward linear ODEs for ``f^phi`` and ``c^phi`` under a fixed observation attack."""
    n = 3 * model.d
    tau = tau if tau.interp == "cubic" else tau.smooth()
    X = integrate(f_phi_c_rhs(model, filt, agent, rho_gains, tau), np.zeros(n + 1),
                  model.grid, backward=True, tableau=tableau)
    g = model.grid
    return replace(rho_gains, f_phi=GridFunction(g, X.values[:, :n], "cubic"),
                   c_phi=GridFunction(g, X.values[:, n], "cubic"), tau=tau)


def adaptive_value(rho_gains: AdaptiveRhoGains, Phi0) -> float:
    """Value function at ``(0, Phi0)``: ``1/2 Phi0' F Phi0 + Phi0' f + c``."""
    if not rho_gains.completed:
        raise ValueError("f^phi and c^phi have not been solved")
    Phi0 = np.asarray(Phi0, dtype=float)
    return float(0.5 * Phi0 @ rho_gains.F_phi[0] @ Phi0 + Phi0 @ rho_gains.f_phi[0]
                 + rho_gains.c_phi[0])


def adaptive_objective(rho_gains: AdaptiveRhoGains, Phi0) -> float:
    """Full adaptive objective (the value plus the dropped trace term)."""
    return adaptive_value(rho_gains, Phi0) - rho_gains.trace_constant


# ---------------------------------------------------------------------------
# bundle


@dataclass(frozen=True, eq=False)
class GainSet:
    model: SystemModel
    filter: FilterGains
    agent: AgentGains
    det: DetAttackGains | None = None
    rho: AdaptiveRhoGains | None = None
    tau: AdaptiveTauGains | None = None
    warnings: tuple = field(default=())


def solve_all(model: SystemModel, det: bool = True, adaptive: bool = False,
              tableau=RK8) -> GainSet:
    filt = solve_filter(model, tableau)
    agent = solve_agent(model, tableau)
    dg = solve_det_attack(model, filt, agent, tableau) if det else None
    rho = tau = None
    if adaptive:
        rho = solve_adaptive_rho(model, filt, agent, tableau)
        tau = solve_adaptive_tau(model, filt, agent, rho, tableau)
        rho = solve_f_phi_c_phi(model, filt, agent, rho, tau.tau_star, tableau)
        z = _TauCoefficients(model, filt, agent, rho)
        tau_loop = np.array([tau_from_gains(z(s), tau.F_tau[k], tau.f_tau[k], rho.f_phi[k],
                                            tau.Phi0, z.Sw) for k, s in enumerate(model.grid.times)])
        tau = replace(tau, loop_gap=float(np.max(np.abs(tau_loop - tau.tau_star.values))))
    warn = dg.warnings if dg is not None else ()
    return GainSet(model, filt, agent, dg, rho, tau, warn)
