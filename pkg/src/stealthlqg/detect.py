"""Detection: pathwise log-likelihood, stealthiness, the chi-square window test and the
Brownianity residual of deterministic attacks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaincc

from .attacks import DeterministicPath
from .coeffs import GridFunction
from .ode import RK8, integrate, quadrature
from .sim import SimPlan, TrajectoryBatch, TrajectoryBundle, delta_x_ode
from .synthesis import FilterGains, model_coefficients


class WindowError(ValueError):
    pass


class UnsupportedConfiguration(ValueError):
    pass


def _beta(plan: SimPlan, dX, tau):
    # whitened drift of the innovation, per node: Sw^{-1/2} (H dX + tau)
    v = np.einsum("kij,...kj->...ki", plan.H, dX) + tau
    return np.einsum("ij,...kj->...ki", plan.Sw_isqrt, v)


def log_likelihood_batch(plan: SimPlan, batch: TrajectoryBatch, dX=None, tau=None):
    """Per-path ``l`` with left-endpoint sums; ``dX``/``tau`` default to the batch's own (self-scoring)."""
    dX = batch.dX if dX is None else dX
    tau = batch.tau if tau is None else tau
    beta = _beta(plan, dX, tau)[..., :-1, :]
    h = plan.grid.h
    return np.einsum("...ki,...ki->...", beta, batch.dI) - 0.5 * h * np.einsum("...ki,...ki->...", beta, beta)


def log_likelihood(bundle: TrajectoryBundle, plan: SimPlan, candidate: DeterministicPath | None = None,
                   model=None, filt: FilterGains | None = None) -> float:
    """``l(I^a; rho, tau)`` for one path.

    Without a candidate the bundle scores itself.  A candidate attack gets its own
    discrepancy from the Euler-integrated discrepancy ODE (needs ``model`` and ``filt``).
    """
    if candidate is None:
        dX, tau = bundle.dX, bundle.tau
    else:
        if candidate.grid != plan.grid:
            raise ValueError("candidate attack grid does not match the bundle grid")
        if model is None or filt is None:
            raise ValueError("scoring a candidate attack needs the model and filter gains")
        dX = delta_x_ode(model, filt, candidate).values
        tau = candidate.tau.values.reshape(plan.grid.n_nodes, plan.m)
    if bundle.dI.shape[0] != plan.grid.n_steps:
        raise ValueError("bundle grid does not match the plan")
    return float(log_likelihood_batch(plan, bundle.as_batch(), dX[None], tau[None])[0])


def stealth_integrand(model, filt: FilterGains, delta_x, tau) -> np.ndarray:
    """Node values of ``1/2 (H dX + tau)' Sw^{-1} (H dX + tau)``."""
    mc = model_coefficients(model)
    dXv = np.asarray(getattr(delta_x, "values", delta_x)).reshape(model.grid.n_nodes, model.d)
    tv = np.asarray(getattr(tau, "values", tau)).reshape(model.grid.n_nodes, model.m)
    out = np.empty(model.grid.n_nodes)
    for k, t in enumerate(model.grid.times):
        v = mc(t).H @ dXv[k] + tv[k]
        out[k] = 0.5 * v @ mc.Sw_inv @ v
    return out


def stealthiness_closed_form(model, filt: FilterGains, delta_x, tau) -> float:
    """Quadrature of the stealth integrand for a deterministic discrepancy path."""
    return quadrature(stealth_integrand(model, filt, delta_x, tau), model.grid)


def stealth_quadratic_batch(plan: SimPlan, batch: TrajectoryBatch):
    """Per-path left-endpoint Riemann sum of the stealth integrand (MC form for feedback attacks)."""
    beta = _beta(plan, batch.dX, batch.tau)[..., :-1, :]
    return 0.5 * plan.grid.h * np.einsum("...ki,...ki->...", beta, beta)


def chi2_stats(dI, w: int, h: float):
    """Window statistics ``(1/h) sum |dI|^2`` over non-overlapping windows of ``w`` steps.

    ``dI`` has shape ``(..., n_steps, m)``; trailing steps that do not fill a window are dropped.
    Returns ``(starts, stats (..., n_windows), dof)``.
    """
    dI = np.asarray(dI, dtype=float)
    n_steps, m = dI.shape[-2], dI.shape[-1]
    if w < 1:
        raise WindowError("window must contain at least one step")
    if w > n_steps:
        raise WindowError(f"window of {w} steps exceeds the horizon ({n_steps} steps)")
    nw = n_steps // w
    sq = np.sum(dI[..., :nw * w, :] ** 2, axis=-1)
    stats = sq.reshape(sq.shape[:-1] + (nw, w)).sum(axis=-1) / h
    return np.arange(nw) * w, stats, w * m


def chi2_pvalue(stat, dof):
    """Upper tail of chi-square with ``dof`` degrees of freedom."""
    return gammaincc(0.5 * dof, 0.5 * np.asarray(stat, dtype=float))


def chi2_detector(dI, w: int, h: float):
    """List of ``(window start step, statistic, dof, p-value)`` for one path."""
    starts, stats, dof = chi2_stats(dI, w, h)
    p = chi2_pvalue(stats, dof)
    return [(int(s), float(x), int(dof), float(pv)) for s, x, pv in zip(starts, stats, p)]


def _check_commuting(model, n_sample=11, tol=1e-10):
    mc = model_coefficients(model)
    ts = np.linspace(0.0, model.T, n_sample)
    As = [mc(t).A for t in ts]
    for i in range(len(As)):
        for j in range(i + 1, len(As)):
            if np.max(np.abs(As[i] @ As[j] - As[j] @ As[i])) > tol:
                raise UnsupportedConfiguration(
                    "A_t does not commute across time; the closed-form Brownianity residual "
                    "is unavailable")


def attack_state(model, rho: GridFunction, tableau=RK8) -> GridFunction:
    """Solve ``z' = A z + rho`` from zero."""
    mc = model_coefficients(model)
    r = rho if rho.interp == "cubic" else rho.smooth()

    def rhs(t, z):
        return mc(t).A @ z + r.at(t).reshape(-1)

    return integrate(rhs, np.zeros(model.d), model.grid, tableau=tableau)


def detectability_residual(model, strategy: DeterministicPath, tableau=RK8) -> GridFunction:
    """``H z + tau`` where ``z' = A z + rho``; zero iff the innovation stays Brownian."""
    _check_commuting(model)
    z = attack_state(model, strategy.rho, tableau)
    mc = model_coefficients(model)
    tau = strategy.tau.values.reshape(model.grid.n_nodes, model.m)
    res = np.array([mc(t).H @ z[k] + tau[k] for k, t in enumerate(model.grid.times)])
    return GridFunction(model.grid, res)


def cancelling_tau(model, rho: GridFunction, tableau=RK8) -> GridFunction:
    """The observation attack that hides ``rho`` from the innovation: ``tau = -H z``."""
    _check_commuting(model)
    z = attack_state(model, rho, tableau)
    mc = model_coefficients(model)
    return GridFunction(model.grid, np.array([-mc(t).H @ z[k] for k, t in enumerate(model.grid.times)]),
                        "cubic")


@dataclass
class DetectionReport:
    log_likelihood: float | None = None
    log_likelihood_se: float | None = None
    chi2_windows: list = field(default_factory=list)
    chi2_mean: float | None = None
    chi2_dof: int | None = None
    detectability_residual_sup: float | None = None
    per_path_ll: list | None = None

    def to_dict(self) -> dict:
        out = {k: v for k, v in self.__dict__.items() if v is not None}
        out["chi2_windows"] = [
            {"start": s, "statistic": x, "dof": dof, "p_value": p} for s, x, dof, p in self.chi2_windows
        ]
        return out


def detection_summary(ll, chi2, starts, dof, model=None, strategy=None,
                      keep_paths=False) -> DetectionReport:
    """Summarize per-path ``l`` values and per-path window statistics ``chi2 (n, n_windows)``."""
    ll = np.asarray(ll, dtype=float)
    chi2 = np.asarray(chi2, dtype=float)
    mean_stats = chi2.mean(axis=0)
    rep = DetectionReport(
        log_likelihood=float(ll.mean()),
        log_likelihood_se=float(ll.std(ddof=1) / np.sqrt(len(ll))) if len(ll) > 1 else 0.0,
        chi2_windows=[(int(s), float(x), int(dof), float(chi2_pvalue(x, dof)))
                      for s, x in zip(starts, mean_stats)],
        chi2_mean=float(chi2.mean()), chi2_dof=int(dof),
        per_path_ll=ll.tolist() if keep_paths else None,
    )
    if model is not None and isinstance(strategy, DeterministicPath):
        try:
            rep.detectability_residual_sup = detectability_residual(model, strategy).sup_norm()
        except UnsupportedConfiguration:
            pass
    return rep
