"""Euler-Maruyama simulation of the attacked closed loop.

Paths are simulated in fixed chunks of consecutive path indices; each path draws its
noise from its own stream, so any split of chunks over worker processes reproduces the
same numbers bit for bit.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields

import numpy as np

from .attacks import AttackStrategy, DeterministicPath
from .coeffs import GridFunction, psd_sqrt
from .io import matrix_header, write_csv
from .ode import EULER, integrate
from .synthesis import AgentGains, FilterGains, model_coefficients

CHUNK = 256


class SimulationError(FloatingPointError):
    def __init__(self, msg, path_index=None, step=None):
        super().__init__(msg)
        self.path_index = path_index
        self.step = step


@dataclass(frozen=True)
class NoiseStream:
    """Per-path Gaussian stream keyed by ``(base_seed, path_index)``."""

    base_seed: int
    path_index: int

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([int(self.base_seed), int(self.path_index)]))

    def draw(self, n_steps, h, d, p, q):
        """``(z0, dV, dW)``: initial-state normals first, then per-step increments."""
        g = self.rng()
        z0 = g.standard_normal(d)
        inc = g.standard_normal((n_steps, p + q)) * math.sqrt(h)
        return z0, inc[:, :p], inc[:, p:]


@dataclass(frozen=True, eq=False)
class SimPlan:
    """Node arrays of every coefficient the simulator reads (no interpolation)."""

    grid: object
    d: int
    m: int
    c: int
    p: int
    q: int
    A: np.ndarray
    B: np.ndarray
    H: np.ndarray
    a: np.ndarray
    hc: np.ndarray
    Lu: np.ndarray  # u = Lu x_a_hat + lu
    lu: np.ndarray
    Tc: np.ndarray
    Q: np.ndarray
    S: np.ndarray
    r: np.ndarray
    P: np.ndarray
    sigma_V: np.ndarray
    sigma_W: np.ndarray
    Sw_isqrt: np.ndarray
    Sw_inv: np.ndarray
    x0: np.ndarray
    R0_sqrt: np.ndarray


def make_plan(model, filt: FilterGains, agent: AgentGains) -> SimPlan:
    mc = model_coefficients(model)
    g = model.grid
    cs = [mc(t) for t in g.times]
    Sinv_Bt = np.array([c.Sinv @ c.B.T for c in cs])
    Lu = -np.einsum("kij,kjl->kil", Sinv_Bt, agent.F.values)
    lu = -0.5 * np.einsum("kij,kj->ki", Sinv_Bt, agent.f_vec.values)
    return SimPlan(
        grid=g, d=model.d, m=model.m, c=model.c, p=model.p, q=model.q,
        A=np.array([c.A for c in cs]), B=np.array([c.B for c in cs]),
        H=np.array([c.H for c in cs]), a=np.array([c.a for c in cs]),
        hc=np.array([c.h for c in cs]), Lu=Lu, lu=lu, Tc=filt.T_cal.values,
        Q=np.array([c.Q for c in cs]), S=np.array([c.S for c in cs]),
        r=np.array([c.r for c in cs]), P=np.array([c.P for c in cs]),
        sigma_V=model.sigma_V, sigma_W=model.sigma_W, Sw_isqrt=mc.Sw_isqrt, Sw_inv=mc.Sw_inv,
        x0=model.x0, R0_sqrt=psd_sqrt(model.R0),
    )


@dataclass(frozen=True, eq=False)
class TrajectoryBatch:
    """Stacked realizations; every array has a leading path axis, then the node axis."""

    path_indices: np.ndarray
    t: np.ndarray
    X_c: np.ndarray
    Y_c: np.ndarray
    Xa_hat: np.ndarray
    Xc_hat: np.ndarray
    dX: np.ndarray
    I_a: np.ndarray
    u_a: np.ndarray
    rho: np.ndarray
    tau: np.ndarray
    dI: np.ndarray  # innovation increments, one per step

    @property
    def n_paths(self):
        return len(self.path_indices)

    def path(self, i) -> "TrajectoryBundle":
        kw = {f.name: getattr(self, f.name)[i] for f in fields(self)
              if f.name not in ("path_indices", "t")}
        return TrajectoryBundle(int(self.path_indices[i]), self.t, **kw)

    @staticmethod
    def concat(batches) -> "TrajectoryBatch":
        batches = list(batches)
        kw = {f.name: np.concatenate([getattr(b, f.name) for b in batches])
              for f in fields(TrajectoryBatch) if f.name != "t"}
        return TrajectoryBatch(t=batches[0].t, **kw)


@dataclass(frozen=True, eq=False)
class TrajectoryBundle:
    """One simulated realization on the grid."""

    path_index: int
    t: np.ndarray
    X_c: np.ndarray
    Y_c: np.ndarray
    Xa_hat: np.ndarray
    Xc_hat: np.ndarray
    dX: np.ndarray
    I_a: np.ndarray
    u_a: np.ndarray
    rho: np.ndarray
    tau: np.ndarray
    dI: np.ndarray

    def as_batch(self) -> TrajectoryBatch:
        kw = {f.name: getattr(self, f.name)[None] for f in fields(self)
              if f.name not in ("path_index", "t")}
        return TrajectoryBatch(np.array([self.path_index]), self.t, **kw)


def _mv(M, X):
    # stack of row vectors times a fixed matrix transpose: X @ M.T, path by path
    return np.einsum("ij,nj->ni", M, X)


def _xa_step(plan, k, Xa, u, dY):
    """Attack-unaware filter step; sees only the observation increment and model data."""
    h = plan.grid.h
    innov = dY - (_mv(plan.H[k], Xa) + plan.hc[k]) * h
    return Xa + (_mv(plan.A[k], Xa) + _mv(plan.B[k], u) + plan.a[k]) * h + _mv(plan.Tc[k], innov), innov


def simulate_chunk(plan: SimPlan, strategy: AttackStrategy, base_seed: int, indices) -> TrajectoryBatch:
    g = plan.grid
    N, h = g.n_steps, g.h
    d, m, c = plan.d, plan.m, plan.c
    n = len(indices)
    z0 = np.empty((n, d))
    dV = np.empty((n, N, plan.p))
    dW = np.empty((n, N, plan.q))
    for i, idx in enumerate(indices):
        z0[i], dV[i], dW[i] = NoiseStream(base_seed, idx).draw(N, h, d, plan.p, plan.q)
    if strategy.deterministic:
        rho_nodes, tau_nodes = strategy.paths(g, d, m)
        draws = None
    else:
        rho_nodes = tau_nodes = None
        draws = strategy.draws(base_seed, indices, g, d, m)

    shape = (n, N + 1)
    X = np.empty(shape + (d,))
    Y = np.zeros(shape + (m,))
    Xa = np.empty(shape + (d,))
    Xch = np.empty(shape + (d,))
    dX = np.empty(shape + (d,))
    I = np.zeros(shape + (m,))
    U = np.empty(shape + (c,))
    RHO = np.empty(shape + (d,))
    TAU = np.empty(shape + (m,))
    dI = np.empty((n, N, m))

    X[:, 0] = plan.x0 + _mv(plan.R0_sqrt, z0)
    Xa[:, 0] = plan.x0
    Xch[:, 0] = plan.x0
    dX[:, 0] = 0.0
    sV, sW = plan.sigma_V, plan.sigma_W

    def controls(k):
        U[:, k] = _mv(plan.Lu[k], Xa[:, k]) + plan.lu[k]
        if rho_nodes is not None:
            RHO[:, k] = rho_nodes[k]
            TAU[:, k] = tau_nodes[k]
        else:
            r, t = strategy.batch(k, Xch[:, k], Xa[:, k], dX[:, k], draws)
            RHO[:, k] = r
            TAU[:, k] = t

    for k in range(N):
        controls(k)
        xc, u, rho, tau = X[:, k], U[:, k], RHO[:, k], TAU[:, k]
        A, B = plan.A[k], plan.B[k]
        Bu = _mv(B, u)
        X[:, k + 1] = xc + (_mv(A, xc) + Bu + plan.a[k] + rho) * h + _mv(sV, dV[:, k])
        dY = (_mv(plan.H[k], xc) + plan.hc[k] + tau) * h + _mv(sW, dW[:, k])
        Y[:, k + 1] = Y[:, k] + dY
        Xa[:, k + 1], innov = _xa_step(plan, k, Xa[:, k], u, dY)
        xch = Xch[:, k]
        innov_c = dY - (_mv(plan.H[k], xch) + plan.hc[k] + tau) * h
        Xch[:, k + 1] = xch + (_mv(A, xch) + Bu + plan.a[k] + rho) * h + _mv(plan.Tc[k], innov_c)
        dX[:, k + 1] = Xch[:, k + 1] - Xa[:, k + 1]
        dI[:, k] = _mv(plan.Sw_isqrt, innov)
        I[:, k + 1] = I[:, k] + dI[:, k]
        if not np.isfinite(X[:, k + 1]).all() or not np.isfinite(Xch[:, k + 1]).all():
            bad = int(np.nonzero(~np.isfinite(X[:, k + 1]).all(axis=1)
                                 | ~np.isfinite(Xch[:, k + 1]).all(axis=1))[0][0])
            raise SimulationError(f"non-finite state at step {k + 1} on path {indices[bad]}",
                                  int(indices[bad]), k + 1)
    controls(N)
    return TrajectoryBatch(np.asarray(indices), g.times, X, Y, Xa, Xch, dX, I, U, RHO, TAU, dI)


def simulate_path(model, filt, agent, strategy, noise: NoiseStream, plan: SimPlan | None = None):
    plan = plan or make_plan(model, filt, agent)
    return simulate_chunk(plan, strategy, noise.base_seed, [noise.path_index]).path(0)


# ---------------------------------------------------------------------------
# batches

_WORKER = {}


def _init_worker(plan, strategy, reducer, base_seed):
    _WORKER.update(plan=plan, strategy=strategy, reducer=reducer, base_seed=base_seed)


def _run_chunk(indices):
    w = _WORKER
    batch = simulate_chunk(w["plan"], w["strategy"], w["base_seed"], indices)
    return batch if w["reducer"] is None else w["reducer"](w["plan"], batch)


def chunks(n_paths, size=CHUNK):
    return [np.arange(s, min(s + size, n_paths)) for s in range(0, n_paths, size)]


def _merge(parts):
    if isinstance(parts[0], TrajectoryBatch):
        return TrajectoryBatch.concat(parts)
    if isinstance(parts[0], dict):
        return {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}
    return np.concatenate(parts)


def simulate_batch(model, filt, agent, strategy, n_paths, base_seed, workers=1, reducer=None,
                   chunk_size=CHUNK, plan=None):
    """Simulate ``n_paths`` paths.

    Without a ``reducer`` the full :class:`TrajectoryBatch` is returned.  A reducer
    ``fn(plan, batch) -> array | dict of arrays`` (one row per path) keeps memory flat;
    its outputs are concatenated in path-index order.  Chunk boundaries depend only on
    ``chunk_size``, never on ``workers``.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be at least 1")
    plan = plan or make_plan(model, filt, agent)
    work = chunks(n_paths, chunk_size)
    if workers <= 1 or len(work) == 1:
        _init_worker(plan, strategy, reducer, base_seed)
        try:
            parts = [_run_chunk(ix) for ix in work]
        finally:
            _WORKER.clear()
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker,
                                 initargs=(plan, strategy, reducer, base_seed)) as ex:
            parts = list(ex.map(_run_chunk, work))
    return _merge(parts)


# ---------------------------------------------------------------------------
# discrepancy ODE and export


def delta_x_ode(model, filt: FilterGains, strategy: DeterministicPath, tableau=EULER) -> GridFunction:
    """Integrate ``dx' = (A - Theta) dx + rho - T_cal tau`` from zero (deterministic attacks).

    With the Euler tableau this reproduces the simulator's ``Xc_hat - Xa_hat`` node for node.
    """
    mc = model_coefficients(model)
    d = model.d
    rho, tau = strategy.rho, strategy.tau
    kind = "linear" if tableau is EULER else "cubic"

    def rhs(t, x):
        c = mc(t)
        _, Tc, Th, _ = filt.at(t, c.H)
        return (c.A - Th) @ x + rho.at(t, kind).reshape(-1) - Tc @ tau.at(t, kind).reshape(-1)

    return integrate(rhs, np.zeros(d), model.grid, tableau=tableau)


TRAJ_FIELDS = (("X_c", "Xc"), ("Y_c", "Yc"), ("Xa_hat", "Xa_hat"), ("Xc_hat", "Xc_hat"),
               ("dX", "dX"), ("I_a", "Ia"), ("u_a", "ua"), ("rho", "rho"), ("tau", "tau"))


def trajectory_rows(obj):
    """Header and node-by-node rows for a bundle (or a mean over a batch)."""
    header, cols = ["t"], [obj.t[:, None]]
    for attr, name in TRAJ_FIELDS:
        v = getattr(obj, attr)
        header += matrix_header(name, (v.shape[-1],))
        cols.append(v)
    return header, np.hstack(cols)


def export_trajectory_csv(path, bundle: TrajectoryBundle, config_sha=None):
    header, rows = trajectory_rows(bundle)
    return write_csv(path, header, rows, config_sha)


def mean_bundle(batch: TrajectoryBatch) -> TrajectoryBundle:
    kw = {f.name: getattr(batch, f.name).mean(axis=0) for f in fields(batch)
          if f.name not in ("path_indices", "t")}
    return TrajectoryBundle(-1, batch.t, **kw)
