"""Fixed-step explicit Runge-Kutta integration on a :class:`TimeGrid`."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .coeffs import GridFunction, TimeGrid

DIVERGENCE_NORM = 1e12


class OdeNumericError(FloatingPointError):
    def __init__(self, msg, t=None):
        super().__init__(msg)
        self.t = t


class OdeDivergence(OdeNumericError):
    """State norm exceeded the blow-up guard; typically a Riccati finite-time escape."""


@dataclass(frozen=True, eq=False)
class RkTableau:
    name: str
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    order: int

    def __post_init__(self):
        a, b, c = (np.asarray(x, dtype=float) for x in (self.a, self.b, self.c))
        s = len(b)
        if a.shape != (s, s) or c.shape != (s,):
            raise ValueError("inconsistent tableau dimensions")
        if np.any(np.triu(a) != 0):
            raise ValueError("tableau is not explicit")
        if abs(b.sum() - 1.0) > 1e-14:
            raise ValueError("weights must sum to one")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)

    @property
    def stages(self) -> int:
        return len(self.b)


def _cooper_verner8() -> RkTableau:
    # Cooper & Verner (1972), 11 stages, order 8
    r = np.sqrt(21.0)
    a = np.zeros((11, 11))
    a[1, 0] = 1 / 2
    a[2, :2] = [1 / 4, 1 / 4]
    a[3, :3] = [1 / 7, (-7 - 3 * r) / 98, (21 + 5 * r) / 49]
    a[4, :4] = [(11 + r) / 84, 0, (18 + 4 * r) / 63, (21 - r) / 252]
    a[5, :5] = [(5 + r) / 48, 0, (9 + r) / 36, (-231 + 14 * r) / 360, (63 - 7 * r) / 80]
    a[6, :6] = [(10 - r) / 42, 0, (-432 + 92 * r) / 315, (633 - 145 * r) / 90,
                (-504 + 115 * r) / 70, (63 - 13 * r) / 35]
    a[7, :7] = [1 / 14, 0, 0, 0, (14 - 3 * r) / 126, (13 - 3 * r) / 63, 1 / 9]
    a[8, :8] = [1 / 32, 0, 0, 0, (91 - 21 * r) / 576, 11 / 72,
                (-385 - 75 * r) / 1152, (63 + 13 * r) / 128]
    a[9, :9] = [1 / 14, 0, 0, 0, 1 / 9, (-733 - 147 * r) / 2205, (515 + 111 * r) / 504,
                (-51 - 11 * r) / 56, (132 + 28 * r) / 245]
    a[10, :10] = [0, 0, 0, 0, (-42 + 7 * r) / 18, (-18 + 28 * r) / 45, (-273 - 53 * r) / 72,
                  (301 + 53 * r) / 72, (28 - 28 * r) / 45, (49 - 7 * r) / 18]
    b = np.array([1 / 20, 0, 0, 0, 0, 0, 0, 49 / 180, 16 / 45, 49 / 180, 1 / 20])
    c = a.sum(axis=1)
    return RkTableau("cooper-verner-8", a, b, c, 8)


RK8 = _cooper_verner8()
RK4 = RkTableau(
    "rk4",
    [[0, 0, 0, 0], [0.5, 0, 0, 0], [0, 0.5, 0, 0], [0, 0, 1, 0]],
    [1 / 6, 1 / 3, 1 / 3, 1 / 6],
    [0, 0.5, 0.5, 1],
    4,
)
EULER = RkTableau("euler", [[0.0]], [1.0], [0.0], 1)
TABLEAUS = {t.name: t for t in (RK8, RK4, EULER)}


def _step(rhs, t, y, dt, tab: RkTableau):
    k = []
    for i in range(tab.stages):
        yi = y
        for j in range(i):
            if tab.a[i, j] != 0.0:
                yi = yi + dt * tab.a[i, j] * k[j]
        ki = np.asarray(rhs(t + tab.c[i] * dt, yi), dtype=float)
        if not np.all(np.isfinite(ki)):
            if np.all(np.isfinite(yi)) and not np.any(np.isnan(ki)):
                # a finite state with an infinite slope: finite-time escape inside the step
                raise OdeDivergence(f"right-hand side overflowed at t={t + tab.c[i] * dt:.6g}",
                                    t + tab.c[i] * dt)
            raise OdeNumericError(f"non-finite right-hand side at t={t + tab.c[i] * dt:.6g}",
                                  t + tab.c[i] * dt)
        k.append(ki)
    out = y
    for bi, ki in zip(tab.b, k):
        if bi != 0.0:
            out = out + dt * bi * ki
    return out


def integrate(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    value: np.ndarray,
    grid: TimeGrid,
    backward: bool = False,
    tableau: RkTableau = RK8,
    project: Callable[[np.ndarray], np.ndarray] | None = None,
    interp: str = "cubic",
) -> GridFunction:
    """Integrate ``y' = rhs(t, y)`` on every node of ``grid``.

    Forward problems take ``value`` as ``y(0)``; backward problems take it as
    ``y(T)`` and are integrated in ``s = T - t``.  ``project`` is applied to the
    state after every step (used to symmetrize matrix Riccati states).
    """
    y = np.array(value, dtype=float)
    T = grid.T
    out = np.empty((grid.n_nodes, *y.shape))
    if backward:
        def f(s, z):
            return -np.asarray(rhs(T - s, z))
    else:
        f = rhs
    out[0] = y
    with np.errstate(over="ignore", invalid="ignore"):
        _march(f, y, out, grid, backward, tableau, project)
    if backward:
        out = out[::-1].copy()
    return GridFunction(grid, out, interp)


def _march(f, y, out, grid, backward, tableau, project):
    n, h, T = grid.n_steps, grid.h, grid.T
    for k in range(n):
        try:
            y = _step(f, k * h, y, h, tableau)
        except OdeNumericError as exc:
            # stage times are in the integration variable; report physical time
            t_hit = float(T - exc.t if backward else exc.t)
            msg = str(exc).rsplit(" at t=", 1)[0]
            raise type(exc)(f"{msg} at t={t_hit:.6g}", t_hit) from None
        if project is not None:
            y = project(y)
        if not np.all(np.isfinite(y)) or np.linalg.norm(y.ravel()) > DIVERGENCE_NORM:
            t_hit = T - (k + 1) * h if backward else (k + 1) * h
            raise OdeDivergence(f"solution blew up at t={t_hit:.6g}", t_hit)
        out[k + 1] = y


def quadrature(f: GridFunction | np.ndarray, grid: TimeGrid | None = None) -> float:
    """Composite trapezoidal rule over the grid."""
    if isinstance(f, GridFunction):
        grid, v = f.grid, f.values
    else:
        v = np.asarray(f, dtype=float)
    v = v.reshape(len(v), -1)
    if v.shape[1] != 1:
        raise ValueError("quadrature expects a scalar grid function")
    v = v[:, 0]
    return float(grid.h * (v.sum() - 0.5 * (v[0] + v[-1])))
