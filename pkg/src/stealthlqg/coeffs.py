"""Time grids, time-varying coefficients and small dense linear-algebra helpers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_T_TOL = 1e-12


class DomainError(ValueError):
    """Coefficient evaluated outside its time horizon."""


class SingularMatrixError(np.linalg.LinAlgError):
    pass


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``0 = t_0 < ... < t_N = T`` with ``N = n_steps``."""

    T: float
    n_steps: int

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError(f"horizon must be positive, got T={self.T}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError(f"n_steps must be a positive integer, got {self.n_steps}")
        object.__setattr__(self, "n_steps", int(self.n_steps))
        object.__setattr__(self, "T", float(self.T))

    @property
    def t0(self) -> float:
        return 0.0

    @property
    def h(self) -> float:
        return self.T / self.n_steps

    @property
    def n_nodes(self) -> int:
        return self.n_steps + 1

    def node(self, k: int) -> float:
        if not 0 <= k <= self.n_steps:
            raise IndexError(k)
        return k * self.h

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_nodes) * self.h

    def check(self, t: float) -> float:
        if t < -_T_TOL or t > self.T * (1 + _T_TOL) + _T_TOL:
            raise DomainError(f"t={t} outside [0, {self.T}]")
        return min(max(t, 0.0), self.T)


# ---------------------------------------------------------------------------
# time-varying coefficients


def _as_matrix(x) -> np.ndarray:
    a = np.array(x, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(-1, 1)
    if a.ndim != 2:
        raise ShapeError(f"expected a matrix, got array of shape {a.shape}")
    return a


class TimeVaryingMatrix:
    """Base class; subclasses implement ``_eval``.

    ``horizon`` is optional for the analytic variants; when given, evaluation
    outside ``[0, horizon]`` raises :class:`DomainError`.
    """

    horizon: float | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self._eval(0.0).shape

    def __call__(self, t: float) -> np.ndarray:
        return self.eval(t)

    def eval(self, t: float) -> np.ndarray:
        if self.horizon is not None:
            if t < -_T_TOL or t > self.horizon + _T_TOL:
                raise DomainError(f"t={t} outside [0, {self.horizon}]")
        elif t < -_T_TOL:
            raise DomainError(f"t={t} is negative")
        return self._eval(float(t))

    def _eval(self, t: float) -> np.ndarray:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class Constant(TimeVaryingMatrix):
    value: np.ndarray
    horizon: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "value", _as_matrix(self.value))
        self.value.flags.writeable = False

    def _eval(self, t):
        return self.value

    def to_dict(self):
        return {"kind": "Constant", "value": self.value.tolist()}


@dataclass(frozen=True, eq=False)
class AffineInT(TimeVaryingMatrix):
    """``M0 + t * M1``."""

    m0: np.ndarray
    m1: np.ndarray
    horizon: float | None = None

    def __post_init__(self):
        m0, m1 = _as_matrix(self.m0), _as_matrix(self.m1)
        if m0.shape != m1.shape:
            raise ShapeError(f"AffineInT parts disagree: {m0.shape} vs {m1.shape}")
        object.__setattr__(self, "m0", m0)
        object.__setattr__(self, "m1", m1)

    def _eval(self, t):
        return self.m0 + t * self.m1

    def to_dict(self):
        return {"kind": "AffineInT", "m0": self.m0.tolist(), "m1": self.m1.tolist()}


@dataclass(frozen=True, eq=False)
class Sinusoid(TimeVaryingMatrix):
    """``amplitude * sin(omega * t + phase)`` elementwise."""

    amplitude: np.ndarray
    omega: float
    phase: float = 0.0
    horizon: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "amplitude", _as_matrix(self.amplitude))

    def _eval(self, t):
        return self.amplitude * np.sin(self.omega * t + self.phase)

    def to_dict(self):
        return {"kind": "Sinusoid", "amplitude": self.amplitude.tolist(),
                "omega": self.omega, "phase": self.phase}


@dataclass(frozen=True, eq=False)
class SampledGrid(TimeVaryingMatrix):
    """Values on a :class:`TimeGrid`, linearly interpolated between nodes."""

    grid: TimeGrid
    values: np.ndarray  # (n_nodes, rows, cols)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim == 1:
            v = v.reshape(-1, 1, 1)
        elif v.ndim == 2:
            v = v.reshape(v.shape[0], -1, 1)
        if v.shape[0] != self.grid.n_nodes:
            raise ShapeError(f"{v.shape[0]} samples for a grid of {self.grid.n_nodes} nodes")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def horizon(self):
        return self.grid.T

    def _eval(self, t):
        return _interp_linear(self.values, self.grid, t)

    def to_dict(self):
        return {"kind": "SampledGrid", "T": self.grid.T, "n_steps": self.grid.n_steps,
                "values": self.values.tolist()}


def tvm_from_dict(obj) -> TimeVaryingMatrix:
    """Inverse of ``TimeVaryingMatrix.to_dict``; bare arrays mean ``Constant``."""
    if not isinstance(obj, dict):
        return Constant(obj)
    kind = obj.get("kind")
    if kind == "Constant":
        return Constant(obj["value"])
    if kind == "AffineInT":
        return AffineInT(obj["m0"], obj["m1"])
    if kind == "Sinusoid":
        return Sinusoid(obj["amplitude"], float(obj["omega"]), float(obj.get("phase", 0.0)))
    if kind == "SampledGrid":
        return SampledGrid(TimeGrid(obj["T"], obj["n_steps"]), np.array(obj["values"]))
    raise ValueError(f"unknown coefficient kind {kind!r}")


def as_tvm(x) -> TimeVaryingMatrix:
    if isinstance(x, TimeVaryingMatrix):
        return x
    return Constant(x)


def eval(tvm: TimeVaryingMatrix, t: float) -> np.ndarray:  # noqa: A001 - mirrors the operation name
    return tvm.eval(t)


# ---------------------------------------------------------------------------
# grid functions


def _interp_linear(values, grid, t):
    t = grid.check(t)
    s = t / grid.h
    k = min(int(s), grid.n_steps - 1)
    w = s - k
    if w == 0.0:
        return values[k]
    return (1.0 - w) * values[k] + w * values[k + 1]


def _interp_cubic(values, grid, t):
    # local 4-point Lagrange on the uniform grid
    n = grid.n_steps
    if n < 3:
        return _interp_linear(values, grid, t)
    t = grid.check(t)
    s = t / grid.h
    k = min(int(s), n - 1)
    if s == k:
        return values[k]
    k0 = min(max(k - 1, 0), n - 3)
    x = s - k0
    l0 = -(x - 1) * (x - 2) * (x - 3) / 6.0
    l1 = x * (x - 2) * (x - 3) / 2.0
    l2 = -x * (x - 1) * (x - 3) / 2.0
    l3 = x * (x - 1) * (x - 2) / 6.0
    return l0 * values[k0] + l1 * values[k0 + 1] + l2 * values[k0 + 2] + l3 * values[k0 + 3]


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Per-node samples of a fixed-shape array on a :class:`TimeGrid`."""

    grid: TimeGrid
    values: np.ndarray
    interp: str = "linear"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape[0] != self.grid.n_nodes:
            raise ShapeError(f"{v.shape[0]} samples for a grid of {self.grid.n_nodes} nodes")
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape[1:]

    def __len__(self):
        return self.values.shape[0]

    def __getitem__(self, k):
        return self.values[k]

    def __call__(self, t: float) -> np.ndarray:
        return self.at(t)

    def at(self, t: float, kind: str | None = None) -> np.ndarray:
        kind = kind or self.interp
        if kind == "cubic":
            return _interp_cubic(self.values, self.grid, t)
        return _interp_linear(self.values, self.grid, t)

    def smooth(self) -> "GridFunction":
        """Same data, cubic interpolation between nodes."""
        return GridFunction(self.grid, self.values, "cubic")

    def map(self, fn) -> "GridFunction":
        return GridFunction(self.grid, np.array([fn(v) for v in self.values]), self.interp)

    def sup_norm(self) -> float:
        flat = self.values.reshape(len(self), -1)
        return float(np.max(np.linalg.norm(flat, axis=1))) if flat.size else 0.0

    def as_coefficient(self) -> SampledGrid:
        v = self.values
        if v.ndim == 2:
            v = v[:, :, None]
        return SampledGrid(self.grid, v)


def zeros(grid: TimeGrid, *shape: int) -> GridFunction:
    return GridFunction(grid, np.zeros((grid.n_nodes, *shape)))


def sample(grid: TimeGrid, fn, interp: str = "linear") -> GridFunction:
    return GridFunction(grid, np.array([fn(t) for t in grid.times], dtype=float), interp)


# ---------------------------------------------------------------------------
# dense helpers


def sym_sqrt_inv(M, sym_tol: float = 1e-10):
    """Return ``(M^{1/2}, M^{-1/2}, M^{-1})`` for symmetric positive-definite ``M``."""
    M = _as_matrix(M)
    if M.shape[0] != M.shape[1]:
        raise ShapeError(f"square matrix required, got {M.shape}")
    scale = max(np.linalg.norm(M, 2), np.finfo(float).tiny)
    if np.max(np.abs(M - M.T)) > sym_tol * max(scale, 1.0):
        raise ShapeError("matrix is not symmetric")
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    if np.min(w) <= 1e-12 * scale:
        raise SingularMatrixError(f"matrix is singular (min eigenvalue {np.min(w):.3e})")
    sq = np.sqrt(w)
    root = (V * sq) @ V.T
    iroot = (V / sq) @ V.T
    inv = (V / w) @ V.T
    return root, iroot, inv


def psd_sqrt(M) -> np.ndarray:
    """Symmetric square root of a PSD matrix; roundoff negativity is clamped to zero."""
    M = _as_matrix(M)
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    scale = max(np.max(np.abs(w)), 0.0)
    if np.min(w, initial=0.0) < -1e-12 * max(scale, 1e-300) and np.min(w) < -1e-14:
        raise SingularMatrixError(f"matrix is not PSD (min eigenvalue {np.min(w):.3e})")
    w = np.clip(w, 0.0, None)
    return (V * np.sqrt(w)) @ V.T


def assert_psd(M, tol: float = 1e-10) -> bool:
    M = _as_matrix(M)
    if M.shape[0] != M.shape[1]:
        raise ShapeError(f"square matrix required, got {M.shape}")
    return bool(np.min(np.linalg.eigvalsh(0.5 * (M + M.T))) >= -tol)


def symmetrize(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.swapaxes(-1, -2))
