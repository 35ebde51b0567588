"""The attacked LQG problem: coefficients, validation, presets and config (de)serialization."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

import numpy as np

from .coeffs import (
    AffineInT,
    Constant,
    TimeGrid,
    TimeVaryingMatrix,
    as_tvm,
    tvm_from_dict,
)

_RANK_TOL = 1e-10
_DEF_TOL = 1e-12


class ConfigError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SystemModel:
    """All exogenous data of the attacked partially observed LQ problem.

    Time-varying entries are :class:`TimeVaryingMatrix` objects; vectors are
    stored as column matrices.  ``sigma_V``, ``sigma_W``, ``x0`` and ``R0`` are
    plain arrays.
    """

    A: TimeVaryingMatrix
    B: TimeVaryingMatrix
    H: TimeVaryingMatrix
    a: TimeVaryingMatrix
    h: TimeVaryingMatrix
    sigma_V: np.ndarray
    sigma_W: np.ndarray
    x0: np.ndarray
    R0: np.ndarray
    Q: TimeVaryingMatrix
    S: TimeVaryingMatrix
    r: TimeVaryingMatrix
    P: TimeVaryingMatrix
    lam: float
    horizon: TimeGrid

    def __post_init__(self):
        for name in ("A", "B", "H", "a", "h", "Q", "S", "r", "P"):
            object.__setattr__(self, name, as_tvm(getattr(self, name)))
        object.__setattr__(self, "sigma_V", np.atleast_2d(np.asarray(self.sigma_V, dtype=float)))
        object.__setattr__(self, "sigma_W", np.atleast_2d(np.asarray(self.sigma_W, dtype=float)))
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float).reshape(-1))
        object.__setattr__(self, "R0", np.atleast_2d(np.asarray(self.R0, dtype=float)))
        object.__setattr__(self, "lam", float(self.lam))

    @property
    def d(self) -> int:
        return self.A.shape[0]

    @property
    def c(self) -> int:
        return self.B.shape[1]

    @property
    def m(self) -> int:
        return self.H.shape[0]

    @property
    def p(self) -> int:
        return self.sigma_V.shape[1]

    @property
    def q(self) -> int:
        return self.sigma_W.shape[1]

    @property
    def grid(self) -> TimeGrid:
        return self.horizon

    @property
    def T(self) -> float:
        return self.horizon.T

    def replace(self, **changes) -> "SystemModel":
        return dataclasses.replace(self, **changes)

    def with_lambda(self, lam: float) -> "SystemModel":
        return self.replace(lam=lam)

    # config -----------------------------------------------------------------

    def to_dict(self) -> dict:
        out = {}
        for name in ("A", "B", "H", "a", "h", "Q", "S", "r", "P"):
            out[name] = getattr(self, name).to_dict()
        out["sigma_V"] = self.sigma_V.tolist()
        out["sigma_W"] = self.sigma_W.tolist()
        out["x0"] = self.x0.tolist()
        out["R0"] = self.R0.tolist()
        out["lambda"] = self.lam
        out["T"] = self.horizon.T
        out["n_steps"] = self.horizon.n_steps
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "SystemModel":
        missing = [k for k in ("A", "B", "H", "sigma_V", "sigma_W", "x0", "Q", "S", "P", "T")
                   if k not in obj]
        if missing:
            raise ConfigError(f"model config is missing {missing}")
        try:
            A = tvm_from_dict(obj["A"])
            d = A.shape[0]
            H = tvm_from_dict(obj["H"])
            m = H.shape[0]
            return cls(
                A=A,
                B=tvm_from_dict(obj["B"]),
                H=H,
                a=tvm_from_dict(obj.get("a", np.zeros((d, 1)).tolist())),
                h=tvm_from_dict(obj.get("h", np.zeros((m, 1)).tolist())),
                sigma_V=np.array(obj["sigma_V"], dtype=float),
                sigma_W=np.array(obj["sigma_W"], dtype=float),
                x0=np.array(obj["x0"], dtype=float),
                R0=np.array(obj.get("R0", np.zeros((d, d)).tolist()), dtype=float),
                Q=tvm_from_dict(obj["Q"]),
                S=tvm_from_dict(obj["S"]),
                r=tvm_from_dict(obj.get("r", np.zeros((d, 1)).tolist())),
                P=tvm_from_dict(obj["P"]),
                lam=float(obj.get("lambda", 0.0)),
                horizon=TimeGrid(float(obj["T"]), int(obj.get("n_steps", 1000))),
            )
        except (TypeError, ValueError, KeyError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"malformed model config: {exc}") from exc

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def loads(cls, text: str) -> "SystemModel":
        return cls.from_dict(json.loads(text))


def validate(model: SystemModel) -> list[str]:
    """Return the list of violated model invariants (empty when valid)."""
    out = []
    d, c, m, p, q = model.d, model.c, model.m, model.p, model.q
    expect = {"A": (d, d), "B": (d, c), "H": (m, d), "a": (d, 1), "h": (m, 1),
              "Q": (d, d), "S": (c, c), "r": (d, 1), "P": (d, d)}
    for name, shape in expect.items():
        got = getattr(model, name).shape
        if got != shape:
            out.append(f"{name} has shape {got}, expected {shape}")
    if model.sigma_V.shape[0] != d:
        out.append(f"sigma_V has {model.sigma_V.shape[0]} rows, expected {d}")
    if model.sigma_W.shape[0] != m:
        out.append(f"sigma_W has {model.sigma_W.shape[0]} rows, expected {m}")
    if model.x0.shape != (d,):
        out.append(f"x0 has shape {model.x0.shape}, expected ({d},)")
    if model.R0.shape != (d, d):
        out.append(f"R0 has shape {model.R0.shape}, expected ({d}, {d})")
    if out:
        return out
    if d > p:
        out.append(f"sigma_V needs at least d={d} columns, got {p}")
    if m > q:
        out.append(f"sigma_W needs at least m={m} columns, got {q}")
    if np.linalg.svd(model.sigma_V, compute_uv=False).min() <= _RANK_TOL:
        out.append("sigma_V rank-deficient")
    if np.linalg.svd(model.sigma_W, compute_uv=False).min() <= _RANK_TOL:
        out.append("sigma_W rank-deficient")
    if not np.allclose(model.R0, model.R0.T, atol=1e-12) or \
            np.linalg.eigvalsh(0.5 * (model.R0 + model.R0.T)).min() < -1e-12:
        out.append("R0 not positive semidefinite")
    if model.lam < 0:
        out.append("lambda must be nonnegative")
    checks = (("Q", False, "not positive semidefinite"), ("S", True, "not positive definite"),
              ("P", True, "not positive definite"))
    times = model.horizon.times
    for name, strict, label in checks:
        tvm = getattr(model, name)
        for t in times:
            M = tvm(t)
            if np.max(np.abs(M - M.T)) > 1e-10:
                out.append(f"{name} not symmetric")
                break
            lo = np.linalg.eigvalsh(0.5 * (M + M.T)).min()
            if (strict and lo <= _DEF_TOL) or (not strict and lo < -_DEF_TOL):
                out.append(f"{name} {label}")
                break
    return out


# ---------------------------------------------------------------------------
# presets


@dataclass(frozen=True, eq=False)
class ScenarioPreset:
    name: str
    model: SystemModel
    mc_paths: int = 25_000
    base_seed: int = 20_240_601
    description: str = ""


def _mean_revert_1d(sigma_V=0.6, sigma_W=0.4, R0=0.0, lam=0.0, n_steps=1000) -> SystemModel:
    one = [[1.0]]
    return SystemModel(
        A=Constant([[-1.0]]), B=Constant(one), H=Constant(one),
        a=Constant([[0.0]]), h=Constant([[0.0]]),
        sigma_V=[[sigma_V]], sigma_W=[[sigma_W]],
        x0=[0.5], R0=[[R0]],
        Q=Constant([[10.0]]), S=Constant(one), r=Constant([[0.0]]), P=Constant(one),
        lam=lam, horizon=TimeGrid(0.5, n_steps),
    )


def _tracking_2d(lam=0.0, n_steps=1000) -> SystemModel:
    I2 = np.eye(2)
    return SystemModel(
        A=Constant(np.zeros((2, 2))), B=Constant(I2), H=Constant([[2.0, 1.0], [0.0, 3.0]]),
        a=Constant(np.zeros((2, 1))), h=Constant(np.zeros((2, 1))),
        sigma_V=[[0.1, 0.05], [0.05, 0.1]], sigma_W=0.1 * I2,
        x0=[0.2, 0.0], R0=0.001 * I2,
        Q=AffineInT(5 * I2, 5 * I2), S=Constant(0.5 * I2),
        r=AffineInT(np.zeros((2, 1)), [[2.0], [2.0]]), P=Constant(I2),
        lam=lam, horizon=TimeGrid(0.5, n_steps),
    )


_PRESETS = {
    "1d-mean-revert": (lambda **kw: _mean_revert_1d(**kw),
                       "1D mean-reverting state, agent steers toward zero"),
    "1d-comparison": (lambda **kw: _mean_revert_1d(sigma_V=1.0, sigma_W=1.0, R0=2.0, **kw),
                      "1D model with sigma_V = sigma_W = 1, R0 = 2 (strategy comparison)"),
    "2d-tracking": (lambda **kw: _tracking_2d(**kw),
                    "2D velocity-position model tracking r_t = (2t, 2t)"),
}


def preset_names() -> list[str]:
    return list(_PRESETS)


def preset(name: str, lam: float = 0.0, n_steps: int = 1000) -> ScenarioPreset:
    try:
        build, desc = _PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; known: {', '.join(_PRESETS)}") from None
    return ScenarioPreset(name, build(lam=lam, n_steps=n_steps), description=desc)
