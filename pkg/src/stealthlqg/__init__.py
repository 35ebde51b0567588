"""Optimal stealthy attacks on continuous-time partially observed LQG systems."""

from .attacks import (
    AdaptiveFeedback,
    AttackStrategy,
    DeterministicPath,
    DetMeanPath,
    GaussianWhite,
    SinusoidAttack,
    ZeroAttack,
    build_optimal_adaptive,
    build_optimal_det,
    eval_attack,
)
from .coeffs import GridFunction, TimeGrid
from .evaluate import ObjectiveReport, exact_D, exact_objective, mc_objective
from .model import ScenarioPreset, SystemModel, preset, validate
from .synthesis import GainSet, solve_agent, solve_all, solve_filter

__version__ = "0.1.0"

__all__ = [
    "AdaptiveFeedback", "AttackStrategy", "DeterministicPath", "DetMeanPath", "GaussianWhite",
    "SinusoidAttack", "ZeroAttack", "build_optimal_adaptive", "build_optimal_det", "eval_attack",
    "GridFunction", "TimeGrid", "ObjectiveReport", "exact_D", "exact_objective", "mc_objective",
    "ScenarioPreset", "SystemModel", "preset", "validate", "GainSet", "solve_agent", "solve_all",
    "solve_filter",
]
