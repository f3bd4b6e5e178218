"""Multilevel hybrid SSI-TL / explicit-TL Monte Carlo estimator."""

from .cost import COST_KINDS, CostModel, calibrate_cost_model, fit_cost_model, fixed_newton_model
from .estimator import (
    EstimateResult,
    EstimatorConfig,
    LevelResult,
    MLMCPlan,
    StatsProvider,
    bootstrap_cv,
    estimate_level_stats,
    execute_plan,
    hierarchy,
    plan_estimator,
    run_estimator,
    select_interface_level,
    sequential_finest_level,
)
from .fitting import (
    Extrapolation,
    LevelStats,
    allocate_samples,
    fit_and_extrapolate,
    select_finest_level,
    stat_error_bound,
    work,
)
from .sampling import KIND_IDS, Accumulator, sample, stream

__all__ = [
    "COST_KINDS",
    "KIND_IDS",
    "Accumulator",
    "CostModel",
    "EstimateResult",
    "EstimatorConfig",
    "Extrapolation",
    "LevelResult",
    "LevelStats",
    "MLMCPlan",
    "StatsProvider",
    "allocate_samples",
    "bootstrap_cv",
    "calibrate_cost_model",
    "estimate_level_stats",
    "execute_plan",
    "fit_and_extrapolate",
    "fit_cost_model",
    "fixed_newton_model",
    "hierarchy",
    "plan_estimator",
    "run_estimator",
    "sample",
    "select_finest_level",
    "select_interface_level",
    "sequential_finest_level",
    "stat_error_bound",
    "stream",
    "work",
]
