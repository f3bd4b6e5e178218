"""Split-step implicit tau-leap simulation and multilevel hybrid Monte Carlo estimation
for stiff stochastic reaction networks."""

from .coupling import SpeciesObservable, coupled_exp_exp, coupled_exp_ssi, coupled_ssi_ssi, observable
from .errors import (
    BudgetError,
    ConfigError,
    ModelError,
    NumericalError,
    SSITLError,
    StageError,
)
from .kernels import (
    DEFAULT_NEWTON,
    NewtonConfig,
    PathResult,
    explicit_tl_step,
    newton_solve_drift,
    rounding_drift_implicit_step,
    simulate_path,
    ssi_tl_step,
)
from .model import ReactionChannel, ReactionNetwork, load_model, parse_model, propensity
from .stability import StabilityReport, coarsest_stable_level, stability_report

__version__ = "0.1.0"

__all__ = [
    "BudgetError",
    "ConfigError",
    "DEFAULT_NEWTON",
    "ModelError",
    "NewtonConfig",
    "NumericalError",
    "PathResult",
    "ReactionChannel",
    "ReactionNetwork",
    "SSITLError",
    "SpeciesObservable",
    "StabilityReport",
    "StageError",
    "coarsest_stable_level",
    "coupled_exp_exp",
    "coupled_exp_ssi",
    "coupled_ssi_ssi",
    "explicit_tl_step",
    "load_model",
    "newton_solve_drift",
    "observable",
    "parse_model",
    "propensity",
    "rounding_drift_implicit_step",
    "simulate_path",
    "ssi_tl_step",
    "stability_report",
]
