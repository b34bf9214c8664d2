"""Blind joint estimation of sampling-rate offsets in distributed microphone arrays."""
from .errors import ConfigurationError, InvalidInputError, NumericalError, SyncError
from .likelihood import (
    PairObjective,
    ScmSet,
    SroVector,
    UpsilonSet,
    compute_upsilon,
    joint_objective,
    log_likelihood,
    pairwise_objective,
    update_scm,
)
from .optimizer import (
    AuxState,
    JointResult,
    KktSystem,
    aux_state,
    build_kkt,
    cosine_bound_params,
    estimate_joint,
    solve_kkt,
)
from .pairwise import estimate_pairwise, golden_section, grid_init, grid_search_init
from .sim import Scenario, fractional_resample, render_scenario, rmse_ppm
from .spectral import SpectrogramSet, StftConfig, TimeSignal, compensate_lpd, istft, stft

__version__ = "0.1.0"

__all__ = [
    "AuxState",
    "ConfigurationError",
    "InvalidInputError",
    "JointResult",
    "KktSystem",
    "NumericalError",
    "PairObjective",
    "Scenario",
    "ScmSet",
    "SpectrogramSet",
    "SroVector",
    "StftConfig",
    "SyncError",
    "TimeSignal",
    "UpsilonSet",
    "aux_state",
    "build_kkt",
    "compensate_lpd",
    "compute_upsilon",
    "cosine_bound_params",
    "estimate_joint",
    "estimate_pairwise",
    "fractional_resample",
    "golden_section",
    "grid_init",
    "grid_search_init",
    "istft",
    "joint_objective",
    "log_likelihood",
    "pairwise_objective",
    "render_scenario",
    "rmse_ppm",
    "solve_kkt",
    "stft",
    "update_scm",
]
