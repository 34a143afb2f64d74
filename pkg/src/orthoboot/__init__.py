"""Bayesian-bootstrap posterior sampling under Neyman-orthogonal scores."""

from .diagnostics import GateauxPath, OrthoReport, nonortho_probe, orthogonality_check, rate_functional
from .dgp import Dataset, PlmConfig, simulate_kernel_model, simulate_plm
from .errors import (
    ConvergenceError,
    DegenerateError,
    ExperimentError,
    InvalidArgumentError,
    OrthobootError,
    PositivityError,
    ReportIOError,
)
from .harness import AggregateReport, ExperimentConfig, run_dimension_sweep, run_experiment
from .nuisance import ClampSpec, ForestConfig, NuisanceFit, fit_forest, fit_kernel
from .posterior import PosteriorSample, PosteriorSummary, sample_posterior, summarize
from .report import emit_report
from .scores import AipwScore, NaiveResidualScore, PartialledOutScore, get_score, solve_newton, solve_weighted
from .weights import Scheme, WeightVector, draw_dirichlet, draw_multinomial, equal_weights

__version__ = "0.1.0"

__all__ = [
    "AggregateReport",
    "AipwScore",
    "ClampSpec",
    "ConvergenceError",
    "Dataset",
    "DegenerateError",
    "ExperimentConfig",
    "ExperimentError",
    "ForestConfig",
    "GateauxPath",
    "InvalidArgumentError",
    "NaiveResidualScore",
    "NuisanceFit",
    "OrthoReport",
    "OrthobootError",
    "PartialledOutScore",
    "PlmConfig",
    "PositivityError",
    "PosteriorSample",
    "PosteriorSummary",
    "ReportIOError",
    "Scheme",
    "WeightVector",
    "draw_dirichlet",
    "draw_multinomial",
    "emit_report",
    "equal_weights",
    "fit_forest",
    "fit_kernel",
    "get_score",
    "nonortho_probe",
    "orthogonality_check",
    "rate_functional",
    "run_dimension_sweep",
    "run_experiment",
    "sample_posterior",
    "simulate_kernel_model",
    "simulate_plm",
    "solve_newton",
    "solve_weighted",
    "summarize",
]
