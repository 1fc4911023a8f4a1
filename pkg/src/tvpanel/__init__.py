"""Kernel-weighted local partial likelihood for panel count data with a
time-varying coefficient."""
from .curve import (
    CurveEstimate,
    baseline,
    confidence_interval,
    covariance,
    estimate_curve,
    optimal_bandwidth,
)
from .estimator import (
    ConstantCoefficientPanelRegressor,
    VaryingCoefficientPanelRegressor,
    fit_constant,
)
from .kernels import KernelSpec, kernel_value, localized_weight, moments
from .local_fit import LocalFit, SolverControls, build_design, solve
from .panel_data import PanelDataset, Subject, ingest_csv, emit_csv, validate
from .simulator import SimulationConfig, builtin_setting, constant_setting, generate
from .study import StudyReport, analyze, run_study

__version__ = "0.1.0"

__all__ = [
    "ConstantCoefficientPanelRegressor",
    "CurveEstimate",
    "KernelSpec",
    "LocalFit",
    "PanelDataset",
    "SimulationConfig",
    "SolverControls",
    "StudyReport",
    "Subject",
    "VaryingCoefficientPanelRegressor",
    "analyze",
    "baseline",
    "build_design",
    "builtin_setting",
    "confidence_interval",
    "constant_setting",
    "covariance",
    "emit_csv",
    "estimate_curve",
    "fit_constant",
    "generate",
    "ingest_csv",
    "kernel_value",
    "localized_weight",
    "moments",
    "optimal_bandwidth",
    "run_study",
    "solve",
    "validate",
]
