"""Estimator objects with a scikit-learn style interface.

``fit`` takes a :class:`~tvpanel.panel_data.PanelDataset`, a long-format
pandas DataFrame or a path to a panel CSV file.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from scipy import stats
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .curve import (
    VARIANCE_FORMS,
    StepFunction,
    baseline,
    covariance,
    default_grid,
    estimate_curve,
    standard_errors,
)
from .exceptions import EstimationError, NoVisitAtT
from .kernels import KERNELS, KernelSpec
from .local_fit import SolverControls, fit_local, global_design, solve
from .panel_data import CSV_COLUMNS, PanelDataset, check_dataset, from_arrays, read_csv


def check_panel(X, tau=None) -> PanelDataset:
    """Coerce supported inputs to a validated PanelDataset."""
    if isinstance(X, PanelDataset):
        return check_dataset(X)
    if isinstance(X, (str, os.PathLike)):
        return read_csv(X, tau=tau)
    columns = getattr(X, "columns", None)
    if columns is not None:
        missing = [c for c in CSV_COLUMNS[:4] if c not in columns]
        if missing:
            raise ValueError(f"DataFrame missing columns {missing}")
        cens = X["censor_time"].to_numpy() if "censor_time" in columns else None
        ds = from_arrays(X["subject_id"].to_numpy(), X["visit_time"].to_numpy(),
                         X["cumulative_count"].to_numpy(), X["covariate"].to_numpy(),
                         cens, tau=tau)
        return check_dataset(ds)
    raise TypeError(f"cannot interpret {type(X).__name__} as panel count data")


def _check_params(est):
    if est.kernel not in KERNELS:
        raise ValueError(f"kernel must be one of {sorted(KERNELS)}, got {est.kernel!r}")
    if not 0 < est.level < 1:
        raise ValueError(f"level must lie in (0, 1), got {est.level!r}")
    if est.variance not in VARIANCE_FORMS:
        raise ValueError(f"variance must be one of {VARIANCE_FORMS}")


class VaryingCoefficientPanelRegressor(BaseEstimator):
    """Time-varying coefficient mean model for panel count data,
    E{N(t) | z} = mu0(t) exp(beta(t) z), fitted by kernel-weighted local
    polynomial partial likelihood.

    Parameters
    ----------
    kernel : {"epanechnikov", "uniform", "triangular"}
    bandwidth : float
        Kernel half-width, in the time units of the data.
    degree : int
        Local polynomial order (1 is local linear).
    grid_points : int
        Size of the default equally spaced grid on [0, tau].
    level : float
        Confidence level of the pointwise intervals.
    variance : str
        Count-variance form for the sandwich covariance; see
        :func:`tvpanel.curve.covariance`.
    max_iter, tol, step_halving : Newton-Raphson controls.
    warm_start : bool
        Start each grid point from the previous point's solution.

    Attributes
    ----------
    curve_ : CurveEstimate
    grid_, coef_, se_ : ndarray
        Grid, estimated coefficient and its standard error.
    n_subjects_, tau_ : int, float
    """

    def __init__(self, kernel="epanechnikov", bandwidth=0.5, degree=1, grid_points=100,
                 level=0.95, variance="poisson-cluster", max_iter=50, tol=1e-8,
                 step_halving=20, warm_start=True):
        self.kernel = kernel
        self.bandwidth = bandwidth
        self.degree = degree
        self.grid_points = grid_points
        self.level = level
        self.variance = variance
        self.max_iter = max_iter
        self.tol = tol
        self.step_halving = step_halving
        self.warm_start = warm_start

    def _spec(self):
        return KernelSpec(self.kernel, self.bandwidth, self.degree)

    def _controls(self):
        return SolverControls(self.max_iter, self.tol, self.step_halving)

    def fit(self, X, y=None, grid=None):
        _check_params(self)
        data = check_panel(X)
        spec = self._spec()
        if grid is None:
            grid = default_grid(data.tau, self.grid_points)
        self.curve_ = estimate_curve(data, spec, grid=grid, level=self.level,
                                     controls=self._controls(), warm_start=self.warm_start,
                                     variance=self.variance)
        self.data_ = data
        self.spec_ = spec
        self.grid_ = self.curve_.grid
        self.coef_ = self.curve_.beta_hat
        self.se_ = self.curve_.se
        self.n_subjects_ = data.n
        self.tau_ = data.tau
        self.baseline_ = StepFunction(self.curve_.mu0_times, self.curve_.mu0_values)
        return self

    def _check_fitted(self):
        if not hasattr(self, "curve_"):
            raise NotFittedError(f"{type(self).__name__} is not fitted yet; call fit first")

    def predict(self, times):
        """beta(t) at arbitrary times, from a fresh local fit at each time;
        NaN where the local fit fails."""
        self._check_fitted()
        times = np.atleast_1d(np.asarray(times, dtype=float))
        out = np.full(times.size, np.nan)
        for k, t in enumerate(times):
            try:
                fit = fit_local(self.data_, float(t), self.spec_, controls=self._controls())
            except EstimationError:
                continue
            if fit.converged:
                out[k] = fit.beta0
        return out

    def predict_mean(self, times, covariate):
        """Fitted E{N(t) | z} = mu0(t) exp(beta(t) z)."""
        self._check_fitted()
        times = np.atleast_1d(np.asarray(times, dtype=float))
        return self.baseline_(times) * np.exp(self.predict(times) * covariate)

    def confidence_band(self):
        """Grid, lower and upper pointwise interval limits."""
        self._check_fitted()
        return self.curve_.grid, self.curve_.ci_lower, self.curve_.ci_upper


@dataclass(frozen=True)
class ConstantFit:
    beta: float
    se: float
    ci_lower: float
    ci_upper: float
    loglik: float
    iterations: int
    converged: bool


def fit_constant(dataset: PanelDataset, level: float = 0.95,
                 controls: SolverControls | None = None,
                 variance: str = "poisson-cluster") -> ConstantFit:
    """Time-invariant coefficient by maximizing the unweighted partial likelihood,
    with a sandwich standard error built like the local one."""
    design = global_design(dataset)
    fit = solve(design, controls=controls)
    times = dataset.visit_grid
    mu0 = np.full(times.size, np.nan)
    for k, u in enumerate(times):
        try:
            mu0[k] = baseline(dataset, fit.beta0, float(u))
        except NoVisitAtT:
            pass
    sigma, _, _ = covariance(dataset, fit, StepFunction(times, mu0), spec=None,
                             design=design, variance=variance)
    se = float(standard_errors(sigma, dataset.n, 1.0)[0])
    z = stats.norm.ppf(0.5 * (1.0 + level))
    return ConstantFit(beta=fit.beta0, se=se, ci_lower=float(fit.beta0 - z * se),
                       ci_upper=float(fit.beta0 + z * se), loglik=fit.loglik,
                       iterations=fit.iterations, converged=fit.converged)


class ConstantCoefficientPanelRegressor(BaseEstimator):
    """Proportional mean model with a time-invariant coefficient."""

    def __init__(self, level=0.95, variance="poisson-cluster", max_iter=50, tol=1e-8,
                 step_halving=20):
        self.level = level
        self.variance = variance
        self.max_iter = max_iter
        self.tol = tol
        self.step_halving = step_halving

    def fit(self, X, y=None):
        if not 0 < self.level < 1:
            raise ValueError(f"level must lie in (0, 1), got {self.level!r}")
        data = check_panel(X)
        res = fit_constant(data, level=self.level,
                           controls=SolverControls(self.max_iter, self.tol, self.step_halving),
                           variance=self.variance)
        self.result_ = res
        self.coef_ = res.beta
        self.se_ = res.se
        return self

    def predict(self, times):
        if not hasattr(self, "coef_"):
            raise NotFittedError("ConstantCoefficientPanelRegressor is not fitted yet")
        return np.full(np.atleast_1d(times).shape, self.coef_)
