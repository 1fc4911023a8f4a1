"""Grid sweep of local fits: coefficient curve, baseline mean, sandwich
covariance, pointwise confidence intervals and the theoretical bandwidth.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, stats

from .exceptions import (
    AllPointsFailed,
    DegenerateCurvature,
    EstimationError,
    NoVisitAtT,
    SingularSigma1,
)
from .kernels import KernelSpec, moments
from .local_fit import LocalDesign, LocalFit, SolverControls, build_design, solve
from .panel_data import PanelDataset, format_number

VARIANCE_FORMS = ("poisson-cluster", "poisson", "squared-mean", "robust")

CURVE_COLUMNS = ("t", "beta_hat", "se", "ci_lower", "ci_upper", "mu0_hat",
                 "effective_events", "converged", "boundary")


def default_grid(tau: float, points: int = 100) -> np.ndarray:
    return np.linspace(0.0, tau, points)


def baseline(dataset: PanelDataset, beta_at, t: float) -> float:
    """Breslow-type ratio estimate of mu0 at a pooled visit time ``t``.

    ``beta_at`` is either a number or a callable returning the coefficient at ``t``.
    """
    v = dataset.visits
    lo = np.searchsorted(v.time, t, side="left")
    hi = np.searchsorted(v.time, t, side="right")
    sl = slice(lo, hi)
    risk = v.censor[sl] >= t
    if not np.any(risk):
        raise NoVisitAtT(f"no at-risk subject visits at t={t:g}")
    b = beta_at(t) if callable(beta_at) else beta_at
    num = np.sum(v.count[sl][risk])
    den = np.sum(np.exp(b * v.covariate[sl][risk]))
    return float(num / den)


class StepFunction:
    """Right-continuous step function through finite ``values`` at ``times``;
    the first value is carried backward before the first knot."""

    def __init__(self, times, values):
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=float)
        ok = np.isfinite(values)
        self.times = times[ok]
        self.values = values[ok]
        if self.times.size == 0:
            raise NoVisitAtT("baseline unavailable at every visit time")

    def __call__(self, t):
        k = np.searchsorted(self.times, t, side="right") - 1
        return self.values[np.clip(k, 0, self.values.size - 1)]


def _scaled_powers(design: LocalDesign):
    """(1, (u-t)/h, ..., ((u-t)/h)^p) per event."""
    d = (design.time - design.target_time) / design.bandwidth
    return d[:, None] ** np.arange(design.degree + 1)


def _risk_set_moments(design: LocalDesign, beta):
    """Per-event S_{n,1}/S_{n,0} and S_{n,2}/S_{n,0} of the scalar covariate
    over the event's risk set."""
    eta = design.design_matrix @ beta
    starts, gidx = design.group_start, design.group_index
    e = np.exp(eta - np.maximum.reduceat(eta, starts)[gidx])
    s0 = np.add.reduceat(e, starts)
    m1 = np.add.reduceat(e * design.covariate, starts) / s0
    m2 = np.add.reduceat(e * design.covariate ** 2, starts) / s0
    return eta, m1[gidx], m2[gidx]


def _within_subject_sum(subject, time, c, m):
    """sum_i sum_{l,l'} m[min-time(l,l')] c_l c_l'^T over visits of each subject."""
    order = np.lexsort((time, subject))
    subject, c, m = subject[order], c[order], m[order]
    csum = np.cumsum(c, axis=0)
    ends = np.flatnonzero(np.r_[subject[1:] != subject[:-1], True])
    group_id = np.cumsum(np.r_[0, subject[1:] != subject[:-1]])
    later = csum[ends][group_id] - csum  # sum of c over later visits, same subject
    out = np.einsum("i,ia,ib->ab", m, c, c)
    cross = np.einsum("i,ia,ib->ab", m, c, later)
    return out + cross + cross.T


def covariance(dataset: PanelDataset, fit: LocalFit, mu0_at, spec: KernelSpec,
               design: LocalDesign | None = None, variance: str = "poisson-cluster",
               beta_at=None):
    """Sandwich covariance Sigma1^{-1} Sigma2 Sigma1^{-1} of the local estimate.

    The fitted count mean of a subject at a visit u is mu0_at(u) exp(b(u) z).
    ``beta_at`` supplies b(u), normally the coefficient paired with mu0_at(u)
    when the baseline was estimated; without it the local polynomial at t is
    used.

    ``variance`` selects the count variance used in Sigma2:

    ``"poisson-cluster"``
        Poisson process covariance mu_i(min(u, u')) between all visits of a
        subject inside the window (default).
    ``"poisson"``
        Diagonal Poisson terms mu_i(u) only.
    ``"squared-mean"``
        The squared mean mu0(u)^2 exp(2 beta'z_i(u)).
    ``"robust"``
        Per-subject empirical residual outer products.

    Returns ``(sigma, sigma1, sigma2)``.
    """
    if variance not in VARIANCE_FORMS:
        raise ValueError(f"variance must be one of {VARIANCE_FORMS}, got {variance!r}")
    if design is None:
        design = build_design(dataset, fit.target_time, spec)
    h = design.bandwidth
    beta = np.asarray(fit.beta, dtype=float)
    eta, m1, m2 = _risk_set_moments(design, beta)
    P = _scaled_powers(design)
    w = design.weight
    n = design.n

    v1 = m2 - m1 ** 2
    sigma1 = np.einsum("i,ia,ib->ab", w * design.jump * v1, P, P) / n
    q = sigma1.shape[0]
    evals = np.linalg.eigvalsh(sigma1)
    if evals[-1] <= 0 or evals[0] <= 1e-12 * evals[-1]:
        raise SingularSigma1(
            f"Sigma1 singular at t={design.target_time:g}; window too sparse")

    if beta_at is not None:
        eta = np.asarray(beta_at(design.time), dtype=float) * design.covariate
    mu_i = np.asarray(mu0_at(design.time), dtype=float) * np.exp(eta)
    resid_z = design.covariate - m1
    if variance == "squared-mean":
        sigma2 = np.einsum("i,ia,ib->ab", h * w ** 2 * resid_z ** 2 * mu_i ** 2, P, P) / n
    elif variance == "poisson":
        sigma2 = np.einsum("i,ia,ib->ab", h * w ** 2 * resid_z ** 2 * mu_i, P, P) / n
    else:
        c = (np.sqrt(h) * w * resid_z)[:, None] * P
        if variance == "poisson-cluster":
            sigma2 = _within_subject_sum(design.subject, design.time, c, mu_i) / n
        else:
            g = np.zeros((n, q))
            np.add.at(g, design.subject, c * (design.jump - mu_i)[:, None])
            sigma2 = g.T @ g / n
    sigma2 = 0.5 * (sigma2 + sigma2.T)
    inv = np.linalg.inv(sigma1)
    sigma = inv @ sigma2 @ inv
    return 0.5 * (sigma + sigma.T), sigma1, sigma2


def standard_errors(sigma, n: int, h: float) -> np.ndarray:
    """SE of each local coefficient: sqrt(Sigma_rr / (n h^{2r+1}))."""
    r = np.arange(np.shape(sigma)[0])
    diag = np.clip(np.diag(sigma), 0.0, None)
    return np.sqrt(diag / (n * h ** (2 * r + 1)))


def confidence_interval(fit: LocalFit, sigma, n: int, h: float, level: float = 0.95):
    """Wald interval for beta(t) with no bias correction."""
    if not 0 < level < 1:
        raise ValueError(f"level must lie in (0, 1), got {level!r}")
    z = stats.norm.ppf(0.5 * (1.0 + level))
    se = float(np.sqrt(max(float(sigma[0][0]), 0.0) / (n * h)))
    b = fit.beta0 if isinstance(fit, LocalFit) else float(fit)
    return b - z * se, b + z * se


def optimal_bandwidth(sigma1, sigma2, beta_dd, weight, tau: float, n: int,
                      spec: KernelSpec) -> float:
    """Bandwidth minimizing the weighted asymptotic MISE of the local linear fit.

    All four function arguments map time to a real number and are integrated
    over [0, tau] by adaptive quadrature.
    """
    m = moments(spec)
    opts = dict(limit=200, epsabs=0.0, epsrel=1e-10)
    curvature, _ = integrate.quad(lambda t: beta_dd(t) ** 2 * weight(t), 0.0, tau, **opts)
    if not curvature > 0:
        raise DegenerateCurvature(
            "integrated squared second derivative is zero; no finite optimal bandwidth")
    spread, _ = integrate.quad(lambda t: sigma2(t) / sigma1(t) ** 2 * weight(t),
                               0.0, tau, **opts)
    const = (m.nu0 * spread / (m.mu2 ** 2 * curvature)) ** 0.2
    return float(const * float(n) ** -0.2)


@dataclass
class CurveEstimate:
    """Pointwise estimates over a time grid; failed points hold NaN."""

    grid: np.ndarray
    beta_hat: np.ndarray
    beta_deriv_hat: np.ndarray
    se: np.ndarray
    deriv_se: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    sigma: np.ndarray
    mu0_hat: np.ndarray
    mu0_times: np.ndarray
    mu0_values: np.ndarray
    effective_events: np.ndarray
    converged: np.ndarray
    boundary: np.ndarray
    status: list
    n: int
    bandwidth: float
    level: float
    fits: list = field(default_factory=list, repr=False)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CURVE_COLUMNS)
        for g in range(self.grid.size):
            writer.writerow([
                format_number(self.grid[g]),
                format_number(self.beta_hat[g]),
                format_number(self.se[g]),
                format_number(self.ci_lower[g]),
                format_number(self.ci_upper[g]),
                format_number(self.mu0_hat[g]),
                int(self.effective_events[g]),
                int(bool(self.converged[g])),
                int(bool(self.boundary[g])),
            ])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())


def _sweep(dataset, spec, times, controls, warm_start):
    """Local fits at ``times``; entries are LocalFit or the exception raised."""
    out = []
    prev = None
    for t in times:
        try:
            design = build_design(dataset, float(t), spec)
            fit = solve(design, init=prev if warm_start else None, controls=controls)
        except EstimationError as exc:
            out.append((None, exc))
            continue
        out.append((design, fit))
        if fit.converged:
            prev = fit.beta
    return out


def baseline_curve(dataset: PanelDataset, spec: KernelSpec, times=None,
                   controls: SolverControls | None = None, warm_start: bool = True):
    """mu0 at pooled visit times using the local coefficient estimate at each time.

    Returns ``(times, mu0 values, coefficient values)``; failed times hold NaN in both.
    """
    times = dataset.visit_grid if times is None else np.asarray(times, dtype=float)
    values = np.full(times.size, np.nan)
    betas = np.full(times.size, np.nan)
    for k, (design, fit) in enumerate(_sweep(dataset, spec, times, controls, warm_start)):
        if design is None or not fit.converged:
            continue
        try:
            values[k] = baseline(dataset, fit.beta0, float(times[k]))
            betas[k] = fit.beta0
        except NoVisitAtT:
            pass
    return times, values, betas


def estimate_curve(dataset: PanelDataset, spec: KernelSpec, grid=None, level: float = 0.95,
                   controls: SolverControls | None = None, warm_start: bool = True,
                   variance: str = "poisson-cluster") -> CurveEstimate:
    """Estimate beta(t), its standard error and interval at every grid time.

    Points where the window is empty, the Hessian is singular or the solver
    does not converge are flagged and left as NaN. Raises
    :class:`AllPointsFailed` when no grid point converges.
    """
    grid = default_grid(dataset.tau) if grid is None else np.asarray(grid, dtype=float)
    G, q = grid.size, spec.degree + 1
    n, h = dataset.n, spec.bandwidth
    zcrit = stats.norm.ppf(0.5 * (1.0 + level))

    mu0_times, mu0_values, mu0_betas = baseline_curve(dataset, spec, controls=controls,
                                                      warm_start=warm_start)
    try:
        mu0_at = StepFunction(mu0_times, mu0_values)
        beta_at = StepFunction(mu0_times, mu0_betas)
    except NoVisitAtT:
        mu0_at = beta_at = None

    beta = np.full((G, q), np.nan)
    sigma = np.full((G, q, q), np.nan)
    ses = np.full((G, q), np.nan)
    events = np.zeros(G, dtype=int)
    converged = np.zeros(G, dtype=bool)
    status = []
    fits = []
    for g, (design, fit) in enumerate(_sweep(dataset, spec, grid, controls, warm_start)):
        if design is None:
            status.append(type(fit).__name__)
            fits.append(None)
            continue
        fits.append(fit)
        events[g] = fit.effective_events
        if not fit.converged:
            status.append("MaxIterExceeded")
            continue
        beta[g] = fit.beta
        converged[g] = True
        if mu0_at is None:
            status.append("NoVisitAtT")
            continue
        try:
            sig, _, _ = covariance(dataset, fit, mu0_at, spec, design=design,
                                   variance=variance, beta_at=beta_at)
        except EstimationError as exc:
            status.append(type(exc).__name__)
            continue
        sigma[g] = sig
        ses[g] = standard_errors(sig, n, h)
        status.append("ok")

    if not converged.any():
        raise AllPointsFailed("no grid point produced a converged local fit")

    se = ses[:, 0]
    mu0_grid = mu0_at(grid) if mu0_at is not None else np.full(G, np.nan)
    return CurveEstimate(
        grid=grid,
        beta_hat=beta[:, 0],
        beta_deriv_hat=beta[:, 1:],
        se=se,
        deriv_se=ses[:, 1:],
        ci_lower=beta[:, 0] - zcrit * se,
        ci_upper=beta[:, 0] + zcrit * se,
        sigma=sigma,
        mu0_hat=np.asarray(mu0_grid, dtype=float),
        mu0_times=mu0_times,
        mu0_values=mu0_values,
        effective_events=events,
        converged=converged,
        boundary=(grid - h < 0) | (grid + h > dataset.tau),
        status=status,
        n=n,
        bandwidth=h,
        level=level,
        fits=fits,
    )
