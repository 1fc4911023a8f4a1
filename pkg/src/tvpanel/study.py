"""Monte Carlo replication of the simulation study and the data-analysis workflow."""
from __future__ import annotations

import csv
import io
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .curve import CurveEstimate, default_grid, estimate_curve
from .estimator import ConstantFit, fit_constant
from .exceptions import AllPointsFailed, LowConvergence
from .kernels import KernelSpec
from .local_fit import SolverControls
from .panel_data import PanelDataset, check_dataset, format_number
from .simulator import SimulationConfig, generate

REPORT_COLUMNS = ("t", "beta_true", "beta_mean", "bias", "ese", "mse", "coverage",
                  "mu0_mean", "mu0_true", "n_ok", "interior")


@dataclass
class Replication:
    """What one simulated dataset contributes to the study."""

    beta_hat: np.ndarray
    se: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    ok: np.ndarray
    mu0_grid: np.ndarray
    mu0_times: np.ndarray
    mu0_values: np.ndarray
    failed: bool = False


@dataclass
class StudyReport:
    grid: np.ndarray
    beta_true: np.ndarray
    beta_mean: np.ndarray
    bias: np.ndarray
    ese: np.ndarray
    mse: np.ndarray
    coverage: np.ndarray
    mu0_mean: np.ndarray
    mu0_true: np.ndarray
    n_ok: np.ndarray
    interior: np.ndarray
    baseline_times: np.ndarray
    baseline_mean: np.ndarray
    baseline_true: np.ndarray
    baseline_count: np.ndarray
    replications: list = field(repr=False)
    meta: dict = field(default_factory=dict)

    @property
    def convergence_rate(self) -> float:
        return self.meta["convergence_rate"]

    def to_csv(self) -> str:
        buf = io.StringIO()
        for key in ("setting", "replications", "n", "bandwidth", "kernel", "degree",
                    "seed", "convergence_rate", "failed_replications"):
            value = self.meta[key]
            if isinstance(value, float):
                value = format_number(value)
            buf.write(f"# {key}={value}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for g in range(self.grid.size):
            writer.writerow([format_number(x) for x in (
                self.grid[g], self.beta_true[g], self.beta_mean[g], self.bias[g],
                self.ese[g], self.mse[g], self.coverage[g], self.mu0_mean[g],
                self.mu0_true[g])] + [int(self.n_ok[g]), int(bool(self.interior[g]))])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())


def interior_mask(grid, h: float, tau: float) -> np.ndarray:
    """Grid points at least two bandwidths away from both ends of [0, tau]."""
    eps = 1e-9
    return (grid >= 2 * h - eps) & (grid <= tau - 2 * h + eps)


def _one_replication(args) -> Replication:
    config, spec, grid, stream, controls, variance = args
    data = generate(config, stream=stream)
    G = grid.size
    try:
        curve = estimate_curve(data, spec, grid=grid, controls=controls, variance=variance)
    except AllPointsFailed:
        nan = np.full(G, np.nan)
        return Replication(nan, nan, nan, nan, np.zeros(G, bool), nan,
                           np.empty(0), np.empty(0), failed=True)
    ok = curve.converged & np.isfinite(curve.se)
    return Replication(curve.beta_hat, curve.se, curve.ci_lower, curve.ci_upper, ok,
                       curve.mu0_hat, curve.mu0_times, curve.mu0_values)


def _masked(values, ok):
    return np.where(ok, values, np.nan)


def _nanmean(a, axis=0):
    with np.errstate(invalid="ignore", divide="ignore"):
        cnt = np.sum(np.isfinite(a), axis=axis)
        tot = np.nansum(a, axis=axis)
        return np.where(cnt > 0, tot / np.maximum(cnt, 1), np.nan)


def _nanstd(a, axis=0):
    cnt = np.sum(np.isfinite(a), axis=axis)
    mean = _nanmean(a, axis=axis)
    dev = np.where(np.isfinite(a), a - mean, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(cnt > 1, np.sqrt(np.sum(dev ** 2, axis=axis) / (cnt - 1)), np.nan)


def run_study(config: SimulationConfig, spec: KernelSpec, grid=None, R: int = 200,
              seed: int | None = None, controls: SolverControls | None = None,
              variance: str = "poisson-cluster", n_jobs: int = 1,
              min_convergence: float = 0.95) -> StudyReport:
    """Simulate ``R`` datasets, estimate each, and aggregate per grid point.

    Replication ``r`` draws from random stream ``r`` of ``seed`` (default:
    ``config.seed``). Only replications that produced an estimate and a
    standard error at a grid point enter that point's aggregates. Raises
    :class:`LowConvergence` if fewer than ``min_convergence`` of all
    (replication, grid point) pairs succeed.
    """
    if R < 2:
        raise ValueError("need at least 2 replications")
    if seed is not None:
        config = config.with_(seed=seed)
    grid = default_grid(config.tau) if grid is None else np.asarray(grid, dtype=float)
    started = time.perf_counter()
    jobs = [(config, spec, grid, r, controls, variance) for r in range(R)]
    if n_jobs == 1:
        reps = [_one_replication(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            reps = list(pool.map(_one_replication, jobs, chunksize=max(1, R // (4 * n_jobs))))
    elapsed = time.perf_counter() - started

    ok = np.array([r.ok for r in reps])
    beta = _masked(np.array([r.beta_hat for r in reps]), ok)
    se = _masked(np.array([r.se for r in reps]), ok)
    lo = np.array([r.ci_lower for r in reps])
    hi = np.array([r.ci_upper for r in reps])
    truth = np.asarray(config.beta(grid), dtype=float)
    covered = _masked(((lo <= truth) & (truth <= hi)).astype(float), ok)
    mu0 = np.array([r.mu0_grid for r in reps])
    n_ok = ok.sum(axis=0)

    beta_mean = _nanmean(beta)
    b_times, b_mean, b_count = _pool_baseline(reps, config)
    failed = sum(r.failed for r in reps)
    rate = float(ok.mean())
    report = StudyReport(
        grid=grid,
        beta_true=truth,
        beta_mean=beta_mean,
        bias=beta_mean - truth,
        ese=_nanstd(beta),
        mse=_nanmean(se),
        coverage=_nanmean(covered),
        mu0_mean=_nanmean(_masked(mu0, ok)),
        mu0_true=np.asarray(config.mu0(grid), dtype=float),
        n_ok=n_ok,
        interior=interior_mask(grid, spec.bandwidth, config.tau),
        baseline_times=b_times,
        baseline_mean=b_mean,
        baseline_true=np.asarray(config.mu0(b_times), dtype=float),
        baseline_count=b_count,
        replications=reps,
        meta={
            "setting": config.name,
            "replications": R,
            "n": config.n,
            "bandwidth": format_number(spec.bandwidth),
            "kernel": spec.family,
            "degree": spec.degree,
            "seed": config.seed,
            "convergence_rate": rate,
            "failed_replications": failed,
            "elapsed_seconds": elapsed,
        },
    )
    if failed == R:
        raise AllPointsFailed("every replication failed")
    if rate < min_convergence:
        raise LowConvergence(f"convergence rate {rate:.3f} below {min_convergence}")
    return report


def _pool_baseline(reps, config):
    """Average baseline estimates across replications by visit-time bin."""
    width = config.time_resolution
    times = [r.mu0_times for r in reps if r.mu0_times.size]
    if not times:
        return np.empty(0), np.empty(0), np.empty(0, dtype=int)
    values = np.concatenate([r.mu0_values for r in reps if r.mu0_times.size])
    times = np.concatenate(times)
    if width is None:
        width = config.tau / 100.0
    ok = np.isfinite(values)
    bins = np.rint(times[ok] / width).astype(np.int64)
    keys, inverse, counts = np.unique(bins, return_inverse=True, return_counts=True)
    sums = np.bincount(inverse, weights=values[ok])
    centers = np.bincount(inverse, weights=times[ok]) / counts
    return centers, sums / counts, counts


@dataclass
class AnalysisResult:
    curve: CurveEstimate
    constant: ConstantFit


def analyze(dataset: PanelDataset, spec: KernelSpec, grid=None, level: float = 0.95,
            controls: SolverControls | None = None,
            variance: str = "poisson-cluster") -> AnalysisResult:
    """Time-varying curve plus the constant-coefficient comparator."""
    check_dataset(dataset)
    curve = estimate_curve(dataset, spec, grid=grid, level=level, controls=controls,
                           variance=variance)
    const = fit_constant(dataset, level=level, controls=controls, variance=variance)
    return AnalysisResult(curve=curve, constant=const)
