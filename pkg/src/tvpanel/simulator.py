"""Synthetic panel count data from a nonhomogeneous Poisson mean model.

Each subject gets its own counter-based random stream (Philox keyed by
``(seed, stream, subject)``) so a dataset is a pure function of the seed and
subjects can be generated in any order.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
from scipy import stats

from .exceptions import NonMonotoneMeanFunction
from .panel_data import PanelDataset, Subject


def _setting1_beta(t):
    return np.sqrt(t)


def _setting1_mu0(t):
    return 2.0 * np.asarray(t) ** 2 + 2.0


def _setting1_beta_dd(t):
    return -0.25 * np.asarray(t, dtype=float) ** -1.5


def _setting2_beta(t):
    x = np.asarray(t, dtype=float) / 12.0
    return 0.5 * (stats.beta.pdf(x, 3, 3) + stats.beta.pdf(x, 4, 4))


def _setting2_mu0(t):
    return 2.0 + 2.0 * np.sqrt(t)


def _setting2_beta_dd(t):
    # d2/dt2 of 0.5 * (30 x^2 (1-x)^2 + 140 x^3 (1-x)^3), x = t / 12
    x = np.asarray(t, dtype=float) / 12.0
    d2_b33 = 30.0 * (2.0 - 12.0 * x + 12.0 * x ** 2)
    d2_b44 = 140.0 * (6.0 * x - 36.0 * x ** 2 + 60.0 * x ** 3 - 30.0 * x ** 4)
    return 0.5 * (d2_b33 + d2_b44) / 144.0


@dataclass(frozen=True)
class SimulationConfig:
    """Parameters of the data-generating process.

    Visit times are cumulative Exponential(``gap_rate``) gaps, rounded up to a
    multiple of ``time_resolution`` (``None`` keeps them continuous) and
    truncated at ``tau``. The first count increment has mean
    ``mu0(T1) exp(beta(T1) z)`` so that E{N(t) | z} follows the mean model
    exactly.
    """

    mu0: Callable
    beta: Callable
    n: int = 300
    max_visits: int = 10
    tau: float = 6.0
    gap_rate: float = 1.0
    covariate_range: tuple = (0.0, 1.0)
    time_resolution: float | None = 0.1
    censoring: str = "none"
    seed: int = 0
    beta_dd: Callable | None = None
    name: str = "custom"

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if self.max_visits < 1:
            raise ValueError("max_visits must be at least 1")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if not self.gap_rate > 0:
            raise ValueError("gap_rate must be positive")
        lo, hi = self.covariate_range
        if not hi >= lo:
            raise ValueError("covariate_range must be (low, high) with low <= high")
        if self.time_resolution is not None and not self.time_resolution > 0:
            raise ValueError("time_resolution must be positive or None")
        if self.censoring not in ("none", "uniform"):
            raise ValueError("censoring must be 'none' or 'uniform'")

    def mean_function(self, t, z):
        return self.mu0(t) * np.exp(self.beta(t) * z)

    def with_(self, **changes) -> "SimulationConfig":
        return replace(self, **changes)


def builtin_setting(which: int, **overrides) -> SimulationConfig:
    """The two reference truths: 1 is beta = sqrt(t), mu0 = 2t^2 + 2;
    2 is a Beta-density bump with mu0 = 2 + 2 sqrt(t)."""
    if which == 1:
        cfg = SimulationConfig(mu0=_setting1_mu0, beta=_setting1_beta,
                               beta_dd=_setting1_beta_dd, name="setting1")
    elif which == 2:
        cfg = SimulationConfig(mu0=_setting2_mu0, beta=_setting2_beta,
                               beta_dd=_setting2_beta_dd, name="setting2")
    else:
        raise ValueError(f"setting must be 1 or 2, got {which!r}")
    return cfg.with_(**overrides) if overrides else cfg


class _Constant:
    def __init__(self, value):
        self.value = float(value)

    def __call__(self, t):
        return np.full(np.shape(t), self.value) if np.ndim(t) else self.value

    def __repr__(self):
        return f"constant({self.value})"


def constant_setting(beta: float = 0.5, **overrides) -> SimulationConfig:
    """Setting-1 baseline with a time-invariant coefficient."""
    cfg = SimulationConfig(mu0=_setting1_mu0, beta=_Constant(beta),
                           beta_dd=_Constant(0.0), name=f"constant{beta:g}")
    return cfg.with_(**overrides) if overrides else cfg


def check_monotone(config: SimulationConfig, points: int = 2001) -> None:
    """Raise NonMonotoneMeanFunction unless mu0(t) exp(beta(t) z) is
    nondecreasing in t for every z in the covariate range.

    log of the mean is linear in z, so checking the range ends suffices.
    """
    grid = np.linspace(0.0, config.tau, points)
    lo, hi = config.covariate_range
    for z in (lo, hi):
        with np.errstate(all="ignore"):
            lam = np.asarray(config.mean_function(grid, z), dtype=float)
        ok = np.isfinite(lam)
        g, lam = grid[ok], lam[ok]
        base = np.asarray(config.mu0(g), dtype=float)
        if np.any(base <= 0):
            bad = int(np.argmax(base <= 0))
            raise ValueError(f"mu0 must be positive; mu0({g[bad]:g}) <= 0")
        drop = np.diff(lam) < -1e-12 * np.maximum(1.0, np.abs(lam[1:]))
        if np.any(drop):
            k = int(np.argmax(drop)) + 1
            raise NonMonotoneMeanFunction(float(g[k]), float(z))


def subject_rng(seed: int, stream: int, index: int) -> np.random.Generator:
    seq = np.random.SeedSequence(entropy=seed, spawn_key=(stream, index))
    return np.random.Generator(np.random.Philox(seq))


def _visit_times(rng, config):
    k = int(rng.integers(1, config.max_visits + 1))
    times = np.cumsum(rng.exponential(1.0 / config.gap_rate, size=k))
    res = config.time_resolution
    if res is not None:
        ticks = np.unique(np.ceil(times / res - 1e-9).astype(np.int64))
        ticks = ticks[ticks <= np.floor(config.tau / res + 1e-9)]
        return np.round(ticks * res, 12)
    return times[times <= config.tau]


def generate_subject(config: SimulationConfig, index: int, stream: int = 0) -> Subject:
    rng = subject_rng(config.seed, stream, index)
    times = _visit_times(rng, config)
    while times.size == 0:
        times = _visit_times(rng, config)
    lo, hi = config.covariate_range
    z = float(rng.uniform(lo, hi))
    lam = np.asarray(config.mean_function(times, z), dtype=float)
    increments = rng.poisson(np.diff(lam, prepend=0.0).clip(min=0.0))
    if config.censoring == "uniform":
        censor = float(rng.uniform(config.tau / 2.0, config.tau))
    else:
        censor = float(config.tau)
    return Subject(id=str(index + 1), visit_times=times,
                   cumulative_counts=np.cumsum(increments), covariate=z,
                   censor_time=censor)


def generate(config: SimulationConfig, stream: int = 0) -> PanelDataset:
    """Draw one dataset. ``stream`` selects an independent replication."""
    check_monotone(config)
    subjects = tuple(generate_subject(config, i, stream) for i in range(config.n))
    return PanelDataset(subjects, tau=config.tau)
