"""Kernel-weighted local partial likelihood at one target time, and its maximizer.

Integrals against the jump process and the visit process reduce to sums over
visit times. A subject contributes to the risk set at ``u`` only when it has a
visit exactly at ``u`` and is still under observation, so visits sharing a
time form one risk set ("group" below). Each visit in the bandwidth window is
an event whose mass is the cumulative count observed at that visit.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import EmptyWindow, MaxIterExceeded, NonFinite, SingularHessian
from .kernels import KernelSpec, localized_weight
from .panel_data import PanelDataset

PIVOT_TOL = 1e-12


@dataclass(frozen=True)
class SolverControls:
    max_iter: int = 50
    tol: float = 1e-8
    step_halving: int = 20


@dataclass(frozen=True, eq=False)
class LocalDesign:
    """Events inside the kernel window around ``target_time``.

    Per-event arrays are sorted by visit time; ``group_start`` indexes the
    first event of each distinct visit time so that ``np.add.reduceat`` gives
    risk-set sums.
    """

    target_time: float
    n: int
    degree: int
    bandwidth: float
    subject: np.ndarray
    time: np.ndarray
    jump: np.ndarray
    weight: np.ndarray
    covariate: np.ndarray
    group_start: np.ndarray
    group_time: np.ndarray

    @property
    def n_events(self) -> int:
        return int(self.time.size)

    @property
    def group_index(self) -> np.ndarray:
        idx = np.zeros(self.n_events, dtype=np.intp)
        idx[self.group_start[1:]] = 1
        return np.cumsum(idx)

    @property
    def powers(self) -> np.ndarray:
        """Raw time monomials (1, u - t, ..., (u - t)^p), one row per event."""
        d = self.time - self.target_time
        return d[:, None] ** np.arange(self.degree + 1)

    @property
    def design_matrix(self) -> np.ndarray:
        """z_i(u) = z_i * (1, u - t, ..., (u - t)^p)."""
        return self.covariate[:, None] * self.powers

    def risk_terms(self, u):
        """Subjects (with covariates) forming the risk set at event time ``u``."""
        mask = self.time == u
        return self.subject[mask], self.covariate[mask]


@dataclass(frozen=True, eq=False)
class LocalFit:
    target_time: float
    beta: np.ndarray
    loglik: float
    score_norm: float
    hessian: np.ndarray
    iterations: int
    converged: bool
    effective_events: int

    @property
    def beta0(self) -> float:
        return float(self.beta[0])


def build_design(dataset: PanelDataset, t: float, spec: KernelSpec) -> LocalDesign:
    """Collect the at-risk visits with positive kernel weight around ``t``."""
    v = dataset.visits
    h = spec.bandwidth
    lo = np.searchsorted(v.time, t - h, side="right")
    hi = np.searchsorted(v.time, t + h, side="left")
    sl = slice(lo, hi)
    time = v.time[sl]
    weight = localized_weight(spec, time, t)
    keep = (weight > 0) & (v.censor[sl] >= time)
    if not np.any(keep):
        raise EmptyWindow(f"no at-risk visits within bandwidth {h:g} of t={t:g}")
    time = time[keep]
    starts = np.flatnonzero(np.r_[True, time[1:] != time[:-1]])
    return LocalDesign(
        target_time=float(t),
        n=dataset.n,
        degree=spec.degree,
        bandwidth=h,
        subject=v.subject[sl][keep],
        time=time,
        jump=v.count[sl][keep],
        weight=weight[keep],
        covariate=v.covariate[sl][keep],
        group_start=starts,
        group_time=time[starts],
    )


def _linear_predictor(design, beta, x):
    beta = np.asarray(beta, dtype=float).reshape(-1)
    if beta.size != design.degree + 1:
        raise ValueError(f"beta must have length {design.degree + 1}, got {beta.size}")
    if not np.all(np.isfinite(beta)):
        raise NonFinite(f"non-finite coefficients {beta}")
    eta = x @ beta
    if not np.all(np.isfinite(eta)):
        big = np.max(np.abs(eta[np.isfinite(eta)])) if np.any(np.isfinite(eta)) else np.inf
        raise NonFinite(f"linear predictor overflow, |beta'z| up to {big:g}")
    return eta


def _evaluate(design: LocalDesign, beta, order=2):
    """Local log-likelihood and, for ``order`` >= 1, 2, its score and Hessian."""
    x = design.design_matrix
    eta = _linear_predictor(design, beta, x)
    starts = design.group_start
    gidx = design.group_index
    gmax = np.maximum.reduceat(eta, starts)
    e = np.exp(eta - gmax[gidx])
    s0 = np.add.reduceat(e, starts)
    log_s0 = gmax + np.log(s0) - np.log(design.n)
    wj = design.weight * design.jump
    ll = float(np.sum(wj * (eta - log_s0[gidx]))) / design.n
    if not np.isfinite(ll):
        raise NonFinite(f"non-finite local log-likelihood ({ll})")
    if order == 0:
        return ll, None, None
    gw = np.add.reduceat(wj, starts)  # events share the weight of their time
    prob = e / s0[gidx]
    xbar = np.add.reduceat(prob[:, None] * x, starts, axis=0)
    score = (wj @ x - gw @ xbar) / design.n
    if order == 1:
        return ll, score, None
    px = prob[:, None] * x
    s2 = np.einsum("ia,ib->iab", px, x)
    s2g = np.add.reduceat(s2, starts, axis=0)
    cov = s2g - np.einsum("ga,gb->gab", xbar, xbar)
    hess = -np.einsum("g,gab->ab", gw, cov) / design.n
    hess = 0.5 * (hess + hess.T)
    return ll, score, hess


def loglik(design: LocalDesign, beta) -> float:
    return _evaluate(design, beta, order=0)[0]


def score(design: LocalDesign, beta) -> np.ndarray:
    return _evaluate(design, beta, order=1)[1]


def hessian(design: LocalDesign, beta) -> np.ndarray:
    return _evaluate(design, beta, order=2)[2]


def _newton_direction(hess, grad):
    """Solve (-H) d = g; raise SingularHessian when -H is not safely positive definite."""
    evals, evecs = np.linalg.eigh(-hess)
    scale = max(1.0, float(np.max(np.abs(evals))))
    if evals[0] <= PIVOT_TOL * scale:
        raise SingularHessian(
            f"local Hessian not negative definite (smallest curvature {evals[0]:.3g}); "
            "the covariates carry no information in this window or the local "
            "likelihood has no finite maximizer"
        )
    return evecs @ ((evecs.T @ grad) / evals)


def solve(design: LocalDesign, init=None, controls: SolverControls | None = None,
          strict: bool = False) -> LocalFit:
    """Maximize the local log-likelihood by safeguarded Newton-Raphson.

    Converged means both the score and the Newton step are within ``tol``;
    the final step is applied. Steps are halved while they would decrease the
    objective. If ``strict``
    is set and the iteration budget runs out, :class:`MaxIterExceeded` is
    raised carrying the best iterate; otherwise that iterate is returned with
    ``converged=False``.
    """
    controls = controls or SolverControls()
    p1 = design.degree + 1
    beta = np.zeros(p1) if init is None else np.array(init, dtype=float).reshape(p1)
    ll, grad, hess = _evaluate(design, beta)
    it = 0
    converged = False
    while True:
        step = _newton_direction(hess, grad)
        # a small score alone is not enough on a nearly flat surface
        if np.max(np.abs(grad)) <= controls.tol and np.max(np.abs(step)) <= controls.tol:
            beta = beta + step
            ll, grad, hess = _evaluate(design, beta)
            converged = True
            break
        if it >= controls.max_iter:
            break
        it += 1
        for _ in range(controls.step_halving + 1):
            cand = beta + step
            try:
                ll_new = _evaluate(design, cand, order=0)[0]
            except NonFinite:
                ll_new = -np.inf
            if ll_new >= ll - 1e-13 * max(1.0, abs(ll)):
                break
            step = 0.5 * step
        else:
            break  # no ascent possible along the Newton direction
        beta = cand
        ll, grad, hess = _evaluate(design, beta)

    fit = LocalFit(
        target_time=design.target_time,
        beta=beta,
        loglik=ll,
        score_norm=float(np.max(np.abs(grad))),
        hessian=hess,
        iterations=it,
        converged=converged,
        effective_events=design.n_events,
    )
    if strict and not converged:
        raise MaxIterExceeded(
            f"Newton-Raphson did not converge at t={design.target_time:g} "
            f"after {it} iterations (|score|={fit.score_norm:.3g})", fit=fit)
    return fit


def fit_local(dataset: PanelDataset, t: float, spec: KernelSpec, init=None,
              controls: SolverControls | None = None) -> LocalFit:
    return solve(build_design(dataset, t, spec), init=init, controls=controls)


def global_design(dataset: PanelDataset) -> LocalDesign:
    """Unweighted design over every at-risk visit, for a time-invariant coefficient.

    Equivalent (up to a constant factor in the objective) to a degree-0 local
    design with a uniform kernel wide enough to cover all visits.
    """
    v = dataset.visits
    keep = v.censor >= v.time
    if not np.any(keep):
        raise EmptyWindow("no at-risk visits in dataset")
    time = v.time[keep]
    starts = np.flatnonzero(np.r_[True, time[1:] != time[:-1]])
    return LocalDesign(
        target_time=0.0,
        n=dataset.n,
        degree=0,
        bandwidth=1.0,
        subject=v.subject[keep],
        time=time,
        jump=v.count[keep],
        weight=np.ones(time.size),
        covariate=v.covariate[keep],
        group_start=starts,
        group_time=time[starts],
    )
