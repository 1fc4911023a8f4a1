"""Compact-support kernels on [-1, 1], localized weights and kernel moments."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import integrate


def _epanechnikov(u):
    return 0.75 * (1.0 - u * u)


def _uniform(u):
    return np.full_like(u, 0.5)


def _triangular(u):
    return 1.0 - np.abs(u)


def _even_moment(family, k, squared=False):
    """Exact value of int_{-1}^{1} u^k K(u)^{1 or 2} du for even k."""
    k1 = Fraction(1, k + 1)
    if family == "uniform":
        return k1 / 2 if squared else k1
    if family == "epanechnikov":
        if squared:
            return Fraction(9, 8) * (k1 - Fraction(2, k + 3) + Fraction(1, k + 5))
        return Fraction(3, 2) * (k1 - Fraction(1, k + 3))
    if family == "triangular":
        if squared:
            return 2 * (k1 - Fraction(2, k + 2) + Fraction(1, k + 3))
        return 2 * (k1 - Fraction(1, k + 2))
    raise KeyError(family)


KERNELS = {
    "epanechnikov": _epanechnikov,
    "uniform": _uniform,
    "triangular": _triangular,
}


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family, bandwidth ``h`` and local polynomial degree ``p``."""

    family: str = "epanechnikov"
    bandwidth: float = 0.5
    degree: int = 1

    def __post_init__(self):
        family = str(self.family).lower()
        if family not in KERNELS:
            raise ValueError(f"unknown kernel family {self.family!r}; "
                             f"choose from {sorted(KERNELS)}")
        object.__setattr__(self, "family", family)
        if not (float(self.bandwidth) > 0):
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth!r}")
        object.__setattr__(self, "bandwidth", float(self.bandwidth))
        if int(self.degree) != self.degree or self.degree < 0:
            raise ValueError(f"degree must be a nonnegative integer, got {self.degree!r}")
        object.__setattr__(self, "degree", int(self.degree))


@dataclass(frozen=True)
class KernelMoments:
    mu2: float
    nu0: float
    Omega1: np.ndarray
    Omega2: np.ndarray
    b: np.ndarray


def kernel_value(spec: KernelSpec, u):
    """K(u), zero outside the open interval (-1, 1). Vectorized over ``u``."""
    u = np.asarray(u, dtype=float)
    inside = np.abs(u) < 1.0
    out = np.where(inside, KERNELS[spec.family](np.where(inside, u, 0.0)), 0.0)
    return out if out.ndim else float(out)


def localized_weight(spec: KernelSpec, u, t):
    """K_h(u - t) = K((u - t) / h) / h."""
    h = spec.bandwidth
    w = kernel_value(spec, (np.asarray(u, dtype=float) - t) / h) / h
    return w


def _moment_table(spec: KernelSpec, kmax: int, squared: bool):
    return [0.0 if k % 2 else float(_even_moment(spec.family, k, squared))
            for k in range(kmax + 1)]


def moments(spec: KernelSpec) -> KernelMoments:
    """Closed-form kernel moments for the built-in (symmetric) families."""
    p = spec.degree
    m1 = _moment_table(spec, 2 * p + 2, squared=False)
    m2 = _moment_table(spec, 2 * p, squared=True)
    idx = np.add.outer(np.arange(p + 1), np.arange(p + 1))
    omega1 = np.asarray(m1)[idx]
    omega2 = np.asarray(m2)[idx]
    b = np.asarray(m1)[np.arange(p + 1) + p + 1]
    return KernelMoments(mu2=m1[2], nu0=m2[0], Omega1=omega1, Omega2=omega2, b=b)


def quadrature_moments(spec: KernelSpec) -> KernelMoments:
    """Moments by adaptive quadrature of :func:`kernel_value`; works for any kernel."""
    p = spec.degree

    def mom(k, power):
        f = lambda u: u ** k * kernel_value(spec, u) ** power  # noqa: E731
        # split at the kink of the triangular kernel
        left, _ = integrate.quad(f, -1.0, 0.0, epsabs=1e-13, epsrel=1e-13, limit=200)
        right, _ = integrate.quad(f, 0.0, 1.0, epsabs=1e-13, epsrel=1e-13, limit=200)
        return left + right

    m1 = [mom(k, 1) for k in range(2 * p + 3)]
    m2 = [mom(k, 2) for k in range(2 * p + 1)]
    idx = np.add.outer(np.arange(p + 1), np.arange(p + 1))
    return KernelMoments(mu2=m1[2], nu0=m2[0], Omega1=np.asarray(m1)[idx],
                         Omega2=np.asarray(m2)[idx],
                         b=np.asarray(m1)[np.arange(p + 1) + p + 1])


def asymptotic_variance_factor(spec: KernelSpec) -> np.ndarray:
    """Omega1^{-1} Omega2 Omega1^{-1}; its (0, 0) entry is nu0 for p = 1."""
    m = moments(spec)
    inv = np.linalg.inv(m.Omega1)
    return inv @ m.Omega2 @ inv
