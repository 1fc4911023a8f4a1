"""Independent reference computations used as test oracles.

Nothing here reuses the package's grouped/vectorized code paths: sums are
written as plain loops over subjects and visits.
"""
import math

import numpy as np

from tvpanel.panel_data import PanelDataset, Subject


def kernel_weight(family, h, u, t):
    x = (u - t) / h
    if abs(x) >= 1:
        return 0.0
    if family == "epanechnikov":
        return 0.75 * (1 - x * x) / h
    if family == "uniform":
        return 0.5 / h
    if family == "triangular":
        return (1 - abs(x)) / h
    raise ValueError(family)


def local_covariates(z, u, t, p):
    return np.array([z * (u - t) ** k for k in range(p + 1)])


def direct_loglik(dataset, t, family, h, p, beta):
    n = dataset.n
    beta = np.asarray(beta, dtype=float)
    total = 0.0
    for s in dataset.subjects:
        for u, N in zip(s.visit_times.tolist(), s.cumulative_counts.tolist()):
            w = kernel_weight(family, h, u, t)
            if w == 0.0 or s.censor_time < u:
                continue
            s0 = 0.0
            for other in dataset.subjects:
                if other.censor_time >= u and u in other.visit_times.tolist():
                    s0 += math.exp(beta @ local_covariates(other.covariate, u, t, p))
            s0 /= n
            total += w * N * (beta @ local_covariates(s.covariate, u, t, p) - math.log(s0))
    return total / n


def direct_baseline(dataset, b, t):
    num = den = 0.0
    for s in dataset.subjects:
        if s.censor_time >= t and t in s.visit_times.tolist():
            k = s.visit_times.tolist().index(t)
            num += s.cumulative_counts[k]
            den += math.exp(b * s.covariate)
    return num / den


def central_gradient(f, x, step=1e-5):
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = step
        g[k] = (f(x + e) - f(x - e)) / (2 * step)
    return g


def central_jacobian(f, x, step=1e-5):
    x = np.asarray(x, dtype=float)
    cols = []
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = step
        cols.append((f(x + e) - f(x - e)) / (2 * step))
    return np.column_stack(cols)


def golden_section_max(f, lo, hi, tol=1e-10):
    invphi = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def random_dataset(rng, n=20, ticks=8, tau=4.0, max_visits=4, censor=True,
                   z_scale=1.0, mean_count=3.0):
    """Small dataset on a coarse time lattice so that visit times tie across subjects."""
    lattice = np.round(np.linspace(tau / ticks, tau, ticks), 12)
    subjects = []
    for i in range(n):
        k = int(rng.integers(1, max_visits + 1))
        times = np.sort(rng.choice(lattice, size=min(k, ticks), replace=False))
        counts = np.cumsum(rng.poisson(mean_count, size=times.size))
        z = float(rng.normal(scale=z_scale))
        c = float(rng.uniform(tau / 2, tau)) if censor and rng.random() < 0.3 else tau
        subjects.append(Subject(str(i), times, counts, z, c))
    return PanelDataset(tuple(subjects), tau=tau)


def direct_sandwich(dataset, t, family, h, p, beta, mu0_at, beta_at=None):
    """Sigma1, Sigma2 (clustered Poisson counts) by explicit loops over events."""
    n = dataset.n
    beta = np.asarray(beta, dtype=float)
    events = []  # (subject index, u, N, w)
    for i, s in enumerate(dataset.subjects):
        for u, N in zip(s.visit_times.tolist(), s.cumulative_counts.tolist()):
            w = kernel_weight(family, h, u, t)
            if w > 0 and s.censor_time >= u:
                events.append((i, u, N, w))

    def ratio(u):
        s0 = s1 = s2 = 0.0
        for other in dataset.subjects:
            if other.censor_time >= u and u in other.visit_times.tolist():
                e = math.exp(beta @ local_covariates(other.covariate, u, t, p))
                s0 += e
                s1 += e * other.covariate
                s2 += e * other.covariate ** 2
        return s1 / s0, s2 / s0

    q = p + 1
    sigma1 = np.zeros((q, q))
    c = {}
    for i, u, N, w in events:
        m1, m2 = ratio(u)
        P = np.array([((u - t) / h) ** k for k in range(q)])
        sigma1 += w * N * (m2 - m1 ** 2) * np.outer(P, P) / n
        c[(i, u)] = math.sqrt(h) * w * (dataset.subjects[i].covariate - m1) * P

    sigma2 = np.zeros((q, q))
    for (i, u), cu in c.items():
        for (j, v), cv in c.items():
            if i != j:
                continue
            m = min(u, v)
            z = dataset.subjects[i].covariate
            if beta_at is None:
                eta = beta @ local_covariates(z, m, t, p)
            else:
                eta = float(beta_at(m)) * z
            mu = float(mu0_at(m)) * math.exp(eta)
            sigma2 += mu * np.outer(cu, cv) / n
    return sigma1, sigma2
