import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from oracles import direct_baseline, direct_sandwich, random_dataset
from tvpanel.curve import (
    CURVE_COLUMNS,
    VARIANCE_FORMS,
    StepFunction,
    baseline,
    confidence_interval,
    covariance,
    estimate_curve,
    optimal_bandwidth,
    standard_errors,
)
from tvpanel.exceptions import (
    AllPointsFailed,
    DegenerateCurvature,
    NoVisitAtT,
    SingularSigma1,
)
from tvpanel.kernels import KernelSpec
from tvpanel.local_fit import LocalFit, build_design, solve
from tvpanel.panel_data import PanelDataset, Subject
from tvpanel.simulator import builtin_setting, generate

SPEC = KernelSpec("epanechnikov", 1.0)


def _flat(level=1.0):
    return lambda t: np.full_like(np.asarray(t, dtype=float), level)


def test_baseline_zero_covariates_is_average():
    ds = PanelDataset((Subject("a", [2.0], [2], 0.0), Subject("b", [2.0], [7], 0.0),
                       Subject("c", [3.0], [1], 0.0)), tau=4.0)
    assert baseline(ds, 0.8, 2.0) == pytest.approx(4.5)


def test_baseline_single_visitor():
    ds = PanelDataset((Subject("a", [2.0], [6], 1.0), Subject("b", [3.0], [1], 0.0)))
    assert baseline(ds, 0.0, 2.0) == 6.0


def test_baseline_matches_direct_summation():
    ds = PanelDataset((Subject("a", [1.0, 2.0], [1, 3], 0.2),
                       Subject("b", [2.0], [5], 0.9),
                       Subject("c", [2.0], [4], -0.4),
                       Subject("d", [2.0], [9], 0.5, censor_time=1.5)), tau=3.0)
    assert baseline(ds, 0.3, 2.0) == pytest.approx(direct_baseline(ds, 0.3, 2.0), rel=1e-12)
    assert baseline(ds, lambda t: 0.3, 2.0) == baseline(ds, 0.3, 2.0)


def test_baseline_without_visitors():
    ds = PanelDataset((Subject("a", [2.0], [6], 1.0), Subject("b", [3.0], [1], 0.0)))
    with pytest.raises(NoVisitAtT):
        baseline(ds, 0.0, 2.5)


def test_step_function():
    f = StepFunction([1.0, 2.0, 3.0], [5.0, np.nan, 7.0])
    np.testing.assert_array_equal(f([0.5, 1.0, 2.5, 3.0, 9.0]), [5, 5, 5, 7, 7])
    with pytest.raises(NoVisitAtT):
        StepFunction([1.0], [np.nan])


def _fit(ds, t, spec=SPEC):
    design = build_design(ds, t, spec)
    return design, solve(design)


@pytest.mark.parametrize("seed", range(5))
def test_covariance_matches_direct_loops(seed):
    rng = np.random.default_rng(seed)
    ds = random_dataset(rng, n=15)
    design, fit = _fit(ds, 2.0)
    mu0 = lambda u: 1.0 + np.asarray(u) ** 2  # noqa: E731
    sig, s1, s2 = covariance(ds, fit, mu0, SPEC, design=design)
    o1, o2 = direct_sandwich(ds, 2.0, "epanechnikov", 1.0, 1, fit.beta, mu0)
    np.testing.assert_allclose(s1, o1, rtol=1e-10, atol=1e-14)
    np.testing.assert_allclose(s2, o2, rtol=1e-10, atol=1e-14)
    inv = np.linalg.inv(o1)
    np.testing.assert_allclose(sig, inv @ o2 @ inv, rtol=1e-9)

    def paired(u):
        return 0.4 - 0.1 * np.asarray(u)

    _, _, s2 = covariance(ds, fit, mu0, SPEC, design=design, beta_at=paired)
    _, o2 = direct_sandwich(ds, 2.0, "epanechnikov", 1.0, 1, fit.beta, mu0, beta_at=paired)
    np.testing.assert_allclose(s2, o2, rtol=1e-10, atol=1e-14)


@pytest.mark.parametrize("variance", VARIANCE_FORMS)
def test_covariance_symmetric_psd(variance):
    ds = PanelDataset((Subject("a", [1.9, 2.1], [2, 4], 1.0),
                       Subject("b", [1.9, 2.1], [2, 4], -1.0),
                       Subject("c", [1.9, 2.1], [1, 5], 0.0)), tau=4.0)
    design, fit = _fit(ds, 2.0)
    sig, _, _ = covariance(ds, fit, _flat(3.0), SPEC, design=design, variance=variance)
    np.testing.assert_allclose(sig, sig.T, atol=1e-12)
    assert np.linalg.eigvalsh(sig).min() >= -1e-10


def test_sigma1_is_rescaled_negative_hessian():
    ds = random_dataset(np.random.default_rng(21), n=20)
    design, fit = _fit(ds, 2.0)
    _, s1, _ = covariance(ds, fit, _flat(), SPEC, design=design)
    D = np.diag(SPEC.bandwidth ** np.arange(2))
    np.testing.assert_allclose(s1, -D @ fit.hessian @ D, rtol=1e-10)


def test_poisson_forms_ordering():
    # the clustered form adds nonnegative cross terms for positive residual products
    ds = PanelDataset((Subject("a", [1.9, 2.1], [2, 4], 1.0),
                       Subject("b", [1.9, 2.1], [2, 4], -1.0)), tau=4.0)
    design, fit = _fit(ds, 2.0)
    full, _, _ = covariance(ds, fit, _flat(), SPEC, design=design)
    diag, _, _ = covariance(ds, fit, _flat(), SPEC, design=design, variance="poisson")
    assert full[0, 0] >= diag[0, 0] > 0


def test_all_jumps_zero_singular():
    ds = PanelDataset((Subject("a", [1.9, 2.1], [0, 0], 1.0),
                       Subject("b", [1.9, 2.1], [0, 0], -1.0)), tau=4.0)
    design = build_design(ds, 2.0, SPEC)
    fit = LocalFit(2.0, np.zeros(2), 0.0, 0.0, np.zeros((2, 2)), 0, True, 0)
    with pytest.raises(SingularSigma1):
        covariance(ds, fit, _flat(), SPEC, design=design)


def test_unknown_variance_form():
    ds = random_dataset(np.random.default_rng(2), n=10)
    design, fit = _fit(ds, 2.0)
    with pytest.raises(ValueError):
        covariance(ds, fit, _flat(), SPEC, design=design, variance="bogus")


def test_standard_errors_scaling():
    sigma = np.diag([0.9, 0.4])
    se = standard_errors(sigma, 300, 0.5)
    assert se[0] == pytest.approx(math.sqrt(0.9 / 150))
    assert se[1] == pytest.approx(math.sqrt(0.4 / (300 * 0.5 ** 3)))


def test_confidence_interval_arithmetic():
    lo, hi = confidence_interval(1.0, [[0.9]], 300, 0.5)
    assert 0.5 * (hi - lo) == pytest.approx(1.959964 * math.sqrt(0.9 / 150), rel=1e-6)
    assert confidence_interval(0.7, [[0.0]], 300, 0.5) == (0.7, 0.7)
    with pytest.raises(ValueError):
        confidence_interval(0.7, [[1.0]], 300, 0.5, level=1.0)


def _shift(ds, c):
    return PanelDataset(tuple(Subject(s.id, s.visit_times, s.cumulative_counts,
                                      s.covariate + c, s.censor_time) for s in ds.subjects),
                        tau=ds.tau)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), shift=st.floats(-3, 3))
def test_se_invariant_to_covariate_shift(seed, shift):
    ds = random_dataset(np.random.default_rng(seed), n=25, ticks=12)
    moved = _shift(ds, shift)
    grid = np.linspace(1.0, 3.0, 5)
    a = estimate_curve(ds, SPEC, grid)
    b = estimate_curve(moved, SPEC, grid)
    ok = np.isfinite(a.se)
    np.testing.assert_array_equal(ok, np.isfinite(b.se))
    np.testing.assert_allclose(a.se[ok], b.se[ok], rtol=1e-8)


@pytest.fixture(scope="module")
def setting1_data():
    return generate(builtin_setting(1, n=150, seed=5))


def test_warm_and_cold_starts_agree(setting1_data):
    warm = estimate_curve(setting1_data, KernelSpec("epanechnikov", 0.5), warm_start=True)
    cold = estimate_curve(setting1_data, KernelSpec("epanechnikov", 0.5), warm_start=False)
    np.testing.assert_array_equal(warm.converged, cold.converged)
    np.testing.assert_allclose(warm.beta_hat, cold.beta_hat, atol=1e-6, equal_nan=True)
    np.testing.assert_allclose(warm.se, cold.se, atol=1e-6, equal_nan=True)


def test_curve_invariants(setting1_data):
    est = estimate_curve(setting1_data, KernelSpec("epanechnikov", 0.5))
    assert est.grid.size == 100
    ok = est.converged
    assert ok.mean() > 0.9
    assert np.all(np.isfinite(est.se[ok]))
    assert np.all(est.se[ok] >= 0)
    pos = ok & (est.se > 0)
    assert np.all(est.ci_lower[pos] < est.ci_upper[pos])
    assert np.all(est.boundary == ((est.grid < 0.5) | (est.grid > 5.5)))
    sig = est.sigma[ok]
    np.testing.assert_allclose(sig, np.swapaxes(sig, 1, 2), atol=1e-12)
    assert np.linalg.eigvalsh(sig).min() >= -1e-10
    lines = est.to_csv().splitlines()
    assert lines[0] == ",".join(CURVE_COLUMNS)
    assert len(lines) == 101


def test_curve_flags_empty_window():
    ds = PanelDataset((Subject("a", [1.0, 1.2], [1, 3], 0.2),
                       Subject("b", [1.0, 1.2], [2, 2], 0.9),
                       Subject("c", [1.0, 1.2], [0, 4], -0.5)), tau=6.0)
    est = estimate_curve(ds, KernelSpec("epanechnikov", 0.5), grid=[1.1, 4.0])
    assert est.converged[0] and not est.converged[1]
    assert math.isnan(est.beta_hat[1])
    assert est.status[1] == "EmptyWindow"


def test_curve_all_points_failed():
    ds = PanelDataset((Subject("a", [1.0], [1], 0.2), Subject("b", [1.0], [2], 0.9)),
                      tau=6.0)
    with pytest.raises(AllPointsFailed):
        estimate_curve(ds, KernelSpec("epanechnikov", 0.5), grid=[4.0, 5.0])


def test_constant_truth_recovered():
    ds = generate(builtin_setting(1, n=400, seed=3).with_(beta=lambda t: 0.5 + 0 * t))
    est = estimate_curve(ds, KernelSpec("epanechnikov", 1.0), grid=np.linspace(1.5, 4.5, 7))
    z = (est.beta_hat - 0.5) / est.se
    assert np.all(np.abs(z) < 3.5)


def _setting1_sigmas(sample):
    cfg = builtin_setting(1)

    def q(t, j):
        return np.mean(cfg.mu0(t) * np.exp(cfg.beta(t) * sample) * sample ** j)

    def s1(t):
        return q(t, 2) - q(t, 1) ** 2 / q(t, 0)

    def s2(t):
        c = q(t, 1) / q(t, 0)
        return np.mean((sample - c) ** 2 * cfg.mu0(t) ** 2 * np.exp(2 * cfg.beta(t) * sample))

    return cfg, s1, s2


def _interior(t):
    return 1.0 if 1.0 <= t <= 5.0 else 0.0


def test_optimal_bandwidth_scaling_and_degenerate():
    spec = KernelSpec("epanechnikov", 0.5)
    args = (lambda t: 1.0 + t, lambda t: 2.0 + t, lambda t: math.sin(t), lambda t: 1.0, 6.0)
    h = optimal_bandwidth(*args, n=300, spec=spec)
    assert optimal_bandwidth(*args, n=300 * 32, spec=spec) == pytest.approx(h / 2, rel=1e-12)
    with pytest.raises(DegenerateCurvature):
        optimal_bandwidth(args[0], args[1], lambda t: 0.0, args[3], 6.0, 300, spec)


def test_optimal_bandwidth_closed_form():
    # constant sigma ratio and beta'' give h = (nu0 r / (mu2^2 c^2))^{1/5} n^{-1/5}
    spec = KernelSpec("epanechnikov")
    h = optimal_bandwidth(lambda t: 2.0, lambda t: 3.0, lambda t: 0.5, lambda t: 1.0,
                          4.0, 100, spec)
    expected = (0.6 * 0.75 * 4.0 / (0.04 * 0.25 * 4.0)) ** 0.2 * 100 ** -0.2
    assert h == pytest.approx(expected, rel=1e-10)


def test_optimal_bandwidth_setting1_regression():
    sample = np.random.default_rng(0).uniform(0.0, 1.0, 20_000)
    cfg, s1, s2 = _setting1_sigmas(sample)
    spec = KernelSpec("epanechnikov")
    h = optimal_bandwidth(s1, s2, cfg.beta_dd, _interior, cfg.tau, 300, spec)
    assert math.isfinite(h) and h > 0
    assert h == pytest.approx(2.5021532466840535, rel=1e-9)

    # quadrature over the covariate law instead of Monte Carlo
    def qe(t, j):
        return integrate.quad(lambda x: cfg.mu0(t) * math.exp(cfg.beta(t) * x) * x ** j,
                              0, 1)[0]

    def s1e(t):
        return qe(t, 2) - qe(t, 1) ** 2 / qe(t, 0)

    def s2e(t):
        c = qe(t, 1) / qe(t, 0)
        return integrate.quad(
            lambda x: (x - c) ** 2 * cfg.mu0(t) ** 2 * math.exp(2 * cfg.beta(t) * x), 0, 1)[0]

    exact = optimal_bandwidth(s1e, s2e, cfg.beta_dd, _interior, cfg.tau, 300, spec)
    assert h == pytest.approx(exact, rel=0.01)
