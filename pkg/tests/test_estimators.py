import math

import numpy as np
import pytest

from driftlab import environment as envmod
from driftlab import estimators, homogenize
from driftlab._stats import (batch_means, combined_se, loglog_fit, plain_mean,
                             ratio_of_means)
from driftlab.errors import HorizonTooShort, TooFewCycles


@pytest.fixture(scope="module")
def sin2():
    return envmod.make_periodic(1, {"const": 2.0, "terms": [[1, 0.0, 1.0]]})


@pytest.fixture(scope="module")
def fdrift(sin2):
    return envmod.make_functional(sin2, "drift_component")


def test_plain_mean_and_ci():
    est = plain_mean(np.arange(100.0))
    assert est.value == pytest.approx(49.5)
    assert est.half_width == pytest.approx(3 * est.se)
    assert est.consistent_with(49.5 + 2 * est.se)
    assert not est.consistent_with(49.5 + 4 * est.se)


def test_batch_means_inflates_se_for_correlated_data():
    rng = np.random.default_rng(0)
    # AR(1) series: batch-means SE must exceed the naive i.i.d. SE
    x = np.empty(40000)
    x[0] = 0.0
    eps = rng.standard_normal(40000)
    for i in range(1, len(x)):
        x[i] = 0.9 * x[i - 1] + eps[i]
    bm = batch_means(x)
    assert bm.se > 2.0 * plain_mean(x).se


def test_ratio_of_means_delta_method():
    rng = np.random.default_rng(1)
    den = 1.0 + 0.1 * rng.standard_normal(5000)
    num = 2.0 * den + 0.05 * rng.standard_normal(5000)
    est = ratio_of_means(num, den)
    assert est.value == pytest.approx(2.0, abs=3 * est.se)
    assert est.se < 1e-3
    with pytest.raises(TooFewCycles):
        ratio_of_means(num[:10], den[:10])


def test_loglog_fit_recovers_power():
    lam = np.array([0.4, 0.2, 0.1, 0.05])
    fit = loglog_fit(lam, 3.0 * lam ** -1.0)
    assert fit.slope == pytest.approx(-1.0, abs=1e-12)
    assert fit.slope_se == pytest.approx(0.0, abs=1e-10)


def test_combined_se():
    a = plain_mean(np.arange(10.0))
    assert combined_se(a, a) == pytest.approx(math.sqrt(2) * a.se)


def test_ergodic_nu_horizon_guard(sin2, fdrift):
    with pytest.raises(HorizonTooShort):
        estimators.ergodic_nu(sin2, fdrift, 0.1, 100.0, 4, seed=0)


def test_ergodic_nu_unforced_is_centered(sin2, fdrift):
    est = estimators.ergodic_nu(sin2, fdrift, 0.0, 50.0, 64, seed=3,
                                step=1e-2)
    assert est.value == pytest.approx(0.0, abs=4 * est.se)


def test_sigma_cov_matches_cell_problem(sin2, fdrift):
    grid = homogenize.TorusGrid(1, 1024)
    ref = homogenize.sigma_pair(sin2, fdrift, fdrift, grid)
    est = estimators.sigma_cov(sin2, fdrift, fdrift, horizon=50.0,
                               n_paths=400, seed=8, step=2e-3)
    assert est.value == pytest.approx(ref, abs=3 * est.se + 0.02)


def test_sigma_e1_mc_flat_medium():
    env = envmod.make_constant(1, 1.0)
    est = estimators.sigma_e1_mc(env, 20.0, 2000, seed=12)
    assert est.value == pytest.approx(1.0, abs=3 * est.se)


def test_gamma_bar_sign_and_magnitude(sin2, fdrift):
    # response of nu(b) to forcing is negative for a = 2 + sin
    est = estimators.gamma_bar(sin2, fdrift, horizon=5.0, n_paths=3000,
                               seed=21, step=1e-3)
    assert est.value < 0
    assert est.value == pytest.approx(math.sqrt(3) - 2.0,
                                      abs=3 * est.se + 0.02)


def test_corrector_pairing_estimator(sin2, fdrift):
    grid = homogenize.TorusGrid(1, 1024)
    chi = homogenize.corrector(sin2, grid)
    est = estimators.corrector_pairing(
        sin2, fdrift, horizon=5.0, n_paths=1500, seed=22,
        chi_eval=lambda x: homogenize.grid_interp(grid, chi, x), step=1e-3)
    target = -0.5 * homogenize.gamma_bar_pde(sin2, fdrift, grid)
    assert est.value == pytest.approx(target, abs=3 * est.se + 0.01)


def test_amax_scaling_inverse_law(sin2, fdrift):
    fit = estimators.amax_scaling(sin2, fdrift, [0.4, 0.2, 0.1], 150, seed=9)
    assert -1.3 < fit.slope < -0.7


def test_doob_bound_holds(sin2, fdrift):
    grid = homogenize.TorusGrid(1, 1024)
    norm, _ = homogenize.h_minus1(sin2, fdrift, fdrift, grid)
    chk = estimators.doob_bound_check(sin2, fdrift, 5.0, 300, seed=10, hminus1_norm=norm)
    assert chk["ok"]
    assert chk["bound"] == pytest.approx(8 * 5.0 * norm ** 2)


def test_lebowitz_rost_two_point():
    env = envmod.make_periodic(1, {"const": 2.0, "terms": [[1, 0.0, 1.0]]})
    f = envmod.make_functional(env, "drift_component")
    fit = estimators.lebowitz_rost_drift(env, f, alpha=1.0, eps_grid=[0.2],
                                         n_paths=200, seed=14, step=2e-3)
    # drift should be near Gamma_bar = sqrt(3) - 2, definitely negative
    assert fit.values[0] < 0
    assert abs(fit.values[0] - (math.sqrt(3) - 2)) < 4 * fit.ses[0] + 0.05


def test_rng_seed_decorrelates():
    seeds = {estimators.rng_seed(5, j) for j in range(16)}
    assert len(seeds) == 16
