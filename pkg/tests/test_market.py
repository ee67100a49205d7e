import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swinghjb import ConfigurationError, MarketModel, SimulationError, simulate_paths, xi_boundary
from swinghjb.market import check_lipschitz, growth_integral, xi_monte_carlo


def test_frozen_gbm_paths_stay_at_start():
    model = MarketModel.gbm(0.0, 0.0, 0.0, 10.0)
    batch = simulate_paths(model, 1.0, 0.0, 10.0, 0.1, 50, seed=1)
    assert batch.prices.shape == (50, 11)
    assert np.all(batch.prices == 10.0)


def test_deterministic_growth_matches_exponential():
    model = MarketModel.gbm(0.1, 0.0, 0.0, 10.0)
    batch = simulate_paths(model, 1.0, 0.0, 10.0, 1e-3, 4, seed=0)
    exact = 10.0 * math.exp(0.1)
    assert batch.n_steps == 1000
    assert np.all(np.abs(batch.prices[:, -1] / exact - 1.0) < 0.01)


def test_driftless_gbm_is_a_martingale():
    model = MarketModel.gbm(0.0, 0.3, 0.0, 10.0)
    batch = simulate_paths(model, 1.0, 0.0, 10.0, 1 / 50, 100_000, seed=7)
    final = batch.prices[:, -1]
    se = final.std(ddof=1) / math.sqrt(final.size)
    assert abs(final.mean() - 10.0) < 3 * se


def test_log_terminal_moments_match_lognormal():
    mu, sigma, T = 0.05, 0.3, 1.0
    model = MarketModel.gbm(mu, sigma, 0.0, 10.0)
    batch = simulate_paths(model, T, 0.0, 10.0, 1 / 250, 100_000, seed=11)
    logs = np.log(batch.prices[:, -1] / 10.0)
    n = logs.size
    mean_exact = (mu - 0.5 * sigma**2) * T
    var_exact = sigma**2 * T
    assert abs(logs.mean() - mean_exact) < 4 * math.sqrt(var_exact / n)
    # Standard error of the sample variance of a normal sample.
    assert abs(logs.var(ddof=1) - var_exact) < 4 * var_exact * math.sqrt(2.0 / (n - 1))


def test_paths_start_at_start_price_and_reproduce():
    model = MarketModel.mean_reverting(2.0, 10.0, 1.5, 0.02, 10.0)
    a = simulate_paths(model, 1.0, 0.25, 9.0, 1 / 64, 20_000, seed=3)
    b = simulate_paths(model, 1.0, 0.25, 9.0, 1 / 64, 20_000, seed=3)
    c = simulate_paths(model, 1.0, 0.25, 9.0, 1 / 64, 20_000, seed=3, workers=4)
    assert np.all(a.prices[:, 0] == 9.0)
    assert a.n_steps == 48
    assert np.array_equal(a.prices, b.prices)
    assert np.array_equal(a.prices, c.prices)
    assert not np.array_equal(a.prices, simulate_paths(model, 1.0, 0.25, 9.0, 1 / 64, 20_000, seed=4).prices)


def test_non_finite_coefficient_is_reported_with_step():
    model = MarketModel.custom(lambda t, p: np.where(t > 0.5, np.nan, 0.0), lambda t, p: 0.0 * p, 0.0, 10.0)
    with pytest.raises(SimulationError, match="step"):
        simulate_paths(model, 1.0, 0.0, 10.0, 0.1, 5, seed=0)


def test_simulation_rejects_bad_start_time():
    model = MarketModel.gbm(0.0, 0.1, 0.0, 10.0)
    with pytest.raises(ConfigurationError):
        simulate_paths(model, 1.0, 1.0, 10.0, 0.1, 5, seed=0)


def test_xi_constant_price_closed_form():
    model = MarketModel.gbm(0.0, 0.0, 0.0, 10.0)
    assert xi_boundary(model, 2.0, 1.0, 0.0, 12.0) == pytest.approx(4.0, abs=1e-12)


@pytest.mark.parametrize("model", [
    MarketModel.gbm(0.05, 0.3, 0.03, 15.0),
    MarketModel.mean_reverting(1.5, 12.0, 2.0, 0.04, 15.0),
])
def test_xi_vanishes_at_maturity(model):
    assert xi_boundary(model, 1.0, 2.0, 1.0, np.array([5.0, 20.0])) == pytest.approx([0.0, 0.0], abs=0)


def _exact_gbm_xi_mc(mu, sigma, r, K, u_bar, tau, p, n_paths, n_steps, seed):
    """Forced-purchase payoff by exact lognormal sampling and trapezoid quadrature."""
    rng = np.random.default_rng(seed)
    h = tau / n_steps
    total = np.zeros(n_paths)
    logp = np.full(n_paths, math.log(p))
    prev = np.full(n_paths, p - K)
    for k in range(1, n_steps + 1):
        logp += (mu - 0.5 * sigma**2) * h + sigma * math.sqrt(h) * rng.standard_normal(n_paths)
        cur = math.exp(-r * k * h) * (np.exp(logp) - K)
        total += 0.5 * h * (prev + cur)
        prev = cur
    total *= u_bar
    return total.mean(), total.std(ddof=1) / math.sqrt(n_paths)


def test_xi_gbm_closed_form_matches_exact_sampling_oracle():
    model = MarketModel.gbm(0.05, 0.3, 0.03, 15.0)
    closed = xi_boundary(model, 1.0, 2.0, 0.0, 20.0)
    mean, se = _exact_gbm_xi_mc(0.05, 0.3, 0.03, 15.0, 2.0, 1.0, 20.0, 1_000_000, 20, seed=2024)
    assert abs(closed - mean) < 3 * se


def test_xi_mean_reverting_closed_form_matches_monte_carlo():
    model = MarketModel.mean_reverting(1.5, 12.0, 2.0, 0.04, 10.0)
    closed = xi_boundary(model, 1.0, 3.0, 0.2, 8.0)
    mean, se = xi_monte_carlo(model, 1.0, 3.0, 0.2, 8.0, n_paths=200_000, dt=1 / 400, seed=5)
    assert abs(closed - mean) < 3 * se


def test_xi_custom_model_uses_monte_carlo_with_error():
    model = MarketModel.custom(lambda t, p: 0.0 * p, lambda t, p: 0.2 + 0.0 * p, 0.0, 10.0)
    value, err = xi_boundary(model, 1.0, 1.0, 0.0, 11.0, return_error=True, n_paths=20_000, dt=0.05)
    assert err > 0
    assert abs(value - 1.0) < 4 * err + 1e-9


@pytest.mark.parametrize("a", [0.0, 1e-14, -1e-13])
def test_growth_integral_singular_limit(a):
    assert growth_integral(a, 2.0) == pytest.approx(2.0, rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(
    mu=st.floats(-0.5, 0.5), r=st.floats(0.0, 0.2), tau=st.floats(0.0, 3.0),
    p=st.floats(0.1, 100.0), u=st.floats(0.1, 10.0),
)
def test_xi_gbm_is_affine_in_price_and_linear_in_rate(mu, r, tau, p, u):
    model = MarketModel.gbm(mu, 0.3, r, 10.0)
    x1 = xi_boundary(model, 3.0, u, 3.0 - tau, p)
    x2 = xi_boundary(model, 3.0, 2 * u, 3.0 - tau, p)
    assert x2 == pytest.approx(2 * x1, rel=1e-12, abs=1e-12)
    lo, mid, hi = (xi_boundary(model, 3.0, u, 3.0 - tau, q) for q in (p, p + 1.0, p + 2.0))
    assert hi - mid == pytest.approx(mid - lo, rel=1e-9, abs=1e-9)


def test_presets_are_lipschitz_with_linear_growth():
    gbm = check_lipschitz(MarketModel.gbm(0.05, 0.3, 0.03, 10.0), 1.0, (0.0, 50.0))
    assert gbm["drift_lipschitz"] <= 0.05 + 1e-12
    assert gbm["vol_lipschitz"] <= 0.3 + 1e-12
    ou = check_lipschitz(MarketModel.mean_reverting(2.0, 10.0, 1.0, 0.0, 10.0), 1.0, (-20.0, 40.0))
    assert ou["drift_lipschitz"] <= 2.0 + 1e-12
    assert ou["vol_lipschitz"] == 0.0


def test_model_rejects_invalid_parameters():
    with pytest.raises(ConfigurationError):
        MarketModel.gbm(0.0, -0.1, 0.0, 10.0)
    with pytest.raises(ConfigurationError):
        MarketModel.gbm(0.0, 0.1, -0.01, 10.0)
    with pytest.raises(ConfigurationError):
        MarketModel.gbm(0.0, 0.1, 0.0, 0.0)
