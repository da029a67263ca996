import math

import numpy as np
import pytest
from scipy import stats

from occlusight.photoncount import (AcquisitionParams, CountError, CountMatrix,
                                    binomial_log_pmf, detection_probability, entry_rng,
                                    expected_counts, p0, pulses_for_ppp, rate_estimate,
                                    simulate_counts)


def params(N, eta=0.35, B=0.0, m=1):
    return AcquisitionParams.uniform(N, eta, B, m)


def test_p0_examples():
    assert p0(0.0, 0.0, 0.35) == 1.0
    assert p0(1e-5, 1e-6, 0.35) == pytest.approx(math.exp(-0.35 * 1.1e-5), rel=1e-15)
    Y = np.linspace(0, 1, 50)
    assert np.all(np.diff(p0(Y, 1e-3, 0.35)) < 0)
    with pytest.raises(CountError):
        p0(-1e-3, 0.0, 0.35)


def test_low_flux_linearization_regime():
    rate = np.logspace(-9, -3.01, 40)
    exact = detection_probability(rate, 0.0, 1.0)
    assert np.all(np.abs(exact - rate) / rate < 1e-3)


def test_zero_rates_give_zero_counts():
    Y = np.zeros((3, 3))
    for seed in range(5):
        R = simulate_counts(Y, params(1000, m=3), seed)
        assert not R.counts.any()


def test_monte_carlo_mean_within_four_standard_errors():
    N, eta, Y, B = 200, 0.35, 0.01, 0.002
    p = 1 - math.exp(-eta * (Y + B))
    prm = params(N, eta, B)
    draws = np.array([simulate_counts(np.array([[Y]]), prm, s).counts[0, 0]
                      for s in range(10_000)])
    se = math.sqrt(N * p * (1 - p) / draws.size)
    assert abs(draws.mean() - N * p) < 4 * se


def test_empirical_pmf_passes_chi_squared():
    N, eta, Y = 12, 1.0, 0.2
    p = 1 - math.exp(-eta * Y)
    side = 317                              # about 1e5 independent entries
    R = simulate_counts(np.full((side, side), Y), params(N, eta, 0.0, side), 99).counts
    observed = np.bincount(R.ravel(), minlength=N + 1)
    expected = np.exp(binomial_log_pmf(np.arange(N + 1), N, p)) * R.size
    keep = expected > 5                     # pool sparse tail cells
    obs = np.r_[observed[keep], observed[~keep].sum()]
    exp_ = np.r_[expected[keep], expected[~keep].sum()]
    if exp_[-1] == 0:
        obs, exp_ = obs[:-1], exp_[:-1]
    pval = stats.chisquare(obs, exp_ * obs.sum() / exp_.sum()).pvalue
    assert pval > 0.001


def test_entries_use_order_independent_streams():
    Y = np.random.default_rng(0).uniform(0, 0.01, (4, 4))
    prm = params(500, 0.35, 1e-3, 4)
    R = simulate_counts(Y, prm, 42)
    prob = detection_probability(Y, prm.background, prm.efficiency)
    for i, j in [(0, 0), (2, 3), (3, 1)]:
        assert R.counts[i, j] == entry_rng(42, i, j).binomial(500, prob[i, j])
    again = simulate_counts(Y, prm, 42)
    assert again.counts.tobytes() == R.counts.tobytes()
    assert simulate_counts(Y, prm, 43).counts.tobytes() != R.counts.tobytes()
    assert R.counts.min() >= 0 and R.counts.max() <= 500


def test_paper_pulse_count_gives_hundreds_of_counts():
    from occlusight.config import load_config
    from occlusight.transport import apply_forward, build_operator
    cfg = load_config("paper_scale.cfg")
    s = cfg.scene
    s = s.replace(illumination=s.illumination.with_counts(24, 24),
                  hidden_wall=s.hidden_wall.with_counts(24, 24),
                  fov=s.fov.with_counts(12, 12))
    op = build_operator(s, cfg.acquisition.kp)
    F = cfg.truth.image(24, s.hidden_wall.extent_u)
    assert cfg.acquisition.pulses == 712_000
    prm = AcquisitionParams.uniform(cfg.acquisition.pulses, cfg.acquisition.efficiency,
                                    cfg.acquisition.background, 24)
    R = simulate_counts(apply_forward(op, F), prm, 0)
    assert 100 <= R.counts.mean() < 1000


def test_binomial_log_pmf_edge_cases():
    assert binomial_log_pmf(0, 10, 0.0) == 0.0
    assert binomial_log_pmf(10, 10, 1.0) == 0.0
    assert binomial_log_pmf(1, 10, 0.0) == -np.inf
    assert binomial_log_pmf(3, 10, 1.0) == -np.inf
    with pytest.raises(CountError):
        binomial_log_pmf(11, 10, 0.5)
    with pytest.raises(CountError):
        binomial_log_pmf(-1, 10, 0.5)


@pytest.mark.parametrize("p", [1e-6, 0.01, 0.3, 0.5, 0.97])
def test_binomial_pmf_normalizes(p):
    for N in range(1, 51):
        total = np.exp(binomial_log_pmf(np.arange(N + 1), N, p)).sum()
        assert abs(total - 1.0) < 1e-12


def test_binomial_log_pmf_matches_scipy():
    r = np.arange(0, 31)
    np.testing.assert_allclose(binomial_log_pmf(r, 30, 0.27), stats.binom.logpmf(r, 30, 0.27),
                               rtol=1e-12)


def test_rate_estimate_cases():
    prm = params(1000, 0.35, 0.0, 2)
    assert not rate_estimate(CountMatrix(np.zeros((2, 2), int), prm)).any()
    full = rate_estimate(CountMatrix(np.full((2, 2), 1000), prm))
    assert np.all(np.isfinite(full)) and np.all(full > 0)
    assert full[0, 0] == pytest.approx(-math.log(0.5 / 1000) / 0.35)


def test_rate_estimate_noiseless_round_trip():
    N, eta = 100_000, 0.35
    Y = np.linspace(1e-5, 2e-3, 16).reshape(4, 4)
    B = np.full((4, 4), 2e-4)
    prm = AcquisitionParams(N, eta, B)
    R = np.round(N * (1 - p0(Y, B, eta))).astype(int)
    Yhat = rate_estimate(CountMatrix(R, prm))
    assert np.all(np.abs(Yhat - Y) <= 1.0 / (eta * (N - R)))


def test_rate_estimate_clamps_negative_to_zero():
    prm = params(1000, 0.35, 0.01, 1)
    assert rate_estimate(CountMatrix(np.array([[0]]), prm))[0, 0] == 0.0


def test_count_matrix_validation():
    prm = params(10, m=2)
    with pytest.raises(CountError):
        CountMatrix(np.array([[0, 11], [0, 0]]), prm)
    with pytest.raises(CountError):
        CountMatrix(np.array([[0, -1], [0, 0]]), prm)
    with pytest.raises(CountError):
        CountMatrix(np.zeros((3, 3), int), prm)
    with pytest.raises(CountError):
        CountMatrix(np.array([[0.5, 0], [0, 0]]), prm)
    with pytest.raises(CountError):
        AcquisitionParams(0, 0.35, np.zeros((2, 2)))
    with pytest.raises(CountError):
        AcquisitionParams(5, 1.2, np.zeros((2, 2)))
    with pytest.raises(CountError):
        AcquisitionParams(5, 0.3, -np.ones((2, 2)))


def test_pulses_for_ppp_hits_target():
    Y = np.full((3, 3), 1e-4)
    base = params(1, 0.35, 1e-5, 3)
    N = pulses_for_ppp(Y, base, 500.0)
    assert expected_counts(Y, base.with_pulses(N)).mean() == pytest.approx(500.0, rel=1e-4)
    with pytest.raises(CountError):
        pulses_for_ppp(Y, base, 1e9, max_pulses=1000)
    with pytest.raises(CountError):
        pulses_for_ppp(np.zeros((3, 3)), params(1, 0.35, 0.0, 3), 10.0)
