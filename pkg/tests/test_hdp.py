import numpy as np
import pytest
from scipy import stats

from proplab.exceptions import ProplabArgumentException, ProplabInputException
from proplab.hdp import (
    GlobalPopularity,
    HdpParams,
    dirichlet_mean,
    estimate_beta,
    log_dirichlet,
    sample_initial_propensities,
    stick_breaking,
)


def test_stick_breaking_sums_to_one():
    for seed in range(20):
        popularity = stick_breaking(1.5, 10, rng_seed=seed)
        assert popularity.beta.sum() + popularity.beta_unseen == pytest.approx(1.0, abs=1e-12)
        assert np.all(popularity.beta >= 0)
        assert popularity.communities == tuple(f"c{i}" for i in range(10))


def test_stick_breaking_deterministic():
    first = stick_breaking(1.0, 5, rng_seed=3)
    second = stick_breaking(1.0, 5, rng_seed=3)
    np.testing.assert_array_equal(first.beta, second.beta)
    assert first.beta_unseen == second.beta_unseen


def test_stick_breaking_small_gamma_takes_first_stick():
    assert stick_breaking(1e-6, 4, rng_seed=0).beta[0] > 0.999


def test_stick_breaking_first_stick_mean():
    firsts = [stick_breaking(1.0, 3, rng_seed=seed).beta[0] for seed in range(4000)]
    assert np.mean(firsts) == pytest.approx(0.5, abs=0.03)


@pytest.mark.parametrize("gamma, K", [(0.0, 3), (-1.0, 3), (1.0, 0)])
def test_stick_breaking_invalid(gamma, K):
    with pytest.raises(ProplabArgumentException):
        stick_breaking(gamma, K, rng_seed=0)


def test_popularity_must_be_a_simplex():
    with pytest.raises(ProplabArgumentException):
        GlobalPopularity(communities=("A", "B"), beta=np.array([0.5, 0.4]), beta_unseen=0.2)
    with pytest.raises(ProplabArgumentException):
        GlobalPopularity(communities=("A",), beta=np.array([0.5, 0.5]), beta_unseen=0.0)


def test_popularity_round_trip():
    popularity = stick_breaking(2.0, 4, rng_seed=1)
    again = GlobalPopularity.from_dict(popularity.to_dict())
    np.testing.assert_array_equal(again.beta, popularity.beta)
    assert again.communities == popularity.communities


def test_hdp_alpha0_positive(make_params):
    popularity = make_params().popularity
    with pytest.raises(ProplabArgumentException):
        HdpParams(alpha0=0.0, popularity=popularity)


def test_initial_propensities_on_simplex(make_params):
    hdp = make_params(beta=(0.5, 0.3), beta_unseen=0.2, alpha0=3.0).hdp
    rng = np.random.default_rng(0)
    for _ in range(100):
        q0 = sample_initial_propensities(hdp, rng)
        assert q0.shape == (3,)
        assert q0.sum() == pytest.approx(1.0, abs=1e-12)


def test_initial_propensities_concentrate_for_large_alpha0(make_params):
    hdp = make_params(beta=(0.5, 0.3), beta_unseen=0.2, alpha0=1e7).hdp
    draws = np.array([sample_initial_propensities(hdp, seed) for seed in range(50)])
    np.testing.assert_allclose(draws, np.tile([0.5, 0.3, 0.2], (50, 1)), atol=5e-3)


def test_initial_propensities_mean(make_params):
    hdp = make_params(beta=(0.5, 0.5), alpha0=1.0).hdp
    rng = np.random.default_rng(99)
    draws = np.array([sample_initial_propensities(hdp, rng)[0] for _ in range(20_000)])
    assert draws.mean() == pytest.approx(0.5, abs=0.01)


def test_zero_mass_slot_gets_zero(make_params):
    hdp = make_params(beta=(0.5, 0.5), beta_unseen=0.0).hdp
    assert sample_initial_propensities(hdp, 4)[-1] == 0.0


def test_dirichlet_mean(make_params):
    hdp = make_params(beta=(0.6, 0.3), beta_unseen=0.1, alpha0=5.0).hdp
    np.testing.assert_allclose(dirichlet_mean(hdp), [0.6, 0.3, 0.1])


def test_log_dirichlet_matches_scipy():
    alpha = np.array([0.7, 2.0, 1.3])
    q0 = np.array([0.2, 0.5, 0.3])
    assert float(log_dirichlet(q0, alpha)) == pytest.approx(stats.dirichlet.logpdf(q0, alpha))


def test_log_dirichlet_outside_support():
    alpha = np.array([1.0, 2.0, 0.0])
    assert log_dirichlet(np.array([0.4, 0.5, 0.1]), alpha) == -np.inf
    assert np.isfinite(log_dirichlet(np.array([0.4, 0.6, 0.0]), alpha))


def test_log_dirichlet_rows():
    alpha = np.array([1.0, 2.0])
    rows = log_dirichlet(np.array([[0.5, 0.5], [0.2, 0.8]]), alpha)
    assert rows.shape == (2,)
    assert rows[1] == pytest.approx(stats.dirichlet.logpdf([0.2, 0.8], alpha))


def test_estimate_beta_counts(make_log):
    log = make_log({"u": [("A", 0, 0), ("A", 0, 0), ("B", 0, 0), ("A", 0, 0)]})
    popularity = estimate_beta(log, smoothing=0.0, unseen_mass=0.0)
    assert popularity.communities == ("A", "B")
    np.testing.assert_allclose(popularity.beta, [0.75, 0.25])
    assert popularity.beta_unseen == 0.0


def test_estimate_beta_single_community(make_log):
    log = make_log({"u": [("A", 0, 0)] * 3})
    popularity = estimate_beta(log, smoothing=0.0, unseen_mass=0.0)
    np.testing.assert_allclose(popularity.beta, [1.0])


def test_estimate_beta_default_unseen_mass(make_log):
    log = make_log({"u": [("A", 0, 0), ("B", 0, 0)], "v": [("A", 0, 0), ("C", 0, 0)]})
    popularity = estimate_beta(log, gamma=2.0)
    assert popularity.beta_unseen == pytest.approx(2.0 / 6.0)
    assert popularity.beta.sum() + popularity.beta_unseen == pytest.approx(1.0, abs=1e-9)


def test_estimate_beta_order_invariant(make_log):
    first = make_log({"u": [("A", 1, 0), ("B", 0, 0), ("A", 2, 0)], "v": [("C", 0, 0)]})
    second = make_log({"v": [("C", 0, 0)], "u": [("B", 0, 0), ("A", 0, 0), ("A", 0, 0)]})
    np.testing.assert_allclose(estimate_beta(first).beta, estimate_beta(second).beta)


def test_estimate_beta_empty(make_log):
    with pytest.raises(ProplabInputException):
        estimate_beta(make_log({}))
