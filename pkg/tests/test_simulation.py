import numpy as np
import pytest

from proplab.exceptions import ProplabArgumentException, ProplabInputException
from proplab.feedback import ConstantFeedback, NoFeedback, PoissonFeedback
from proplab.hdp import HdpParams, sample_initial_propensities
from proplab.model import PropensityState, RewardFunction, apply_update, choice_distribution
from proplab.simulation import (
    Regime,
    RegimeThresholds,
    SimConfig,
    TrajectorySummary,
    agent_popularity,
    aggregate_runs,
    aggregates_csv,
    classify_trajectory,
    post_rewards,
    run_repetitions,
    run_seeding,
    trajectories_csv,
)


@pytest.fixture
def agent_params(make_params):
    return make_params(
        beta=(0.4, 0.4), beta_unseen=0.2, alpha0=2.0, phi=0.1, epsilon=0.1, w_replies=1.0
    )


@pytest.mark.parametrize(
    "level, regime",
    [(0.3, Regime.NO_TRACTION), (0.4, Regime.NO_TRACTION), (0.5, Regime.LATE_FAILURE),
     (0.6, Regime.SUCCESS)],
)
def test_classify_flat_trajectories(level, regime):
    assert classify_trajectory(np.full(700, level)) is regime


def test_classify_uses_one_based_rounds():
    trajectory = np.full(700, 0.9)
    trajectory[199] = 0.1
    assert classify_trajectory(trajectory) is Regime.NO_TRACTION
    trajectory[199] = 0.9
    trajectory[699] = 0.5
    assert classify_trajectory(trajectory) is Regime.LATE_FAILURE


def test_classify_custom_thresholds():
    thresholds = RegimeThresholds(no_traction_round=2, no_traction_level=0.1,
                                  late_round=3, late_level=0.2)
    assert classify_trajectory([0.0, 0.5, 0.3], thresholds) is Regime.SUCCESS


def test_classify_too_short():
    with pytest.raises(ProplabInputException):
        classify_trajectory(np.ones(699))


def test_aggregate_runs():
    runs = [
        TrajectorySummary(np.array([0.0, 0.5]), Regime.SUCCESS),
        TrajectorySummary(np.array([0.5, 0.0]), Regime.SUCCESS),
        TrajectorySummary(np.array([1.0, 1.0]), Regime.NO_TRACTION),
        TrajectorySummary(np.zeros(0), None, empty_population=True),
    ]
    aggregates = aggregate_runs(runs)
    assert set(aggregates) == {Regime.SUCCESS, Regime.NO_TRACTION}
    assert aggregates[Regime.SUCCESS].count == 2
    np.testing.assert_allclose(aggregates[Regime.SUCCESS].mean_curve, [0.25, 0.25])
    np.testing.assert_allclose(aggregates[Regime.NO_TRACTION].mean_curve, [1.0, 1.0])
    assert "Success,2,1,0.25" in aggregates_csv(aggregates).splitlines()
    assert aggregate_runs([]) == {}


def test_aggregate_runs_length_mismatch():
    runs = [
        TrajectorySummary(np.zeros(3), Regime.SUCCESS),
        TrajectorySummary(np.zeros(4), Regime.SUCCESS),
    ]
    with pytest.raises(ProplabInputException):
        aggregate_runs(runs)


def test_empty_population(agent_params):
    summary = run_seeding(SimConfig(agent_params, n_agents=0, total_rounds=10, seed_rounds=5))
    assert summary.empty_population
    assert summary.regime is None
    assert summary.rounds == 0


def test_run_is_deterministic(agent_params):
    cfg = SimConfig(agent_params, n_agents=20, total_rounds=50, seed_rounds=20, rng_seed=3)
    first = run_seeding(cfg)
    np.testing.assert_array_equal(first.interest, run_seeding(cfg).interest)
    assert first.rounds == 50
    assert first.regime is None
    assert np.all((first.interest >= 0) & (first.interest <= 1))


def test_repetitions_use_consecutive_seeds(agent_params):
    cfg = SimConfig(agent_params, n_agents=10, total_rounds=20, seed_rounds=10, rng_seed=5)
    runs = run_repetitions(cfg, 3)
    assert len(runs) == 3
    for offset, run in enumerate(runs):
        expected = run_seeding(SimConfig(agent_params, n_agents=10, total_rounds=20,
                                         seed_rounds=10, rng_seed=5 + offset))
        np.testing.assert_array_equal(run.interest, expected.interest)
    lines = trajectories_csv(runs).splitlines()
    assert lines[0] == "run,round,interest,regime"
    assert len(lines) == 1 + 3 * 20


def twin_interest(cfg):
    """Per-agent replay of the vectorized round loop."""
    rng = np.random.default_rng(cfg.rng_seed)
    params = cfg.agent_params
    popularity = agent_popularity(cfg)
    hdp = HdpParams(alpha0=params.alpha0, popularity=popularity)
    states = [
        PropensityState.initial(popularity.communities, sample_initial_propensities(hdp, rng))
        for _ in range(cfg.n_agents)
    ]
    target = states[0].slot_of(cfg.target_community)

    interest = []
    for _ in range(cfg.total_rounds):
        draws = rng.random(len(states))
        chosen = []
        for state, draw in zip(states, draws):
            cumulative = np.cumsum(choice_distribution(state))
            slot = int(np.searchsorted(cumulative, draw * cumulative[-1], side="right"))
            chosen.append(min(slot, len(cumulative) - 1))
        states = [
            apply_update(state, slot, 1.0 if slot == target else 0.0, params.learning)
            for state, slot in zip(states, chosen)
        ]
        interest.append(np.mean(np.array(chosen) == target))
    return np.array(interest)


def test_matches_per_agent_replay(make_params):
    params = make_params(beta=(0.4, 0.4), beta_unseen=0.2, alpha0=2.0, w_replies=1.0)
    cfg = SimConfig(
        params,
        n_agents=10,
        total_rounds=50,
        seed_rounds=25,
        feedback_model=ConstantFeedback(replies=1),
        seed_feedback=NoFeedback(),
        feedback_scope="target",
        rng_seed=12,
    )
    np.testing.assert_array_equal(run_seeding(cfg).interest, twin_interest(cfg))


def test_config_validation(agent_params):
    with pytest.raises(ProplabArgumentException):
        SimConfig(agent_params, seed_rounds=900, total_rounds=800)
    with pytest.raises(ProplabArgumentException):
        SimConfig(agent_params, feedback_scope="nearby")
    with pytest.raises(ProplabArgumentException):
        SimConfig(agent_params, n_agents=-1)
    with pytest.raises(ProplabInputException):
        SimConfig.from_dict({"agent_params": agent_params.to_dict(), "n_agents": -1})
    with pytest.raises(ProplabInputException):
        SimConfig.from_dict({"n_agents": 3})


def test_config_round_trip(agent_params):
    cfg = SimConfig(
        agent_params,
        n_agents=7,
        feedback_model=PoissonFeedback(reply_rate=0.3),
        seed_feedback=ConstantFeedback(replies=2, score=3),
        target_share=0.25,
        thresholds=RegimeThresholds(late_round=600),
    )
    again = SimConfig.from_dict(cfg.to_dict())
    assert again.to_dict() == cfg.to_dict()
    assert again.feedback_model == cfg.feedback_model
    assert again.seed_feedback == cfg.seed_feedback
    assert again.thresholds == cfg.thresholds


def test_agent_popularity_gives_the_target_a_prior_share(agent_params):
    popularity = agent_popularity(SimConfig(agent_params))
    assert popularity.communities == ("A", "B", "target")
    np.testing.assert_allclose(popularity.base_measure, [0.36, 0.36, 0.1, 0.18])

    custom = agent_popularity(SimConfig(agent_params, target_share=0.5))
    np.testing.assert_allclose(custom.base_measure, [0.2, 0.2, 0.5, 0.1])

    indexed = SimConfig(agent_params, target_community="A", target_share=0.5)
    assert agent_popularity(indexed) is agent_params.popularity


def test_post_rewards_clamp_replies_to_the_cap():
    rewards = post_rewards(
        RewardFunction(w_replies=1.0), 2.0, np.array([0, 1, 5]), np.array([0, 0, 0])
    )
    np.testing.assert_allclose(rewards, [0.0, 0.5, 1.0])


def test_without_seeds_interest_stays_at_prior_mass(make_params):
    params = make_params(beta=(0.5, 0.5), alpha0=2.0, phi=0.1, epsilon=0.1, w_replies=1.0)
    cfg = SimConfig(
        params,
        n_agents=400,
        n_seed_users=0,
        total_rounds=200,
        feedback_model=NoFeedback(),
        target_share=0.05,
        rng_seed=4,
    )
    interest = run_seeding(cfg).interest
    assert interest.mean() == pytest.approx(0.05, abs=0.03)
    assert abs(interest[:100].mean() - interest[100:].mean()) < 0.01


def test_seed_feedback_raises_target_interest(agent_params):
    def final_interest(seed_feedback):
        cfg = SimConfig(
            agent_params.with_values(w_votes=0.5),
            n_agents=100,
            seed_rounds=100,
            total_rounds=100,
            seed_feedback=seed_feedback,
            target_share=0.2,
            rng_seed=2,
        )
        return run_seeding(cfg).interest[-20:].mean()

    assert final_interest(PoissonFeedback(reply_rate=1.0, vote_mean=20.0)) > final_interest(
        NoFeedback()
    )


@pytest.mark.slow
def test_seeding_produces_every_regime(make_params):
    params = make_params(
        communities=("A", "B", "C"),
        beta=(0.5, 0.3, 0.15),
        beta_unseen=0.05,
        alpha0=2.0,
        phi=0.1,
        epsilon=0.1,
        w_replies=1.0,
        w_votes=0.5,
    )
    runs = []
    for target_share in (0.05, 0.1, 0.2, 0.4):
        for n_seed_users in (2, 5, 10):
            cfg = SimConfig(
                params,
                n_seed_users=n_seed_users,
                target_share=target_share,
                rng_seed=1000 * n_seed_users + int(100 * target_share),
            )
            runs.extend(run_repetitions(cfg, 20))
    assert len(runs) >= 200

    aggregates = aggregate_runs(runs)
    assert set(aggregates) == set(Regime)
    assert aggregates[Regime.SUCCESS].mean_curve[-1] > 0.5
    assert aggregates[Regime.NO_TRACTION].mean_curve[-1] < 0.4
