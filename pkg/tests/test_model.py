import math

import numpy as np
import pytest

from proplab.exceptions import (
    ProplabArgumentException,
    ProplabIndexException,
    ProplabInputException,
    ProplabStateException,
)
from proplab.feedback import ConstantFeedback, NoFeedback
from proplab.model import (
    Action,
    FeedbackVector,
    LearningParams,
    PropensityState,
    RewardFunction,
    apply_update,
    choice_distribution,
    grow_state,
    replay,
    reward,
    sample_trajectory,
    step_slot,
)


def state(communities, q0, q=None):
    return PropensityState(communities=communities, q0=q0, q=q0 if q is None else q)


@pytest.mark.parametrize(
    "rf, feedback, expected",
    [
        (RewardFunction(w_replies=0, w_votes=0), FeedbackVector(3.0, -2.0), 0.0),
        (RewardFunction(w_replies=1, w_votes=0.5), FeedbackVector(2.0, 4.0), 4.0),
        (RewardFunction(w_replies=1, w_votes=1, floor=0.01), FeedbackVector(0.0, -5.0), 0.01),
        (RewardFunction(w_replies=1, w_votes=0.5, w_intercept=0.1), FeedbackVector(2, -1), 1.6),
    ],
)
def test_reward(rf, feedback, expected):
    assert reward(rf, feedback) == pytest.approx(expected)


def test_feedback_must_be_finite():
    with pytest.raises(ProplabInputException):
        FeedbackVector(float("nan"), 0.0)
    with pytest.raises(ProplabInputException):
        FeedbackVector(1.0, float("inf"))
    with pytest.raises(ProplabInputException):
        FeedbackVector(-1.0, 0.0)


def test_reward_rejects_non_finite_weights():
    with pytest.raises(ProplabInputException):
        reward(RewardFunction(w_replies=float("inf")), FeedbackVector(1.0, 0.0))


def test_negative_floor_rejected():
    with pytest.raises(ProplabArgumentException):
        RewardFunction(floor=-0.1)


def test_learning_params_range():
    with pytest.raises(ProplabArgumentException):
        LearningParams(phi=1.5)
    with pytest.raises(ValueError):
        LearningParams(epsilon=-0.1)


@pytest.mark.parametrize(
    "communities, q0, q, expected",
    [
        ((), [1.0], [1.0], [1.0]),
        (("A",), [0.5, 0.5], [1.0, 3.0], [0.25, 0.75]),
        (("A", "B"), [0.4, 0.4, 0.2], [2.0, 2.0, 4.0], [0.25, 0.25, 0.5]),
    ],
)
def test_choice_distribution(communities, q0, q, expected):
    probs = choice_distribution(state(communities, q0, q))
    np.testing.assert_allclose(probs, expected)
    assert probs.sum() == pytest.approx(1.0, abs=1e-12)


def test_choice_distribution_scale_invariant():
    base = state(("A", "B"), [0.2, 0.3, 0.5], [0.1, 2.0, 0.7])
    scaled = state(("A", "B"), [0.2, 0.3, 0.5], [0.3, 6.0, 2.1])
    np.testing.assert_allclose(choice_distribution(base), choice_distribution(scaled))


def test_choice_distribution_all_zero():
    with pytest.raises(ProplabStateException):
        choice_distribution(state(("A",), [0.5, 0.5], [0.0, 0.0]))


@pytest.mark.parametrize(
    "q, q0, phi, epsilon, value, expected",
    [
        ([0.5, 0.5], [0.5, 0.5], 0.0, 0.0, 0.0, [0.5, 0.5]),
        ([0.5, 0.5], [0.5, 0.5], 0.0, 0.0, 1.0, [1.5, 0.5]),
        ([1.0, 1.0], [0.25, 0.75], 0.5, 0.5, 2.0, [1.75, 1.25]),
    ],
)
def test_apply_update_examples(q, q0, phi, epsilon, value, expected):
    after = apply_update(state(("A",), q0, q), 0, value, LearningParams(phi, epsilon))
    np.testing.assert_allclose(after.q, expected)
    np.testing.assert_array_equal(after.q0, q0)


def test_apply_update_invalid_slot():
    with pytest.raises(ProplabIndexException):
        apply_update(state(("A",), [0.5, 0.5]), 2, 1.0, LearningParams())
    with pytest.raises(IndexError):
        apply_update(state(("A",), [0.5, 0.5]), -1, 1.0, LearningParams())


def test_apply_update_negative_reward():
    with pytest.raises(ProplabArgumentException):
        apply_update(state(("A",), [0.5, 0.5]), 0, -1.0, LearningParams())


def test_mass_conservation_randomized():
    rng = np.random.default_rng(12)
    for _ in range(10_000):
        size = int(rng.integers(1, 6))
        q0 = rng.dirichlet(np.ones(size + 1))
        q = rng.random(size + 1) * 5.0
        phi, epsilon = rng.random(2)
        value = rng.random() * 5.0
        before = state(tuple(f"c{i}" for i in range(size)), q0, q)
        after = apply_update(before, int(rng.integers(size + 1)), value,
                             LearningParams(phi, epsilon))
        expected = (1.0 - phi) * before.q.sum() + value
        assert abs(after.q.sum() - expected) < 1e-12
        assert np.all(after.q >= 0)


def test_epsilon_extremes():
    before = state(("A", "B"), [0.2, 0.3, 0.5], [1.0, 2.0, 3.0])
    explore = apply_update(before, 0, 2.0, LearningParams(phi=0.25, epsilon=1.0))
    np.testing.assert_allclose(explore.q, before.q * 0.75 + 2.0 * before.q0)
    exploit = apply_update(before, 0, 2.0, LearningParams(phi=0.25, epsilon=0.0))
    np.testing.assert_allclose(exploit.q, before.q * 0.75 + [2.0, 0.0, 0.0])


def test_phi_one_forgets():
    lp = LearningParams(phi=1.0, epsilon=0.3)
    first = apply_update(state(("A",), [0.4, 0.6], [9.0, 1.0]), 0, 1.0, lp)
    second = apply_update(state(("A",), [0.4, 0.6], [0.1, 5.0]), 0, 1.0, lp)
    np.testing.assert_allclose(first.q, second.q)


def test_grow_state_moves_remainder():
    grown = grow_state(state(("A",), [0.9, 0.1], [1.0, 0.2]), "B", fraction=0.5)
    assert grown.communities == ("A", "B")
    np.testing.assert_allclose(grown.q0, [0.9, 0.05, 0.05])
    np.testing.assert_allclose(grown.q, [1.0, 0.1, 0.1])
    assert grown.q0.sum() == pytest.approx(1.0, abs=1e-12)
    assert grown.q.sum() == pytest.approx(1.2, abs=1e-12)


def test_grow_state_zero_remainder():
    grown = grow_state(state(("A",), [1.0, 0.0]), "B")
    np.testing.assert_array_equal(grown.q0, [1.0, 0.0, 0.0])


def test_grow_state_beta_share(make_params):
    params = make_params(communities=("A", "B"), beta=(0.6, 0.3), beta_unseen=0.1)
    grown = grow_state(state(("A",), [0.8, 0.2]), "B", popularity=params.popularity)
    # B takes 0.3 / (0.3 + 0.1) of the remainder
    np.testing.assert_allclose(grown.q0, [0.8, 0.15, 0.05])


def test_grow_state_duplicate():
    with pytest.raises(ProplabArgumentException):
        grow_state(state(("A",), [0.5, 0.5]), "A")


def test_step_slot_charges_unseen_on_first_occurrence():
    start = state(("A",), [0.5, 0.5])
    grown, charged, slot = step_slot(start, "Z")
    assert (charged, slot) == (1, 1)
    assert grown.communities == ("A", "Z")
    same, charged, slot = step_slot(grown, "A")
    assert same is grown and charged == slot == 0


def test_replay_matches_manual_updates(make_params):
    params = make_params(phi=0.2, epsilon=0.1, w_replies=1.0)
    actions = [Action("A", FeedbackVector(1.0, 0.0)), Action("B", FeedbackVector(2.0, 0.0))]
    start = state(("A", "B"), [0.5, 0.5, 0.0])
    manual = apply_update(start, 0, 1.0, params.learning)
    manual = apply_update(manual, 1, 2.0, params.learning)
    np.testing.assert_allclose(replay(start, actions, params).q, manual.q)


def test_sample_trajectory_empty(make_params):
    assert sample_trajectory(make_params(), np.array([0.5, 0.5, 0.0]), 0, NoFeedback(), 1) == []


def test_sample_trajectory_single_support(make_params):
    params = make_params(communities=("A",), beta=(1.0,), phi=0.3, epsilon=0.5,
                         w_replies=1.0)
    steps = sample_trajectory(params, np.array([1.0, 0.0]), 50, ConstantFeedback(), 3)
    assert {step.community for step in steps} == {"A"}


def test_sample_trajectory_deterministic(make_params):
    params = make_params(phi=0.1, epsilon=0.2, w_replies=1.0)
    q0 = np.array([0.3, 0.3, 0.4])
    first = sample_trajectory(params, q0, 100, ConstantFeedback(replies=2), 5)
    second = sample_trajectory(params, q0, 100, ConstantFeedback(replies=2), 5)
    assert first == second
    assert any(step.community.startswith("new") for step in first)


def test_sample_trajectory_matches_urn_twin(make_params):
    params = make_params(w_replies=1.0)
    q0 = np.array([0.5, 0.5, 0.0])
    steps = sample_trajectory(params, q0, 300, ConstantFeedback(replies=1), 11)

    rng = np.random.default_rng(11)
    q = q0.copy()
    expected = []
    for _ in range(300):
        cumulative = np.cumsum(q / q.sum())
        slot = int(np.searchsorted(cumulative, rng.random() * cumulative[-1], side="right"))
        q[slot] += 1.0
        expected.append(("A", "B")[slot])
    assert [step.community for step in steps] == expected
    assert all(math.isclose(step.reward, 1.0) for step in steps)
