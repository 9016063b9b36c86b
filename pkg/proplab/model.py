"""
Propensity learning model: reward evaluation, choice distributions and the
propensity update applied after every action.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .eventlog import EventRecord
from .exceptions import (
    ProplabArgumentException,
    ProplabIndexException,
    ProplabInputException,
    ProplabStateException,
)
from .feedback import FeedbackModel, ReplyNormalizer
from .hdp import GlobalPopularity, HdpParams, Seed, make_rng

_LOGGER = logging.getLogger(__name__)

SIMPLEX_TOLERANCE = 1e-9
DEFAULT_SPLIT_FRACTION = 0.5


@dataclass(frozen=True)
class FeedbackVector:
    """Social feedback received by one action."""

    replies_norm: float
    vote_score: float

    def __post_init__(self):
        if not (math.isfinite(self.replies_norm) and math.isfinite(self.vote_score)):
            raise ProplabInputException(
                f"Feedback must be finite, got {self.replies_norm}, {self.vote_score}"
            )
        if self.replies_norm < 0:
            raise ProplabInputException(
                f"Normalized replies must be >= 0, got {self.replies_norm}"
            )


@dataclass(frozen=True)
class RewardFunction:
    """Linear reward over feedback features, clamped below at ``floor``."""

    w_replies: float = 1.0
    w_votes: float = 0.0
    w_intercept: float = 0.0
    floor: float = 0.0

    def __post_init__(self):
        if self.floor < 0:
            raise ProplabArgumentException(f"reward floor must be >= 0, got {self.floor}")

    def evaluate_many(self, replies_norm: np.ndarray, vote_score: np.ndarray) -> np.ndarray:
        linear = (
            self.w_intercept
            + self.w_replies * np.asarray(replies_norm, dtype=float)
            + self.w_votes * np.asarray(vote_score, dtype=float)
        )
        return np.maximum(linear, self.floor)


@dataclass(frozen=True)
class LearningParams:
    phi: float = 0.1
    epsilon: float = 0.1

    def __post_init__(self):
        for name in ("phi", "epsilon"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ProplabArgumentException(f"{name} must be in [0, 1], got {value}")


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Everything that governs generation, inference, prediction and simulation."""

    hdp: HdpParams = field(repr=False)
    learning: LearningParams = LearningParams()
    reward: RewardFunction = RewardFunction()

    @property
    def alpha0(self) -> float:
        return self.hdp.alpha0

    @property
    def popularity(self) -> GlobalPopularity:
        return self.hdp.popularity

    def values(self) -> dict:
        """Flat view of the scalar parameters the sampler moves."""
        return {
            "phi": self.learning.phi,
            "epsilon": self.learning.epsilon,
            "w_replies": self.reward.w_replies,
            "w_votes": self.reward.w_votes,
            "w_intercept": self.reward.w_intercept,
            "alpha0": self.hdp.alpha0,
        }

    def with_values(self, **values) -> "ModelParams":
        learning = {k: values[k] for k in ("phi", "epsilon") if k in values}
        reward = {
            k: values[k] for k in ("w_replies", "w_votes", "w_intercept") if k in values
        }
        hdp = self.hdp
        if "alpha0" in values:
            hdp = hdp.replace_alpha0(values["alpha0"])
        return ModelParams(
            hdp=hdp,
            learning=replace(self.learning, **learning),
            reward=replace(self.reward, **reward),
        )

    def to_dict(self) -> dict:
        return {
            "alpha0": self.hdp.alpha0,
            "popularity": self.hdp.popularity.to_dict(),
            "phi": self.learning.phi,
            "epsilon": self.learning.epsilon,
            "w_replies": self.reward.w_replies,
            "w_votes": self.reward.w_votes,
            "w_intercept": self.reward.w_intercept,
            "reward_floor": self.reward.floor,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "ModelParams":
        return cls(
            hdp=HdpParams(
                alpha0=float(payload["alpha0"]),
                popularity=GlobalPopularity.from_dict(payload["popularity"]),
            ),
            learning=LearningParams(
                phi=float(payload["phi"]), epsilon=float(payload["epsilon"])
            ),
            reward=RewardFunction(
                w_replies=float(payload["w_replies"]),
                w_votes=float(payload["w_votes"]),
                w_intercept=float(payload["w_intercept"]),
                floor=float(payload.get("reward_floor", 0.0)),
            ),
        )


@dataclass(frozen=True, eq=False)
class PropensityState:
    """
    A user's initial and current propensities.

    Slots are the indexed communities followed by one unseen-remainder slot.
    """

    communities: Tuple[str, ...]
    q0: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        q0 = np.array(self.q0, dtype=float)
        q = np.array(self.q, dtype=float)
        q0.setflags(write=False)
        q.setflags(write=False)
        object.__setattr__(self, "q0", q0)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "communities", tuple(self.communities))
        if q0.shape != (len(self.communities) + 1,) or q.shape != q0.shape:
            raise ProplabArgumentException(
                "q0 and q need one slot per community plus the unseen slot"
            )
        if len(set(self.communities)) != len(self.communities):
            raise ProplabArgumentException("community ids must be unique")
        if np.any(q0 < 0) or abs(q0.sum() - 1.0) > SIMPLEX_TOLERANCE:
            raise ProplabArgumentException("q0 must be a probability vector")
        if np.any(q < 0):
            raise ProplabArgumentException("propensities must be >= 0")

    @classmethod
    def initial(cls, communities: Sequence[str], q0: np.ndarray) -> "PropensityState":
        return cls(communities=tuple(communities), q0=q0, q=q0)

    @property
    def unseen_slot(self) -> int:
        return len(self.communities)

    def slot_of(self, community: str) -> Optional[int]:
        try:
            return self.communities.index(community)
        except ValueError:
            return None

    def __str__(self):
        return "Communities: %s, q: %s" % (list(self.communities), self.q.tolist())


@dataclass(frozen=True)
class Action:
    """An observed action: the community chosen and the feedback it received."""

    community: str
    feedback: FeedbackVector


@dataclass(frozen=True)
class TrajectoryStep:
    community: str
    replies: int
    score: int
    feedback: FeedbackVector
    reward: float


def reward(rf: RewardFunction, r: FeedbackVector) -> float:
    """
    Evaluate the linear reward of one feedback vector.

    :return: max(floor, intercept + w_replies * replies_norm + w_votes * vote_score)
    """
    values = (rf.w_replies, rf.w_votes, rf.w_intercept, r.replies_norm, r.vote_score)
    if not all(math.isfinite(value) for value in values):
        raise ProplabInputException("Reward inputs must be finite")
    linear = rf.w_intercept + rf.w_replies * r.replies_norm + rf.w_votes * r.vote_score
    return max(rf.floor, linear)


def choice_distribution(state: PropensityState) -> np.ndarray:
    total = state.q.sum()
    if not total > 0:
        raise ProplabStateException("Cannot choose from all-zero propensities")
    return state.q / total


def apply_update(
    state: PropensityState, chosen: int, reward_value: float, lp: LearningParams
) -> PropensityState:
    """
    Apply one learning step: recency decay, direct reward to the chosen slot,
    then exploration proportional to q0. The order is fixed.
    """
    if not 0 <= chosen < len(state.q):
        raise ProplabIndexException(f"slot {chosen} outside 0..{len(state.q) - 1}")
    if not reward_value >= 0:
        raise ProplabArgumentException(f"reward must be >= 0, got {reward_value}")

    q = state.q * (1.0 - lp.phi)
    q[chosen] = q[chosen] + (1.0 - lp.epsilon) * reward_value
    q = q + lp.epsilon * reward_value * state.q0
    return PropensityState(communities=state.communities, q0=state.q0, q=q)


def split_fraction_for(
    community: str, popularity: Optional[GlobalPopularity] = None
) -> float:
    if popularity is not None:
        share = popularity.share_of(community)
        if share is not None:
            return share
    return DEFAULT_SPLIT_FRACTION


def grow_state(
    state: PropensityState,
    new_community: str,
    fraction: Optional[float] = None,
    popularity: Optional[GlobalPopularity] = None,
) -> PropensityState:
    """
    Index a community for the first time.

    The new slot is inserted before the unseen slot and receives ``fraction`` of
    the unseen remainder of both q0 and q.

    :param fraction: share of the remainder to move; default is the community's
        beta-proportional share when ``popularity`` knows it, else 0.5
    """
    if new_community in state.communities:
        raise ProplabArgumentException(f"community {new_community!r} already indexed")
    if fraction is None:
        fraction = split_fraction_for(new_community, popularity)
    if not 0.0 <= fraction <= 1.0:
        raise ProplabArgumentException(f"split fraction must be in [0, 1], got {fraction}")

    def _split(vector):
        remainder = vector[-1]
        moved = fraction * remainder
        return np.concatenate((vector[:-1], [moved, remainder - moved]))

    return PropensityState(
        communities=state.communities + (new_community,),
        q0=_split(state.q0),
        q=_split(state.q),
    )


def step_slot(
    state: PropensityState,
    community: str,
    popularity: Optional[GlobalPopularity] = None,
) -> Tuple[PropensityState, int, int]:
    """
    Locate a community, growing the state on its first occurrence.

    :return: (state, slot charged for the choice probability, slot to update)
    """
    slot = state.slot_of(community)
    if slot is not None:
        return state, slot, slot
    charged = state.unseen_slot
    state = grow_state(state, community, popularity=popularity)
    return state, charged, state.slot_of(community)


def replay(
    state: PropensityState,
    actions: Sequence[Action],
    params: ModelParams,
    popularity: Optional[GlobalPopularity] = None,
) -> PropensityState:
    """Run an observed history through the update rule."""
    for action in actions:
        state, _, slot = step_slot(state, action.community, popularity)
        value = reward(params.reward, action.feedback)
        state = apply_update(state, slot, value, params.learning)
    return state


def actions_from_records(
    records: Sequence[EventRecord], normalizer: ReplyNormalizer
) -> List[Action]:
    return [
        Action(
            community=record.community,
            feedback=FeedbackVector(
                replies_norm=normalizer.normalize(record.replies),
                vote_score=float(record.score),
            ),
        )
        for record in records
    ]


def _draw_slot(rng: np.random.Generator, probabilities: np.ndarray) -> int:
    # inverse CDF, exactly one uniform per draw
    cumulative = np.cumsum(probabilities)
    slot = int(np.searchsorted(cumulative, rng.random() * cumulative[-1], side="right"))
    return min(slot, len(probabilities) - 1)


def sample_trajectory(
    params: ModelParams,
    q0: np.ndarray,
    n: int,
    feedback_source: FeedbackModel,
    rng_seed: Seed = None,
    communities: Optional[Sequence[str]] = None,
    normalizer: ReplyNormalizer = ReplyNormalizer(),
    new_community_name: Callable[[int], str] = None,
) -> List[TrajectoryStep]:
    """
    Generate n actions of one user.

    Choosing the unseen slot creates a never-before-seen community, named by
    ``new_community_name`` (default ``new{j}``), which is then indexed.

    :param q0: initial propensities over communities + unseen slot
    :param communities: ids for the indexed slots (default: params' popularity)
    """
    if n < 0:
        raise ProplabArgumentException(f"n must be >= 0, got {n}")
    if communities is None:
        communities = params.popularity.communities
    if new_community_name is None:
        new_community_name = "new{}".format

    rng = make_rng(rng_seed)
    state = PropensityState.initial(communities, q0)
    steps = []
    minted = 0
    for _ in range(n):
        slot = _draw_slot(rng, choice_distribution(state))
        if slot == state.unseen_slot:
            name = new_community_name(minted)
            minted += 1
            state = grow_state(state, name)
            slot = state.slot_of(name)
        community = state.communities[slot]
        replies, score = feedback_source.draw(rng)
        feedback = FeedbackVector(normalizer.normalize(replies), float(score))
        value = reward(params.reward, feedback)
        state = apply_update(state, slot, value, params.learning)
        steps.append(TrajectoryStep(community, replies, score, feedback, value))
    return steps
