"""Seeded-community simulations with populations of learning agents."""

import csv
import io
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Optional, Sequence

import numpy as np
from joblib import Parallel, delayed
from voluptuous import All, Any, MultipleInvalid, Range, Required, Schema

from .eventlog import write_atomic
from .exceptions import ProplabArgumentException, ProplabInputException
from .feedback import (
    FeedbackModel,
    PoissonFeedback,
    ReplyNormalizer,
    feedback_model_from_dict,
)
from .hdp import GlobalPopularity, HdpParams, sample_initial_propensities
from .model import ModelParams, RewardFunction

_LOGGER = logging.getLogger(__name__)

FEEDBACK_SCOPES = ("all", "target")
TRAJECTORY_COLUMNS = ("run", "round", "interest", "regime")
AGGREGATE_COLUMNS = ("regime", "count", "round", "mean_interest")
DEFAULT_TARGET_SHARE = 0.1
# each seed user replies to and upvotes every normal post in the target
DEFAULT_SEED_FEEDBACK = PoissonFeedback(reply_rate=1.0, vote_mean=5.0, vote_sd=1.0)

Number = Any(int, float)
Count = All(int, Range(min=0))

SIM_CONFIG_SCHEMA = Schema(
    {
        "n_agents": Count,
        "n_seed_users": Count,
        "seed_rounds": Count,
        "total_rounds": All(int, Range(min=1)),
        "target_community": str,
        Required("agent_params"): dict,
        "feedback_model": dict,
        "seed_feedback": dict,
        "rng_seed": int,
        "feedback_scope": Any(*FEEDBACK_SCOPES),
        "target_share": Any(None, All(Number, Range(min=0, max=1, max_included=False))),
        "reply_cap": All(Number, Range(min=0, min_included=False)),
        "thresholds": {
            "no_traction_round": All(int, Range(min=1)),
            "no_traction_level": All(Number, Range(min=0, max=1)),
            "late_round": All(int, Range(min=1)),
            "late_level": All(Number, Range(min=0, max=1)),
        },
    }
)


class Regime(Enum):
    NO_TRACTION = "NoTraction"
    LATE_FAILURE = "LateFailure"
    SUCCESS = "Success"


@dataclass(frozen=True)
class RegimeThresholds:
    """Failure gates; interest at or below a level fails it."""

    no_traction_round: int = 200
    no_traction_level: float = 0.4
    late_round: int = 700
    late_level: float = 0.5

    @property
    def rounds_needed(self) -> int:
        return max(self.no_traction_round, self.late_round)

    def to_dict(self) -> dict:
        return {
            "no_traction_round": self.no_traction_round,
            "no_traction_level": self.no_traction_level,
            "late_round": self.late_round,
            "late_level": self.late_level,
        }


@dataclass(frozen=True, eq=False)
class SimConfig:
    """
    A seeding experiment.

    :param seed_feedback: feedback each seed user gives every normal post in
        the target while seeding lasts, drawn with the number of seed users as
        the co-location count
    :param target_share: prior popularity given to the target when the
        agents' popularity does not index it; the other communities and the
        unseen mass keep the rest (default DEFAULT_TARGET_SHARE)
    :param feedback_scope: ``all`` gives every post feedback, ``target`` only
        posts in the target community
    :param reply_cap: reply normalization cap; simulated reply counts are
        clamped to it before normalizing
    """

    agent_params: ModelParams
    n_agents: int = 100
    n_seed_users: int = 5
    seed_rounds: int = 200
    total_rounds: int = 800
    target_community: str = "target"
    feedback_model: FeedbackModel = PoissonFeedback()
    seed_feedback: FeedbackModel = DEFAULT_SEED_FEEDBACK
    rng_seed: int = 0
    feedback_scope: str = "all"
    target_share: Optional[float] = None
    reply_cap: float = 1.0
    thresholds: RegimeThresholds = field(default_factory=RegimeThresholds)

    def __post_init__(self):
        if self.n_agents < 0 or self.n_seed_users < 0:
            raise ProplabArgumentException("agent counts must be >= 0")
        if self.total_rounds < 1:
            raise ProplabArgumentException("total_rounds must be >= 1")
        if not 0 <= self.seed_rounds <= self.total_rounds:
            raise ProplabArgumentException(
                f"seed_rounds must be in [0, total_rounds], got {self.seed_rounds}"
            )
        if self.feedback_scope not in FEEDBACK_SCOPES:
            raise ProplabArgumentException(f"unknown feedback scope {self.feedback_scope!r}")
        if self.target_share is not None and not 0 <= self.target_share < 1:
            raise ProplabArgumentException(
                f"target_share must be in [0, 1), got {self.target_share}"
            )
        if not self.reply_cap > 0:
            raise ProplabArgumentException(f"reply_cap must be > 0, got {self.reply_cap}")

    @classmethod
    def from_dict(cls, payload: dict) -> "SimConfig":
        try:
            clean = SIM_CONFIG_SCHEMA(dict(payload))
        except MultipleInvalid as ex:
            raise ProplabInputException(f"Invalid simulation config: {ex}") from ex
        clean["agent_params"] = ModelParams.from_dict(clean["agent_params"])
        for name in ("feedback_model", "seed_feedback"):
            if name in clean:
                clean[name] = feedback_model_from_dict(clean[name])
        if "thresholds" in clean:
            clean["thresholds"] = RegimeThresholds(**clean["thresholds"])
        return cls(**clean)

    def to_dict(self) -> dict:
        return {
            "n_agents": self.n_agents,
            "n_seed_users": self.n_seed_users,
            "seed_rounds": self.seed_rounds,
            "total_rounds": self.total_rounds,
            "target_community": self.target_community,
            "agent_params": self.agent_params.to_dict(),
            "feedback_model": self.feedback_model.to_dict(),
            "seed_feedback": self.seed_feedback.to_dict(),
            "rng_seed": self.rng_seed,
            "feedback_scope": self.feedback_scope,
            "target_share": self.target_share,
            "reply_cap": self.reply_cap,
            "thresholds": self.thresholds.to_dict(),
        }


@dataclass(frozen=True, eq=False)
class TrajectorySummary:
    interest: np.ndarray
    regime: Optional[Regime]
    empty_population: bool = False

    @property
    def rounds(self) -> int:
        return len(self.interest)

    def interest_at(self, round_number: int) -> float:
        return float(self.interest[round_number - 1])


def classify_trajectory(
    trajectory: Sequence[float], thresholds: RegimeThresholds = RegimeThresholds()
) -> Regime:
    """
    NoTraction if interest at the first gate <= its level, else LateFailure if
    interest at the second gate <= its level, else Success. Rounds are 1-based.
    """
    if len(trajectory) < thresholds.rounds_needed:
        raise ProplabInputException(
            f"Trajectory has {len(trajectory)} rounds, "
            f"classification needs {thresholds.rounds_needed}"
        )
    if trajectory[thresholds.no_traction_round - 1] <= thresholds.no_traction_level:
        return Regime.NO_TRACTION
    if trajectory[thresholds.late_round - 1] <= thresholds.late_level:
        return Regime.LATE_FAILURE
    return Regime.SUCCESS


def agent_popularity(cfg: SimConfig) -> GlobalPopularity:
    """
    The agents' global popularity, with the target appended before the unseen
    slot when it is not indexed yet.
    """
    popularity = cfg.agent_params.popularity
    if cfg.target_community in popularity.communities:
        return popularity
    share = DEFAULT_TARGET_SHARE if cfg.target_share is None else cfg.target_share
    return GlobalPopularity(
        communities=popularity.communities + (cfg.target_community,),
        beta=np.append(popularity.beta * (1.0 - share), share),
        beta_unseen=popularity.beta_unseen * (1.0 - share),
        gamma=popularity.gamma,
    )


def _initial_population(cfg: SimConfig, rng: np.random.Generator):
    popularity = agent_popularity(cfg)
    hdp = HdpParams(alpha0=cfg.agent_params.alpha0, popularity=popularity)
    q0 = np.array([sample_initial_propensities(hdp, rng) for _ in range(cfg.n_agents)])
    return q0, popularity.communities.index(cfg.target_community)


def post_rewards(
    reward_fn: RewardFunction, reply_cap: float, replies: np.ndarray, scores: np.ndarray
) -> np.ndarray:
    """Rewards of simulated posts; reply counts are clamped to the cap, then normalized."""
    clamped = np.minimum(np.asarray(replies, dtype=float), reply_cap)
    return reward_fn.evaluate_many(ReplyNormalizer(cap=reply_cap).normalize(clamped), scores)


def run_seeding(cfg: SimConfig) -> TrajectorySummary:
    """
    Simulate normal agents alongside seed users who post only in the target.

    Each round every normal agent draws a community and posts. Posts receive
    feedback from the feedback model given the number of other posts in the
    same community that round, seed posts included while seeding lasts. While
    seeding lasts, normal posts in the target also receive the seed users'
    feedback. A pick of the unseen slot is a lone post in some other
    community. Interest is the share of normal agents posting in the target.
    """
    if cfg.n_agents == 0:
        _LOGGER.warning("Simulation with an empty population; returning no trajectory")
        return TrajectorySummary(interest=np.zeros(0), regime=None, empty_population=True)

    rng = np.random.default_rng(cfg.rng_seed)
    learning = cfg.agent_params.learning
    reward_fn = cfg.agent_params.reward

    q0, target = _initial_population(cfg, rng)
    q = q0.copy()
    n_agents, n_slots = q.shape
    unseen = n_slots - 1
    rows = np.arange(n_agents)
    interest = np.empty(cfg.total_rounds)

    for round_number in range(1, cfg.total_rounds + 1):
        totals = q.sum(axis=1, keepdims=True)
        weights = np.where(totals > 0, q, q0)
        probs = weights / weights.sum(axis=1, keepdims=True)
        cumulative = np.cumsum(probs, axis=1)
        draws = rng.random(n_agents)[:, None] * cumulative[:, -1:]
        chosen = np.minimum((cumulative <= draws).sum(axis=1), n_slots - 1)
        in_target = chosen == target
        seeding = round_number <= cfg.seed_rounds and cfg.n_seed_users > 0

        posts = np.bincount(chosen, minlength=n_slots)
        posts[unseen] = 0
        if seeding:
            posts[target] += cfg.n_seed_users
        colocated = np.where(chosen == unseen, 0, posts[chosen] - 1)

        replies, scores = cfg.feedback_model.draw_many(rng, colocated)
        if seeding and in_target.any():
            seed_replies, seed_scores = cfg.seed_feedback.draw_many(
                rng, np.full(int(in_target.sum()), cfg.n_seed_users, dtype=float)
            )
            replies = replies.copy()
            scores = scores.copy()
            replies[in_target] += seed_replies
            scores[in_target] += seed_scores
        if cfg.feedback_scope == "target":
            replies = np.where(in_target, replies, 0)
            scores = np.where(in_target, scores, 0)
        rewards = post_rewards(reward_fn, cfg.reply_cap, replies, scores)

        q = q * (1.0 - learning.phi)
        q[rows, chosen] += (1.0 - learning.epsilon) * rewards
        q = q + learning.epsilon * rewards[:, None] * q0

        interest[round_number - 1] = np.mean(in_target)
        if round_number % 100 == 0:
            _LOGGER.debug("round %d: interest %.3f", round_number, interest[round_number - 1])

    regime = None
    if cfg.total_rounds >= cfg.thresholds.rounds_needed:
        regime = classify_trajectory(interest, cfg.thresholds)
    return TrajectorySummary(interest=interest, regime=regime)


def run_repetitions(cfg: SimConfig, n_runs: int, n_jobs: int = 1) -> List[TrajectorySummary]:
    """Independent runs with seeds rng_seed, rng_seed + 1, ..."""
    if n_runs < 0:
        raise ProplabArgumentException(f"n_runs must be >= 0, got {n_runs}")
    runs = Parallel(n_jobs=n_jobs)(
        delayed(run_seeding)(replace(cfg, rng_seed=cfg.rng_seed + i)) for i in range(n_runs)
    )
    _LOGGER.info("Finished %d simulation runs", n_runs)
    return list(runs)


@dataclass(frozen=True, eq=False)
class RegimeAggregate:
    count: int
    mean_curve: np.ndarray


def aggregate_runs(runs: Sequence[TrajectorySummary]) -> Dict[Regime, RegimeAggregate]:
    """Pointwise mean interest per regime; runs without a regime are left out."""
    classified = [run for run in runs if run.regime is not None]
    if not classified:
        return {}
    lengths = {run.rounds for run in classified}
    if len(lengths) != 1:
        raise ProplabInputException(f"Runs differ in length: {sorted(lengths)}")

    result = {}
    for regime in Regime:
        curves = [run.interest for run in classified if run.regime is regime]
        if curves:
            result[regime] = RegimeAggregate(
                count=len(curves), mean_curve=np.mean(np.vstack(curves), axis=0)
            )
    return result


def trajectories_csv(runs: Sequence[TrajectorySummary]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(TRAJECTORY_COLUMNS)
    for run_index, run in enumerate(runs):
        regime = run.regime.value if run.regime is not None else ""
        for round_number, value in enumerate(run.interest, 1):
            writer.writerow([run_index, round_number, float(value), regime])
    return buffer.getvalue()


def aggregates_csv(aggregates: Dict[Regime, RegimeAggregate]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(AGGREGATE_COLUMNS)
    for regime, aggregate in aggregates.items():
        for round_number, value in enumerate(aggregate.mean_curve, 1):
            writer.writerow([regime.value, aggregate.count, round_number, float(value)])
    return buffer.getvalue()


def write_trajectories(runs: Sequence[TrajectorySummary], path: str):
    write_atomic(path, trajectories_csv(runs))


def write_aggregates(aggregates: Dict[Regime, RegimeAggregate], path: str):
    write_atomic(path, aggregates_csv(aggregates))
