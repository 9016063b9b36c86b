"""Social feedback generation and reply-count normalization."""

import logging
from dataclasses import asdict, dataclass
from typing import Dict, Optional, Tuple, Type

import numpy as np
from voluptuous import All, Any, MultipleInvalid, Range, Required, Schema

from .eventlog import EventLog
from .exceptions import ProplabArgumentException, ProplabInputException

_LOGGER = logging.getLogger(__name__)

DEFAULT_REPLY_QUANTILE = 99.0

Number = Any(int, float)

FEEDBACK_SCHEMA = Schema(
    Any(
        {
            Required("kind"): "poisson",
            "reply_rate": All(Number, Range(min=0)),
            "vote_mean": Number,
            "vote_sd": All(Number, Range(min=0)),
            "reply_cap": Any(All(int, Range(min=1)), None),
            "crowd": All(Number, Range(min=0)),
        },
        {
            Required("kind"): "constant",
            "replies": All(int, Range(min=0)),
            "score": int,
        },
        {Required("kind"): "none"},
    )
)


@dataclass(frozen=True)
class ReplyNormalizer:
    """Divides raw reply counts by a corpus-level cap."""

    cap: float = 1.0

    def __post_init__(self):
        if not self.cap > 0:
            raise ProplabArgumentException(f"reply cap must be > 0, got {self.cap}")

    @classmethod
    def from_log(
        cls, log: EventLog, quantile: float = DEFAULT_REPLY_QUANTILE
    ) -> "ReplyNormalizer":
        """
        Use a percentile of the log's reply counts as the cap (at least 1).

        :param log: training log
        :param quantile: percentile in [0, 100]
        """
        if len(log) == 0:
            return cls()
        replies = np.fromiter((rec.replies for rec in log), dtype=float)
        cap = float(np.percentile(replies, quantile))
        return cls(cap=max(cap, 1.0))

    def normalize(self, replies):
        if np.ndim(replies) == 0:
            return float(replies) / self.cap
        return np.asarray(replies, dtype=float) / self.cap


class FeedbackModel:
    """
    Produces (replies, score) for posts, given how many other posts shared the
    community that round.
    """

    kind = "abstract"

    def draw_many(
        self, rng: np.random.Generator, colocated: np.ndarray
    ) -> Tuple[np.ndarray, np.ndarray]:
        """Draw integer replies and scores for an array of posts."""
        raise NotImplementedError

    def draw(self, rng: np.random.Generator, colocated: float = None) -> Tuple[int, int]:
        """Draw for one post; without a co-location count the model default is used."""
        if colocated is None:
            colocated = getattr(self, "crowd", 0.0)
        replies, scores = self.draw_many(rng, np.array([colocated], dtype=float))
        return int(replies[0]), int(scores[0])

    def to_dict(self) -> Dict[str, object]:
        return {"kind": self.kind, **asdict(self)}


@dataclass(frozen=True)
class PoissonFeedback(FeedbackModel):
    """
    Replies ~ Poisson(reply_rate * n), votes ~ Normal(vote_mean * n, vote_sd)
    rounded, where n is the number of co-located posts.

    A post drawn without a co-location count (single-user trajectories) sees
    ``crowd`` other posts. ``reply_cap`` clamps the raw reply count this source
    produces; the reward normalization cap (ReplyNormalizer, SimConfig.reply_cap)
    is applied afterwards and separately.
    """

    reply_rate: float = 0.5
    vote_mean: float = 1.0
    vote_sd: float = 1.0
    reply_cap: Optional[int] = None
    crowd: float = 1.0

    kind = "poisson"

    def draw_many(self, rng, colocated):
        colocated = np.asarray(colocated, dtype=float)
        exposure = np.maximum(colocated, 0.0)
        replies = rng.poisson(self.reply_rate * exposure)
        if self.reply_cap is not None:
            replies = np.minimum(replies, self.reply_cap)
        scores = np.rint(rng.normal(self.vote_mean * exposure, self.vote_sd))
        return replies.astype(int), scores.astype(int)


@dataclass(frozen=True)
class ConstantFeedback(FeedbackModel):
    replies: int = 1
    score: int = 0

    kind = "constant"

    def draw_many(self, rng, colocated):
        size = np.shape(colocated)
        return np.full(size, self.replies, dtype=int), np.full(size, self.score, dtype=int)


@dataclass(frozen=True)
class NoFeedback(FeedbackModel):
    kind = "none"

    def draw_many(self, rng, colocated):
        size = np.shape(colocated)
        return np.zeros(size, dtype=int), np.zeros(size, dtype=int)


FEEDBACK_MODELS: Dict[str, Type[FeedbackModel]] = {
    PoissonFeedback.kind: PoissonFeedback,
    ConstantFeedback.kind: ConstantFeedback,
    NoFeedback.kind: NoFeedback,
}


def feedback_model_from_dict(payload: Dict[str, object]) -> FeedbackModel:
    try:
        clean = FEEDBACK_SCHEMA(dict(payload))
    except MultipleInvalid as ex:
        raise ProplabInputException(f"Invalid feedback model: {ex}") from ex
    kind = clean.pop("kind")
    return FEEDBACK_MODELS[kind](**clean)
