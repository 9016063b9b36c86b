"""Synthetic event logs drawn from the generative model."""

import logging
from typing import Callable, Union

import numpy as np

from .eventlog import EventLog, EventRecord
from .exceptions import ProplabArgumentException
from .feedback import FeedbackModel, PoissonFeedback, ReplyNormalizer
from .hdp import sample_initial_propensities
from .model import ModelParams, sample_trajectory

_LOGGER = logging.getLogger(__name__)

ActionCount = Union[int, Callable[[np.random.Generator], int]]


def user_ids(count: int):
    width = max(4, len(str(max(count - 1, 0))))
    return [f"u{index:0{width}d}" for index in range(count)]


def generate_synthetic_log(
    params: ModelParams,
    n_users: int,
    actions_per_user: ActionCount,
    feedback_model: FeedbackModel = PoissonFeedback(),
    rng_seed: int = 0,
    normalizer: ReplyNormalizer = ReplyNormalizer(),
) -> EventLog:
    """
    Sample users from the HDP prior and run each through the learning model.

    :param params: generating parameters; communities come from the popularity
    :param actions_per_user: fixed count, or a callable drawing it from the
        user's generator
    :param feedback_model: source of replies and scores for each action
    :param rng_seed: master seed; user i uses the i-th spawned child stream
    :param normalizer: reply normalization applied before computing rewards
    :return: validated EventLog with raw reply counts and scores
    """
    if n_users < 0:
        raise ProplabArgumentException(f"n_users must be >= 0, got {n_users}")

    streams = np.random.SeedSequence(rng_seed).spawn(n_users)
    records = []
    for user, stream in zip(user_ids(n_users), streams):
        rng = np.random.default_rng(stream)
        count = actions_per_user(rng) if callable(actions_per_user) else actions_per_user
        q0 = sample_initial_propensities(params.hdp, rng)
        steps = sample_trajectory(
            params,
            q0,
            int(count),
            feedback_model,
            rng,
            normalizer=normalizer,
            new_community_name=f"{user}-new{{}}".format,
        )
        records.extend(
            EventRecord(
                user=user,
                seq=seq,
                community=step.community,
                replies=int(step.replies),
                score=int(step.score),
            )
            for seq, step in enumerate(steps)
        )

    _LOGGER.info("Generated %d actions for %d users", len(records), n_users)
    return EventLog(records)
