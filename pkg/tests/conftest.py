import numpy as np
import pytest

from proplab.eventlog import EventLog, EventRecord
from proplab.hdp import GlobalPopularity, HdpParams
from proplab.model import LearningParams, ModelParams, RewardFunction


def build_params(
    communities=("A", "B"),
    beta=(0.5, 0.5),
    beta_unseen=0.0,
    alpha0=1.0,
    phi=0.0,
    epsilon=0.0,
    w_replies=0.0,
    w_votes=0.0,
    w_intercept=0.0,
):
    return ModelParams(
        hdp=HdpParams(
            alpha0=alpha0,
            popularity=GlobalPopularity(
                communities=tuple(communities),
                beta=np.asarray(beta, dtype=float),
                beta_unseen=beta_unseen,
            ),
        ),
        learning=LearningParams(phi=phi, epsilon=epsilon),
        reward=RewardFunction(w_replies=w_replies, w_votes=w_votes, w_intercept=w_intercept),
    )


def build_log(histories):
    """histories: {user: [(community, replies, score), ...]}"""
    return EventLog(
        EventRecord(user=user, seq=seq, community=c, replies=r, score=s)
        for user, actions in histories.items()
        for seq, (c, r, s) in enumerate(actions)
    )


@pytest.fixture
def make_params():
    return build_params


@pytest.fixture
def make_log():
    return build_log
