import numpy as np
import pytest

from proplab.exceptions import ProplabArgumentException, ProplabInputException
from proplab.feedback import (
    ConstantFeedback,
    NoFeedback,
    PoissonFeedback,
    ReplyNormalizer,
    feedback_model_from_dict,
)


def test_normalizer_cap_from_log(make_log):
    log = make_log({"u": [("A", r, 0) for r in range(101)]})
    assert ReplyNormalizer.from_log(log, quantile=99).cap == pytest.approx(99.0)
    assert ReplyNormalizer.from_log(log, quantile=99).normalize(33) == pytest.approx(1 / 3)


def test_normalizer_cap_at_least_one(make_log):
    log = make_log({"u": [("A", 0, 0)] * 5})
    assert ReplyNormalizer.from_log(log).cap == 1.0
    assert ReplyNormalizer.from_log(make_log({})).cap == 1.0


def test_normalizer_arrays():
    np.testing.assert_allclose(ReplyNormalizer(cap=4.0).normalize([0, 2, 8]), [0, 0.5, 2])


def test_normalizer_cap_positive():
    with pytest.raises(ProplabArgumentException):
        ReplyNormalizer(cap=0.0)


def test_poisson_no_exposure_no_replies():
    rng = np.random.default_rng(0)
    replies, _ = PoissonFeedback(reply_rate=3.0).draw_many(rng, np.zeros(50))
    assert np.all(replies == 0)


def test_poisson_reply_cap():
    rng = np.random.default_rng(1)
    replies, scores = PoissonFeedback(reply_rate=5.0, reply_cap=2).draw_many(
        rng, np.full(200, 4.0)
    )
    assert replies.max() <= 2
    assert replies.dtype.kind == "i" and scores.dtype.kind == "i"


def test_poisson_mean_scales_with_exposure():
    rng = np.random.default_rng(2)
    replies, scores = PoissonFeedback(reply_rate=0.5, vote_mean=2.0).draw_many(
        rng, np.full(20_000, 4.0)
    )
    assert replies.mean() == pytest.approx(2.0, abs=0.05)
    assert scores.mean() == pytest.approx(8.0, abs=0.05)


def test_single_draw_uses_crowd():
    model = PoissonFeedback(reply_rate=1.0, vote_sd=0.0, vote_mean=3.0, crowd=2.0)
    replies, score = model.draw(np.random.default_rng(3))
    assert isinstance(replies, int)
    assert score == 6


def test_constant_and_none():
    rng = np.random.default_rng(0)
    assert ConstantFeedback(replies=2, score=-1).draw(rng) == (2, -1)
    replies, scores = NoFeedback().draw_many(rng, np.ones(3))
    assert replies.tolist() == [0, 0, 0] and scores.tolist() == [0, 0, 0]


@pytest.mark.parametrize(
    "model",
    [PoissonFeedback(reply_rate=0.2, reply_cap=5), ConstantFeedback(replies=3), NoFeedback()],
)
def test_registry_round_trip(model):
    assert feedback_model_from_dict(model.to_dict()) == model


@pytest.mark.parametrize(
    "payload",
    [{"kind": "gaussian"}, {"kind": "poisson", "reply_rate": -1}, {"reply_rate": 1.0}],
)
def test_invalid_feedback_config(payload):
    with pytest.raises(ProplabInputException):
        feedback_model_from_dict(payload)
