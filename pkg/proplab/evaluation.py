"""
Prediction benchmark (model and baseline predictive distributions, quadratic
scoring, training-fraction sweeps) and the model-free feedback-response curve.
"""

import csv
import hashlib
import io
import logging
import math
from collections import Counter
from dataclasses import dataclass, replace
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .eventlog import EventLog, EventRecord, write_atomic
from .exceptions import ProplabArgumentException, ProplabInputException
from .feedback import ReplyNormalizer
from .hdp import DEFAULT_GAMMA, DEFAULT_SMOOTHING, HdpParams, dirichlet_mean, estimate_beta
from .inference import FitConfig, FitResult, estimate_q0_map, estimate_q0_map_batch
from .inference import fit as fit_model
from .model import (
    ModelParams,
    PropensityState,
    actions_from_records,
    replay,
)

_LOGGER = logging.getLogger(__name__)

UNSEEN = "<unseen>"
DEFAULT_K = 10
DEFAULT_BUCKETS = (0, 1, 2, 3, 5)
PROBABILITY_TOLERANCE = 1e-9

SWEEP_COLUMNS = (
    "fraction",
    "predictor",
    "mean_score",
    "stderr",
    "n_test_events",
    "n_users",
    "skipped_users",
    "test_set_hash",
)
RESPONSE_COLUMNS = (
    "bucket",
    "lower",
    "upper",
    "n_events",
    "return_rate",
    "relative_increase",
)


@dataclass(frozen=True, eq=False)
class PredictiveDistribution:
    """Probabilities over indexed communities, with the unseen slot last."""

    communities: Tuple[str, ...]
    probs: np.ndarray

    def __post_init__(self):
        probs = np.array(self.probs, dtype=float)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "communities", tuple(self.communities))
        if probs.shape != (len(self.communities) + 1,):
            raise ProplabArgumentException(
                "need one probability per community plus the unseen slot"
            )
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > PROBABILITY_TOLERANCE:
            raise ProplabArgumentException("predictive distribution must be on the simplex")

    @classmethod
    def from_weights(cls, communities: Sequence[str], weights) -> "PredictiveDistribution":
        weights = np.asarray(weights, dtype=float)
        total = weights.sum()
        if not total > 0:
            weights = np.ones_like(weights)
            total = weights.sum()
        return cls(communities=tuple(communities), probs=weights / total)

    @classmethod
    def from_state(cls, state: PropensityState) -> "PredictiveDistribution":
        """choice_distribution of the state; all-zero propensities fall back to q0."""
        weights = state.q if state.q.sum() > 0 else state.q0
        return cls.from_weights(state.communities, weights)

    @property
    def unseen(self) -> float:
        return float(self.probs[-1])

    def prob_of(self, community: str) -> float:
        """Probability of a community; communities not listed get the unseen mass."""
        try:
            return float(self.probs[self.communities.index(community)])
        except ValueError:
            return self.unseen

    def as_dict(self) -> Dict[str, float]:
        result = {c: float(p) for c, p in zip(self.communities, self.probs)}
        result[UNSEEN] = self.unseen
        return result


def quadratic_score(dist: PredictiveDistribution, outcome: str) -> float:
    """2 p(outcome) - sum p^2, in [-1, 1]; the unseen slot counts as one entry."""
    return 2.0 * dist.prob_of(outcome) - float(np.dot(dist.probs, dist.probs))


def _predict_from_state(
    params: ModelParams, q0: np.ndarray, actions, communities=None
) -> PredictiveDistribution:
    if communities is None:
        communities = params.popularity.communities
    state = PropensityState.initial(communities, q0)
    state = replay(state, actions, params, params.popularity)
    return PredictiveDistribution.from_state(state)


def predict_next(
    fit_result: FitResult,
    user_history: Sequence[EventRecord],
    user: Optional[str] = None,
) -> PredictiveDistribution:
    """
    Predictive distribution of a user's next community.

    Replays the history with the MAP parameters, starting from the user's
    fitted q0 when ``user`` is known, else from a q0 point estimate on the
    history itself. An empty history gives the prior predictive.
    """
    params = fit_result.map_params
    actions = actions_from_records(user_history, fit_result.normalizer)
    if user is not None and user in fit_result.per_user_q0:
        q0 = fit_result.per_user_q0[user]
    elif actions:
        q0 = estimate_q0_map(actions, params)
    else:
        q0 = dirichlet_mean(params.hdp)
    return _predict_from_state(params, q0, actions)


# Baselines


class BaselineKind(Enum):
    GLOBAL = "Global"
    USER_ALL = "UserAll"
    USER_KMAX = "UserKMax"
    INITIAL = "Initial"
    INIT_KMAX = "InitKMax"


@dataclass(frozen=True, eq=False)
class BaselineContext:
    """
    Inputs shared by the baselines.

    :param training_log: the log the community index and global counts come from
    :param history: the user's communities, oldest first
    :param k: window for the KMax baselines
    :param smoothing: pseudo-count per observed community and for the unseen slot
    :param hdp: prior of the Initial baselines (default: alpha0 = 1 on the
        training log's popularity)
    """

    training_log: EventLog
    history: Sequence[str] = ()
    k: int = DEFAULT_K
    smoothing: float = DEFAULT_SMOOTHING
    hdp: Optional[HdpParams] = None

    def __post_init__(self):
        if self.k <= 0:
            raise ProplabArgumentException(f"K must be > 0, got {self.k}")
        if self.smoothing < 0:
            raise ProplabArgumentException(f"smoothing must be >= 0, got {self.smoothing}")

    def prior(self) -> HdpParams:
        if self.hdp is not None:
            return self.hdp
        return HdpParams(alpha0=1.0, popularity=estimate_beta(self.training_log))


def _frequencies(
    communities: Sequence[str], counts: Counter, smoothing: float
) -> PredictiveDistribution:
    index = list(communities)
    known = set(index)
    index.extend(sorted(c for c in counts if c not in known))
    weights = [counts[c] + smoothing for c in index] + [smoothing]
    return PredictiveDistribution.from_weights(index, weights)


def _dirichlet_posterior(hdp: HdpParams, history: Sequence[str]) -> PredictiveDistribution:
    communities = hdp.popularity.communities
    slots = {c: slot for slot, c in enumerate(communities)}
    weights = hdp.alpha.copy()
    for community in history:
        # communities the prior does not index share the unseen slot
        weights[slots.get(community, len(communities))] += 1.0
    return PredictiveDistribution.from_weights(communities, weights)


def baseline_predict(kind: BaselineKind, context: BaselineContext) -> PredictiveDistribution:
    """
    Model-free and no-learning predictive distributions.

    Global, UserAll and UserKMax are smoothed frequencies over the training
    log's communities plus an unseen pseudo-slot. Initial is the Dirichlet
    posterior mean (alpha + counts) / (alpha0 + n); InitKMax uses only the K
    most recent actions.
    """
    kind = BaselineKind(kind)
    communities = context.training_log.communities
    if kind is BaselineKind.GLOBAL:
        return _frequencies(communities, context.training_log.community_counts(),
                            context.smoothing)
    if kind is BaselineKind.USER_ALL:
        return _frequencies(communities, Counter(context.history), context.smoothing)
    if kind is BaselineKind.USER_KMAX:
        recent = list(context.history)[-context.k:]
        return _frequencies(communities, Counter(recent), context.smoothing)
    if kind is BaselineKind.INITIAL:
        return _dirichlet_posterior(context.prior(), context.history)
    return _dirichlet_posterior(context.prior(), list(context.history)[-context.k:])


# Predictors used by the sweep


class Predictor:
    """
    Something trained on a log of training windows that predicts each user's
    next community.
    """

    name = "abstract"

    def fit(self, training: EventLog) -> "Predictor":
        return self

    def predict(self, user: str, history: Sequence[EventRecord]) -> PredictiveDistribution:
        raise NotImplementedError

    def predict_sequence(
        self,
        user: str,
        window: Sequence[EventRecord],
        test: Sequence[EventRecord],
        online: bool = True,
    ) -> List[PredictiveDistribution]:
        """
        One distribution per test event; online prediction also conditions on
        the test events before it.
        """
        if not online:
            dist = self.predict(user, window)
            return [dist] * len(test)
        history = list(window)
        result = []
        for event in test:
            result.append(self.predict(user, history))
            history.append(event)
        return result


class BaselinePredictor(Predictor):
    def __init__(
        self,
        kind: BaselineKind,
        k: int = DEFAULT_K,
        smoothing: float = DEFAULT_SMOOTHING,
        alpha0: float = 1.0,
        gamma: float = DEFAULT_GAMMA,
    ):
        self.kind = BaselineKind(kind)
        self.name = self.kind.value
        self.k = k
        self.smoothing = smoothing
        self.alpha0 = alpha0
        self.gamma = gamma
        self._training = None
        self._hdp = None
        self._global = None

    def fit(self, training):
        self._training = training
        self._hdp = HdpParams(
            alpha0=self.alpha0,
            popularity=estimate_beta(training, self.smoothing, self.gamma),
        )
        self._global = None
        return self

    def _context(self, history) -> BaselineContext:
        if self._training is None:
            raise ProplabArgumentException(f"{self.name} predictor used before fit")
        return BaselineContext(
            training_log=self._training,
            history=[record.community for record in history],
            k=self.k,
            smoothing=self.smoothing,
            hdp=self._hdp,
        )

    def predict(self, user, history):
        if self.kind is BaselineKind.GLOBAL:
            if self._global is None:
                self._global = baseline_predict(self.kind, self._context(()))
            return self._global
        return baseline_predict(self.kind, self._context(history))


class ModelPredictor(Predictor):
    """
    The full learning model.

    With ``fit_config`` the model is refit on every training log, global
    popularity and reply cap included. Otherwise the learning and reward
    parameters of ``params`` stay fixed; the global popularity is
    re-estimated on the training log and each user's q0 on their training
    window.
    """

    name = "FullModel"

    def __init__(
        self,
        params: Optional[ModelParams] = None,
        normalizer: Optional[ReplyNormalizer] = None,
        fit_config: Optional[FitConfig] = None,
        q0_iterations: int = 50,
        smoothing: float = DEFAULT_SMOOTHING,
        unseen_mass: Optional[float] = None,
    ):
        if params is None and fit_config is None:
            raise ProplabArgumentException("need fitted params or a fit configuration")
        self.base_params = params
        self.params = params
        self.normalizer = normalizer
        self.fit_config = fit_config
        self.q0_iterations = q0_iterations
        self.smoothing = smoothing
        self.unseen_mass = unseen_mass
        self._normalizer = normalizer or ReplyNormalizer()
        self._q0 = {}

    @classmethod
    def from_fit(cls, fit_result: FitResult, **kwargs) -> "ModelPredictor":
        """Fixed parameters from a fit over the whole log."""
        kwargs.setdefault("smoothing", fit_result.config.smoothing)
        kwargs.setdefault("unseen_mass", fit_result.config.unseen_mass)
        return cls(params=fit_result.map_params, normalizer=fit_result.normalizer, **kwargs)

    def fit(self, training):
        if self.fit_config is not None:
            result = fit_model(training, self.fit_config, normalizer=self.normalizer)
            self.params = result.map_params
            self._normalizer = result.normalizer
            self._q0 = dict(result.per_user_q0)
            return self
        base = self.base_params
        popularity = estimate_beta(
            training, self.smoothing, base.popularity.gamma, self.unseen_mass
        )
        self.params = replace(base, hdp=HdpParams(alpha0=base.alpha0, popularity=popularity))
        users = training.users
        sequences = [
            actions_from_records(training.history(user), self._normalizer) for user in users
        ]
        estimates = estimate_q0_map_batch(sequences, self.params, self.q0_iterations)
        self._q0 = dict(zip(users, estimates))
        return self

    def _state(self, user, history) -> PropensityState:
        q0 = self._q0.get(user)
        if q0 is None:
            q0 = dirichlet_mean(self.params.hdp)
        state = PropensityState.initial(self.params.popularity.communities, q0)
        return replay(
            state,
            actions_from_records(history, self._normalizer),
            self.params,
            self.params.popularity,
        )

    def predict(self, user, history):
        return PredictiveDistribution.from_state(self._state(user, history))

    def predict_sequence(self, user, window, test, online=True):
        state = self._state(user, window)
        result = []
        for event in test:
            result.append(PredictiveDistribution.from_state(state))
            if online:
                state = replay(
                    state,
                    actions_from_records([event], self._normalizer),
                    self.params,
                    self.params.popularity,
                )
        return result


class OraclePredictor(Predictor):
    """Puts all mass on the realized outcome; an upper bound for the score."""

    name = "Oracle"

    def predict(self, user, history):
        raise ProplabArgumentException("the oracle only predicts known test events")

    def predict_sequence(self, user, window, test, online=True):
        return [
            PredictiveDistribution(communities=(event.community,), probs=[1.0, 0.0])
            for event in test
        ]


# Training-fraction sweep


@dataclass(frozen=True)
class SweepConfig:
    test_fraction: float = 0.2
    min_actions: int = 10
    window: str = "earliest"
    online: bool = True

    def __post_init__(self):
        if not 0.0 < self.test_fraction < 1.0:
            raise ProplabArgumentException(
                f"test fraction must be in (0, 1), got {self.test_fraction}"
            )
        if self.min_actions < 2:
            raise ProplabArgumentException("min_actions must be >= 2")
        if self.window not in ("earliest", "latest"):
            raise ProplabArgumentException(f"unknown window {self.window!r}")


@dataclass(frozen=True)
class SweepRow:
    fraction: float
    predictor: str
    mean_score: float
    stderr: float
    n_test_events: int
    n_users: int
    skipped_users: int
    test_set_hash: str

    def as_row(self) -> list:
        return [getattr(self, column) for column in SWEEP_COLUMNS]


@dataclass(frozen=True)
class SweepResult:
    rows: Tuple[SweepRow, ...]
    test_set_hash: str

    def score(self, fraction: float, predictor: str) -> SweepRow:
        for row in self.rows:
            if row.fraction == fraction and row.predictor == predictor:
                return row
        raise KeyError((fraction, predictor))

    def to_csv(self) -> str:
        return _csv_text(SWEEP_COLUMNS, (row.as_row() for row in self.rows))

    def write_csv(self, path: str):
        write_atomic(path, self.to_csv())


def split_test_suffix(
    history: Sequence[EventRecord], test_fraction: float
) -> Tuple[Tuple[EventRecord, ...], Tuple[EventRecord, ...]]:
    """Split a history into (prefix, chronological test suffix)."""
    n_test = max(1, int(round(test_fraction * len(history))))
    n_test = min(n_test, len(history) - 1)
    return tuple(history[:-n_test]), tuple(history[-n_test:])


def training_window(
    prefix: Sequence[EventRecord], fraction: float, window: str = "earliest"
) -> Tuple[EventRecord, ...]:
    size = int(math.floor(fraction * len(prefix) + 1e-9))
    if size == 0:
        return ()
    if window == "earliest":
        return tuple(prefix[:size])
    return tuple(prefix[len(prefix) - size:])


def hash_test_set(test_sets: Dict[str, Sequence[EventRecord]]) -> str:
    digest = hashlib.sha256()
    for user in sorted(test_sets):
        for record in test_sets[user]:
            digest.update(f"{user}\t{record.seq}\n".encode("utf8"))
    return digest.hexdigest()


def training_fraction_sweep(
    log: EventLog,
    fractions: Sequence[float],
    predictors: Sequence[Predictor],
    cfg: SweepConfig = SweepConfig(),
) -> SweepResult:
    """
    Score predictors on a fixed per-user test suffix while the training window
    grows.

    Users with fewer than ``cfg.min_actions`` actions are left out entirely.
    At each fraction, users whose window is empty are skipped and counted.
    """
    if not fractions:
        raise ProplabArgumentException("need at least one training fraction")
    for fraction in fractions:
        if not 0.0 < fraction <= 1.0:
            raise ProplabArgumentException(f"fractions must be in (0, 1], got {fraction}")

    splits = {
        user: split_test_suffix(history, cfg.test_fraction)
        for user, history in log.by_user.items()
        if len(history) >= cfg.min_actions
    }
    if not splits:
        raise ProplabInputException(
            f"No user has at least {cfg.min_actions} actions to evaluate on"
        )
    digest = hash_test_set({user: test for user, (_, test) in splits.items()})

    rows = []
    for fraction in fractions:
        windows = {
            user: training_window(prefix, fraction, cfg.window)
            for user, (prefix, _) in splits.items()
        }
        skipped = sorted(user for user, window in windows.items() if not window)
        if skipped:
            _LOGGER.warning(
                "Fraction %s leaves %d users without training data; skipping them",
                fraction,
                len(skipped),
            )
        windows = {user: window for user, window in windows.items() if window}
        if not windows:
            raise ProplabInputException(f"Fraction {fraction} leaves no training data")
        training = EventLog.from_histories(windows)

        for predictor in predictors:
            predictor.fit(training)
            per_user = []
            for user, window in windows.items():
                test = splits[user][1]
                dists = predictor.predict_sequence(user, window, test, cfg.online)
                per_user.append(
                    [quadratic_score(dist, event.community) for dist, event in zip(dists, test)]
                )
            scores = np.concatenate([np.asarray(s, dtype=float) for s in per_user])
            user_means = np.array([np.mean(s) for s in per_user])
            stderr = (
                float(np.std(user_means, ddof=1) / math.sqrt(len(user_means)))
                if len(user_means) > 1
                else 0.0
            )
            rows.append(
                SweepRow(
                    fraction=fraction,
                    predictor=predictor.name,
                    mean_score=float(scores.mean()),
                    stderr=stderr,
                    n_test_events=int(scores.size),
                    n_users=len(windows),
                    skipped_users=len(skipped),
                    test_set_hash=digest,
                )
            )
            _LOGGER.info(
                "fraction %s %s: mean score %.4f over %d events",
                fraction,
                predictor.name,
                rows[-1].mean_score,
                rows[-1].n_test_events,
            )

    return SweepResult(rows=tuple(rows), test_set_hash=digest)


# Feedback response


@dataclass(frozen=True)
class ResponseBucket:
    lower: int
    upper: Optional[int]
    n_events: int
    return_rate: Optional[float]
    relative_increase: Optional[float]

    @property
    def label(self) -> str:
        if self.upper is None:
            return f"{self.lower}+"
        if self.upper == self.lower + 1:
            return str(self.lower)
        return f"{self.lower}-{self.upper - 1}"

    def as_row(self) -> list:
        return [
            self.label,
            self.lower,
            "" if self.upper is None else self.upper,
            self.n_events,
            "" if self.return_rate is None else self.return_rate,
            "" if self.relative_increase is None else self.relative_increase,
        ]


def feedback_response_curve(
    log: EventLog, buckets: Sequence[int] = DEFAULT_BUCKETS
) -> List[ResponseBucket]:
    """
    Relative increase in returning to a community after its replies.

    For consecutive actions of a user, the return rate of a bucket is the
    fraction of actions with a reply count in [lower, upper) that are followed
    by another action in the same community. Rates are divided by the
    zero-reply rate. Empty buckets are reported with None.

    :param buckets: increasing lower bounds starting at 0; the last is open
    """
    buckets = [int(b) for b in buckets]
    if not buckets or buckets[0] != 0 or any(b >= c for b, c in zip(buckets, buckets[1:])):
        raise ProplabArgumentException(
            f"buckets must be increasing lower bounds starting at 0, got {buckets}"
        )

    events = np.zeros(len(buckets), dtype=int)
    returns = np.zeros(len(buckets), dtype=int)
    for history in log.by_user.values():
        for current, following in zip(history, history[1:]):
            bucket = int(np.searchsorted(buckets, current.replies, side="right")) - 1
            events[bucket] += 1
            returns[bucket] += following.community == current.community

    rates = [
        float(returns[i]) / float(events[i]) if events[i] else None
        for i in range(len(buckets))
    ]
    baseline = rates[0]
    if not baseline:
        _LOGGER.warning("Zero-reply return rate is %s; relative increases undefined", baseline)

    result = []
    for i, lower in enumerate(buckets):
        if rates[i] is None:
            _LOGGER.warning("Reply bucket starting at %d is empty", lower)
        relative = rates[i] / baseline if baseline and rates[i] is not None else None
        result.append(
            ResponseBucket(
                lower=lower,
                upper=buckets[i + 1] if i + 1 < len(buckets) else None,
                n_events=int(events[i]),
                return_rate=rates[i],
                relative_increase=1.0 if i == 0 and baseline else relative,
            )
        )
    return result


def response_curve_csv(curve: Sequence[ResponseBucket]) -> str:
    return _csv_text(RESPONSE_COLUMNS, (bucket.as_row() for bucket in curve))


def write_response_curve(curve: Sequence[ResponseBucket], path: str):
    write_atomic(path, response_curve_csv(curve))


def _csv_text(header, rows) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buffer.getvalue()
