"""
Approximate Bayesian inference (inverse reinforcement learning) of the
learning model from an event log.

Sequence likelihoods are exact. Because the update rule is linear in q0 and
q0 always sums to one, every choice probability has the form

    (coef * q0[slot] + offset) / total

where coef, offset and total depend on the parameters and the observed
history but not on q0. The forward pass computes those terms for all users
at once; q0 moves and the q0 point estimate reuse them.

With point-estimated q0 the chain moves the parameters against the
collapsed likelihood, where each user's q0 is integrated out under its
Dirichlet(alpha0 beta) prior. The per-user point estimates are computed
once, at the MAP parameters.
"""

import json
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from typing import Dict, FrozenSet, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from scipy import stats
from scipy.special import expit, logit
from voluptuous import ALLOW_EXTRA, Any, MultipleInvalid, Required, Schema

from .eventlog import EventLog, write_atomic
from .exceptions import (
    ProplabArgumentException,
    ProplabInitializationException,
    ProplabInputException,
)
from .feedback import DEFAULT_REPLY_QUANTILE, ReplyNormalizer
from .hdp import (
    DEFAULT_GAMMA,
    DEFAULT_SMOOTHING,
    GlobalPopularity,
    HdpParams,
    dirichlet_mean,
    estimate_beta,
    log_dirichlet,
)
from .model import (
    Action,
    LearningParams,
    ModelParams,
    RewardFunction,
    actions_from_records,
    split_fraction_for,
)

_LOGGER = logging.getLogger(__name__)

FIT_FORMAT = "proplab-fit"
FIT_FORMAT_VERSION = 1

BLOCKS = {
    "learning": ("phi", "epsilon"),
    "reward": ("w_replies", "w_votes", "w_intercept"),
    "alpha0": ("alpha0",),
}
UNIT_INTERVAL = frozenset(("phi", "epsilon"))
POSITIVE = frozenset(("alpha0",))
PARAMETER_NAMES = tuple(name for names in BLOCKS.values() for name in names)

DEFAULT_INITIAL = {
    "phi": 0.1,
    "epsilon": 0.1,
    "w_replies": 1.0,
    "w_votes": 0.0,
    "w_intercept": 0.0,
    "alpha0": 1.0,
}
DEFAULT_PROPOSAL_SCALES = {
    "phi": 0.2,
    "epsilon": 0.2,
    "w_replies": 0.1,
    "w_votes": 0.05,
    "w_intercept": 0.05,
    "alpha0": 0.2,
}
UNIT_CLIP = 1e-9


class Q0Treatment(Enum):
    SAMPLE_LATENT = "sample"
    MAP_POINT_ESTIMATE = "map"


@dataclass(frozen=True)
class Prior:
    """A univariate prior: uniform(a, b), normal(a, b) or lognormal(a, b)."""

    kind: str
    a: float
    b: float

    def __post_init__(self):
        if self.kind not in ("uniform", "normal", "lognormal"):
            raise ProplabArgumentException(f"Unknown prior kind {self.kind!r}")
        if self.kind == "uniform" and not self.b > self.a:
            raise ProplabArgumentException("uniform prior needs b > a")
        if self.kind != "uniform" and not self.b > 0:
            raise ProplabArgumentException(f"{self.kind} prior needs scale b > 0")

    @cached_property
    def distribution(self):
        if self.kind == "uniform":
            return stats.uniform(loc=self.a, scale=self.b - self.a)
        if self.kind == "normal":
            return stats.norm(loc=self.a, scale=self.b)
        return stats.lognorm(s=self.b, scale=math.exp(self.a))

    def logpdf(self, value: float) -> float:
        return float(self.distribution.logpdf(value))

    def sample(self, rng: np.random.Generator) -> float:
        return float(self.distribution.rvs(random_state=rng))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "a": self.a, "b": self.b}


@dataclass(frozen=True)
class Priors:
    phi: Prior = Prior("uniform", 0.0, 1.0)
    epsilon: Prior = Prior("uniform", 0.0, 1.0)
    w_replies: Prior = Prior("normal", 0.0, 10.0)
    w_votes: Prior = Prior("normal", 0.0, 10.0)
    w_intercept: Prior = Prior("normal", 0.0, 10.0)
    alpha0: Prior = Prior("lognormal", 0.0, 1.0)

    def log_prob(self, values: Mapping[str, float]) -> float:
        return sum(getattr(self, name).logpdf(values[name]) for name in PARAMETER_NAMES)

    def to_dict(self) -> dict:
        return {name: getattr(self, name).to_dict() for name in PARAMETER_NAMES}

    @classmethod
    def from_dict(cls, payload: Mapping[str, dict]) -> "Priors":
        return cls(**{name: Prior(**spec) for name, spec in payload.items()})


@dataclass(frozen=True)
class FitConfig:
    """
    Sampler settings.

    ``fixed`` names parameters (or ``"q0"``) held at their initial values.
    ``initial`` overrides DEFAULT_INITIAL. ``reply_cap`` fixes the reply
    normalization; when None it is the ``reply_quantile`` of the log.
    """

    n_samples: int = 2000
    burn_in: int = 500
    proposal_scales: Mapping[str, float] = field(
        default_factory=lambda: dict(DEFAULT_PROPOSAL_SCALES)
    )
    q0_treatment: Q0Treatment = Q0Treatment.MAP_POINT_ESTIMATE
    rng_seed: int = 0
    priors: Priors = Priors()
    fixed: FrozenSet[str] = frozenset()
    initial: Mapping[str, float] = field(default_factory=dict)
    smoothing: float = DEFAULT_SMOOTHING
    gamma: float = DEFAULT_GAMMA
    unseen_mass: Optional[float] = None
    reward_floor: float = 0.0
    reply_quantile: float = DEFAULT_REPLY_QUANTILE
    reply_cap: Optional[float] = None
    prob_floor: float = 1e-12
    q0_iterations: int = 50
    init_attempts: int = 100
    n_jobs: int = 1

    def __post_init__(self):
        if not self.n_samples > self.burn_in >= 0:
            raise ProplabArgumentException(
                f"need n_samples > burn_in >= 0, got {self.n_samples}, {self.burn_in}"
            )
        unknown = set(self.fixed) - set(PARAMETER_NAMES) - {"q0"}
        if unknown:
            raise ProplabArgumentException(f"Unknown fixed parameters: {sorted(unknown)}")
        unknown = set(self.initial) - set(PARAMETER_NAMES)
        if unknown:
            raise ProplabArgumentException(f"Unknown initial values: {sorted(unknown)}")
        if self.reply_cap is not None and not self.reply_cap > 0:
            raise ProplabArgumentException(f"reply_cap must be > 0, got {self.reply_cap}")
        scales = {**DEFAULT_PROPOSAL_SCALES, **dict(self.proposal_scales)}
        if any(not value > 0 for value in scales.values()):
            raise ProplabArgumentException("proposal scales must be > 0")
        object.__setattr__(self, "proposal_scales", scales)
        object.__setattr__(self, "fixed", frozenset(self.fixed))
        object.__setattr__(self, "q0_treatment", Q0Treatment(self.q0_treatment))

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "burn_in": self.burn_in,
            "proposal_scales": dict(sorted(self.proposal_scales.items())),
            "q0_treatment": self.q0_treatment.value,
            "rng_seed": self.rng_seed,
            "priors": self.priors.to_dict(),
            "fixed": sorted(self.fixed),
            "initial": dict(sorted(self.initial.items())),
            "smoothing": self.smoothing,
            "gamma": self.gamma,
            "unseen_mass": self.unseen_mass,
            "reward_floor": self.reward_floor,
            "reply_quantile": self.reply_quantile,
            "reply_cap": self.reply_cap,
            "prob_floor": self.prob_floor,
            "q0_iterations": self.q0_iterations,
            "init_attempts": self.init_attempts,
            "n_jobs": self.n_jobs,
        }

    @classmethod
    def from_dict(cls, payload: Mapping[str, object]) -> "FitConfig":
        payload = dict(payload)
        payload["priors"] = Priors.from_dict(payload.get("priors", {}))
        payload["fixed"] = frozenset(payload.get("fixed", ()))
        return cls(**payload)


# Sequence compilation and the forward pass


@dataclass(frozen=True, eq=False)
class _Batch:
    """Padded per-user action arrays, one row per user."""

    users: Tuple[str, ...]
    n_base: int
    n_slots: int
    slots: np.ndarray
    charge: np.ndarray
    q0_slot: np.ndarray
    share: np.ndarray
    grows: np.ndarray
    split: np.ndarray
    replies_norm: np.ndarray
    votes: np.ndarray
    mask: np.ndarray

    @property
    def shape(self) -> Tuple[int, int]:
        return self.slots.shape

    def take(self, rows: np.ndarray) -> "_Batch":
        return _Batch(
            users=tuple(self.users[row] for row in rows),
            n_base=self.n_base,
            n_slots=self.n_slots,
            **{
                name: getattr(self, name)[rows]
                for name in (
                    "slots",
                    "charge",
                    "q0_slot",
                    "share",
                    "grows",
                    "split",
                    "replies_norm",
                    "votes",
                    "mask",
                )
            },
        )


@dataclass(frozen=True, eq=False)
class _Terms:
    coef: np.ndarray
    offset: np.ndarray
    total: np.ndarray


def _compile(
    sequences: Sequence[Sequence[Action]],
    users: Sequence[str],
    communities: Sequence[str],
    popularity: Optional[GlobalPopularity] = None,
) -> _Batch:
    """
    Turn action sequences into slot arrays.

    Communities outside ``communities`` are charged to the unseen slot on
    their first occurrence and then get a virtual slot whose share of the
    unseen q0 mass follows grow_state.
    """
    index = {community: slot for slot, community in enumerate(communities)}
    unseen = len(communities)
    n_users = len(sequences)
    length = max((len(seq) for seq in sequences), default=0)
    shape = (n_users, length)

    slots = np.zeros(shape, dtype=np.int64)
    charge = np.zeros(shape, dtype=np.int64)
    q0_slot = np.zeros(shape, dtype=np.int64)
    share = np.ones(shape)
    grows = np.zeros(shape, dtype=bool)
    split = np.zeros(shape)
    replies_norm = np.zeros(shape)
    votes = np.zeros(shape)
    mask = np.zeros(shape, dtype=bool)
    max_virtual = 0

    for row, sequence in enumerate(sequences):
        virtual = {}
        virtual_share = {}
        unseen_share = 1.0
        for t, action in enumerate(sequence):
            community = action.community
            if community in index:
                slot = charged = base = index[community]
                weight = 1.0
            elif community in virtual:
                slot = charged = virtual[community]
                base = unseen
                weight = virtual_share[community]
            else:
                charged = base = unseen
                weight = unseen_share
                slot = unseen + 1 + len(virtual)
                fraction = split_fraction_for(community, popularity)
                virtual[community] = slot
                virtual_share[community] = fraction * unseen_share
                unseen_share *= 1.0 - fraction
                grows[row, t] = True
                split[row, t] = fraction
            slots[row, t] = slot
            charge[row, t] = charged
            q0_slot[row, t] = base
            share[row, t] = weight
            replies_norm[row, t] = action.feedback.replies_norm
            votes[row, t] = action.feedback.vote_score
            mask[row, t] = True
        max_virtual = max(max_virtual, len(virtual))

    return _Batch(
        users=tuple(users),
        n_base=unseen + 1,
        n_slots=unseen + 1 + max_virtual,
        slots=slots,
        charge=charge,
        q0_slot=q0_slot,
        share=share,
        grows=grows,
        split=split,
        replies_norm=replies_norm,
        votes=votes,
        mask=mask,
    )


def _forward(batch: _Batch, learning: LearningParams, reward_fn: RewardFunction) -> _Terms:
    """
    Replay every user's history in lock-step.

    Propensities are kept as q = a * share * q0 + D, with D (direct rewards)
    decayed lazily from the step it was last written.
    """
    n_users, length = batch.shape
    unseen = batch.n_base - 1
    decay = 1.0 - learning.phi
    epsilon = learning.epsilon
    rewards = np.where(
        batch.mask, reward_fn.evaluate_many(batch.replies_norm, batch.votes), 0.0
    )

    rows = np.arange(n_users)
    a = np.ones(n_users)
    total = np.ones(n_users)
    direct = np.zeros((n_users, batch.n_slots))
    last = np.zeros((n_users, batch.n_slots), dtype=np.int64)
    coef = np.empty(batch.shape)
    offset = np.empty(batch.shape)
    totals = np.empty(batch.shape)

    for t in range(length):
        charged = batch.charge[:, t]
        current = direct[rows, charged] * decay ** (t - last[rows, charged])
        coef[:, t] = a * batch.share[:, t]
        offset[:, t] = current
        totals[:, t] = total

        growing = batch.grows[:, t]
        if growing.any():
            fraction = batch.split[:, t]
            direct[growing, unseen] = (1.0 - fraction[growing]) * current[growing]
            last[growing, unseen] = t
            current = np.where(growing, fraction * current, current)

        reward_t = rewards[:, t]
        chosen = batch.slots[:, t]
        direct[rows, chosen] = decay * current + (1.0 - epsilon) * reward_t
        last[rows, chosen] = t + 1
        a = decay * a + epsilon * reward_t
        total = decay * total + reward_t

    return _Terms(coef=coef, offset=offset, total=totals)


def _forward_parallel(batch: _Batch, params: ModelParams, n_jobs: int = 1) -> _Terms:
    """Per-user terms are independent: map over user chunks, then concatenate."""
    n_users = batch.shape[0]
    if n_jobs == 1 or n_users < 2:
        return _forward(batch, params.learning, params.reward)
    chunks = [
        rows
        for rows in np.array_split(np.arange(n_users), min(n_users, 4 * abs(n_jobs)))
        if len(rows)
    ]
    parts = Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(_forward)(batch.take(rows), params.learning, params.reward)
        for rows in chunks
    )
    return _Terms(
        coef=np.concatenate([part.coef for part in parts]),
        offset=np.concatenate([part.offset for part in parts]),
        total=np.concatenate([part.total for part in parts]),
    )


def _choice_probabilities(batch: _Batch, terms: _Terms, q0: np.ndarray) -> np.ndarray:
    base = np.take_along_axis(q0, batch.q0_slot, axis=1)
    numer = terms.coef * base + terms.offset
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(terms.total > 0, numer / terms.total, 0.0)


def _user_log_likelihoods(
    batch: _Batch, terms: _Terms, q0: np.ndarray, prob_floor: float = 0.0
) -> np.ndarray:
    probabilities = _choice_probabilities(batch, terms, q0)
    with np.errstate(divide="ignore"):
        log_p = np.log(np.maximum(probabilities, prob_floor))
    return np.where(batch.mask, log_p, 0.0).sum(axis=1)


def _q0_responsibilities(batch: _Batch, terms: _Terms, q0: np.ndarray) -> np.ndarray:
    """Share of each observed choice's probability that comes from q0."""
    from_q0 = terms.coef * np.take_along_axis(q0, batch.q0_slot, axis=1)
    numer = from_q0 + terms.offset
    responsibility = np.divide(
        from_q0, numer, out=np.zeros_like(numer), where=numer > 0
    )
    return np.where(batch.mask, responsibility, 0.0)


def _slot_counts(batch: _Batch, weights: np.ndarray) -> np.ndarray:
    """Sum per-step weights into every user's q0 slots."""
    n_users = batch.shape[0]
    flat = np.arange(n_users)[:, None] * batch.n_base + batch.q0_slot
    counts = np.bincount(
        flat.ravel(),
        weights=np.asarray(weights, dtype=float).ravel(),
        minlength=n_users * batch.n_base,
    )
    return counts.reshape(n_users, batch.n_base)


def _em_q0(
    batch: _Batch, terms: _Terms, alpha: np.ndarray, q0: np.ndarray, iterations: int
) -> np.ndarray:
    """
    Minorise-maximise q0 for log-likelihood + sum(alpha * log q0).

    Each term log(coef q + offset) is bounded below by its responsibility-
    weighted split, so every iteration is non-decreasing in the objective.
    """
    for _ in range(iterations):
        counts = _slot_counts(batch, _q0_responsibilities(batch, terms, q0))
        q0 = alpha[None, :] + counts
        q0 = q0 / q0.sum(axis=1, keepdims=True)
    return q0


def _collapsed_log_likelihoods(
    batch: _Batch, terms: _Terms, alpha: np.ndarray, prob_floor: float = 0.0
) -> np.ndarray:
    """
    Per-user log-likelihood with q0 integrated out under Dirichlet(alpha).

    Choices are scored in order against the posterior mean of q0, then the
    q0 part of each choice is added to the user's Dirichlet counts. This is
    exact while no chosen slot carries direct reward, where it reduces to
    the Dirichlet-multinomial predictive.
    """
    n_users, length = batch.shape
    rows = np.arange(n_users)
    counts = np.tile(np.asarray(alpha, dtype=float), (n_users, 1))
    mass = np.full(n_users, float(np.sum(alpha)))
    log_lik = np.zeros(n_users)
    for t in range(length):
        live = batch.mask[:, t]
        base = batch.q0_slot[:, t]
        from_q0 = terms.coef[:, t] * counts[rows, base] / mass
        numer = from_q0 + terms.offset[:, t]
        total = terms.total[:, t]
        with np.errstate(divide="ignore", invalid="ignore"):
            probability = np.where(total > 0, numer / total, 0.0)
            log_p = np.log(np.maximum(probability, prob_floor))
            responsibility = np.where(numer > 0, from_q0 / numer, 0.0)
        log_lik += np.where(live, log_p, 0.0)
        weight = np.where(live, responsibility, 0.0)
        counts[rows, base] += weight
        mass += weight
    return log_lik


# Public likelihood API


def sequence_log_likelihood(
    params: ModelParams,
    q0: np.ndarray,
    actions: Sequence[Action],
    communities: Optional[Sequence[str]] = None,
    prob_floor: float = 0.0,
) -> float:
    """
    Exact log-probability of an ordered action sequence.

    Rewards are the observed ones. A community outside ``communities`` is
    charged to the unseen slot on its first occurrence. Impossible sequences
    give -inf unless ``prob_floor`` > 0.

    :param q0: initial propensities, one slot per community plus unseen
    :param communities: indexed communities (default: params' popularity)
    """
    if communities is None:
        communities = params.popularity.communities
    q0 = np.asarray(q0, dtype=float)
    if q0.shape != (len(communities) + 1,):
        raise ProplabArgumentException("q0 needs one slot per community plus unseen")
    batch = _compile([actions], ["user"], communities, params.popularity)
    terms = _forward(batch, params.learning, params.reward)
    return float(_user_log_likelihoods(batch, terms, q0[None, :], prob_floor)[0])


def log_posterior(
    params: ModelParams,
    log: EventLog,
    q0s: Mapping[str, np.ndarray],
    priors: Priors = Priors(),
    normalizer: Optional[ReplyNormalizer] = None,
    prob_floor: float = 0.0,
) -> float:
    """
    Sum of user log-likelihoods, Dirichlet(alpha0 beta) terms for every user's
    q0 and the parameter priors.
    """
    missing = [user for user in log.users if user not in q0s]
    if missing:
        raise ProplabArgumentException(f"No q0 for users {missing[:5]}")
    if normalizer is None:
        normalizer = ReplyNormalizer.from_log(log)
    users = log.users
    communities = params.popularity.communities
    batch = _compile(
        [actions_from_records(log.history(user), normalizer) for user in users],
        users,
        communities,
        params.popularity,
    )
    q0 = np.array([np.asarray(q0s[user], dtype=float) for user in users]).reshape(
        len(users), len(communities) + 1
    )
    terms = _forward(batch, params.learning, params.reward)
    log_lik = _user_log_likelihoods(batch, terms, q0, prob_floor).sum()
    log_dir = log_dirichlet(q0, params.hdp.alpha).sum() if users else 0.0
    return float(log_lik + log_dir + priors.log_prob(params.values()))


def collapsed_log_posterior(
    params: ModelParams,
    log: EventLog,
    priors: Priors = Priors(),
    normalizer: Optional[ReplyNormalizer] = None,
    prob_floor: float = 0.0,
) -> float:
    """
    Log-posterior of the parameters with every user's q0 integrated out.

    This is the objective the sampler tracks under MapPointEstimate; it
    stays bounded in alpha0.
    """
    if normalizer is None:
        normalizer = ReplyNormalizer.from_log(log)
    users = log.users
    batch = _compile(
        [actions_from_records(log.history(user), normalizer) for user in users],
        users,
        params.popularity.communities,
        params.popularity,
    )
    terms = _forward(batch, params.learning, params.reward)
    log_lik = _collapsed_log_likelihoods(batch, terms, params.hdp.alpha, prob_floor)
    return float(log_lik.sum() + priors.log_prob(params.values()))


def estimate_q0_map_batch(
    sequences: Sequence[Sequence[Action]],
    params: ModelParams,
    iterations: int = 100,
    communities: Optional[Sequence[str]] = None,
) -> np.ndarray:
    """Point estimates of q0 for many users at once, one row per sequence."""
    if communities is None:
        communities = params.popularity.communities
    batch = _compile(sequences, [str(i) for i in range(len(sequences))], communities,
                     params.popularity)
    alpha = params.hdp.alpha
    if len(communities) + 1 != len(alpha):
        raise ProplabArgumentException("communities must match the popularity vector")
    start = np.tile(alpha / alpha.sum(), (len(sequences), 1))
    terms = _forward(batch, params.learning, params.reward)
    return _em_q0(batch, terms, alpha, start, iterations)


def estimate_q0_map(
    actions: Sequence[Action],
    params: ModelParams,
    iterations: int = 100,
    communities: Optional[Sequence[str]] = None,
) -> np.ndarray:
    """
    Point estimate of one user's q0.

    Maximises the sequence log-likelihood plus the Dirichlet(alpha0 beta)
    prior taken in softmax coordinates, starting from the Dirichlet mean.
    With no actions the Dirichlet mean is returned.
    """
    if not actions:
        return dirichlet_mean(params.hdp)
    return estimate_q0_map_batch([actions], params, iterations, communities)[0]


# Sampler


@dataclass(frozen=True, eq=False)
class FitResult:
    map_params: ModelParams
    map_log_posterior: float
    posterior_samples: List[Tuple[ModelParams, float]]
    per_user_q0: Dict[str, np.ndarray] = field(repr=False)
    diagnostics: Dict[str, float]
    config: FitConfig
    normalizer: ReplyNormalizer
    initial_log_posterior: float

    @property
    def communities(self) -> Tuple[str, ...]:
        return self.map_params.popularity.communities

    def to_dict(self) -> dict:
        return {
            "format": FIT_FORMAT,
            "version": FIT_FORMAT_VERSION,
            "map_params": self.map_params.to_dict(),
            "map_log_posterior": self.map_log_posterior,
            "initial_log_posterior": self.initial_log_posterior,
            "posterior_samples": [
                {**{name: params.values()[name] for name in PARAMETER_NAMES},
                 "log_posterior": value}
                for params, value in self.posterior_samples
            ],
            "per_user_q0": {
                user: [float(x) for x in q0] for user, q0 in self.per_user_q0.items()
            },
            "diagnostics": dict(self.diagnostics),
            "config": self.config.to_dict(),
            "reply_cap": self.normalizer.cap,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "FitResult":
        try:
            payload = FIT_SCHEMA(payload)
        except MultipleInvalid as ex:
            raise ProplabInputException(f"Invalid fitted model: {ex}") from ex
        map_params = ModelParams.from_dict(payload["map_params"])
        samples = []
        for sample in payload["posterior_samples"]:
            values = {name: sample[name] for name in PARAMETER_NAMES}
            samples.append((map_params.with_values(**values), sample["log_posterior"]))
        return cls(
            map_params=map_params,
            map_log_posterior=payload["map_log_posterior"],
            posterior_samples=samples,
            per_user_q0={
                user: np.asarray(q0, dtype=float)
                for user, q0 in payload["per_user_q0"].items()
            },
            diagnostics=payload["diagnostics"],
            config=FitConfig.from_dict(payload["config"]),
            normalizer=ReplyNormalizer(cap=payload["reply_cap"]),
            initial_log_posterior=payload["initial_log_posterior"],
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, allow_nan=False) + "\n"

    def save(self, path: str):
        write_atomic(path, self.dumps())

    @classmethod
    def load(cls, path: str) -> "FitResult":
        with open(path, "r", encoding="utf8") as handle:
            try:
                payload = json.load(handle)
            except json.JSONDecodeError as ex:
                raise ProplabInputException(f"{path}: not a JSON document: {ex}") from ex
        return cls.from_dict(payload)


FIT_SCHEMA = Schema(
    {
        Required("format"): FIT_FORMAT,
        Required("version"): FIT_FORMAT_VERSION,
        Required("map_params"): dict,
        Required("map_log_posterior"): Any(int, float),
        Required("initial_log_posterior"): Any(int, float),
        Required("posterior_samples"): [dict],
        Required("per_user_q0"): {str: [Any(int, float)]},
        Required("diagnostics"): {str: Any(int, float)},
        Required("config"): dict,
        Required("reply_cap"): Any(int, float),
    },
    extra=ALLOW_EXTRA,
)


def _to_unconstrained(name: str, value: float) -> float:
    if name in UNIT_INTERVAL:
        return float(logit(min(max(value, UNIT_CLIP), 1.0 - UNIT_CLIP)))
    if name in POSITIVE:
        return math.log(value)
    return value


def _from_unconstrained(name: str, value: float) -> float:
    if name in UNIT_INTERVAL:
        return float(expit(value))
    if name in POSITIVE:
        return math.exp(value)
    return value


def _log_jacobian(name: str, value: float) -> float:
    """log |d value / d unconstrained| of the transforms above."""
    if name in UNIT_INTERVAL:
        value = min(max(value, UNIT_CLIP), 1.0 - UNIT_CLIP)
        return math.log(value) + math.log1p(-value)
    if name in POSITIVE:
        return math.log(value) if value > 0 else -math.inf
    return 0.0


@dataclass(eq=False)
class _ChainState:
    params: ModelParams
    terms: _Terms
    q0: np.ndarray
    log_lik: np.ndarray
    log_dir: np.ndarray
    log_prior: float

    @property
    def log_post(self) -> float:
        return float(self.log_lik.sum() + self.log_dir.sum() + self.log_prior)


class _Sampler:
    """
    Metropolis-within-Gibbs over (phi, epsilon), reward weights, alpha0 and q0.

    When ``collapsed`` is set the tracked posterior has q0 integrated out and
    the chain state's q0 is not used.
    """

    def __init__(
        self,
        batch: _Batch,
        cfg: FitConfig,
        rng: np.random.Generator,
        collapsed: bool = False,
    ):
        self.batch = batch
        self.cfg = cfg
        self.rng = rng
        self.collapsed = collapsed
        self.accepted = {}
        self.proposed = {}

    def _likelihood(
        self, params: ModelParams, terms: _Terms, q0: np.ndarray
    ) -> Tuple[np.ndarray, np.ndarray]:
        if self.collapsed:
            log_lik = _collapsed_log_likelihoods(
                self.batch, terms, params.hdp.alpha, self.cfg.prob_floor
            )
            return log_lik, np.zeros_like(log_lik)
        return (
            _user_log_likelihoods(self.batch, terms, q0, self.cfg.prob_floor),
            log_dirichlet(q0, params.hdp.alpha),
        )

    def state_for(self, params: ModelParams, q0: np.ndarray) -> _ChainState:
        terms = _forward_parallel(self.batch, params, self.cfg.n_jobs)
        log_lik, log_dir = self._likelihood(params, terms, q0)
        return _ChainState(
            params=params,
            terms=terms,
            q0=q0,
            log_lik=log_lik,
            log_dir=log_dir,
            log_prior=self.cfg.priors.log_prob(params.values()),
        )

    def with_q0(self, state: _ChainState, q0: np.ndarray) -> _ChainState:
        log_lik, log_dir = self._likelihood(state.params, state.terms, q0)
        return replace(state, q0=q0, log_lik=log_lik, log_dir=log_dir)

    def _count(self, block: str, accepted: float, proposed: float = 1.0):
        self.accepted[block] = self.accepted.get(block, 0.0) + accepted
        self.proposed[block] = self.proposed.get(block, 0.0) + proposed

    def parameter_move(self, state: _ChainState, block: str) -> _ChainState:
        free = [name for name in BLOCKS[block] if name not in self.cfg.fixed]
        if not free:
            return state
        current = state.params.values()
        proposal = {}
        log_jacobian = 0.0
        for name in free:
            step = self.cfg.proposal_scales[name] * self.rng.standard_normal()
            value = _from_unconstrained(name, _to_unconstrained(name, current[name]) + step)
            proposal[name] = value
            log_jacobian += _log_jacobian(name, value) - _log_jacobian(name, current[name])
        log_u = math.log(self.rng.random() or 1e-300)

        log_prior = self.cfg.priors.log_prob({**current, **proposal})
        if not math.isfinite(log_prior) or not math.isfinite(log_jacobian):
            self._count(block, 0.0)
            return state
        try:
            params = state.params.with_values(**proposal)
        except ProplabArgumentException:
            self._count(block, 0.0)
            return state

        # alpha0 does not enter the forward pass
        if block == "alpha0":
            terms = state.terms
        else:
            terms = _forward_parallel(self.batch, params, self.cfg.n_jobs)
        log_lik, log_dir = self._likelihood(params, terms, state.q0)
        candidate = replace(
            state,
            params=params,
            terms=terms,
            log_lik=log_lik,
            log_dir=log_dir,
            log_prior=log_prior,
        )

        if log_u < candidate.log_post - state.log_post + log_jacobian:
            self._count(block, 1.0)
            return candidate
        self._count(block, 0.0)
        return state

    def q0_move(self, state: _ChainState) -> _ChainState:
        """
        Gibbs update of every user's q0.

        Each observed choice is assigned to q0 with its responsibility; q0 is
        then drawn from Dirichlet(alpha + assigned counts).
        """
        batch = self.batch
        alpha = state.params.hdp.alpha
        responsibility = _q0_responsibilities(batch, state.terms, state.q0)
        assigned = self.rng.random(batch.shape) < responsibility
        concentration = alpha[None, :] + _slot_counts(batch, assigned)
        support = concentration > 0
        draws = self.rng.standard_gamma(np.where(support, concentration, 1.0))
        draws = np.where(support, np.maximum(draws, np.finfo(float).tiny), 0.0)
        q0 = draws / draws.sum(axis=1, keepdims=True)
        self._count("q0", float(len(q0)), float(len(q0)))
        return self.with_q0(state, q0)

    def point_estimates(self, params: ModelParams, start: np.ndarray) -> np.ndarray:
        terms = _forward_parallel(self.batch, params, self.cfg.n_jobs)
        return _em_q0(self.batch, terms, params.hdp.alpha, start, self.cfg.q0_iterations)

    def acceptance_rates(self) -> Dict[str, float]:
        return {
            block: self.accepted[block] / self.proposed[block]
            for block in sorted(self.proposed)
            if self.proposed[block]
        }


def _initial_params(cfg: FitConfig, popularity: GlobalPopularity) -> ModelParams:
    values = {**DEFAULT_INITIAL, **dict(cfg.initial)}
    return ModelParams(
        hdp=HdpParams(alpha0=values["alpha0"], popularity=popularity),
        learning=LearningParams(phi=values["phi"], epsilon=values["epsilon"]),
        reward=RewardFunction(
            w_replies=values["w_replies"],
            w_votes=values["w_votes"],
            w_intercept=values["w_intercept"],
            floor=cfg.reward_floor,
        ),
    )


def fit(
    log: EventLog,
    cfg: FitConfig = FitConfig(),
    normalizer: Optional[ReplyNormalizer] = None,
    popularity: Optional[GlobalPopularity] = None,
    initial_q0: Optional[Mapping[str, np.ndarray]] = None,
) -> FitResult:
    """
    Run Metropolis-within-Gibbs and summarise the chain.

    Under MapPointEstimate the chain targets the collapsed posterior and
    per_user_q0 holds point estimates at the MAP parameters. Under
    SampleLatent, or with ``"q0"`` fixed, q0 is part of the chain state.

    :param log: non-empty training log
    :param cfg: sampler configuration
    :param normalizer: reply normalization (default: ``cfg.reply_cap``, else
        from the log)
    :param popularity: global popularity (default: estimate_beta on the log)
    :param initial_q0: starting q0 per user (default: Dirichlet mean refined by
        the point estimate)
    :return: FitResult; map_params is the best state visited, initial state
        included
    """
    if len(log) == 0:
        raise ProplabInputException("Cannot fit an empty log")
    rng = np.random.default_rng(cfg.rng_seed)
    if normalizer is None:
        if cfg.reply_cap is not None:
            normalizer = ReplyNormalizer(cap=cfg.reply_cap)
        else:
            normalizer = ReplyNormalizer.from_log(log, cfg.reply_quantile)
    if popularity is None:
        popularity = estimate_beta(log, cfg.smoothing, cfg.gamma, cfg.unseen_mass)

    users = log.users
    batch = _compile(
        [actions_from_records(log.history(user), normalizer) for user in users],
        users,
        popularity.communities,
        popularity,
    )
    free_q0 = "q0" not in cfg.fixed
    sample_q0 = free_q0 and cfg.q0_treatment is Q0Treatment.SAMPLE_LATENT
    collapsed = free_q0 and cfg.q0_treatment is Q0Treatment.MAP_POINT_ESTIMATE
    sampler = _Sampler(batch, cfg, rng, collapsed=collapsed)
    params = _initial_params(cfg, popularity)
    alpha = params.hdp.alpha

    if initial_q0 is not None:
        start_q0 = np.array([np.asarray(initial_q0[user], dtype=float) for user in users])
    else:
        start_q0 = np.tile(alpha / alpha.sum(), (len(users), 1))
    state = sampler.state_for(params, start_q0)
    if sample_q0 and initial_q0 is None:
        state = sampler.with_q0(state, sampler.point_estimates(params, start_q0))

    attempt = 0
    while not math.isfinite(state.log_post):
        if attempt >= cfg.init_attempts:
            raise ProplabInitializationException(
                "Log-posterior is -inf at every starting point tried; "
                "widen the priors or change the initial values"
            )
        attempt += 1
        draws = {
            name: getattr(cfg.priors, name).sample(rng)
            for name in PARAMETER_NAMES
            if name not in cfg.fixed
        }
        _LOGGER.warning("Initial log-posterior is -inf, retrying from prior draw %s", draws)
        try:
            state = sampler.state_for(state.params.with_values(**draws), state.q0)
        except ProplabArgumentException:
            continue

    initial_log_post = state.log_post
    best = (state.params, state.log_post, state.q0.copy())
    samples = []

    for iteration in range(cfg.n_samples):
        for block in BLOCKS:
            state = sampler.parameter_move(state, block)
        if sample_q0:
            state = sampler.q0_move(state)

        log_post = state.log_post
        if log_post > best[1]:
            best = (state.params, log_post, state.q0.copy())
        if iteration >= cfg.burn_in:
            samples.append((state.params, log_post))
        if (iteration + 1) % 100 == 0:
            _LOGGER.debug(
                "iteration %d: log-posterior %.3f, %s",
                iteration + 1,
                log_post,
                state.params.values(),
            )

    map_params, map_log_post, map_q0 = best
    if collapsed:
        map_q0 = sampler.point_estimates(map_params, start_q0)
    diagnostics = sampler.acceptance_rates()
    _LOGGER.info(
        "Fit finished: MAP log-posterior %.3f, alpha0 %.3f, acceptance %s",
        map_log_post,
        map_params.hdp.alpha0,
        diagnostics,
    )
    return FitResult(
        map_params=map_params,
        map_log_posterior=map_log_post,
        posterior_samples=samples,
        per_user_q0={user: map_q0[row] for row, user in enumerate(users)},
        diagnostics=diagnostics,
        config=cfg,
        normalizer=normalizer,
        initial_log_posterior=initial_log_post,
    )
