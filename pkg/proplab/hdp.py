"""Finite truncation of the Hierarchical Dirichlet Process prior."""

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import gammaln, xlogy

from .eventlog import EventLog
from .exceptions import ProplabArgumentException, ProplabInputException

_LOGGER = logging.getLogger(__name__)

SIMPLEX_TOLERANCE = 1e-9
DEFAULT_GAMMA = 1.0
DEFAULT_SMOOTHING = 0.5

Seed = Union[int, np.random.Generator, None]


def make_rng(seed: Seed) -> np.random.Generator:
    """All randomness flows through explicitly seeded generators."""
    return np.random.default_rng(seed)


@dataclass(frozen=True, eq=False)
class GlobalPopularity:
    """
    Global community popularity: beta over K observed communities plus the
    mass reserved for every community not observed yet.
    """

    communities: Tuple[str, ...]
    beta: np.ndarray
    beta_unseen: float
    gamma: float = DEFAULT_GAMMA

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "communities", tuple(self.communities))
        if beta.ndim != 1 or len(beta) != len(self.communities):
            raise ProplabArgumentException(
                "beta must have one entry per community "
                f"({len(beta)} != {len(self.communities)})"
            )
        if self.gamma <= 0:
            raise ProplabArgumentException(f"gamma must be > 0, got {self.gamma}")
        if np.any(beta < 0) or self.beta_unseen < 0:
            raise ProplabArgumentException("popularity entries must be >= 0")
        total = beta.sum() + self.beta_unseen
        if abs(total - 1.0) > SIMPLEX_TOLERANCE:
            raise ProplabArgumentException(
                f"popularity must sum to 1, got {total!r}"
            )

    @property
    def base_measure(self) -> np.ndarray:
        """beta with the unseen mass appended, length K + 1."""
        return np.append(self.beta, self.beta_unseen)

    def share_of(self, community: str) -> Optional[float]:
        """Fraction of the unseen remainder a newly indexed community takes."""
        if community not in self.communities:
            return None
        mass = self.beta[self.communities.index(community)]
        if mass + self.beta_unseen <= 0:
            return 0.0
        return float(mass / (mass + self.beta_unseen))

    def to_dict(self) -> dict:
        return {
            "communities": list(self.communities),
            "beta": [float(value) for value in self.beta],
            "beta_unseen": float(self.beta_unseen),
            "gamma": float(self.gamma),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "GlobalPopularity":
        return cls(
            communities=tuple(payload["communities"]),
            beta=np.asarray(payload["beta"], dtype=float),
            beta_unseen=float(payload["beta_unseen"]),
            gamma=float(payload["gamma"]),
        )


@dataclass(frozen=True, eq=False)
class HdpParams:
    alpha0: float
    popularity: GlobalPopularity = field(repr=False)

    def __post_init__(self):
        if not self.alpha0 > 0:
            raise ProplabArgumentException(f"alpha0 must be > 0, got {self.alpha0}")

    @property
    def alpha(self) -> np.ndarray:
        """Dirichlet parameter alpha0 * [beta || beta_unseen]."""
        return self.alpha0 * self.popularity.base_measure

    def replace_alpha0(self, alpha0: float) -> "HdpParams":
        return HdpParams(alpha0=alpha0, popularity=self.popularity)


def default_community_ids(count: int) -> Tuple[str, ...]:
    width = len(str(max(count - 1, 0)))
    return tuple(f"c{index:0{width}d}" for index in range(count))


def stick_breaking(
    gamma: float,
    K: int,
    rng_seed: Seed = None,
    communities: Optional[Sequence[str]] = None,
) -> GlobalPopularity:
    """
    Draw K sticks of a GEM(gamma) distribution.

    :param gamma: top-level concentration, > 0
    :param K: number of explicit communities, >= 1
    :param rng_seed: seed or generator
    :param communities: ids for the K sticks (default c0..c{K-1})
    :return: GlobalPopularity whose unseen mass is the unbroken remainder
    """
    if not gamma > 0:
        raise ProplabArgumentException(f"gamma must be > 0, got {gamma}")
    if K < 1:
        raise ProplabArgumentException(f"K must be >= 1, got {K}")
    communities = tuple(communities) if communities else default_community_ids(K)
    if len(communities) != K:
        raise ProplabArgumentException("need exactly K community ids")

    rng = make_rng(rng_seed)
    sticks = rng.beta(1.0, gamma, size=K)
    remaining = np.concatenate(([1.0], np.cumprod(1.0 - sticks)))
    beta = sticks * remaining[:-1]
    # taken from the sum, not remaining[-1], so beta + beta_unseen == 1 exactly
    beta_unseen = 1.0 - float(beta.sum())
    return GlobalPopularity(
        communities=communities,
        beta=beta,
        beta_unseen=max(beta_unseen, 0.0),
        gamma=gamma,
    )


def sample_initial_propensities(hdp: HdpParams, rng_seed: Seed = None) -> np.ndarray:
    """
    Draw a user's initial propensities q0 ~ Dirichlet(alpha0 * beta).

    Slots with zero base mass get zero propensity.
    """
    rng = make_rng(rng_seed)
    alpha = hdp.alpha
    support = alpha > 0
    q0 = np.zeros_like(alpha)
    draw = rng.dirichlet(alpha[support])
    if not np.all(np.isfinite(draw)) or draw.sum() <= 0:
        # every gamma variate underflowed; fall back to a one-hot draw
        _LOGGER.debug("Dirichlet draw underflowed; sampling a vertex")
        draw = np.zeros(int(support.sum()))
        draw[rng.choice(len(draw), p=alpha[support] / alpha[support].sum())] = 1.0
    q0[support] = draw / draw.sum()
    return q0


def dirichlet_mean(hdp: HdpParams) -> np.ndarray:
    alpha = hdp.alpha
    return alpha / alpha.sum()


def log_dirichlet(q0: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """
    Dirichlet log-density, row-wise for 2-d q0.

    Slots with alpha == 0 are outside the support: zero mass there is ignored,
    positive mass gives -inf.
    """
    q0 = np.asarray(q0, dtype=float)
    support = alpha > 0
    a = alpha[support]
    log_norm = gammaln(a.sum()) - gammaln(a).sum()
    with np.errstate(divide="ignore"):
        body = xlogy(a - 1.0, q0[..., support]).sum(axis=-1)
    outside = (q0[..., ~support] > 0).any(axis=-1)
    return np.where(outside, -np.inf, log_norm + body)


def estimate_beta(
    log: EventLog,
    smoothing: float = DEFAULT_SMOOTHING,
    gamma: float = DEFAULT_GAMMA,
    unseen_mass: Optional[float] = None,
) -> GlobalPopularity:
    """
    Estimate global popularity from action counts.

    :param log: non-empty event log
    :param smoothing: pseudo-count added to every observed community
    :param gamma: concentration used for the unseen mass
    :param unseen_mass: override for the reserved mass; default is the
        new-table rate gamma / (gamma + number of actions)
    """
    if len(log) == 0:
        raise ProplabInputException("Cannot estimate popularity from an empty log")
    if smoothing < 0:
        raise ProplabArgumentException(f"smoothing must be >= 0, got {smoothing}")
    if not gamma > 0:
        raise ProplabArgumentException(f"gamma must be > 0, got {gamma}")

    counts = log.community_counts()
    communities = tuple(log.communities)
    weights = np.array([counts[c] + smoothing for c in communities], dtype=float)
    if unseen_mass is None:
        unseen_mass = gamma / (gamma + len(log))
    if not 0 <= unseen_mass < 1:
        raise ProplabArgumentException(f"unseen mass must be in [0, 1), got {unseen_mass}")

    beta = weights / weights.sum() * (1.0 - unseen_mass)
    return GlobalPopularity(
        communities=communities,
        beta=beta,
        beta_unseen=max(1.0 - float(beta.sum()), 0.0),
        gamma=gamma,
    )
