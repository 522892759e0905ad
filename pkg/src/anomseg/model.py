"""Segment length laws and the hidden segment process.

A series is partitioned into contiguous segments that are either normal or
abnormal. Segment lengths are drawn from type-specific distributions on the
positive integers; a normal segment is always followed by an abnormal one,
while an abnormal segment is followed by a normal one with probability
``pi_normal``. The hidden state at time ``t`` is the pair ``(c, b)`` where
``c`` is the end of the previous segment (0 for the first segment) and ``b``
is the current segment type.

Because observation starts at an arbitrary point of a stationary process,
the segment in progress at time 1 follows the forward-recurrence length law
``pmf0(l) = Pr(L >= l) / E[L]`` rather than the plain length law.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np
from scipy import stats

from .errors import ConfigError

# Survival below exp(-745) underflows double precision; treat as zero.
_LOG_TINY = -745.0
_MAX_TABLE = 5_000_000


class SegmentType(enum.IntEnum):
    NORMAL = 0
    ABNORMAL = 1


class HiddenState(NamedTuple):
    c: int
    b: SegmentType


class LengthDistribution:
    """A segment length law on {1, 2, ...} (or a bounded integer range).

    Subclasses wrap a frozen scipy distribution and expose the pieces the
    filter needs: pmf/cdf, a numerically safe log survival function, the
    mean, and truncated sampling.
    """

    _dist: stats.rv_discrete

    @property
    def mean(self) -> float:
        raise NotImplementedError

    def log_pmf(self, length):
        self._check_support(length)
        return self._dist.logpmf(length)

    def pmf(self, length):
        self._check_support(length)
        return self._dist.pmf(length)

    def cdf(self, length):
        # length = 0 is allowed: cdf(0) = 0.
        return self._dist.cdf(length)

    def log_sf(self, length):
        """log Pr(L > length) for length >= 0; log_sf(0) = 0."""
        return self._dist.logsf(length)

    def truncation_point(self, tail: float = 1e-12) -> int:
        """Smallest length whose cdf is at least 1 - tail."""
        return int(self._dist.ppf(1.0 - tail))

    def sample(self, rng: np.random.Generator, size=None):
        """Draw lengths, truncated at quantile 1 - 1e-12."""
        cap = self._dist.cdf(self.truncation_point())
        u = rng.uniform(size=size) * cap
        out = self._dist.ppf(np.maximum(u, 1e-300))
        return int(out) if size is None else out.astype(np.int64)

    def to_dict(self) -> dict:
        raise NotImplementedError

    @staticmethod
    def _check_support(length) -> None:
        if np.any(np.asarray(length) < 1):
            raise ValueError("segment lengths must be >= 1")


@dataclass(frozen=True)
class Geometric(LengthDistribution):
    """Support {1, 2, ...}; pmf(l) = q (1-q)^(l-1); mean 1/q."""

    q: float

    def __post_init__(self):
        if not 0.0 < self.q <= 1.0:
            raise ConfigError(f"geometric q must be in (0, 1], got {self.q}")
        object.__setattr__(self, "_dist", stats.geom(self.q))

    @property
    def mean(self) -> float:
        return 1.0 / self.q

    def to_dict(self) -> dict:
        return {"type": "geometric", "q": self.q}


@dataclass(frozen=True)
class NegativeBinomial(LengthDistribution):
    """1 + number of failures before the r-th success at success rate p.

    Support starts at 1 and the mean is ``1 + r (1 - p) / p``. The size
    parameter r may be any positive real.
    """

    r: float
    p: float

    def __post_init__(self):
        if self.r <= 0:
            raise ConfigError(f"nbinom r must be positive, got {self.r}")
        if not 0.0 < self.p < 1.0:
            raise ConfigError(f"nbinom p must be in (0, 1), got {self.p}")
        object.__setattr__(self, "_dist", stats.nbinom(self.r, self.p, loc=1))

    @property
    def mean(self) -> float:
        return 1.0 + self.r * (1.0 - self.p) / self.p

    def to_dict(self) -> dict:
        return {"type": "nbinom", "r": self.r, "p": self.p}


@dataclass(frozen=True)
class DiscreteUniform(LengthDistribution):
    """Uniform on the integers {a, ..., b}."""

    a: int
    b: int

    def __post_init__(self):
        if not (1 <= self.a <= self.b):
            raise ConfigError(f"uniform bounds must satisfy 1 <= a <= b, got ({self.a}, {self.b})")
        object.__setattr__(self, "_dist", stats.randint(self.a, self.b + 1))

    @property
    def mean(self) -> float:
        return 0.5 * (self.a + self.b)

    def to_dict(self) -> dict:
        return {"type": "uniform", "a": self.a, "b": self.b}


@dataclass(frozen=True)
class ShiftedPoisson(LengthDistribution):
    """1 + Poisson(rate), so the support starts at 1; mean rate + 1."""

    rate: float

    def __post_init__(self):
        if self.rate <= 0:
            raise ConfigError(f"poisson rate must be positive, got {self.rate}")
        object.__setattr__(self, "_dist", stats.poisson(self.rate, loc=1))

    @property
    def mean(self) -> float:
        return self.rate + 1.0

    def to_dict(self) -> dict:
        return {"type": "poisson", "rate": self.rate}


_FAMILIES = {
    "geometric": (Geometric, ("q",)),
    "nbinom": (NegativeBinomial, ("r", "p")),
    "uniform": (DiscreteUniform, ("a", "b")),
    "poisson": (ShiftedPoisson, ("rate",)),
}


def length_distribution_from_dict(spec: dict) -> LengthDistribution:
    """Build a length law from a config mapping like {"type": "nbinom", "r": 10, "p": 0.1}."""
    if not isinstance(spec, dict) or "type" not in spec:
        raise ConfigError(f"length distribution spec must be a mapping with a 'type' key: {spec!r}")
    kind = spec["type"]
    if kind not in _FAMILIES:
        raise ConfigError(f"unknown length distribution type {kind!r}")
    cls, fields = _FAMILIES[kind]
    extra = set(spec) - {"type", *fields}
    if extra:
        raise ConfigError(f"unknown keys {sorted(extra)} in {kind!r} distribution spec")
    try:
        kwargs = {f: spec[f] for f in fields}
    except KeyError as err:
        raise ConfigError(f"{kind!r} distribution spec is missing key {err.args[0]!r}") from None
    return cls(**kwargs)


class ForwardRecurrence(LengthDistribution):
    """Length law of the segment in progress at a stationary observation start.

    pmf(l) = Pr(L >= l) / E[L]. There is no closed-form survival function,
    so tail sums of the base law's survival are tabulated once, out to the
    point where survival underflows double precision.
    """

    def __init__(self, base: LengthDistribution):
        mean = base.mean
        if not np.isfinite(mean) or mean <= 0:
            raise ConfigError("forward-recurrence law requires a finite positive mean")
        self.base = base
        self._mean_base = mean
        self._tail = self._build_tail()

    def _build_tail(self) -> np.ndarray:
        # Find where log survival drops below the underflow floor.
        hi = max(8, int(4 * self._mean_base))
        while self.base.log_sf(hi) > _LOG_TINY:
            hi *= 2
            if hi > _MAX_TABLE:
                raise ConfigError("forward-recurrence table would exceed the size cap")
        sf = np.exp(self.base.log_sf(np.arange(hi + 1)))
        # tail[l] = sum_{u >= l} sf(u) / E = Pr(first segment length > l).
        tail = np.cumsum(sf[::-1])[::-1] / self._mean_base
        return tail

    @property
    def mean(self) -> float:
        # E[L0] = sum_l Pr(L0 >= l) = sum_{l>=0} tail[l] (tail[0] = 1).
        return float(np.sum(self._tail))

    def log_pmf(self, length):
        self._check_support(length)
        return self.base.log_sf(np.asarray(length) - 1) - np.log(self._mean_base)

    def pmf(self, length):
        return np.exp(self.log_pmf(length))

    def cdf(self, length):
        return 1.0 - np.exp(self.log_sf(length))

    def log_sf(self, length):
        scalar = np.ndim(length) == 0
        idx = np.atleast_1d(np.asarray(length, dtype=np.int64))
        out = np.full(idx.shape, -np.inf)
        inside = idx < len(self._tail)
        with np.errstate(divide="ignore"):
            out[inside] = np.log(self._tail[idx[inside]])
        return float(out[0]) if scalar else out

    def truncation_point(self, tail: float = 1e-12) -> int:
        return int(min(np.searchsorted(-self._tail, -tail), len(self._tail) - 1))

    def sample(self, rng: np.random.Generator, size=None):
        cap = self.truncation_point()
        cdf = 1.0 - self._tail[: cap + 1]
        u = rng.uniform(size=size) * cdf[-1]
        out = np.searchsorted(cdf, u, side="right")
        return int(out) if size is None else out.astype(np.int64)

    def to_dict(self) -> dict:
        return {"type": "forward_recurrence", "base": self.base.to_dict()}


def first_segment_law(base: LengthDistribution) -> LengthDistribution:
    """Forward-recurrence law of ``base``; a geometric law is its own."""
    if isinstance(base, Geometric):
        return base
    return ForwardRecurrence(base)


def log_survival_table(dist: LengthDistribution, max_len: int) -> np.ndarray:
    """log Pr(L > u) for u = 0..max_len, as a lookup table."""
    return np.asarray(dist.log_sf(np.arange(max_len + 1)), dtype=np.float64)


@dataclass(frozen=True)
class ProcessParams:
    """Hidden segment process: the two length laws and pi_normal.

    ``pi_normal`` is the probability that an abnormal segment is followed
    by a normal one; a normal segment is always followed by an abnormal one.
    """

    los_normal: LengthDistribution
    los_abnormal: LengthDistribution
    pi_normal: float

    def __post_init__(self):
        if not 0.0 < self.pi_normal <= 1.0:
            raise ConfigError(f"pi_normal must be in (0, 1], got {self.pi_normal}")

    @cached_property
    def first_normal(self) -> LengthDistribution:
        return first_segment_law(self.los_normal)

    @cached_property
    def first_abnormal(self) -> LengthDistribution:
        return first_segment_law(self.los_abnormal)

    def length_law(self, b: SegmentType, first: bool = False) -> LengthDistribution:
        if first:
            return self.first_normal if b == SegmentType.NORMAL else self.first_abnormal
        return self.los_normal if b == SegmentType.NORMAL else self.los_abnormal

    def to_dict(self) -> dict:
        return {
            "los_normal": self.los_normal.to_dict(),
            "los_abnormal": self.los_abnormal.to_dict(),
            "pi_normal": self.pi_normal,
        }

    @classmethod
    def from_dict(cls, spec: dict) -> "ProcessParams":
        extra = set(spec) - {"los_normal", "los_abnormal", "pi_normal"}
        if extra:
            raise ConfigError(f"unknown keys {sorted(extra)} in process spec")
        try:
            return cls(
                los_normal=length_distribution_from_dict(spec["los_normal"]),
                los_abnormal=length_distribution_from_dict(spec["los_abnormal"]),
                pi_normal=float(spec["pi_normal"]),
            )
        except KeyError as err:
            raise ConfigError(f"process spec is missing key {err.args[0]!r}") from None


def initial_prob(b: SegmentType, params: ProcessParams) -> float:
    """Stationary probability that time 1 falls in a segment of type ``b``.

    Each normal segment is followed by one abnormal segment, while an
    abnormal segment starts a new cycle with probability pi_normal, so the
    stationary fraction of time spent normal is
    pi_normal * E_N / (pi_normal * E_N + E_A).
    """
    e_n = params.los_normal.mean
    e_a = params.los_abnormal.mean
    p_normal = params.pi_normal * e_n / (params.pi_normal * e_n + e_a)
    return p_normal if b == SegmentType.NORMAL else 1.0 - p_normal


def _log_continuation(dist: LengthDistribution, elapsed: int) -> float:
    """log Pr(L > elapsed | L >= elapsed); -inf when the end is forced."""
    log_sf_prev = float(dist.log_sf(elapsed - 1))
    if log_sf_prev == -np.inf:
        # Survival already exhausted: the segment must end here.
        return -np.inf
    return float(dist.log_sf(elapsed)) - log_sf_prev


def transition_prob(
    from_state: HiddenState,
    to_state: HiddenState,
    t: int,
    params: ProcessParams,
) -> float:
    """One-step transition probability of the hidden state from time t to t+1.

    The current segment either continues (``to == from``) with probability
    sf(e) / sf(e-1) at elapsed length e = t - from.c, or ends with the
    complementary hazard and a new segment starts at t+1 (``to.c == t``).
    A normal segment is always followed by an abnormal one; an abnormal
    segment is followed by normal with probability pi_normal. The
    first-segment law is used while from.c == 0.
    """
    i, b = from_state
    if not 0 <= i < t:
        raise ValueError(f"from-state {from_state} is invalid at time {t}")
    if to_state.c not in (i, t):
        return 0.0
    dist = params.length_law(SegmentType(b), first=(i == 0))
    log_cont = _log_continuation(dist, t - i)
    if to_state.c == i:
        return float(np.exp(log_cont)) if to_state.b == b else 0.0
    hazard = -np.expm1(log_cont)
    if b == SegmentType.NORMAL:
        return hazard if to_state.b == SegmentType.ABNORMAL else 0.0
    factor = params.pi_normal if to_state.b == SegmentType.NORMAL else 1.0 - params.pi_normal
    return factor * hazard
