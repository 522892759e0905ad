"""Segment marginal likelihoods.

Normal segments are iid Gaussian noise with mean zero and known variance in
every dimension. In an abnormal segment each dimension is independently
affected with probability ``p_abnormal[k]``; affected dimensions share one
segment-level mean shift ``mu`` drawn from a piecewise-uniform prior. The
abnormal marginal likelihood integrates ``mu`` out with a fixed midpoint
quadrature rule, and everything is computed in log space: the per-dimension
likelihood ratio exp{(mu * sum(y) - mu^2 L / 2) / sigma^2} overflows doubles
for long or strong segments.

Block sums are O(1) via per-dimension prefix sums, so extending a segment by
one time point costs O(d * M) for an abnormal segment and O(d) for a normal
one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigError, InputError
from .model import SegmentType

_LOG_2PI = float(np.log(2.0 * np.pi))
_BLOCK = 256


def _blocked_cumsum(a: np.ndarray) -> np.ndarray:
    """Column-wise cumulative sums with Kahan-compensated block offsets.

    Plain running sums accumulate O(n) rounding; summing 256-row blocks and
    carrying the offset with compensation keeps the error near O(block).
    """
    n = a.shape[0]
    out = np.empty_like(a)
    offset = np.zeros(a.shape[1:], dtype=a.dtype)
    comp = np.zeros_like(offset)
    for lo in range(0, n, _BLOCK):
        block = np.cumsum(a[lo : lo + _BLOCK], axis=0)
        out[lo : lo + _BLOCK] = block + offset
        term = block[-1] - comp
        new_offset = offset + term
        comp = (new_offset - offset) - term
        offset = new_offset
    return out


class DataMatrix:
    """Observations (time by dimension) with cached prefix statistics.

    ``prefix[i, k]`` is the sum of the first ``i`` observations of dimension
    k (``prefix[0] = 0``), and ``sq_prefix[i]`` the corresponding sum of
    squares pooled over dimensions. Times are 1-based throughout the API.
    """

    __slots__ = ("values", "prefix", "sq_prefix", "row_sq")

    def __init__(self, values: np.ndarray):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise InputError(f"data must be a non-empty 2-d array, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            i, k = np.argwhere(~np.isfinite(values))[0]
            raise InputError(f"non-finite value at row {i + 1}, column {k + 1}")
        self.values = values
        n, d = values.shape
        self.prefix = np.zeros((n + 1, d))
        self.prefix[1:] = _blocked_cumsum(values)
        self.row_sq = np.einsum("ik,ik->i", values, values)
        self.sq_prefix = np.zeros(n + 1)
        self.sq_prefix[1:] = _blocked_cumsum(self.row_sq[:, None])[:, 0]

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def segment_sums(self, t: int, s: int) -> np.ndarray:
        """Per-dimension sums over times t..s (1-based, inclusive)."""
        self._check_range(t, s)
        return self.prefix[s] - self.prefix[t - 1]

    def _check_range(self, t: int, s: int) -> None:
        if not (1 <= t <= self.n and 1 <= s <= self.n):
            raise InputError(f"segment ({t}, {s}) out of range for n={self.n}")


@dataclass(frozen=True)
class MuPrior:
    """Piecewise-uniform prior for the abnormal mean shift.

    The density is constant over a union of disjoint closed intervals. The
    default for log-ratio intensity data excludes values near zero, where an
    abnormal mean would be indistinguishable from baseline.
    """

    intervals: tuple[tuple[float, float], ...]

    def __post_init__(self):
        ivs = tuple((float(lo), float(hi)) for lo, hi in self.intervals)
        if not ivs:
            raise ConfigError("mu prior needs at least one interval")
        for lo, hi in ivs:
            if not lo < hi:
                raise ConfigError(f"mu prior interval ({lo}, {hi}) must have lo < hi")
        ordered = sorted(ivs)
        for (_, hi1), (lo2, _) in zip(ordered, ordered[1:]):
            if hi1 > lo2:
                raise ConfigError("mu prior intervals must be disjoint")
        object.__setattr__(self, "intervals", tuple(ordered))

    @classmethod
    def default_split(cls) -> "MuPrior":
        return cls(((-0.7, -0.3), (0.3, 0.7)))

    @property
    def total_length(self) -> float:
        return sum(hi - lo for lo, hi in self.intervals)

    def log_density(self, mu: float) -> float:
        if any(lo <= mu <= hi for lo, hi in self.intervals):
            return -np.log(self.total_length)
        return -np.inf

    def sample(self, rng: np.random.Generator, size=None):
        lengths = np.array([hi - lo for lo, hi in self.intervals])
        los = np.array([lo for lo, _ in self.intervals])
        idx = rng.choice(len(lengths), size=size, p=lengths / lengths.sum())
        return los[idx] + rng.uniform(size=size) * lengths[idx]

    def midpoint_grid(self, n_nodes: int) -> "QuadratureGrid":
        """Composite midpoint rule with nodes split proportionally to length.

        Weights absorb the prior density, so they sum to one and the grid
        approximates integrals of the form int f(mu) pi(mu) dmu directly.
        """
        if n_nodes < 2:
            raise ConfigError(f"need at least 2 quadrature nodes, got {n_nodes}")
        lengths = np.array([hi - lo for lo, hi in self.intervals])
        shares = lengths / lengths.sum()
        counts = np.maximum(1, np.floor(n_nodes * shares).astype(int))
        # distribute the remainder by largest fractional share
        while counts.sum() < n_nodes:
            counts[np.argmax(n_nodes * shares - counts)] += 1
        density = 1.0 / self.total_length
        nodes, weights = [], []
        for (lo, hi), m in zip(self.intervals, counts):
            h = (hi - lo) / m
            nodes.append(lo + h * (np.arange(m) + 0.5))
            weights.append(np.full(m, h * density))
        return QuadratureGrid(np.concatenate(nodes), np.concatenate(weights))

    def to_config(self) -> list[list[float]]:
        return [[lo, hi] for lo, hi in self.intervals]


@dataclass(frozen=True)
class QuadratureGrid:
    """Nodes and normalized weights for integrating over the mu prior."""

    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=np.float64)
        weights = np.asarray(self.weights, dtype=np.float64)
        if nodes.shape != weights.shape or nodes.ndim != 1 or nodes.size == 0:
            raise ConfigError("quadrature nodes and weights must be matching 1-d arrays")
        if abs(weights.sum() - 1.0) > 1e-8:
            raise ConfigError(f"quadrature weights sum to {weights.sum()}, expected 1")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @cached_property
    def log_weights(self) -> np.ndarray:
        return np.log(self.weights)

    def __len__(self) -> int:
        return len(self.nodes)


@dataclass(frozen=True)
class LikelihoodParams:
    """Observation model: noise variance, per-dimension abnormality
    probabilities (scalar broadcasts across dimensions), the mu prior, and
    the quadrature resolution."""

    sigma2: float
    p_abnormal: float | tuple[float, ...]
    mu_prior: MuPrior = field(default_factory=MuPrior.default_split)
    quad_nodes: int = 128

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ConfigError(f"sigma2 must be positive, got {self.sigma2}")
        p = np.atleast_1d(np.asarray(self.p_abnormal, dtype=np.float64))
        if np.any(p <= 0.0) or np.any(p >= 1.0):
            raise ConfigError("abnormality probabilities must lie in (0, 1)")
        if p.ndim != 1:
            raise ConfigError("p_abnormal must be a scalar or a 1-d sequence")
        stored = float(p[0]) if np.isscalar(self.p_abnormal) or p.size == 1 else tuple(map(float, p))
        object.__setattr__(self, "p_abnormal", stored)
        if self.quad_nodes < 2:
            raise ConfigError(f"quad_nodes must be >= 2, got {self.quad_nodes}")

    @cached_property
    def grid(self) -> QuadratureGrid:
        return self.mu_prior.midpoint_grid(self.quad_nodes)

    def p_vector(self, d: int) -> np.ndarray:
        p = np.atleast_1d(np.asarray(self.p_abnormal, dtype=np.float64))
        if p.size == 1:
            return np.full(d, p[0])
        if p.size != d:
            raise ConfigError(f"p_abnormal has {p.size} entries but the data has {d} dimensions")
        return p


def log_p_normal(data: DataMatrix, t: int, s: int, params: LikelihoodParams) -> float:
    """log marginal likelihood of the block t..s under the normal model.

    Empty blocks (s < t) have likelihood one by convention.
    """
    if s < t:
        data._check_range(t if 1 <= t <= data.n else 1, 1)
        return 0.0
    data._check_range(t, s)
    count = (s - t + 1) * data.d
    ss = data.sq_prefix[s] - data.sq_prefix[t - 1]
    return -0.5 * count * (_LOG_2PI + np.log(params.sigma2)) - ss / (2.0 * params.sigma2)


def log_bayes_factor(seg_sum: float, seg_len: int, mu: float, sigma2: float) -> float:
    """log likelihood ratio, shifted mean vs baseline, for one dimension.

    ``seg_sum`` is the sum of the observations over the segment and
    ``seg_len`` its length; the Gaussian ratio collapses to
    (mu * seg_sum - mu^2 * seg_len / 2) / sigma2.
    """
    return (mu * seg_sum - 0.5 * mu * mu * seg_len) / sigma2


def _mix_log_terms(
    seg_sums: np.ndarray,
    seg_len: np.ndarray,
    sigma2: float,
    log_p: np.ndarray,
    log_1mp: np.ndarray,
    grid: QuadratureGrid,
) -> np.ndarray:
    """log of the mu-integrated abnormality factor for a batch of segments.

    ``seg_sums``: (J, d) per-dimension segment sums; ``seg_len``: (J,).
    Returns (J,): log sum_m w_m prod_k [(1-p_k) + p_k X_k(mu_m)], evaluated
    as nested log-sum-exp.
    """
    nodes = grid.nodes[None, :, None]  # (1, M, 1)
    log_x = (nodes * seg_sums[:, None, :] - 0.5 * nodes**2 * seg_len[:, None, None]) / sigma2
    per_dim = np.logaddexp(log_1mp[None, None, :], log_p[None, None, :] + log_x)
    return logsumexp(per_dim.sum(axis=2) + grid.log_weights[None, :], axis=1)


def abnormal_shift_factor(
    data: DataMatrix,
    starts: np.ndarray,
    end: int,
    params: LikelihoodParams,
    grid: QuadratureGrid,
) -> np.ndarray:
    """log P_A(start, end) - log P_N(start, end) for several starts at once."""
    starts = np.asarray(starts, dtype=np.int64)
    seg_sums = data.prefix[end] - data.prefix[starts - 1]
    seg_len = (end - starts + 1).astype(np.float64)
    p = params.p_vector(data.d)
    return _mix_log_terms(seg_sums, seg_len, params.sigma2, np.log(p), np.log1p(-p), grid)


def log_p_abnormal(
    data: DataMatrix, t: int, s: int, params: LikelihoodParams, grid: QuadratureGrid | None = None
) -> float:
    """log marginal likelihood of the block t..s under the abnormal model.

    The normal-model likelihood factors out, leaving the mu-integrated
    product over dimensions of (1-p_k) + p_k X_k(mu).
    """
    if s < t:
        return log_p_normal(data, t, s, params)
    if grid is None:
        grid = params.grid
    base = log_p_normal(data, t, s, params)
    mix = abnormal_shift_factor(data, np.array([t]), s, params, grid)[0]
    return float(base + mix)


def log_predictive_ratio(
    cached_log_ml: float,
    data: DataMatrix,
    c: int,
    t_next: int,
    b,
    params: LikelihoodParams,
    grid: QuadratureGrid | None = None,
) -> tuple[float, float]:
    """Extend the cached segment marginal likelihood by one time point.

    ``cached_log_ml`` must equal log P_b(c+1, t_next - 1) for the same data
    and parameters (this is the caller's contract and cannot be verified
    here). Returns (log ratio, log P_b(c+1, t_next)). The normal case is a
    single Gaussian evaluation per dimension; the abnormal case re-runs the
    quadrature sum at the new endpoint.
    """
    from .model import SegmentType

    data._check_range(t_next, t_next)
    if b == SegmentType.NORMAL:
        step = -0.5 * data.d * (_LOG_2PI + np.log(params.sigma2))
        step -= data.row_sq[t_next - 1] / (2.0 * params.sigma2)
        return float(step), float(cached_log_ml + step)
    new_ml = log_p_abnormal(data, c + 1, t_next, params, grid)
    return float(new_ml - cached_log_ml), float(new_ml)


def estimate_noise_variance(values: np.ndarray) -> float:
    """Robust noise variance from first differences.

    Differencing removes slowly-varying segment means; the variance of a
    difference of two independent observations is twice the noise variance,
    and the median absolute deviation gives an outlier-resistant scale.
    """
    values = np.atleast_2d(np.asarray(values, dtype=np.float64))
    if values.shape[0] < 3:
        raise InputError("need at least 3 time points to estimate the noise variance")
    diffs = np.diff(values, axis=0).ravel()
    mad = np.median(np.abs(diffs - np.median(diffs)))
    sigma_diff = mad / 0.6744897501960817
    if sigma_diff == 0.0:
        raise InputError("data has zero spread; cannot estimate the noise variance")
    return float(sigma_diff**2 / 2.0)
