"""Random-delay channel: exponential delays, deadlines, availability statistics.

Every transmitted index j suffers an exponential delay.  When frame element i
is reconstructed, element j <= i of the same frame may have used an extra
(i - j) sample periods on top of the base deadline, so its availability bit is
b_ij = [delay_j <= deadline + (i - j) * sample_period].
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ChannelModel:
    """Exponential delay law plus the frame timing that sets the deadlines."""

    delay_rate: float      # lambda, 1/seconds
    deadline: float        # seconds allowed before an index counts as lost
    sample_period: float   # seconds between successive frame elements
    frame_length: int

    def __post_init__(self):
        if self.delay_rate <= 0.0 or self.deadline <= 0.0 or self.sample_period <= 0.0:
            raise ValueError("delay_rate, deadline and sample_period must be positive")
        if self.frame_length < 1:
            raise ValueError("frame_length must be positive")
        p = self.violation_probability
        if not 0.0 < p < 1.0:
            raise ValueError(f"delay violation probability {p} must lie in (0, 1)")

    @property
    def violation_probability(self) -> float:
        """p = exp(-lambda * deadline): chance an index misses its own deadline."""
        return math.exp(-self.delay_rate * self.deadline)

    @property
    def mean_delay(self) -> float:
        return 1.0 / self.delay_rate

    @classmethod
    def from_violation_probability(cls, p: float, deadline: float, sample_period: float,
                                   frame_length: int) -> ChannelModel:
        if not 0.0 < p < 1.0:
            raise ValueError(f"p must lie in (0, 1), got {p}")
        return cls(-math.log(p) / deadline, deadline, sample_period, frame_length)

    def thresholds(self) -> np.ndarray:
        """Deadline for index j at the reconstruction of element i; -inf above diagonal."""
        n = self.frame_length
        i, j = np.indices((n, n))
        thr = self.deadline + (i - j) * self.sample_period
        return np.where(j <= i, thr, -np.inf)


@dataclass(frozen=True)
class AvailabilityMatrix:
    """One realized binary availability pattern (lower triangular, monotone rows)."""

    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits)
        n = bits.shape[0]
        if bits.ndim != 2 or bits.shape != (n, n):
            raise ValueError("bits must be a square matrix")
        if not np.all((bits == 0) | (bits == 1)):
            raise ValueError("bits must be 0/1")
        if np.any(np.triu(bits, k=1)):
            raise ValueError("bits above the diagonal must be 0")
        # an index that has arrived by one deadline is still there at later ones
        for j in range(n):
            col = bits[j:, j]
            if np.any(np.diff(col) < 0):
                raise ValueError(f"column {j} is not monotone non-decreasing")
        object.__setattr__(self, "bits", bits.astype(np.int8))

    @property
    def dim(self) -> int:
        return self.bits.shape[0]


def availability_from_delays(model: ChannelModel, delays) -> AvailabilityMatrix:
    """Deterministic availability pattern for given per-index delays (test hook)."""
    delays = np.asarray(delays, dtype=float)
    if delays.shape != (model.frame_length,):
        raise ValueError(f"need one delay per index, got shape {delays.shape}")
    bits = (delays[None, :] <= model.thresholds()).astype(np.int8)
    return AvailabilityMatrix(bits)


def sample_availability(model: ChannelModel, seed: int) -> AvailabilityMatrix:
    """Draw one delay per index and apply the per-element deadlines."""
    rng = np.random.default_rng(seed)
    return availability_from_delays(model, rng.exponential(model.mean_delay, model.frame_length))


def loss_probabilities(model: ChannelModel) -> np.ndarray:
    """Entry (i, j): probability index j misses element i's reconstruction deadline.

    exp(-lambda (deadline + (i - j) sample_period)) on and below the diagonal;
    above it the probability is 1 (the index has not been transmitted yet).
    """
    thr = model.thresholds()
    safe = np.where(np.isfinite(thr), thr, 0.0)
    return np.where(np.isfinite(thr), np.exp(-model.delay_rate * safe), 1.0)


def availability_marginals(model: ChannelModel) -> np.ndarray:
    """Closed-form E[b_ij] = 1 - loss probability (0 above the diagonal)."""
    return 1.0 - loss_probabilities(model)


@dataclass(frozen=True)
class AvailabilityStats:
    """Weighted availability realizations backing expectations over the channel.

    `realizations` has shape (count, N, N) with 0/1 entries and `weights` sums
    to 1.  Monte Carlo sets carry uniform weights; the exhaustive constructor
    enumerates every pattern with its exact probability under independent
    bits.  `marginals` is always the closed-form matrix.
    """

    model: ChannelModel
    mode: str
    realizations: np.ndarray
    weights: np.ndarray
    marginals: np.ndarray
    _block_cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        real = np.asarray(self.realizations, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        n = self.model.frame_length
        if real.ndim != 3 or real.shape[1:] != (n, n):
            raise ValueError(f"realizations must have shape (count, {n}, {n})")
        if w.shape != (real.shape[0],) or abs(float(w.sum()) - 1.0) > 1e-9:
            raise ValueError("weights must match realizations and sum to 1")
        object.__setattr__(self, "realizations", real)
        object.__setattr__(self, "weights", w)

    @property
    def count(self) -> int:
        return self.realizations.shape[0]

    def empirical_marginals(self) -> np.ndarray:
        return np.einsum("s,sij->ij", self.weights, self.realizations)

    def block_realizations(self, block_dim: int) -> np.ndarray:
        """Realizations expanded so each bit covers an m x m block (cached)."""
        if block_dim == 1:
            return self.realizations
        if block_dim not in self._block_cache:
            self._block_cache[block_dim] = np.repeat(
                np.repeat(self.realizations, block_dim, axis=1), block_dim, axis=2)
        return self._block_cache[block_dim]


def sample_availability_bits(model: ChannelModel, count: int, seed: int,
                             mode: str = "montecarlo") -> np.ndarray:
    """Raw availability draws, shape (count, N, N), one pattern per row.

    montecarlo: one exponential delay per index, so bits within a column are
    coupled (an index that made an early deadline also makes later ones).
    independent: every b_ij is an independent Bernoulli with the closed-form
    marginal, the literal reading of the per-pair loss law.
    """
    if mode not in ("montecarlo", "independent"):
        raise ValueError(f"unknown mode {mode!r}")
    if count < 1:
        raise ValueError("sample count must be at least 1")
    rng = np.random.default_rng(seed)
    n = model.frame_length
    if mode == "montecarlo":
        delays = rng.exponential(model.mean_delay, (count, n))
        return (delays[:, None, :] <= model.thresholds()[None, :, :]).astype(float)
    marg = availability_marginals(model)
    return (rng.random((count, n, n)) < marg[None, :, :]).astype(float)


def availability_stats(model: ChannelModel, sample_count: int, seed: int,
                       mode: str = "montecarlo") -> AvailabilityStats:
    """Sample availability realizations for channel expectations.

    The sampled patterns are stored as a weighted multiset (duplicates merged,
    weights proportional to multiplicity), which leaves every expectation
    identical while keeping the realization stack small.
    """
    bits = sample_availability_bits(model, sample_count, seed, mode)
    n = model.frame_length
    unique, counts = np.unique(bits.reshape(sample_count, n * n), axis=0,
                               return_counts=True)
    return AvailabilityStats(model, mode, unique.reshape(-1, n, n),
                             counts / float(sample_count),
                             availability_marginals(model))


def exhaustive_stats(model: ChannelModel) -> AvailabilityStats:
    """Every lower-triangular pattern with its exact independent-bit probability.

    Realizes channel expectations exactly under the independent reading; the
    pattern count is 2^(N(N+1)/2), so this is only for small frames.
    """
    n = model.frame_length
    cells = [(i, j) for i in range(n) for j in range(i + 1)]
    if len(cells) > 21:
        raise ValueError(f"exhaustive enumeration needs N <= 6, got N = {n}")
    marg = availability_marginals(model)
    patterns = []
    weights = []
    for assignment in itertools.product((0, 1), repeat=len(cells)):
        bits = np.zeros((n, n))
        w = 1.0
        for (i, j), b in zip(cells, assignment):
            bits[i, j] = b
            w *= marg[i, j] if b else 1.0 - marg[i, j]
        patterns.append(bits)
        weights.append(w)
    return AvailabilityStats(model, "exhaustive", np.asarray(patterns),
                             np.asarray(weights), marg)
