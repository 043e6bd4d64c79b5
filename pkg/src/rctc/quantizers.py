"""Scalar quantizer bank: noise model, KKT rate allocation, Lloyd-Max codebooks."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf, ndtri


class InfeasibleRateError(ValueError):
    """Requested rate floor cannot be met at the configured average rate."""


_SQRT_2PI = math.sqrt(2.0 * math.pi)


def _norm_pdf(x):
    return np.exp(-0.5 * np.square(x)) / _SQRT_2PI


def _norm_cdf(x):
    return 0.5 * (1.0 + erf(x / math.sqrt(2.0)))


def lloyd_max_gaussian(n_levels: int, tol: float = 1e-12, max_iter: int = 200_000):
    """Train a Lloyd-Max codebook for the unit-variance Gaussian.

    Fully deterministic: boundaries are level midpoints and levels are the
    closed-form conditional means of their cells, iterated to fixed point.
    Returns (levels, mse) where mse is the exact design distortion.
    """
    if n_levels < 1:
        raise ValueError("n_levels must be at least 1")
    if n_levels == 1:
        return np.zeros(1), 1.0
    levels = ndtri((np.arange(n_levels) + 0.5) / n_levels)
    for _ in range(max_iter):
        edges = 0.5 * (levels[1:] + levels[:-1])
        cdf = np.concatenate(([0.0], _norm_cdf(edges), [1.0]))
        pdf = np.concatenate(([0.0], _norm_pdf(edges), [0.0]))
        mass = np.diff(cdf)
        new_levels = (pdf[:-1] - pdf[1:]) / mass
        shift = float(np.max(np.abs(new_levels - levels)))
        levels = new_levels
        if shift < tol:
            break
    edges = 0.5 * (levels[1:] + levels[:-1])
    cdf = np.concatenate(([0.0], _norm_cdf(edges), [1.0]))
    pdf = np.concatenate(([0.0], _norm_pdf(edges), [0.0]))
    edge_term = np.concatenate(([0.0], edges * _norm_pdf(edges), [0.0]))
    mass = np.diff(cdf)
    first = pdf[:-1] - pdf[1:]                      # integral of x over each cell
    second = mass + edge_term[:-1] - edge_term[1:]  # integral of x^2 over each cell
    mse = float(np.sum(second - 2.0 * levels * first + np.square(levels) * mass))
    return levels, mse


@dataclass(frozen=True)
class ScalarCodebook:
    """Nearest-neighbor scalar quantizer: sorted levels, midpoint boundaries."""

    levels: np.ndarray
    mse: float

    def __post_init__(self):
        levels = np.asarray(self.levels, dtype=float)
        if levels.ndim != 1 or levels.size < 1:
            raise ValueError("levels must be a non-empty vector")
        if np.any(np.diff(levels) <= 0.0):
            raise ValueError("levels must be strictly increasing")
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "boundaries", 0.5 * (levels[1:] + levels[:-1]))

    @property
    def size(self) -> int:
        return self.levels.size

    @property
    def rate(self) -> float:
        return math.log2(self.size) if self.size > 1 else 0.0

    def scaled(self, sigma: float) -> ScalarCodebook:
        if sigma <= 0.0:
            raise ValueError("sigma must be positive")
        return ScalarCodebook(self.levels * sigma, self.mse * sigma * sigma)

    def quantize(self, value: float) -> tuple[int, float]:
        """Nearest codeword; +/-inf saturate at the extreme levels."""
        idx = int(np.searchsorted(self.boundaries, value))
        return idx, float(self.levels[idx])

    def quantize_array(self, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        idx = np.searchsorted(self.boundaries, np.asarray(values, dtype=float))
        return idx, self.levels[idx]

    def to_text(self) -> str:
        """Flat text: one `level boundary` pair per line, last boundary is inf."""
        lines = [f"# scalar codebook v1 levels={self.size} mse={float(self.mse)!r}"]
        bounds = np.concatenate((self.boundaries, [math.inf]))
        for lev, b in zip(self.levels, bounds):
            lines.append(f"{float(lev)!r} {float(b)!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> ScalarCodebook:
        lines = [ln for ln in text.splitlines() if ln.strip()]
        header = lines[0]
        if not header.startswith("# scalar codebook v1"):
            raise ValueError("unrecognized codebook header")
        mse = float(header.rsplit("mse=", 1)[1])
        levels = [float(ln.split()[0]) for ln in lines[1:]]
        return cls(np.asarray(levels), mse)


@dataclass(frozen=True)
class QuantizerBank:
    """N quantizers, one per transform frame element.

    `rates` holds the (possibly fractional) allocated rate of each quantizer.
    `input_variances` holds the design variance of every scalar quantizer
    input, flattened element-major, so its length is N * block_dim.  In
    modeled mode the noise variance of a scalar slot is
    noise_constant * 2^(-2 rate) * input_variance; with codebooks present the
    exact Lloyd-Max design distortion is used instead.
    """

    rates: np.ndarray
    input_variances: np.ndarray
    noise_constant: float = 1.0
    codebooks: tuple[ScalarCodebook, ...] | None = None

    def __post_init__(self):
        rates = np.asarray(self.rates, dtype=float)
        var = np.asarray(self.input_variances, dtype=float)
        if rates.ndim != 1 or rates.size < 1:
            raise ValueError("rates must be a non-empty vector")
        if var.ndim != 1 or var.size % rates.size != 0:
            raise ValueError("input_variances length must be a multiple of the quantizer count")
        if np.any(var <= 0.0):
            raise ValueError("input variances must be positive")
        if self.noise_constant <= 0.0:
            raise ValueError("noise_constant must be positive")
        if self.codebooks is not None and len(self.codebooks) != var.size:
            raise ValueError("one codebook per scalar slot is required")
        object.__setattr__(self, "rates", rates)
        object.__setattr__(self, "input_variances", var)

    @property
    def count(self) -> int:
        return self.rates.size

    @property
    def block_dim(self) -> int:
        return self.input_variances.size // self.rates.size

    @property
    def average_rate(self) -> float:
        return float(np.mean(self.rates))

    @property
    def realized_rates(self) -> np.ndarray:
        """Integer rates actually realized by the codebooks (modeled mode: copy)."""
        if self.codebooks is None:
            return self.rates.copy()
        m = self.block_dim
        return np.asarray([self.codebooks[i * m].rate for i in range(self.count)])

    @property
    def rate_discrepancy(self) -> float:
        """Realized minus requested average rate; nonzero once rates are rounded."""
        return float(np.mean(self.realized_rates)) - self.average_rate

    @property
    def noise_variances(self) -> np.ndarray:
        """Per scalar slot noise variance, length N * block_dim."""
        if self.codebooks is not None:
            return np.asarray([cb.mse for cb in self.codebooks])
        per_slot_rates = np.repeat(self.rates, self.block_dim)
        return self.noise_constant * np.exp2(-2.0 * per_slot_rates) * self.input_variances

    @classmethod
    def modeled(cls, rates, input_variances, noise_constant: float = 1.0) -> QuantizerBank:
        return cls(np.asarray(rates, dtype=float), np.asarray(input_variances, dtype=float),
                   noise_constant)

    @classmethod
    def lloyd_max(cls, rates, input_variances, noise_constant: float = 1.0) -> QuantizerBank:
        """Realize the bank with Lloyd-Max Gaussian codebooks of 2^round(rate) levels."""
        rates = np.asarray(rates, dtype=float)
        var = np.asarray(input_variances, dtype=float)
        bank = cls(rates, var, noise_constant)
        cache: dict[int, ScalarCodebook] = {}
        books = []
        for i in range(bank.count):
            n_levels = 2 ** max(0, int(round(rates[i])))
            if n_levels not in cache:
                levels, mse = lloyd_max_gaussian(n_levels)
                cache[n_levels] = ScalarCodebook(levels, mse)
            for k in range(bank.block_dim):
                sigma = math.sqrt(var[i * bank.block_dim + k])
                books.append(cache[n_levels].scaled(sigma))
        return cls(rates, var, noise_constant, tuple(books))


def measured_noise_constant(n_levels: int) -> float:
    """Lloyd-Max distortion constant c with 2^(-2r) factored out, for unit variance."""
    _, mse = lloyd_max_gaussian(n_levels)
    return mse * n_levels * n_levels


@dataclass(frozen=True)
class RateAllocation:
    """Rates from the closed-form water-filling over effective variances.

    Unclamped allocations satisfy
    rate_i - average = 0.5 * log2(var_i / geometric_mean(var)) for every i.
    """

    rates: np.ndarray
    effective_variances: np.ndarray
    average: float
    clamped: bool = False

    def __post_init__(self):
        rates = np.asarray(self.rates, dtype=float)
        var = np.asarray(self.effective_variances, dtype=float)
        if rates.shape != var.shape or rates.ndim != 1:
            raise ValueError("rates and effective_variances must be equal-length vectors")
        object.__setattr__(self, "rates", rates)
        object.__setattr__(self, "effective_variances", var)
        if abs(float(np.mean(rates)) - self.average) > 1e-12 * max(1.0, abs(self.average)):
            raise ValueError("mean rate does not match the configured average")
        if not self.clamped:
            log_var = np.log2(var)
            residual = rates - self.average - 0.5 * (log_var - np.mean(log_var))
            if float(np.max(np.abs(residual))) > 1e-9:
                raise ValueError("rates do not satisfy the KKT allocation identity")

    @property
    def count(self) -> int:
        return self.rates.size


def allocate_rates(effective_variances, average_rate: float) -> RateAllocation:
    """Closed-form optimal bit allocation under the fine-quantization noise model.

    rate_i = average + 0.5 * log2(var_i / geometric_mean(var)).  Computed in
    the log domain so the mean constraint holds to machine precision and the
    result is invariant under scaling all variances by a common factor.
    """
    var = np.asarray(effective_variances, dtype=float)
    if var.ndim != 1 or var.size < 1:
        raise ValueError("effective_variances must be a non-empty vector")
    if np.any(var <= 0.0):
        raise ValueError("effective variances must be positive")
    log_var = np.log2(var)
    rates = average_rate + 0.5 * (log_var - np.mean(log_var))
    return RateAllocation(rates, var, float(average_rate))


def clamp_rates(allocation: RateAllocation, min_rate: float = 0.0) -> RateAllocation:
    """Raise rates below min_rate to it, absorbing the deficit from the rest.

    The deficit is removed from unclamped rates in proportion to their excess
    over the floor, which preserves the mean, creates no new violations, and
    makes the operation idempotent.
    """
    rates = allocation.rates
    below = rates < min_rate
    if not np.any(below):
        return allocation
    if allocation.average < min_rate:
        raise InfeasibleRateError(
            f"average rate {allocation.average} cannot meet floor {min_rate}"
        )
    deficit = float(np.sum(min_rate - rates[below]))
    excess = np.where(below, 0.0, rates - min_rate)
    total_excess = float(np.sum(excess))
    new_rates = np.where(below, min_rate, rates - deficit * excess / total_excess)
    return RateAllocation(new_rates, allocation.effective_variances,
                          allocation.average, clamped=True)


def modeled_noise_covariance(bank: QuantizerBank) -> np.ndarray:
    """Diagonal quantization noise covariance implied by the bank's model."""
    return np.diag(bank.noise_variances)


def quantize(value: float, quantizer_index: int, bank: QuantizerBank,
             component: int = 0) -> tuple[int, float]:
    """Nearest-codeword index and reconstruction for one quantizer of the bank."""
    if bank.codebooks is None:
        raise ValueError("quantize requires a bank with realized codebooks")
    if not 0 <= quantizer_index < bank.count:
        raise ValueError(f"quantizer index {quantizer_index} out of range")
    if not 0 <= component < bank.block_dim:
        raise ValueError(f"component {component} out of range")
    return bank.codebooks[quantizer_index * bank.block_dim + component].quantize(value)
