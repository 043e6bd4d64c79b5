"""Channel-optimized causal transform design.

Two steps: a derivative-free pattern search over the free entries of the
encoder/decoder pair minimizing the channel-averaged weighted MSE under fine
quantization with uniform rates, then the closed-form rate allocation over
the effective variances seen through the optimized pair.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .channel import AvailabilityStats
from .codec import CausalTransform, plt_design, quantizer_input_variances
from .factorizations import reverse_cholesky
from .lqg import am_wmse
from .quantizers import RateAllocation, allocate_rates, clamp_rates

STRUCTURES = ("full", "toeplitz", "plt", "identity")


@dataclass(frozen=True)
class SearchConfig:
    """Pattern search schedule: step sizes, shrink factor, stopping rules."""

    initial_step: float = 0.1
    shrink_factor: float = 0.5
    step_tolerance: float = 1e-6
    max_evaluations: int = 100_000

    def __post_init__(self):
        if self.initial_step <= 0.0 or self.step_tolerance <= 0.0:
            raise ValueError("steps must be positive")
        if not 0.0 < self.shrink_factor < 1.0:
            raise ValueError("shrink_factor must lie in (0, 1)")
        if self.max_evaluations < 1:
            raise ValueError("max_evaluations must be positive")


@dataclass
class HookeJeevesResult:
    x: np.ndarray
    value: float
    history: list[float]
    evaluations: int
    converged: bool


def hooke_jeeves(objective, x0, config: SearchConfig | None = None) -> HookeJeevesResult:
    """Minimize a deterministic objective by Hooke-Jeeves pattern search.

    Exploratory sweeps probe each coordinate at +/- the current step;
    successful sweeps trigger pattern (acceleration) moves, failures halve
    the step until it drops below the tolerance or the evaluation budget is
    spent.  Only strict improvements are accepted, so the history of accepted
    values is non-increasing and the result never exceeds objective(x0).
    """
    cfg = config or SearchConfig()
    counter = [0]

    def f(x):
        counter[0] += 1
        v = float(objective(x))
        return v if math.isfinite(v) else math.inf

    base = np.asarray(x0, dtype=float).copy()
    f_base = f(base)
    if not math.isfinite(f_base):
        raise ValueError("objective is not finite at the starting point")
    history = [f_base]
    step = cfg.initial_step

    def explore(point, value):
        pt = point.copy()
        best = value
        for k in range(pt.size):
            if counter[0] + 2 > cfg.max_evaluations:
                break
            original = pt[k]
            pt[k] = original + step
            v = f(pt)
            if v < best:
                best = v
                continue
            pt[k] = original - step
            v = f(pt)
            if v < best:
                best = v
            else:
                pt[k] = original
        return pt, best

    while step >= cfg.step_tolerance and counter[0] < cfg.max_evaluations:
        candidate, f_candidate = explore(base, f_base)
        if f_candidate < f_base:
            while counter[0] < cfg.max_evaluations:
                pattern = candidate + (candidate - base)
                base, f_base = candidate, f_candidate
                history.append(f_base)
                f_pattern = f(pattern)
                candidate2, f_candidate2 = explore(pattern, f_pattern)
                if f_candidate2 < f_base:
                    candidate, f_candidate = candidate2, f_candidate2
                else:
                    break
        else:
            step *= cfg.shrink_factor
    return HookeJeevesResult(base, f_base, history, counter[0],
                             converged=step < cfg.step_tolerance)


@dataclass(frozen=True)
class DesignProblem:
    """Inputs of one transform design run.

    weight is the mN x mN error weighting (None means identity, i.e. plain
    AM-MSE); stats must be a frozen realization set so the search objective
    is deterministic.
    """

    K_x: np.ndarray
    stats: AvailabilityStats
    weight: np.ndarray | None
    average_rate: float
    frame_length: int
    block_dim: int
    structure: str
    noise_constant: float = 1.0
    min_rate: float = 0.0

    def __post_init__(self):
        if self.structure not in STRUCTURES:
            raise ValueError(f"unknown structure {self.structure!r}")
        K_x = np.asarray(self.K_x, dtype=float)
        dim = self.frame_length * self.block_dim
        if K_x.shape != (dim, dim):
            raise ValueError(f"K_x must be {dim}x{dim}")
        if self.stats.model.frame_length != self.frame_length:
            raise ValueError("stats frame length does not match the problem")
        if self.weight is not None and np.asarray(self.weight).shape != (dim, dim):
            raise ValueError(f"weight must be {dim}x{dim}")
        object.__setattr__(self, "K_x", K_x)

    @property
    def parameter_count(self) -> int:
        n, m = self.frame_length, self.block_dim
        if self.structure == "full":
            return m * (n * n - n)
        if self.structure == "toeplitz":
            return 2 * m * (n - 1)
        return 0


@dataclass
class DesignResult:
    transform: CausalTransform
    rates: RateAllocation
    predicted_am_wmse: float
    predicted_lqg_cost: float | None
    evaluations: int
    objective_history: list[float]
    budget_exhausted: bool
    input_variances: np.ndarray = field(repr=False, default=None)


def pack_parameters(transform: CausalTransform, structure: str) -> np.ndarray:
    """Free parameters of (A, Ahat) under the structure, encoder first.

    For the toeplitz structure a non-toeplitz transform is projected by
    averaging each lag band, which leaves toeplitz transforms unchanged.
    """
    n = transform.frame_length
    out = []
    for coeffs in (transform.encoder_coeffs, transform.decoder_coeffs):
        if structure == "full":
            for j in range(1, n):
                for i in range(j):
                    out.extend(coeffs[j, i])
        elif structure == "toeplitz":
            for lag in range(1, n):
                band = np.mean([coeffs[i + lag, i] for i in range(n - lag)], axis=0)
                out.extend(band)
        else:
            raise ValueError(f"structure {structure!r} has no free parameters")
    return np.asarray(out)


def unpack_parameters(params: np.ndarray, structure: str, frame_length: int,
                      block_dim: int) -> CausalTransform:
    params = np.asarray(params, dtype=float)
    n, m = frame_length, block_dim
    if structure == "full":
        half = m * (n * n - n) // 2
        mats = []
        for offset in (0, half):
            coeffs = np.zeros((n, n, m))
            pos = offset
            for j in range(1, n):
                for i in range(j):
                    coeffs[j, i] = params[pos:pos + m]
                    pos += m
            mats.append(coeffs)
        return CausalTransform.full(mats[0], mats[1])
    if structure == "toeplitz":
        half = m * (n - 1)
        enc = params[:half].reshape(n - 1, m)
        dec = params[half:2 * half].reshape(n - 1, m)
        return CausalTransform.toeplitz(enc, dec)
    raise ValueError(f"structure {structure!r} has no free parameters")


def effective_variances(transform: CausalTransform, stats: AvailabilityStats,
                        K_x: np.ndarray, M: np.ndarray | None = None) -> np.ndarray:
    """Per-quantizer variances feeding the rate allocation.

    The weighted noise energy tr(E_B[W] K_q) with W = (H inv(A))' M (H inv(A))
    converts to an unweighted problem through E_B[W] = Z'Z with Z lower
    triangular; the variance charged to quantizer i is then the determinant
    (to the 1/m) of Z_ii Cov(d_i) Z_ii', the freshly coded part of the
    equivalent-domain input.  For block_dim 1 this is Z_ii^2 Var(d_i), and on
    a lossless channel with M = I it reduces to the plain prediction error
    variances.
    """
    n, m = transform.frame_length, transform.block_dim
    dim = transform.dim
    K_x = np.asarray(K_x, dtype=float)
    _, Ahat = transform.assemble()
    Ainv = transform.encoder_inverse()
    B = stats.block_realizations(m)
    T = (Ahat[None, :, :] * B) @ Ainv
    if M is None:
        W_each = np.transpose(T, (0, 2, 1)) @ T
    else:
        W_each = np.transpose(T, (0, 2, 1)) @ M @ T
    W = np.einsum("s,sij->ij", stats.weights, W_each)
    W = 0.5 * (W + W.T)
    # rows of B can be all zero, leaving W merely semi-definite
    floor = 1e-12 * float(np.trace(W)) / dim
    if float(np.linalg.eigvalsh(W)[0]) < floor:
        W = W + floor * np.eye(dim)
    Z = reverse_cholesky(W)
    K_d = Ainv @ K_x @ Ainv.T
    out = np.empty(n)
    for i in range(n):
        sl = slice(i * m, (i + 1) * m)
        C = Z[sl, sl] @ K_d[sl, sl] @ Z[sl, sl].T
        det = float(np.linalg.det(C)) if m > 1 else float(C[0, 0])
        if det <= 0.0:
            raise ValueError(f"effective variance for quantizer {i} is not positive")
        out[i] = det ** (1.0 / m)
    return out


def noise_covariance_for_rates(rates: np.ndarray, sigma_d: np.ndarray, block_dim: int,
                               noise_constant: float) -> np.ndarray:
    """Diagonal modeled noise covariance for per-quantizer rates, mN x mN."""
    per_slot = np.repeat(np.asarray(rates, dtype=float), block_dim)
    return np.diag(noise_constant * np.exp2(-2.0 * per_slot) * sigma_d)


def _scalar_objective(problem: DesignProblem):
    """Search objective specialized for block_dim 1: one matrix build per call.

    Identical in value to evaluating am_wmse on the unpacked transform (unit
    tested), but skips the per-call dataclass construction and redundant
    inverse solves inside the pattern search's inner loop.
    """
    from .lqg import _error_terms_core

    n = problem.frame_length
    r = problem.average_rate
    K_x = problem.K_x
    M = problem.weight
    stats = problem.stats
    blocks = stats.block_realizations(1)
    count = blocks.shape[0]
    flat_blocks = blocks.reshape(count * n, n)
    weights = stats.weights
    uniform_factor = problem.noise_constant * 4.0 ** (-r)
    tril = np.tril_indices(n, -1)
    if problem.structure == "toeplitz":
        lag_rows = [(np.arange(lag, n), np.arange(0, n - lag)) for lag in range(1, n)]
    # for scalar blocks the weight matrix is a multiple of the identity
    m_scale = 1.0 if M is None else float(M[0, 0])
    if M is not None and not np.allclose(M, m_scale * np.eye(n)):
        raise ValueError("scalar-block weight matrices must be multiples of the identity")
    diag_idx = (np.arange(count * n), np.tile(np.arange(n), count))

    def place(values: np.ndarray) -> np.ndarray:
        out = np.eye(n)
        if problem.structure == "full":
            out[tril] = values
        else:
            for lag, (rows, cols) in enumerate(lag_rows, start=1):
                out[rows, cols] = values[lag - 1]
        return out

    half = problem.parameter_count // 2

    def objective(params: np.ndarray) -> float:
        A = place(params[:half])
        Ahat = place(params[half:])
        Ainv = np.linalg.inv(A)
        sigma_d = np.einsum("ij,jk,ik->i", Ainv, K_x, Ainv)
        kq_diag = uniform_factor * sigma_d
        H = (flat_blocks * np.tile(Ahat, (count, 1))) @ Ainv
        G = -H
        G[diag_idx] += 1.0
        signal_each = np.einsum("ij,ij->i", G, G @ K_x).reshape(count, n).sum(axis=1)
        noise_each = np.einsum("ij,ij->i", H, H * kq_diag[None, :]).reshape(count, n).sum(axis=1)
        return m_scale * float(weights @ (signal_each + noise_each)) / n

    return objective


def design_code(problem: DesignProblem, config: SearchConfig | None = None,
                initial_points: list[np.ndarray] | None = None) -> DesignResult:
    """Design a transform and its rate allocation for the given channel.

    Search structures ("full", "toeplitz") start the pattern search at the
    prediction-based transform (or the best of the supplied warm starts) and
    minimize the uniform-rate AM-WMSE; "plt" and "identity" skip the search
    and only allocate rates.  A spent search budget is reported on the
    result, never raised.
    """
    cfg = config or SearchConfig()
    n, m = problem.frame_length, problem.block_dim
    r = problem.average_rate
    c = problem.noise_constant
    M = problem.weight
    plt_transform, _ = plt_design(problem.K_x, m)

    def objective_for(transform: CausalTransform) -> float:
        sigma_d = quantizer_input_variances(transform, problem.K_x)
        K_q = noise_covariance_for_rates(np.full(n, r), sigma_d, m, c)
        return am_wmse(transform, problem.stats, problem.K_x, K_q, M)

    if problem.structure in ("plt", "identity"):
        transform = plt_transform if problem.structure == "plt" else CausalTransform.identity(n, m)
        evaluations = 0
        history = [objective_for(transform)]
        exhausted = False
    else:
        if m == 1:
            objective = _scalar_objective(problem)
        else:
            def objective(params):
                return objective_for(unpack_parameters(params, problem.structure, n, m))

        starts = [pack_parameters(plt_transform, problem.structure)]
        if initial_points:
            starts.extend(np.asarray(p, dtype=float) for p in initial_points)
        values = [objective(p) for p in starts]
        best = int(np.argmin(values))
        result = hooke_jeeves(objective, starts[best], cfg)
        transform = unpack_parameters(result.x, problem.structure, n, m)
        evaluations = result.evaluations + len(starts)
        history = result.history
        exhausted = not result.converged

    sigma_d = quantizer_input_variances(transform, problem.K_x)
    sigma_hat = effective_variances(transform, problem.stats, problem.K_x, M)
    allocation = clamp_rates(allocate_rates(sigma_hat, r), problem.min_rate)
    K_q = noise_covariance_for_rates(allocation.rates, sigma_d, m, c)
    predicted = am_wmse(transform, problem.stats, problem.K_x, K_q, M)
    return DesignResult(transform, allocation, predicted, None, evaluations,
                        history, exhausted, input_variances=sigma_d)


def save_design(result: DesignResult, path, scheme: str = "") -> None:
    """Write a design result as flat text: metadata, rates, then the transform."""
    from .codec import transform_to_text

    def vec(v) -> str:
        return " ".join(repr(float(x)) for x in np.asarray(v))

    lines = [
        "# design result v1",
        f"scheme {scheme}",
        f"predicted_am_wmse {result.predicted_am_wmse!r}",
        f"predicted_lqg_cost {result.predicted_lqg_cost!r}",
        f"average_rate {result.rates.average!r}",
        f"clamped {int(result.rates.clamped)}",
        f"rates {vec(result.rates.rates)}",
        f"effective_variances {vec(result.rates.effective_variances)}",
        f"input_variances {vec(result.input_variances)}",
        f"evaluations {result.evaluations}",
        f"budget_exhausted {int(result.budget_exhausted)}",
    ]
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
        fh.write(transform_to_text(result.transform))


def load_design(path) -> tuple[DesignResult, str]:
    """Reload a saved design result; returns (result, scheme)."""
    from .codec import transform_from_text

    with open(path, "r", encoding="ascii") as fh:
        text = fh.read()
    head, _, tail = text.partition("# causal transform v1")
    meta = {}
    for line in head.splitlines():
        if line.startswith("#") or not line.strip():
            continue
        key, _, value = line.partition(" ")
        meta[key] = value.strip()
    transform = transform_from_text("# causal transform v1" + tail)
    rates = RateAllocation(
        np.asarray([float(v) for v in meta["rates"].split()]),
        np.asarray([float(v) for v in meta["effective_variances"].split()]),
        float(meta["average_rate"]),
        clamped=bool(int(meta["clamped"])),
    )
    predicted_lqg = None if meta["predicted_lqg_cost"] == "None" else float(meta["predicted_lqg_cost"])
    result = DesignResult(
        transform, rates, float(meta["predicted_am_wmse"]), predicted_lqg,
        int(meta["evaluations"]), [], bool(int(meta["budget_exhausted"])),
        input_variances=np.asarray([float(v) for v in meta["input_variances"].split()]),
    )
    return result, meta.get("scheme", "")
