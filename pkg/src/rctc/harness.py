"""Experiment harness: scheme sweeps over delay-violation probability.

Reproduces the two experiment shapes end to end: open-loop coding of a
Gauss-Markov source (analytic and simulated AM-MSE per scheme) and the
closed-loop LQG plant (analytic and simulated cost per scheme), emitting one
CSV row per (scheme, p) with enough metadata to re-run the row exactly.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelModel, availability_stats, sample_availability_bits
from .codec import CausalTransform, decode_batch, encode_batch, plt_design
from .design import (DesignProblem, DesignResult, SearchConfig, design_code,
                     noise_covariance_for_rates, pack_parameters)
from .lqg import (LqgWeights, PlantModel, am_wmse, analytic_lqg_cost,
                  controller_solution, pilot_state_variance, simulate_closed_loop)
from .quantizers import QuantizerBank, RateAllocation, allocate_rates, clamp_rates
from .sources import GaussMarkovModel, ar1_covariance, sample_path

SCHEMES = ("no_coding", "plt", "rtc_tc", "rc_tc")
SCHEME_STRUCTURES = {"no_coding": "identity", "plt": "plt",
                     "rtc_tc": "toeplitz", "rc_tc": "full"}
CSV_HEADER = "scheme,p,lambda,analytic,simulated,stderr,seed,mode,c,N,r"
CSV_VERSION = "# rctc sweep csv v1"


class ConfigError(ValueError):
    """Bad or missing experiment configuration value."""


def _parse_matrix(text: str) -> np.ndarray:
    try:
        rows = [[float(v) for v in row.split(",") if v.strip() != ""]
                for row in text.split(";")]
        return np.asarray(rows, dtype=float)
    except ValueError:
        raise ConfigError(f"cannot parse matrix from {text!r}") from None


def _parse_float_list(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip() != "")


def _parse_str_list(text: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in text.split(",") if v.strip() != "")


# key -> (parser, default); None default means "derived later"
_CONFIG_KEYS = {
    "kind": (str, None),
    "n": (int, 6),
    "m": (int, 1),
    "rate": (float, 5.0),
    "delta": (float, 0.05),
    "ts": (float, None),
    "p_grid": (_parse_float_list, (0.05, 0.1, 0.2, 0.3)),
    "p": (float, None),
    "schemes": (_parse_str_list, SCHEMES),
    "scheme": (str, "rtc_tc"),
    "b_mode": (str, "montecarlo"),
    "quantizer_mode": (str, "modeled"),
    "seed": (int, 12345),
    "design_samples": (int, 2000),
    "analysis_samples": (int, 200_000),
    "sim_frames": (int, 20000),
    "horizon": (int, 200_000),
    "noise_constant": (float, 1.0),
    "min_rate": (float, 0.0),
    "out": (str, ""),
    "search_step": (float, 0.1),
    "search_shrink": (float, 0.5),
    "search_tol": (float, 1e-6),
    "search_budget": (int, 100_000),
    "rho": (float, 0.9),
    "source_variance": (float, 1.0),
    "F": (_parse_matrix, np.asarray([[1.49]])),
    "G": (_parse_matrix, np.asarray([[0.05]])),
    "C": (_parse_matrix, np.asarray([[1.0]])),
    "K_w": (_parse_matrix, np.asarray([[0.01]])),
    "K_v": (_parse_matrix, np.asarray([[0.001]])),
    "R": (_parse_matrix, np.asarray([[1.0]])),
    "S": (_parse_matrix, np.asarray([[0.01]])),
    "design_coefficient": (float, 0.8677),
    "pilot_steps": (int, 100_000),
    "divergence_bound": (float, 1e9),
}


@dataclass
class ExperimentConfig:
    """Parsed flat key=value configuration with kind-aware defaults."""

    values: dict = field(default_factory=dict)

    def __post_init__(self):
        v = self.values
        kind = v.get("kind")
        if kind not in ("source", "lqg"):
            raise ConfigError(f"kind must be 'source' or 'lqg', got {kind!r}")
        if v.get("ts") is None:
            v["ts"] = v["delta"] / 4.0
        if v.get("p") is None:
            v["p"] = v["p_grid"][0]
        for key, bound in (("n", 1), ("m", 1), ("design_samples", 1),
                           ("analysis_samples", 1), ("sim_frames", 1),
                           ("horizon", 1), ("pilot_steps", 1)):
            if v[key] < bound:
                raise ConfigError(f"{key} must be at least {bound}")
        for key in ("delta", "ts", "noise_constant"):
            if v[key] <= 0.0:
                raise ConfigError(f"{key} must be positive")
        for p in (*v["p_grid"], v["p"]):
            if not 0.0 < p < 1.0:
                raise ConfigError(f"p_grid values must lie in (0, 1), got {p}")
        for s in (*v["schemes"], v["scheme"]):
            if s not in SCHEMES:
                raise ConfigError(f"unknown scheme {s!r}")
        if v["b_mode"] not in ("montecarlo", "independent"):
            raise ConfigError(f"b_mode must be montecarlo or independent, got {v['b_mode']!r}")
        if v["quantizer_mode"] not in ("modeled", "realized"):
            raise ConfigError(
                f"quantizer_mode must be modeled or realized, got {v['quantizer_mode']!r}")

    def __getattr__(self, name):
        try:
            return self.values[name]
        except KeyError:
            raise AttributeError(name) from None

    @classmethod
    def from_text(cls, text: str) -> ExperimentConfig:
        values = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if key not in _CONFIG_KEYS:
                raise ConfigError(f"unknown config key {key!r}")
            parser, _ = _CONFIG_KEYS[key]
            try:
                values[key] = parser(val)
            except ConfigError:
                raise
            except (TypeError, ValueError):
                raise ConfigError(f"invalid value for {key}: {val!r}") from None
        for key, (_, default) in _CONFIG_KEYS.items():
            values.setdefault(key, default)
        return cls(values)

    @classmethod
    def from_file(cls, path) -> ExperimentConfig:
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_text(fh.read())

    def echo(self) -> str:
        """Canonical one-line rendering, stable across runs, for CSV headers.

        The output path is omitted: it does not affect the computed rows.
        """
        parts = []
        for key in sorted(self.values):
            if key == "out":
                continue
            val = self.values[key]
            if isinstance(val, np.ndarray):
                val = ";".join(",".join(repr(float(x)) for x in row) for row in val)
            elif isinstance(val, tuple):
                val = ",".join(str(x) for x in val)
            parts.append(f"{key}={val}")
        return "; ".join(parts)

    def search_config(self) -> SearchConfig:
        return SearchConfig(self.search_step, self.search_shrink,
                            self.search_tol, self.search_budget)


@dataclass
class ResultRow:
    scheme: str
    p: float
    lam: float
    analytic: float
    simulated: float | str
    stderr: float
    seed: int
    mode: str
    c: float
    N: int
    r: float

    def to_csv(self) -> str:
        sim = self.simulated if isinstance(self.simulated, str) else repr(float(self.simulated))
        return ",".join([self.scheme, repr(float(self.p)), repr(float(self.lam)),
                         repr(float(self.analytic)), sim, repr(float(self.stderr)),
                         str(self.seed), self.mode, repr(float(self.c)),
                         str(self.N), repr(float(self.r))])


def derive_seed(master: int, *tags) -> int:
    """Stable per-task seed from the master seed and a tag path."""
    words = [int(master) & 0xFFFFFFFF]
    for tag in tags:
        if isinstance(tag, str):
            words.append(zlib.crc32(tag.encode()))
        else:
            words.append(int(tag) & 0xFFFFFFFF)
    return int(np.random.SeedSequence(words).generate_state(1, np.uint64)[0])


def _build_scheme(scheme: str, K_x: np.ndarray, stats, M, config: ExperimentConfig,
                  warm_full_params=None) -> DesignResult:
    """Transform plus rate allocation for one scheme on one channel point.

    no_coding keeps uniform rates; plt allocates against its lossless
    prediction variances; rtc_tc / rc_tc run the channel-optimized design.
    """
    n, m = config.n, config.m
    r = config.rate
    if scheme == "no_coding":
        transform = CausalTransform.identity(n, m)
        sigma_d = np.diag(np.asarray(K_x, dtype=float)).copy()
        rates = RateAllocation(np.full(n, r), np.ones(n), r)
        K_q = noise_covariance_for_rates(rates.rates, sigma_d, m, config.noise_constant)
        predicted = am_wmse(transform, stats, K_x, K_q, M)
        return DesignResult(transform, rates, predicted, None, 0, [predicted],
                            False, input_variances=sigma_d)
    if scheme == "plt":
        transform, d = plt_design(K_x, m)
        per_quant = np.asarray([np.prod(d[i * m:(i + 1) * m]) ** (1.0 / m)
                                for i in range(n)])
        rates = clamp_rates(allocate_rates(per_quant, r), config.min_rate)
        K_q = noise_covariance_for_rates(rates.rates, d, m, config.noise_constant)
        predicted = am_wmse(transform, stats, K_x, K_q, M)
        return DesignResult(transform, rates, predicted, None, 0, [predicted],
                            False, input_variances=d)
    structure = SCHEME_STRUCTURES[scheme]
    problem = DesignProblem(K_x, stats, M, r, n, m, structure,
                            config.noise_constant, config.min_rate)
    inits = [warm_full_params] if (scheme == "rc_tc" and warm_full_params is not None) else None
    return design_code(problem, config.search_config(), inits)


def _bank_for(result: DesignResult, config: ExperimentConfig) -> QuantizerBank:
    if config.quantizer_mode == "realized":
        return QuantizerBank.lloyd_max(result.rates.rates, result.input_variances,
                                       config.noise_constant)
    return QuantizerBank.modeled(result.rates.rates, result.input_variances,
                                 config.noise_constant)


def _stderr_from_values(values: np.ndarray) -> float:
    count = values.size
    if count < 2:
        return float("nan")
    if count < 8:
        return float(np.std(values, ddof=1) / np.sqrt(count))
    batches = max(2, min(256, count // 64))
    size = count // batches
    means = values[: batches * size].reshape(batches, size).mean(axis=1)
    return float(np.std(means, ddof=1) / np.sqrt(batches))


def _failed_row(scheme, p, cm, sim_seed, mode, config, exc) -> ResultRow:
    """Design failures become flagged rows so the rest of the sweep continues."""
    return ResultRow(scheme, p, cm.delay_rate, float("nan"), "design_failed",
                     float("nan"), sim_seed, f"{mode}:{type(exc).__name__}",
                     config.noise_constant, config.n, config.rate)


def _simulate_source_point(transform, bank, channel_model, config, sim_seed,
                           gm_model) -> tuple[float, float]:
    """Empirical AM-MSE of coding the source through the sampled channel."""
    frames = config.sim_frames
    n = config.n
    path = sample_path(gm_model, frames * n, derive_seed(sim_seed, "path"))
    x = path.reshape(frames, n)
    bits = sample_availability_bits(channel_model, frames,
                                    derive_seed(sim_seed, "channel"), config.b_mode)
    rng = np.random.default_rng(derive_seed(sim_seed, "noise"))
    codevalues, _ = encode_batch(x, transform, bank, rng)
    xhat = decode_batch(codevalues, transform, bits)
    err = x - xhat
    per_frame = np.einsum("fi,fi->f", err, err) / n
    return float(per_frame.mean()), _stderr_from_values(per_frame)


def run_source_experiment(config: ExperimentConfig) -> list[ResultRow]:
    if config.kind != "source":
        raise ConfigError("kind must be 'source' for run_source_experiment")
    if config.m != 1:
        raise ConfigError("m must be 1: the source experiments are scalar")
    n = config.n
    gm = GaussMarkovModel.ar1(config.rho,
                              config.source_variance * (1.0 - config.rho ** 2))
    K_x = ar1_covariance(config.rho, config.source_variance, n)
    rows = []
    mode = f"{config.b_mode}/{config.quantizer_mode}"
    for pi, p in enumerate(config.p_grid):
        cm = ChannelModel.from_violation_probability(p, config.delta, config.ts, n)
        stats = availability_stats(cm, config.design_samples,
                                   derive_seed(config.seed, "stats", pi), config.b_mode)
        eval_stats = availability_stats(cm, config.analysis_samples,
                                        derive_seed(config.seed, "eval", pi),
                                        config.b_mode)
        warm = None
        for scheme in config.schemes:
            sim_seed = derive_seed(config.seed, "sim", pi, scheme)
            try:
                result = _build_scheme(scheme, K_x, stats, None, config, warm)
            except (ValueError, ArithmeticError) as exc:
                rows.append(_failed_row(scheme, p, cm, sim_seed, mode, config, exc))
                continue
            if scheme == "rtc_tc":
                warm = pack_parameters(result.transform, "full")
            bank = _bank_for(result, config)
            K_q = np.diag(bank.noise_variances)
            analytic = am_wmse(result.transform, eval_stats, K_x, K_q, None)
            simulated, stderr = _simulate_source_point(result.transform, bank, cm,
                                                       config, sim_seed, gm)
            rows.append(ResultRow(scheme, p, cm.delay_rate, analytic, simulated,
                                  stderr, sim_seed, mode, config.noise_constant,
                                  n, config.rate))
    rows.sort(key=lambda row: (row.p, row.scheme))
    return rows


def _lqg_context(config: ExperimentConfig):
    plant = PlantModel(config.F, config.G, config.C, config.K_w, config.K_v)
    if plant.state_dim != 1:
        raise ConfigError("F must be scalar: only scalar-state plants are wired")
    weights = LqgWeights(config.R, config.S)
    solution = controller_solution(plant, weights)
    pilot_var = pilot_state_variance(plant, solution, config.pilot_steps,
                                     derive_seed(config.seed, "pilot"))
    K_x = ar1_covariance(config.design_coefficient, pilot_var, config.n)
    return plant, weights, solution, K_x


def run_lqg_experiment(config: ExperimentConfig) -> list[ResultRow]:
    if config.kind != "lqg":
        raise ConfigError("kind must be 'lqg' for run_lqg_experiment")
    if config.m != 1:
        raise ConfigError("m must equal the (scalar) state dimension")
    n = config.n
    plant, weights, solution, K_x = _lqg_context(config)
    M = solution.weight_block(n)
    rows = []
    mode = f"{config.b_mode}/{config.quantizer_mode}"
    for pi, p in enumerate(config.p_grid):
        cm = ChannelModel.from_violation_probability(p, config.delta, config.ts, n)
        stats = availability_stats(cm, config.design_samples,
                                   derive_seed(config.seed, "stats", pi), config.b_mode)
        eval_stats = availability_stats(cm, config.analysis_samples,
                                        derive_seed(config.seed, "eval", pi),
                                        config.b_mode)
        warm = None
        for scheme in config.schemes:
            sim_seed = derive_seed(config.seed, "sim", pi, scheme)
            try:
                result = _build_scheme(scheme, K_x, stats, M, config, warm)
            except (ValueError, ArithmeticError) as exc:
                rows.append(_failed_row(scheme, p, cm, sim_seed, mode, config, exc))
                continue
            if scheme == "rtc_tc":
                warm = pack_parameters(result.transform, "full")
            bank = _bank_for(result, config)
            K_q = np.diag(bank.noise_variances)
            analytic = analytic_lqg_cost(solution, plant, eval_stats, result.transform,
                                         K_x, K_q)
            result.predicted_lqg_cost = analytic
            sim = simulate_closed_loop(plant, weights, solution, result.transform,
                                       bank, cm, config.horizon, sim_seed,
                                       divergence_bound=config.divergence_bound)
            simulated = "diverged" if sim.diverged else sim.empirical_cost
            rows.append(ResultRow(scheme, p, cm.delay_rate, analytic, simulated,
                                  sim.standard_error, sim_seed, mode,
                                  config.noise_constant, n, config.rate))
    rows.sort(key=lambda row: (row.p, row.scheme))
    return rows


def run_experiment(config: ExperimentConfig) -> list[ResultRow]:
    if config.kind == "source":
        return run_source_experiment(config)
    return run_lqg_experiment(config)


def rows_to_csv(rows: list[ResultRow], config: ExperimentConfig) -> str:
    lines = [CSV_VERSION, f"# config: {config.echo()}", CSV_HEADER]
    lines.extend(row.to_csv() for row in rows)
    return "\n".join(lines) + "\n"


def write_csv(path, rows: list[ResultRow], config: ExperimentConfig) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(rows_to_csv(rows, config))
