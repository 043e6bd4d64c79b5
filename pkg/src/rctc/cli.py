"""Command line front end: design, simulate, sweep, riccati."""
from __future__ import annotations

import argparse
import sys

import numpy as np

from .channel import ChannelModel, availability_stats
from .design import save_design
from .harness import (ConfigError, ExperimentConfig, _build_scheme, _bank_for,
                      _lqg_context, derive_seed, run_experiment, write_csv)
from .lqg import simulate_closed_loop


def _load_config(args) -> ExperimentConfig:
    config = ExperimentConfig.from_file(args.config)
    if getattr(args, "seed", None) is not None:
        config.values["seed"] = args.seed
    if getattr(args, "out", None):
        config.values["out"] = args.out
    if getattr(args, "horizon", None) is not None:
        config.values["horizon"] = args.horizon
    return config


def _require_out(config: ExperimentConfig) -> str:
    if not config.out:
        raise ConfigError("no output path: set 'out' in the config or pass --out")
    return config.out


def _format_matrix(M: np.ndarray) -> str:
    return "\n".join(" ".join(repr(float(v) + 0.0) for v in row) for row in np.atleast_2d(M))


def _design_context(config: ExperimentConfig):
    """Design source covariance and error weighting for the configured kind."""
    from .sources import ar1_covariance

    if config.kind == "source":
        K_x = ar1_covariance(config.rho, config.source_variance, config.n)
        return K_x, None
    _, _, solution, K_x = _lqg_context(config)
    return K_x, solution.weight_block(config.n)


def cmd_riccati(args) -> int:
    config = _load_config(args)
    from .lqg import LqgWeights, PlantModel, controller_solution

    plant = PlantModel(config.F, config.G, config.C, config.K_w, config.K_v)
    solution = controller_solution(plant, LqgWeights(config.R, config.S))
    print("P")
    print(_format_matrix(solution.P))
    print("L")
    print(_format_matrix(solution.L))
    print("R_eq")
    print(_format_matrix(solution.R_eq))
    return 0


def cmd_design(args) -> int:
    config = _load_config(args)
    out = _require_out(config)
    K_x, M = _design_context(config)
    cm = ChannelModel.from_violation_probability(config.p, config.delta, config.ts,
                                                 config.n)
    stats = availability_stats(cm, config.design_samples,
                               derive_seed(config.seed, "stats", 0), config.b_mode)
    result = _build_scheme(config.scheme, K_x, stats, M, config)
    save_design(result, out, scheme=config.scheme)
    print(f"wrote {out}: scheme={config.scheme} p={config.p} "
          f"predicted_am_wmse={result.predicted_am_wmse!r}")
    return 0


def cmd_simulate(args) -> int:
    config = _load_config(args)
    out = _require_out(config)
    if config.kind != "lqg":
        raise ConfigError("simulate needs kind = lqg")
    plant, weights, solution, K_x = _lqg_context(config)
    M = solution.weight_block(config.n)
    cm = ChannelModel.from_violation_probability(config.p, config.delta, config.ts,
                                                 config.n)
    stats = availability_stats(cm, config.design_samples,
                               derive_seed(config.seed, "stats", 0), config.b_mode)
    result = _build_scheme(config.scheme, K_x, stats, M, config)
    bank = _bank_for(result, config)
    sim = simulate_closed_loop(plant, weights, solution, result.transform, bank, cm,
                               config.horizon, derive_seed(config.seed, "sim", 0,
                                                           config.scheme),
                               collect_trace=True,
                               divergence_bound=config.divergence_bound)

    def fmt(value) -> str:
        arr = np.atleast_1d(np.asarray(value, dtype=float))
        return ";".join(repr(float(v)) for v in arr)

    with open(out, "w", encoding="ascii", newline="\n") as fh:
        fh.write("# rctc trace csv v1\n")
        fh.write("step,state,quantizer_input,codevalue,availability,"
                 "reconstruction,control,cost\n")
        for rec in sim.trace:
            fh.write(",".join([str(rec.step), fmt(rec.state), fmt(rec.quantizer_input),
                               fmt(rec.codevalue), rec.availability,
                               fmt(rec.reconstruction), fmt(rec.control),
                               repr(rec.cost)]) + "\n")
    status = "diverged" if sim.diverged else "ok"
    print(f"wrote {out}: steps={sim.steps} cost={sim.empirical_cost!r} status={status}")
    return 0


def cmd_sweep(args) -> int:
    config = _load_config(args)
    out = _require_out(config)
    rows = run_experiment(config)
    write_csv(out, rows, config)
    print(f"wrote {out}: {len(rows)} rows")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rctc",
        description="Robust causal transform coding for networked LQG control")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, func, help_text in (
        ("design", cmd_design, "design one scheme and write the result file"),
        ("simulate", cmd_simulate, "one closed-loop run with a trace CSV"),
        ("sweep", cmd_sweep, "full experiment sweep to CSV"),
        ("riccati", cmd_riccati, "print P, L and R_eq for a plant config"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="flat key=value config file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="override the config output path")
        if name == "simulate":
            p.add_argument("--horizon", type=int, default=None,
                           help="override the config horizon")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: cannot open {exc.filename}", file=sys.stderr)
        return 1
    except Exception as exc:  # diagnostic line + nonzero exit on any failure
        print(f"error: {exc}", file=sys.stderr)
        return 1


cli = main

if __name__ == "__main__":
    raise SystemExit(main())
