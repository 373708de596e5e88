"""Command-line entry point: ``rbmguide <subcommand> --config run.yaml``."""
from __future__ import annotations

import argparse
import logging
import sys

from ..errors import ConfigError, DegenerateInputError, OptimizationError
from . import experiments as ex
from .config import apply_overrides, load_config

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

log = logging.getLogger("rbmguide")


def _p_list(text):
    try:
        vals = [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"--p expects comma-separated integers, got {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("--p needs at least one batch size")
    return vals


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="YAML experiment config")
    common.add_argument("--out", help="output directory (overrides output.dir)")
    common.add_argument("--seed", type=int, help="seed for batches, noise and MPC windows")
    common.add_argument("--replicas", type=int, help="replica count for studies")
    common.add_argument("--p", type=_p_list, help="batch sizes, e.g. 2,4,6")
    common.add_argument("--mode", choices=("full", "rbm"), help="full system or random batches")
    common.add_argument("--quiet", action="store_true", help="only report errors")

    parser = argparse.ArgumentParser(prog="rbmguide", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="integrate one trajectory")
    sub.add_parser("rbm-error-study", parents=[common],
                   help="random-batch vs full error bands over replicas")
    bench = sub.add_parser("benchmark", parents=[common], help="forward-sweep timing table")
    bench.add_argument("--repetitions", type=int, help="timed runs per mode (>= 10)")
    sub.add_parser("optimize", parents=[common], help="open-loop optimal control")
    sub.add_parser("mpc", parents=[common], help="receding-horizon closed loop")
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = apply_overrides(load_config(args.config), seed=args.seed, replicas=args.replicas,
                              p_list=args.p, mode=args.mode, out=args.out)
        out = cfg.output_dir
        if args.command == "simulate":
            rec = ex.write_simulation(cfg, ex.run_simulation(cfg), out)
            log.info("simulated %d saved steps, cost %.6g", rec["saved_steps"],
                     rec["final_cost"]["total"])
        elif args.command == "rbm-error-study":
            reps = cfg.study.replicas
            report = ex.run_error_study(cfg)
            rec = ex.write_error_study(cfg, report, out, reps)
            for P, val in rec["final_median_x"].items():
                log.info("P=%s: median position error at T = %.4g", P, val)
        elif args.command == "benchmark":
            reps = args.repetitions or cfg.study.repetitions
            rows = ex.run_benchmark(cfg, repetitions=reps)
            ex.write_benchmark(cfg, rows, out, reps)
            for r in rows:
                log.info("%-14s %9.4f ms (%6.3f)  %6d (%6.3f)", r.label, r.mean_ms,
                         r.time_ratio, r.interactions, r.count_ratio)
        elif args.command == "optimize":
            rec = ex.write_optimize(cfg, ex.run_optimize(cfg), out)
            log.info("%s: %d GD iterations, %d evaluations, J=%.6g (full-plant replay %.6g)",
                     rec["mode"], rec["gd_iterations"], rec["ev_calculations"], rec["cost"],
                     rec["replay_cost_full"])
        elif args.command == "mpc":
            rec = ex.write_closed_loop(cfg, ex.run_closed_loop(cfg), out)
            log.info("realized cost %.6g over %d windows", rec["realized_cost"],
                     len(rec["windows"]))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DegenerateInputError, OptimizationError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
