# =============================================================================
# MPEMBED - MAIN ENTRY POINT
# =============================================================================
# Command-line interface for the mixed-precision embedding experiments.
#
# Usage:
#   python main.py simulate --config configs/simulate.yaml
#   python main.py train-toy --config configs/train_toy.yaml --workers 4
#   python main.py compression --precision int8 --dim 128 --ratio 0.05 --policy lfu
#   python main.py bench --config configs/bench.yaml
#   python main.py quantize weights.npy --output table.snap --precision int4
#   python main.py quantize --inspect table.snap
#   python main.py validate
#
# Exit codes: 0 success, 2 config error, 3 runtime failure.
# =============================================================================

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
import yaml

from mpembed.config import default_seed, load_experiment_config, validate_config
from mpembed.experiments import run_bench, run_simulate, run_train_toy
from mpembed.mp_table import (
    EmbeddingConfig,
    MixedPrecisionEmbedding,
    compression_factor,
    format_factor,
)
from mpembed.reports import accuracy_frame, bench_frame, format_table, sim_frame
from mpembed.snapshot import read_header, save_snapshot
from mpembed.validation_report import (
    format_report,
    generate_validation_report,
    run_quick_checks,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

logger = logging.getLogger("mpembed")


def _print_errors(title: str, errors: List[str]) -> None:
    print(f"\n{title}:")
    for error in errors:
        print(f"  - {error}")


def _load_config(command: str, args) -> Optional[dict]:
    """Merged and validated config, or None after printing the problems."""
    try:
        cfg = load_experiment_config(command, args.config, args.overrides)
    except (OSError, ValueError, yaml.YAMLError) as exc:
        _print_errors("CONFIG ERROR", [str(exc)])
        return None
    errors = validate_config(command, cfg)
    if errors:
        _print_errors("CONFIG ERRORS", errors)
        return None
    return cfg


def cmd_simulate(args) -> int:
    cfg = _load_config("simulate", args)
    if cfg is None:
        return EXIT_CONFIG

    print("\n" + "=" * 60)
    print("HIT-RATE SIMULATION")
    print("=" * 60)
    result = run_simulate(cfg, args.output_dir, args.workers)
    print(format_table(sim_frame(result.reports)))
    print(f"\nWrote {len(result.files)} files to {args.output_dir or cfg['output_dir']}")
    if result.errors:
        _print_errors("FAILED CELLS", result.errors)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_train_toy(args) -> int:
    cfg = _load_config("train_toy", args)
    if cfg is None:
        return EXIT_CONFIG

    print("\n" + "=" * 60)
    print("TOY TASK: ACCURACY DROP % VS FP32")
    print("=" * 60)
    result = run_train_toy(cfg, args.output_dir, args.workers)
    print(accuracy_frame(result.grid).to_string(index=False))
    print(f"\nWrote {len(result.files)} files to {args.output_dir or cfg['output_dir']}")
    if result.errors:
        _print_errors("FAILED OR DIVERGED RUNS", result.errors)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = _load_config("bench", args)
    if cfg is None:
        return EXIT_CONFIG

    print("\n" + "=" * 60)
    print("THROUGHPUT VS HIT RATE")
    print("=" * 60)
    result = run_bench(cfg, args.output_dir)
    print(format_table(bench_frame(result.points), places=2))
    if result.warnings:
        _print_errors("WARNINGS", result.warnings)
    if result.errors:
        _print_errors("THROUGHPUT ORDERING FAILED", result.errors)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_compression(args) -> int:
    try:
        value = compression_factor(args.precision, args.dim, args.ratio, args.policy)
    except ValueError as exc:
        _print_errors("CONFIG ERROR", [str(exc)])
        return EXIT_CONFIG
    print(format_factor(value))
    return EXIT_OK


def cmd_quantize(args) -> int:
    if args.inspect:
        try:
            header = read_header(args.inspect)
        except (OSError, ValueError) as exc:
            _print_errors("SNAPSHOT ERROR", [str(exc)])
            return EXIT_RUNTIME
        print(f"version:    {header.version}")
        print(f"rows:       {header.num_rows}")
        print(f"dim:        {header.dim}")
        print(f"precision:  {header.precision.name}")
        print(f"rounding:   {header.rounding.value}")
        print(f"seed:       {header.seed}")
        print(f"table_id:   {header.table_id}")
        if header.cache:
            print(
                f"cache:      {header.cache.num_sets} sets x {header.cache.associativity} ways, "
                f"{header.cache.policy.value}, {header.cache.hash.value}"
            )
        else:
            print("cache:      none")
        return EXIT_OK

    if not args.input or not args.output:
        _print_errors("CONFIG ERROR", ["quantize needs an input .npy file and --output"])
        return EXIT_CONFIG
    try:
        weights = np.load(args.input)
        config = EmbeddingConfig(
            dim=int(weights.shape[1]) if weights.ndim == 2 else 0,
            precision=args.precision,
            rounding=args.rounding,
        )
    except (OSError, ValueError) as exc:
        _print_errors("CONFIG ERROR", [str(exc)])
        return EXIT_CONFIG
    try:
        seed = default_seed() if args.seed is None else args.seed
        emb = MixedPrecisionEmbedding.from_dense(weights, config, seed=seed, table_id=args.table_id)
        path = save_snapshot(emb, args.output)
    except (OSError, ValueError) as exc:
        _print_errors("QUANTIZE FAILED", [str(exc)])
        return EXIT_RUNTIME
    print(f"Wrote {weights.shape[0]} x {config.dim} {config.precision.name} snapshot to {path}")
    return EXIT_OK


def cmd_validate(args) -> int:
    seed = default_seed() if args.seed is None else args.seed
    report = generate_validation_report(run_quick_checks(seed))
    print(format_report(report))
    return EXIT_OK if report.overall_passed else EXIT_RUNTIME


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="Debug logging")

    experiment = argparse.ArgumentParser(add_help=False)
    experiment.add_argument("--config", "-c", help="YAML or JSON config file")
    experiment.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
        help="Override a config value, e.g. --set trace.num_rows=1000",
    )
    experiment.add_argument("--output-dir", "-o", type=Path, help="Output directory")

    grid = argparse.ArgumentParser(add_help=False)
    grid.add_argument("--workers", "-w", type=int, help="Parallel grid cells")

    parser = argparse.ArgumentParser(description="Mixed-precision embedding experiments")
    subparsers = parser.add_subparsers(dest="command", help="Commands")

    sim = subparsers.add_parser("simulate", parents=[common, experiment, grid], help="Cache hit-rate grid")
    sim.set_defaults(handler=cmd_simulate)

    toy = subparsers.add_parser("train-toy", parents=[common, experiment, grid], help="Accuracy-drop grid")
    toy.set_defaults(handler=cmd_train_toy)

    bench = subparsers.add_parser("bench", parents=[common, experiment], help="Throughput vs hit rate")
    bench.set_defaults(handler=cmd_bench)

    comp = subparsers.add_parser("compression", parents=[common], help="Memory compression factor")
    comp.add_argument("--precision", "-p", required=True, help="fp32, fp16, int8, int4 or int2")
    comp.add_argument("--dim", "-d", type=int, required=True, help="Embedding dimension")
    comp.add_argument("--ratio", "-r", type=float, default=0.0, help="Cache ratio in [0, 1]")
    comp.add_argument("--policy", default="lfu", help="lru or lfu")
    comp.set_defaults(handler=cmd_compression)

    quant = subparsers.add_parser("quantize", parents=[common], help="FP32 .npy -> snapshot")
    quant.add_argument("input", nargs="?", help="(N, d) FP32 .npy matrix")
    quant.add_argument("--output", help="Snapshot file to write")
    quant.add_argument("--precision", "-p", default="int8")
    quant.add_argument("--rounding", default="nearest")
    quant.add_argument("--seed", type=int)
    quant.add_argument("--table-id", type=int, default=0)
    quant.add_argument("--inspect", metavar="SNAPSHOT", help="Print a snapshot header and exit")
    quant.set_defaults(handler=cmd_quantize)

    val = subparsers.add_parser("validate", parents=[common], help="Run the quick checks")
    val.add_argument("--seed", type=int)
    val.set_defaults(handler=cmd_validate)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "handler", None):
        parser.print_help()
        return EXIT_CONFIG

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    if getattr(args, "workers", None) is not None and args.workers < 1:
        _print_errors("CONFIG ERROR", [f"--workers must be >= 1, got {args.workers}"])
        return EXIT_CONFIG
    try:
        return args.handler(args)
    except Exception as exc:
        logger.exception("Command %s failed", args.command)
        _print_errors("RUNTIME FAILURE", [str(exc)])
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
