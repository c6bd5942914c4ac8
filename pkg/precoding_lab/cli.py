#!/usr/bin/env python3
"""
CLI Module for the Multibeam Precoding Lab

Command-line interface: run a scenario, sweep P_sat, benchmark the precoders,
export a generated channel, or run the symbol-level CSI loop.

    python main.py simulate --config scenario.json --out results/ [--seed 7]
    python main.py sweep --config scenario.json --psat-min -10 --psat-max 10 --step 0.5 --out results/
    python main.py bench --sizes 4,8,16 --reps 5
    python main.py gen-channel --config scenario.json --out channel.csv
    python main.py closed-loop --config scenario.json --out results/ [--superframes 50]
"""

import argparse
import logging
import os
import sys
from typing import List, Optional

from dotenv import load_dotenv

from precoding_lab.channel import save_channel
from precoding_lab.config import ENV_LOG_LEVEL, load_config
from precoding_lab.errors import ConfigError, IoError, PrecodingLabError
from precoding_lab.report import emit_closed_loop, emit_report, write_csv
from precoding_lab.runner import (
    benchmark_precoders,
    build_channel,
    run_closed_loop,
    run_scenario,
    sweep_psat,
)

# Set up logging
logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def configure_logging(level: str = "INFO"):
    """Configure the root logger with a console handler if none exists"""
    root_logger = logging.getLogger()
    root_logger.setLevel(level.upper())

    if not root_logger.handlers:
        console_handler = logging.StreamHandler()
        console_handler.setFormatter(logging.Formatter(LOG_FORMAT))
        root_logger.addHandler(console_handler)


def parse_sizes(value: str) -> List[int]:
    """Parse a comma-separated list of matrix sizes"""
    try:
        sizes = [int(part) for part in value.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"Sizes must be integers, got '{value}'") from None
    if not sizes or min(sizes) < 2:
        raise argparse.ArgumentTypeError(f"Sizes must all be >= 2, got '{value}'")
    return sizes


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="precoding-lab",
        description="Multibeam satellite precoding experiments",
    )
    parser.add_argument("--log-level", default=None,
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
                        help=f"Logging level (default: ${ENV_LOG_LEVEL} or INFO)")
    commands = parser.add_subparsers(dest="command", required=True)

    simulate = commands.add_parser("simulate", help="Run a scenario and write CSV reports")
    simulate.add_argument("--config", help="Scenario file (JSON or YAML); bundled default if omitted")
    simulate.add_argument("--out", required=True, help="Output directory")
    simulate.add_argument("--seed", type=int, help="Master seed override")

    sweep = commands.add_parser("sweep", help="Sweep P_sat and write curves")
    sweep.add_argument("--config", help="Scenario file (JSON or YAML)")
    sweep.add_argument("--psat-min", type=float, required=True, help="Lowest P_sat in dBW")
    sweep.add_argument("--psat-max", type=float, required=True, help="Highest P_sat in dBW")
    sweep.add_argument("--step", type=float, required=True, help="P_sat step in dB")
    sweep.add_argument("--out", required=True, help="Output directory")
    sweep.add_argument("--seed", type=int, help="Master seed override")

    bench = commands.add_parser("bench", help="Time the precoders against K")
    bench.add_argument("--sizes", type=parse_sizes, default=[4, 8, 16],
                       help="Comma-separated K values (default: 4,8,16)")
    bench.add_argument("--reps", type=int, default=5, help="Repetitions per size")
    bench.add_argument("--out", help="Optional CSV file for the timing table")

    gen_channel = commands.add_parser("gen-channel", help="Write the scenario channel as CSV")
    gen_channel.add_argument("--config", help="Scenario file (JSON or YAML)")
    gen_channel.add_argument("--out", required=True, help="Channel CSV file")
    gen_channel.add_argument("--seed", type=int, help="Master seed override")

    closed_loop = commands.add_parser("closed-loop", help="Run the symbol-level CSI loop")
    closed_loop.add_argument("--config", help="Scenario file (JSON or YAML)")
    closed_loop.add_argument("--out", required=True, help="Output directory")
    closed_loop.add_argument("--superframes", type=int, help="Number of superframes")
    closed_loop.add_argument("--seed", type=int, help="Master seed override")
    return parser


def simulate(args):
    config = load_config(args.config, seed=args.seed)
    report = run_scenario(config)
    emit_report(report, args.out)


def sweep(args):
    config = load_config(args.config, seed=args.seed)
    report, curves = sweep_psat(config, args.psat_min, args.psat_max, args.step)
    emit_report(report, args.out, include_curves=True)
    logger.info(f"Sweep produced {len(curves)} curve points")


def bench(args):
    table, exponents = benchmark_precoders(args.sizes, args.reps)
    print(table.to_string(index=False))
    for name, exponent in exponents.items():
        print(f"{name}: fitted growth exponent {exponent:.2f}")
    if args.out:
        write_csv(table, args.out)


def gen_channel(args):
    config = load_config(args.config, seed=args.seed)
    H, _ = build_channel(config)
    save_channel(H, args.out)


def closed_loop(args):
    if args.superframes is not None and args.superframes < 1:
        raise ConfigError(f"--superframes must be >= 1, got {args.superframes}")
    config = load_config(args.config, seed=args.seed)
    results = run_closed_loop(config, args.superframes)
    emit_closed_loop(results, args.out)


COMMANDS = {
    "simulate": simulate,
    "sweep": sweep,
    "bench": bench,
    "gen-channel": gen_channel,
    "closed-loop": closed_loop,
}


def main(argv: Optional[List[str]] = None):
    """Main function to handle command-line arguments"""
    load_dotenv()
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level or os.environ.get(ENV_LOG_LEVEL, "INFO"))

    try:
        COMMANDS[args.command](args)
    except (ConfigError, IoError) as e:
        logger.error(f"{e.code}: {e}")
        sys.exit(1)
    except PrecodingLabError as e:
        logger.error(f"{args.command} failed: {e.code}: {e}")
        sys.exit(1)
