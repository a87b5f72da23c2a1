#!/usr/bin/env python3
"""Command-line interface for the constrained RL toolkit."""

import argparse
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent.parent))

from src.services.experiment_service import ExperimentService
from src.utils.config import ConfigFileError
from src.utils.logger import configure_root_logger, get_logger

logger = get_logger(__name__)

EXIT_CODES = {
    "VALIDATION_ERROR": 2,
    "CONFIG_ERROR": 2,
    "SOLVER_ERROR": 3,
    "IO_ERROR": 4,
}

# CLI destination -> settings key
FLAT_FLAGS = (
    "env",
    "map_path",
    "planner",
    "episodes",
    "delta",
    "bonus_scale",
    "seed",
    "eta",
    "lagr_iters",
    "budgets",
    "epsilon",
    "bound_constant",
    "aggreg_mode",
    "slip",
    "horizon",
    "box_goal",
    "lp_backend",
    "simplex_max_variables",
    "out",
    "log_every",
    "resume_counts",
    "runs",
    "workers",
)
SECTION_FLAGS = {
    "convex": ("objective", "constraint", "cap", "radius", "outer_iterations", "inner_iterations"),
    "random": ("seed", "states", "actions", "resources", "sparsity"),
}


def _experiment_options() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("-c", "--config", type=str, help="Configuration file (YAML or key = value lines)")
    parent.add_argument("--log-level", type=str, help="Logging level (debug, info, warning, error)")
    parent.add_argument("--env", type=str, help="Environment: mars, box or random")
    parent.add_argument("--map", dest="map_path", type=str, help="Map file for grid environments")
    parent.add_argument("--planner", type=str, help="Planner: lp, lagrangian, convex or knapsack")
    parent.add_argument("-k", "--episodes", type=int, help="Number of episodes K")
    parent.add_argument("--delta", type=float, help="Failure probability of the bonus")
    parent.add_argument("--bonus-scale", type=float, help="Multiplier on the exploration bonus (1 = concentration bound)")
    parent.add_argument("--seed", type=int, help="Root random seed")
    parent.add_argument("--eta", type=float, help="Lagrangian learning rate")
    parent.add_argument("--lagr-iters", type=int, help="Lagrangian iterations per episode")
    parent.add_argument("--budget", dest="budgets", type=str, help="Budgets B1,B2,... (cumulative for knapsack)")
    parent.add_argument("--epsilon", type=str, help="Knapsack tightening: auto or a number in [0, 1]")
    parent.add_argument("--bound-constant", type=float, help="Constant of the regret bound used by auto epsilon")
    parent.add_argument("--aggreg-mode", type=str, help="Auto epsilon source: bound or empirical")
    parent.add_argument("--slip", type=float, help="Slip probability of grid environments")
    parent.add_argument("--horizon", type=int, help="Episode length H")
    parent.add_argument("--box-goal", action="store_true", default=None, help="Box world: reward the box reaching the goal")
    parent.add_argument("--lp-backend", type=str, help="LP backend: auto, simplex or highs")
    parent.add_argument("--simplex-max-variables", type=int, help="Largest LP the auto backend gives the bundled simplex")
    parent.add_argument("-o", "--out", type=str, help="Output directory")
    parent.add_argument("--log-every", type=int, help="Progress log period in episodes")
    parent.add_argument("--resume-counts", type=str, help="Counts snapshot to resume from")
    parent.add_argument("--runs", type=int, help="Number of independent seeded runs")
    parent.add_argument("--workers", type=int, help="Worker processes for multiple runs")
    for section, names in SECTION_FLAGS.items():
        for name in names:
            flag = f"--{section}-{name.replace('_', '-')}"
            parent.add_argument(flag, dest=f"{section}_{name}", type=str, help=f"'{name}' entry of the {section} section")
    return parent


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Constrained episodic reinforcement learning experiments")
    options = _experiment_options()
    commands = parser.add_subparsers(dest="command", required=True)

    commands.add_parser("run", parents=[options], help="Run the online learning loop and write reports")
    commands.add_parser("plan", parents=[options], help="Solve and print the true benchmark")
    evaluate = commands.add_parser("eval", parents=[options], help="Evaluate a plan from a counts snapshot")
    evaluate.add_argument("--counts", type=str, help="Counts snapshot (uniform policy when omitted)")

    bench = commands.add_parser("bench", help="Oracle constants and planner comparisons")
    bench_commands = bench.add_subparsers(dest="bench_command", required=True)
    oracle = bench_commands.add_parser("oracle", parents=[options], help="Exact constants of a tiny instance")
    oracle.add_argument("--instance", type=str, required=True, help="YAML instance description")
    bench_commands.add_parser("planners", parents=[options], help="Compare planners on the true model")
    return parser


def _section_value(text: str) -> Any:
    for kind in (int, float):
        try:
            return kind(text)
        except ValueError:
            continue
    return text


def overrides_from_args(args: argparse.Namespace) -> Dict[str, Any]:
    """Settings given on the command line; unset flags are left out."""
    overrides = {key: getattr(args, key, None) for key in FLAT_FLAGS}
    overrides = {key: value for key, value in overrides.items() if value is not None}
    for section, names in SECTION_FLAGS.items():
        values = {
            name: _section_value(getattr(args, f"{section}_{name}"))
            for name in names
            if getattr(args, f"{section}_{name}", None) is not None
        }
        if values:
            overrides[section] = values
    return overrides


def _banner(title: str) -> None:
    print(f"\n{'=' * 60}")
    print(title)
    print(f"{'=' * 60}")


def _print_data(data: Dict[str, Any]) -> None:
    for key, value in data.items():
        if isinstance(value, list) and value and isinstance(value[0], dict):
            for i, row in enumerate(value, 1):
                print(f"{i}. " + ", ".join(f"{k}={v}" for k, v in row.items()))
        else:
            print(f"{key}: {value}")


def _fail(response: Dict[str, Any]) -> int:
    error_code = response.get("error_code")
    error_message = response.get("error", "Unknown error")
    print(f"Error: {error_message}", file=sys.stderr)
    return EXIT_CODES.get(error_code, 1)


def main(argv: Optional[List[str]] = None) -> int:
    """Main CLI entry point; returns the process exit status."""
    args = build_parser().parse_args(argv)

    try:
        service = ExperimentService(config_path=args.config)
    except FileNotFoundError:
        print(f"Error: Configuration file '{args.config}' not found.", file=sys.stderr)
        return EXIT_CODES["IO_ERROR"]
    except ConfigFileError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_CODES["CONFIG_ERROR"]

    level = args.log_level or service.log_level
    if level:
        try:
            configure_root_logger(level)
        except ValueError as e:
            print(f"Error: {e}", file=sys.stderr)
            return EXIT_CODES["VALIDATION_ERROR"]

    overrides = overrides_from_args(args)
    logger.info(f"CLI invoked: command={args.command}, overrides={overrides}")

    if args.command == "run":
        response = service.run(overrides)
        title = "EXPERIMENT RESULTS"
    elif args.command == "plan":
        response = service.plan(overrides)
        title = "TRUE BENCHMARK"
    elif args.command == "eval":
        response = service.evaluate(overrides, counts_path=args.counts)
        title = "POLICY EVALUATION"
    elif args.bench_command == "oracle":
        response = service.bench_oracle(args.instance)
        title = "ORACLE CONSTANTS"
    else:
        response = service.bench_planners(overrides)
        title = "PLANNER COMPARISON"

    if not response["success"]:
        return _fail(response)

    _banner(title)
    data = response["data"]
    if args.command == "run":
        for i, run in enumerate(data["runs"]):
            print(
                f"run {i}: seed={run['seed']} RewReg={run['final_rew_reg']:.6f} "
                f"ConsReg={run['final_cons_reg']:.6f} violated={run['budget_violated']} "
                f"-> {run['outputs']['csv']}"
            )
    else:
        _print_data(data)
    print(f"{'=' * 60}\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
