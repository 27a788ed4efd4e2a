"""Command-line entry point: train benchmarks, sweep strategies, build reference tables."""
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import argparse
import logging
import re
from concurrent.futures import ProcessPoolExecutor
from typing import Optional, Sequence

from pydantic import ValidationError

from benchmarks import PROBLEM_IDS, UnknownProblemError, builtin_problem
from config import settings
from plots import write_plots
from reference_solvers import REFERENCE_PROBLEMS, load_reference
from schemas import RunConfig, load_run_config, parse_strategy_list
from trainer import RunResult, train, write_history

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUN_FAILURE = 1
EXIT_USAGE = 2


class UsageError(ValueError):
    """Flags or run configuration are invalid."""


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    source = parser.add_mutually_exclusive_group()
    source.add_argument("--problem", help=f"built-in problem: {', '.join(PROBLEM_IDS)}")
    source.add_argument("--spec", help="PDE spec file")
    source.add_argument("--config", help="run file of key = value lines")
    parser.add_argument("--opt", dest="schedule", help="optimizer schedule, e.g. adam:0.001:50+bfgs:150")
    parser.add_argument("--weights", help="fixed | lossgrad[:gamma=..] | minimax[:lrpde=..][:lrbc=..]")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--sampling-seed", dest="sampling_seed", type=int)
    parser.add_argument("--iters", type=int, help="iterations for phases without their own count")
    parser.add_argument("--eval-dx", dest="eval_dx", type=float)
    parser.add_argument("--params", help="physical parameter overrides, e.g. nu=0.05")
    parser.add_argument("--param-estim", dest="param_estim", action="store_true", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pinn", description="Physics-informed network training benchmarks")
    commands = parser.add_subparsers(dest="command", required=True)

    bench = commands.add_parser("bench", help="train one configuration")
    _add_run_flags(bench)
    bench.add_argument("--strategy", help="grid:<dx> | stochastic:<n> | quasirandom:<n> | quadrature[:k=v...]")
    bench.add_argument("--out", help="history CSV")
    bench.add_argument("--plot", help="SVG plot")

    sweep = commands.add_parser("sweep", help="train one configuration per strategy")
    _add_run_flags(sweep)
    sweep.add_argument("--strategies", required=True, help="comma-separated strategies")
    sweep.add_argument("--out-dir", dest="out_dir", help="directory for per-run CSVs")
    sweep.add_argument("--plot", help="SVG plot comparing all runs")
    sweep.add_argument("--workers", type=int, help="concurrent runs")

    commands.add_parser("problems", help="list built-in problems")

    reference = commands.add_parser("reference", help="build and persist a reference table")
    reference.add_argument("--problem", required=True, choices=REFERENCE_PROBLEMS)
    reference.add_argument("--resolution", type=int, default=settings.REFERENCE_RESOLUTION)
    reference.add_argument("--dir", dest="directory", help="table directory")
    return parser


_RUN_KEYS = ("problem", "spec", "schedule", "weights", "seed", "sampling_seed", "iters", "eval_dx", "params", "param_estim")


def config_from_args(args: argparse.Namespace, strategy: Optional[str] = None) -> RunConfig:
    """RunConfig from flags layered over the run file and the problem's defaults."""
    try:
        values: dict = {}
        if args.config:
            run_file = load_run_config(args.config)
            values = {key: getattr(run_file, key) for key in run_file.model_fields_set}
        flags = {key: getattr(args, key) for key in _RUN_KEYS if getattr(args, key, None) is not None}
        problem_id = flags.get("problem") or values.get("problem")
        if problem_id and not (flags.get("spec") or values.get("spec")):
            values = {**builtin_problem(problem_id).defaults, **values}
        values.update(flags)
        if strategy is not None:
            values["strategy"] = strategy
        for key in ("out", "plot"):
            if getattr(args, key, None):
                values[key] = getattr(args, key)
        return RunConfig(**values)
    except (ValidationError, UnknownProblemError, ValueError, OSError) as exc:
        raise UsageError(str(exc)) from exc


def _report(result: RunResult, out: Optional[str], plot: Optional[str]) -> None:
    if out:
        write_history(result.history, out)
    if plot:
        write_plots(result.history, plot, title=f"{result.problem} {result.strategy} {result.optimizer}")
    print(result.summary_line())


def run_bench(args: argparse.Namespace) -> int:
    config = config_from_args(args, args.strategy)
    result = train(config)
    _report(result, config.out, config.plot)
    return EXIT_OK


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9.]+", "_", text).strip("_")


def _sweep_run(config: RunConfig) -> RunResult:
    return train(config)


def run_sweep(args: argparse.Namespace) -> int:
    try:
        strategies = parse_strategy_list(args.strategies)
    except (ValidationError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    if not strategies:
        raise UsageError("--strategies names no strategy")
    configs = [config_from_args(args, strategy) for strategy in strategies]
    workers = args.workers or min(settings.SWEEP_WORKERS, len(configs))
    out_dir = Path(args.out_dir or settings.OUTPUT_DIR)

    with ProcessPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(_sweep_run, configs))

    histories = {}
    for index, result in enumerate(results):
        name = f"{result.problem}_{index}_{_slug(result.strategy)}.csv"
        write_history(result.history, out_dir / name)
        histories[result.strategy] = result.history
        print(result.summary_line())
    if args.plot:
        write_plots(histories, args.plot, title=f"{results[0].problem} {results[0].optimizer}")
    return EXIT_OK


def run_problems(args: argparse.Namespace) -> int:
    for problem_id in PROBLEM_IDS:
        problem = builtin_problem(problem_id)
        dvars = ", ".join(f"{d.name}({', '.join(d.args)})" for d in problem.system.dependent_vars)
        print(f"{problem_id}: {dvars}")
    return EXIT_OK


def run_reference(args: argparse.Namespace) -> int:
    if args.resolution < 32:
        raise UsageError("--resolution must be >= 32")
    table = load_reference(args.problem, args.resolution, args.directory or settings.REFERENCE_DIR)
    for name, field in table.fields.items():
        print(f"{args.problem} {name}: {field.values.shape[0]}x{field.values.shape[1]} grid over {field.axes}")
    return EXIT_OK


_COMMANDS = {"bench": run_bench, "sweep": run_sweep, "problems": run_problems, "reference": run_reference}


def cli_run(argv: Optional[Sequence[str]] = None) -> int:
    """Run one command; 2 for bad flags, 1 for a failed run, 0 otherwise."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    if args.command in ("bench", "sweep") and not (args.problem or args.spec or args.config):
        parser.print_usage(sys.stderr)
        print("error: one of --problem, --spec or --config is required", file=sys.stderr)
        return EXIT_USAGE
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception:
        logger.error(f"{args.command} failed", exc_info=True)
        return EXIT_RUN_FAILURE


def main() -> None:
    logging.basicConfig(level=getattr(logging, settings.LOG_LEVEL.upper(), logging.INFO))
    sys.exit(cli_run())


if __name__ == "__main__":
    main()
