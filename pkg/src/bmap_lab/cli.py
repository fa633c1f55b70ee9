"""Command-line entry point: ``bmap-lab <command> --model PATH [options]``."""

import argparse
import asyncio
import json
import logging
import sys
from typing import Any, Dict, List, NoReturn, Optional, Sequence

from pydantic import ValidationError

from .data_sources.results_writer import emit_plot_data, to_json
from .errors import (
    BmapLabError,
    CflViolationError,
    DomainError,
    GateFailure,
    ModelValidationError,
)
from .tools.experiments import COMMANDS, ExperimentConfig, run_experiment

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_RUNTIME = 2
EXIT_GATE = 3

PLOT_DATA = "plot-data"
VALIDATION_ERRORS = (
    ValidationError,
    ModelValidationError,
    DomainError,
    CflViolationError,
    FileNotFoundError,
)


def report_error(kind: str, message: str, exit_code: int, **extra: Any) -> int:
    payload: Dict[str, Any] = {"error": kind, "message": message, "exit_code": exit_code}
    payload.update(extra)
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    return exit_code


class _Parser(argparse.ArgumentParser):
    """Usage errors are validation errors: JSON on stderr and exit 1."""

    def error(self, message: str) -> NoReturn:
        report_error("usage", message, EXIT_INVALID, usage=self.format_usage().strip())
        sys.exit(EXIT_INVALID)


def _floats(text: str) -> List[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from e


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="bmap-lab",
        description="Spectral analysis, Monte Carlo and FKPP experiments for branching MAPs.",
    )
    parser.add_argument("command", choices=[*COMMANDS, PLOT_DATA])
    parser.add_argument("--model", help="model file or bundled model name")
    parser.add_argument("--theta", type=float)
    parser.add_argument("--horizon", type=float)
    parser.add_argument("--replicas", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--grid", help='"xmin,xmax,n"')
    parser.add_argument("--dt", type=float)
    parser.add_argument("--out", default="results", help="output directory")
    parser.add_argument("--workers", type=int, help="default: $BMAP_LAB_WORKERS or 1")
    parser.add_argument("--gate", action="store_true", help="exit 3 when the acceptance gate fails")
    parser.add_argument("--kind", choices=["step", "exp_tail", "constant"])
    parser.add_argument("--test-function", dest="test_function")
    parser.add_argument("--t-window", dest="t_window", type=_floats, help='"t1,t2"')
    parser.add_argument("--t-list", dest="t_list", type=_floats, help='"t1,t2,..."')
    parser.add_argument("--start-type", dest="start_type", type=int)
    parser.add_argument("--level", type=float)
    parser.add_argument("--max-particles", dest="max_particles", type=int)
    parser.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
    )
    return parser


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    """ExperimentConfig from parsed flags; unset flags keep the config defaults."""
    fields = (
        "command",
        "model",
        "theta",
        "horizon",
        "replicas",
        "seed",
        "grid",
        "dt",
        "out",
        "workers",
        "gate",
        "kind",
        "test_function",
        "t_window",
        "t_list",
        "start_type",
        "level",
        "max_particles",
    )
    options = {name: getattr(args, name) for name in fields if getattr(args, name) is not None}
    if "model" not in options:
        options["model"] = ""
    return ExperimentConfig.model_validate(options)


def run(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level))

    try:
        if args.command == PLOT_DATA:
            produced = asyncio.run(emit_plot_data(args.out))
            print(to_json({"plot_files": [str(p) for p in produced]}), end="")
            return EXIT_OK
        config = config_from_args(args)
        outcome = asyncio.run(run_experiment(config))
    except VALIDATION_ERRORS as e:
        return report_error(type(e).__name__, str(e), EXIT_INVALID)
    except BmapLabError as e:
        return report_error(type(e).__name__, str(e), EXIT_RUNTIME)
    except Exception as e:
        logger.exception("Experiment failed")
        return report_error(type(e).__name__, str(e), EXIT_RUNTIME)

    print(to_json(outcome.summary), end="")
    if config.gate:
        try:
            outcome.check_gate()
        except GateFailure as e:
            return report_error("gate_failure", str(e), EXIT_GATE, files=outcome.files)
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
