"""Command-line entry point: `fusionq <subcommand> --config <path> ...`."""

import argparse
import logging
from collections.abc import Sequence
from pathlib import Path

from fusionq import experiment
from fusionq.config import ExperimentConfig, load_config, with_seed
from fusionq.errors import ConfigurationError, FusionQError
from fusionq.report import emit_report


logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

SUBCOMMANDS = ("gen-scenes", "train", "eval", "ablate", "bench-sparsity", "report")


class _Parser(argparse.ArgumentParser):
    """Reports usage errors as configuration errors instead of exiting."""

    def error(self, message: str) -> None:  # type: ignore[override]
        raise ConfigurationError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="fusionq",
        description="Query-based camera/lidar fusion experiments on synthetic desk-scale scenes.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument("command", choices=SUBCOMMANDS)
    parser.add_argument("--config", type=Path, help="YAML experiment configuration; defaults when omitted")
    parser.add_argument("--seed", type=int, default=None, help="Override the configured seed")
    parser.add_argument("--out", type=Path, default=Path("artifacts"), help="Output directory")
    parser.add_argument("--checkpoint", type=Path, default=None, help="Checkpoint to evaluate")
    parser.add_argument("--log-level", default="INFO",
                        choices=("DEBUG", "INFO", "WARNING", "ERROR"), help="Logging verbosity")
    return parser


def resolve_config(path: Path | None, seed: int | None) -> ExperimentConfig:
    cfg = ExperimentConfig() if path is None else load_config(path)
    return with_seed(cfg, seed)


def run(args: argparse.Namespace) -> None:
    if args.command == "report":
        emit_report(args.out)
        return
    cfg = resolve_config(args.config, args.seed)
    match args.command:
        case "gen-scenes":
            experiment.run_gen_scenes(cfg, args.out)
        case "train":
            experiment.run_train(cfg, args.out)
        case "eval":
            experiment.run_eval(cfg, args.out, args.checkpoint)
        case "ablate":
            experiment.run_ablate(cfg, args.out)
        case "bench-sparsity":
            experiment.run_bench_sparsity(cfg, args.out)


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigurationError as e:
        logging.basicConfig(level=logging.ERROR)
        logger.error("%s", e)
        return EXIT_CONFIG
    logging.basicConfig(level=args.log_level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        run(args)
    except ConfigurationError as e:
        logger.error("Configuration error: %s", e)
        return EXIT_CONFIG
    except FusionQError as e:
        logger.error("%s: %s", type(e).__name__, e)
        return EXIT_RUNTIME
    except (OSError, RuntimeError) as e:
        # filesystem failures and torch runtime errors
        logger.error("Run failed: %s: %s", type(e).__name__, e)
        return EXIT_RUNTIME
    return EXIT_OK
