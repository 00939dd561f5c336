import argparse
import logging
import sys
from dataclasses import fields
from typing import List, Optional

from app import RunConfig, configure_logging, load_config
from commands import cmd_baseline, cmd_evaluate, cmd_predict, cmd_prepare, cmd_train
from errors import ConfigError, OffensevalError

logger = logging.getLogger(__name__)

SUBCOMMANDS = ("prepare", "train", "evaluate", "predict", "baseline")


class _ArgumentParser(argparse.ArgumentParser):
    """Usage errors become ConfigError so they share exit code 1."""

    def error(self, message):
        raise ConfigError(message)


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key = value config file (default: $OFFENSEVAL_CONFIG)")
    parser.add_argument("--log-level", help="logging level (default: $LOG_LEVEL or INFO)")
    group = parser.add_argument_group("run configuration")
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type is bool:
            group.add_argument(flag, dest=f.name, action=argparse.BooleanOptionalAction, default=None)
        else:
            group.add_argument(flag, dest=f.name, default=None, metavar=f.name.upper())


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(prog="offenseval", description="Offensive tweet classification pipeline")
    subparsers = parser.add_subparsers(dest="command", required=True)

    for name in SUBCOMMANDS:
        sub = subparsers.add_parser(name)
        _add_config_flags(sub)
        if name == "evaluate":
            sub.add_argument("--checkpoint")
            sub.add_argument("--gold")
            sub.add_argument("--predictions", help="score an existing id,label CSV instead of a checkpoint")
        elif name == "predict":
            sub.add_argument("--checkpoint", required=True)
            sub.add_argument("--input", required=True, help="OLID test TSV or one text per line")
            sub.add_argument("--output")
            sub.add_argument("--debug-tokens", action="store_true", help="add the normalized tokens column")
        elif name == "baseline":
            sub.add_argument("--gold")
    return parser


def run(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, run one subcommand and return its exit code."""
    try:
        args = build_parser().parse_args(argv)
        configure_logging(args.log_level)
        overrides = {f.name: getattr(args, f.name) for f in fields(RunConfig)}
        config = load_config(args.config, overrides)
        logger.info(f"Running {args.command} (subtask {config.subtask}, model {config.model})")

        if args.command == "prepare":
            cmd_prepare(config)
        elif args.command == "train":
            cmd_train(config)
        elif args.command == "evaluate":
            cmd_evaluate(config, args.checkpoint, args.gold, args.predictions)
        elif args.command == "predict":
            cmd_predict(config, args.checkpoint, args.input, args.output, args.debug_tokens)
        elif args.command == "baseline":
            cmd_baseline(config, args.gold)
        return 0
    except OffensevalError as e:
        logger.error(f"{type(e).__name__}: {str(e)}")
        print(f"error: {str(e)}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(run())
