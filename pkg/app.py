"""
texroi - Main Application
Adaptive ROI discovery and subchondral bone texture classification, wired as
a command-line app with one router per pipeline command.
"""
import argparse
import os
import sys
from typing import List, Optional

from config import LOG_LEVEL
from models import TexRoiError
from commands import (
    preprocess_router,
    rank_router,
    mask_router,
    extract_router,
    evaluate_router,
    synth_router
)
from commands.common import add_common_arguments, resolve_config
from commands.router import CommandRouter
from utils.log_utils import configure_logging, get_logger
from utils.run_utils import monitor_performance, write_run_record

logger = get_logger("app")


def include_router(subparsers, router: CommandRouter) -> None:
    """Register every command of a router as an argparse sub-command."""
    for command in router.commands:
        parser = subparsers.add_parser(command.name, help=command.help, description=command.help)
        add_common_arguments(parser)
        for arg in command.arguments:
            parser.add_argument(*arg.flags, **arg.options)
        parser.set_defaults(handler=command.handler, command=command.name)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="texroi",
        description="Adaptive ROI discovery and texture-based knee OA classification",
    )
    parser.add_argument("--log-level", default=LOG_LEVEL, help="DEBUG, INFO, WARNING or ERROR")
    subparsers = parser.add_subparsers(dest="command", required=True)

    # Include all routers
    include_router(subparsers, preprocess_router)
    include_router(subparsers, rank_router)
    include_router(subparsers, mask_router)
    include_router(subparsers, extract_router)
    include_router(subparsers, evaluate_router)
    include_router(subparsers, synth_router)
    return parser


def run_command(args: argparse.Namespace, argv: List[str]) -> int:
    """Run one parsed command and write its run.json provenance record."""
    cfg = resolve_config(args)
    handler = monitor_performance(args.handler)
    result = handler(args, cfg)
    record = os.path.join(cfg.output_dir, 'run.json')
    write_run_record(record, args.command, argv, cfg, result)

    failed = result['report']['failed']
    if failed:
        logger.warning("%d sample(s) excluded, see %s", len(failed), record)
    if result['exit_code']:
        logger.error("Failure fraction %.3f exceeds the budget", result['report']['failure_fraction'])
    return result['exit_code']


def main(argv: Optional[List[str]] = None) -> int:
    """
    Entry point of the texroi CLI.

    Returns:
        0 on success, 1 when too many samples failed, 2 on a command error
    """
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        return run_command(args, argv)
    except TexRoiError as e:
        logger.error("%s: %s", type(e).__name__, e)
        return 2


if __name__ == "__main__":
    sys.exit(main())
