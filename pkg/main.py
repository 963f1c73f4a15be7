import argparse
import logging
import sys
from typing import Optional, Sequence

from commands import check, evaluate, experiment, generate, solve, sweep
from commands.common import execute
from services import settings

COMMANDS = (generate, solve, sweep, evaluate, experiment, check)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="localpr",
        description="Local graph clustering with l1-regularized PageRank.",
    )
    parser.add_argument("--version", action="version", version=f"localpr {settings.TOOL_VERSION}")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        command.add_parser(subparsers)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(
        level=settings.LOG_LEVEL,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    args = vars(build_parser().parse_args(argv))
    command = args.pop("command")
    handler = args.pop("handler")
    return execute(handler, command, args)


if __name__ == "__main__":
    sys.exit(main())
