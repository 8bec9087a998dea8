import argparse
import logging
import sys
from typing import List, Optional

import structlog

from src import __version__
from src.commands import COMMANDS
from src.config import settings
from src.errors import PerplabError
from src.utils.logging_config import configure_logging

logger = logging.getLogger("perplab")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="perplab",
        description="Numerical lab for perpetuities driven by nonnegative random matrices.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=settings.LOG_LEVEL)
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS.values():
        command.register(subparsers)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level, settings.LOG_FILE)
    structlog.contextvars.clear_contextvars()
    structlog.contextvars.bind_contextvars(command=args.command, seed=getattr(args, "seed", None))
    del args.log_level

    try:
        return args.handler(args)
    except PerplabError as e:
        logger.error("%s failed: %s", args.command, e)
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
