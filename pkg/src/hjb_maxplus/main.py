"""Command-line entry point `hjb`."""
import argparse
import logging
import sys
from typing import List, Optional

from . import __version__
from .commands import audits, consistency, decompose, problems, solve
from .config import get_settings
from .exceptions import EXIT_FAILURE, HJBError

logger = logging.getLogger("hjb_maxplus")


def build_parser() -> argparse.ArgumentParser:
    settings = get_settings()
    parser = argparse.ArgumentParser(prog="hjb", description=settings.APP_NAME)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log at INFO level")
    parser.add_argument(
        "--threads", type=int, default=None, help=f"worker cap (default {settings.HJB_THREADS})"
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for module in (problems, decompose, consistency, audits, solve):
        module.register(subparsers)
    return parser


def configure_logging(verbose: bool = False) -> None:
    settings = get_settings()
    logging.basicConfig(
        level=logging.INFO if (settings.DEBUG or verbose) else logging.WARNING,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = ["hjb"] + argv
    configure_logging(args.verbose)
    try:
        return args.handler(args)
    except HJBError as e:
        logger.error(f"{args.command} failed: {e}", exc_info=get_settings().DEBUG)
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except Exception as e:
        logger.exception(f"{args.command} failed unexpectedly: {e}")
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
