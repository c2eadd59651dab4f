"""Command-line entry points."""

from __future__ import annotations

import argparse
import getpass
import logging
import sys

from ..errors import MegError


def setup_logging(verbose: int) -> None:
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def add_verbose(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")


def read_password(prompt: str = "Password: ", confirm: bool = False) -> str:
    if not sys.stdin.isatty():
        return sys.stdin.readline().rstrip("\n")
    pw = getpass.getpass(prompt)
    if confirm and getpass.getpass("Repeat password: ") != pw:
        raise MegError("passwords do not match", code="invalid-argument")
    return pw


def fail(exc: MegError) -> int:
    print(f"error [{exc.code}]: {exc.message}", file=sys.stderr)
    return 1
