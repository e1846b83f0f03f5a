#!/usr/bin/env python3
"""
Base module for pipeline stage processors.

A stage processor owns the command-line arguments of one pipeline stage,
runs it, and turns the stage's domain errors into a non-zero exit code with a
stage-tagged log entry.
"""

import argparse
import logging
from abc import ABC, abstractmethod
from typing import Optional, Sequence, Tuple, Type, Union

from logging_utils import StageTimer, get_logger
from traitscale.config import DEFAULT_N_JOBS, DEFAULT_SEED

logger = get_logger()


class StageProcessor(ABC):
    """Base class for the ``traitscale`` subcommands."""

    # --- Configuration Properties (Subclasses can override) ---

    stage_name: str = "stage"
    """Name used to tag log entries and error diagnostics."""

    handled_errors: Tuple[Type[Exception], ...] = ()
    """Domain exceptions reported as a failed stage instead of propagating."""

    args: argparse.Namespace
    """Parsed command-line arguments."""

    def __init__(self, args: Optional[Union[argparse.Namespace, Sequence[str]]] = None):
        """Initialize the processor.

        Args:
            args: Pre-parsed arguments (Namespace) or sequence of strings to parse.
                  If None or empty, parsing is deferred until parse_args or run.
        """
        if isinstance(args, argparse.Namespace):
            self.args = args
        elif isinstance(args, Sequence) and args:
            self.args = self.parse_args(list(args))
        else:
            self.args = None  # type: ignore

    # --- Abstract Methods (Subclasses must implement) ---

    @abstractmethod
    def get_description(self) -> str:
        """Get the description for the argument parser."""

    @abstractmethod
    def execute(self, args: argparse.Namespace) -> None:
        """Run the stage with parsed arguments.

        Raises:
            Any of ``handled_errors`` or OSError when the stage fails.
        """

    def add_arguments(self, parser: Union[argparse.ArgumentParser, argparse._ArgumentGroup]) -> None:
        """Add stage-specific command-line arguments.

        Args:
            parser: The parser or argument group to add arguments to.
        """

    @staticmethod
    def add_common_arguments(parser: Union[argparse.ArgumentParser, argparse._ArgumentGroup]) -> None:
        """Arguments shared by every stage."""
        parser.add_argument("--seed", type=int, default=DEFAULT_SEED,
                            help=f"Random seed (default: {DEFAULT_SEED})")
        parser.add_argument("--n-jobs", type=int, default=DEFAULT_N_JOBS,
                            help=f"Worker threads (default: {DEFAULT_N_JOBS})")
        parser.add_argument("--debug", action="store_true",
                            help="Log at DEBUG level")

    def parse_args(self, args: Optional[Sequence[str]] = None) -> argparse.Namespace:
        """Parse command-line arguments and store them in self.args.

        Args:
            args: Command line arguments. Defaults to None, which uses sys.argv[1:].

        Returns:
            Parsed command-line arguments.
        """
        parser = argparse.ArgumentParser(description=self.get_description())
        self.add_common_arguments(parser)
        self.add_arguments(parser)
        self.args = parser.parse_args(args)
        return self.args

    # --- Core Processing Logic ---

    def run(self) -> int:
        """Parse arguments if needed and run the stage.

        Returns:
            Exit code (0 for success, 1 when the stage failed).
        """
        if self.args is None:
            self.parse_args()
        if getattr(self.args, "debug", False):
            get_logger().setLevel(logging.DEBUG)

        try:
            with StageTimer(self.stage_name):
                self.execute(self.args)
        except self.handled_errors + (OSError,) as e:
            logger.exception(f"[{self.stage_name}] {type(e).__name__}: {e}")
            return 1
        return 0
