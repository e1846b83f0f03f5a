"""Command-line interface for traitscale.

``traitscale <command> [args]`` runs one pipeline stage, a full run, a manifest
check or a report. The command is read by a pre-parser; the matching stage
processor then contributes its own arguments to the main parser.
"""

import argparse
import importlib
import sys
from typing import Dict, Optional, Sequence, Tuple

from logging_utils import get_logger
from stage_processor import StageProcessor

logger = get_logger("traitscale.cli")

# Map command names to processor module and class names
PROCESSOR_MAP: Dict[str, Dict[str, str]] = {
    "synth": {"module": "synthetic_world", "class": "SynthProcessor"},
    "clean": {"module": "trait_table", "class": "CleanProcessor"},
    "gapfill": {"module": "gapfill", "class": "GapfillProcessor"},
    "features": {"module": "raster_features", "class": "FeaturesProcessor"},
    "classify": {"module": "pft_downscale", "class": "ClassifyProcessor"},
    "cwm": {"module": "cwm", "class": "CwmProcessor"},
    "train": {"module": "trait_regress", "class": "TrainProcessor"},
    "predict": {"module": "trait_regress", "class": "PredictProcessor"},
    "evaluate": {"module": "trait_regress", "class": "EvaluateProcessor"},
    "run": {"module": "traitscale.main", "class": "RunProcessor"},
    "verify": {"module": "traitscale.main", "class": "VerifyProcessor"},
    "report": {"module": "run_report", "class": "ReportProcessor"},
}


def get_processor_instance(cmd: Optional[str]) -> Optional[StageProcessor]:
    """Import and instantiate the StageProcessor registered for ``cmd``."""
    if not cmd or cmd not in PROCESSOR_MAP:
        return None

    proc_info = PROCESSOR_MAP[cmd]
    try:
        module = importlib.import_module(proc_info["module"])
        ProcessorClass = getattr(module, proc_info["class"])
        # Arguments are parsed by the main parser below
        processor = ProcessorClass(args=None)
        if not isinstance(processor, StageProcessor):
            raise TypeError(f"{proc_info['class']} is not a subclass of StageProcessor")
        return processor
    except (ImportError, AttributeError, TypeError) as e:
        logger.error(f"Error loading processor for command '{cmd}': {e}")
        return None


def parse_args(args: Optional[Sequence[str]] = None
               ) -> Tuple[argparse.Namespace, Optional[StageProcessor]]:
    """Parse the command and its processor-specific arguments.

    Args:
        args: Command line arguments. Defaults to None, which uses sys.argv[1:].

    Returns:
        The parsed arguments and the processor of the command.
    """
    if args is None:
        args = sys.argv[1:]

    pre_parser = argparse.ArgumentParser(add_help=False)
    pre_parser.add_argument("command", nargs="?")
    known_pre_args, _ = pre_parser.parse_known_args(args)
    cmd = known_pre_args.command

    processor = get_processor_instance(cmd)

    parser = argparse.ArgumentParser(
        prog="traitscale",
        description="traitscale - upscale in-situ leaf traits to gridded trait maps.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument("command", choices=list(PROCESSOR_MAP.keys()),
                        help="Pipeline stage or action to run")
    StageProcessor.add_common_arguments(parser)
    processor_group = parser.add_argument_group(f"{cmd} arguments" if processor
                                                else "command arguments")
    if processor:
        processor.add_arguments(processor_group)
    else:
        processor_group.description = "Arguments of the selected command appear here."

    return parser.parse_args(args), processor


def main(args: Optional[Sequence[str]] = None) -> int:
    """Run one command.

    Returns:
        Exit code (0 for success, non-zero for failure).
    """
    parsed, processor = parse_args(args)
    if processor is None:
        logger.error(f"Command '{parsed.command}' could not be loaded")
        return 1
    processor.args = parsed
    return processor.run()


def cli() -> int:
    """Console-script entry point."""
    return main()


if __name__ == "__main__":
    sys.exit(cli())
