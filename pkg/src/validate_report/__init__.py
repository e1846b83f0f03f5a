#!/usr/bin/env python3
"""
Module to validate traitscale JSON reports against their schemas.

Schemas live in ``doc/<name>_schema.json``. Stages call ``check_report``
before writing, so an invalid report fails the stage.
"""

import json
import sys
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import jsonschema

from logging_utils import get_logger
from traitscale.config import SCHEMA_DIR

# Set up logging
logger = get_logger("traitscale.validate_report")


class ReportValidationError(ValueError):
    """Raised when a report does not conform to its schema."""


def load_json_file(file_path: Union[str, Path]) -> Dict[str, Any]:
    """Load a JSON file.

    Raises:
        FileNotFoundError: If the file does not exist.
        json.JSONDecodeError: If the file is not valid JSON.
    """
    logger.debug(f"Loading JSON file: {file_path}")
    with open(file_path, 'r', encoding="utf-8") as f:
        return json.load(f)


def schema_path(name: str) -> Path:
    """Path of the bundled schema for report type ``name``."""
    return SCHEMA_DIR / f"{name}_schema.json"


def validate_against_schema(data: Dict[str, Any], schema: Dict[str, Any]) -> Tuple[bool, Optional[str]]:
    """Validate JSON data against a JSON schema.

    Args:
        data: The JSON data to validate.
        schema: The JSON schema.

    Returns:
        A tuple containing:
            - A boolean indicating whether validation was successful.
            - An error message if validation failed, None otherwise.
    """
    try:
        jsonschema.validate(instance=data, schema=schema)
        logger.debug("Validation successful")
        return True, None
    except jsonschema.exceptions.ValidationError as e:
        logger.warning(f"Validation failed: {e.message}")
        return False, str(e)
    except jsonschema.exceptions.SchemaError as e:
        logger.error(f"Invalid schema: {e.message}")
        return False, f"Invalid schema: {e}"


def check_report(data: Dict[str, Any], name: str) -> None:
    """Validate ``data`` against the bundled schema ``name``.

    Raises:
        ReportValidationError: If the report does not conform.
    """
    ok, message = validate_against_schema(data, load_json_file(schema_path(name)))
    if not ok:
        raise ReportValidationError(f"{name} report failed validation: {message}")


def write_report(data: Dict[str, Any], path: Union[str, Path], name: str) -> None:
    """Validate and write a report as indented JSON."""
    check_report(data, name)
    with open(path, 'w', encoding="utf-8") as f:
        json.dump(data, f, indent=2)
    logger.info(f"Wrote {name} report to {path}")


def validate_report_file(report_path: Union[str, Path], schema_file: Union[str, Path]
                         ) -> Tuple[bool, Optional[str]]:
    """Validate a report file against a schema file.

    Returns:
        (True, None) when valid, otherwise (False, error message).
    """
    logger.info(f"Validating report: {report_path}")
    logger.info(f"Using schema: {schema_file}")
    try:
        return validate_against_schema(load_json_file(report_path), load_json_file(schema_file))
    except FileNotFoundError as e:
        logger.error(f"File not found: {e}")
        return False, f"File not found: {e}"
    except json.JSONDecodeError as e:
        logger.error(f"Invalid JSON: {e}")
        return False, f"Invalid JSON: {e}"


def main() -> int:
    """Command-line interface for validating reports.

    Returns:
        Exit code (0 for success, non-zero for failure).
    """
    import argparse

    parser = argparse.ArgumentParser(description="Validate a traitscale JSON report against its schema.")
    parser.add_argument("--report", required=True, help="Path to the report JSON file")
    parser.add_argument("--schema", help="Path to the JSON schema file")
    parser.add_argument("--type", dest="report_type",
                        help="Bundled schema name (e.g. gapfill_report, run_manifest)")
    args = parser.parse_args()
    if not args.schema and not args.report_type:
        parser.error("one of --schema or --type is required")

    schema_file = args.schema or schema_path(args.report_type)
    ok, message = validate_report_file(args.report, schema_file)
    if ok:
        logger.info(f"Report is valid: {args.report}")
        return 0
    logger.error(f"Error: {message}")
    return 1


if __name__ == "__main__":
    sys.exit(main())
