"""Logging setup for library and CLI use."""

import logging
import sys
from typing import Optional

from pythonjsonlogger import jsonlogger

PLAIN_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
JSON_FORMAT = "%(asctime)s %(levelname)s %(name)s %(message)s"


def configure_logging(level: str = "INFO", json_format: bool = False,
                      stream: Optional[object] = None) -> logging.Logger:
    """
    Install a single stream handler on the `effdid` logger.

    Args:
        level: Logging level name
        json_format: Emit one JSON object per record instead of plain text
        stream: Target stream (defaults to stderr)

    Returns:
        The configured package logger
    """
    logger = logging.getLogger("effdid")
    logger.setLevel(level.upper())

    for handler in list(logger.handlers):
        logger.removeHandler(handler)

    handler = logging.StreamHandler(stream or sys.stderr)
    if json_format:
        handler.setFormatter(jsonlogger.JsonFormatter(JSON_FORMAT))
    else:
        handler.setFormatter(logging.Formatter(PLAIN_FORMAT))
    logger.addHandler(handler)
    logger.propagate = False
    return logger
