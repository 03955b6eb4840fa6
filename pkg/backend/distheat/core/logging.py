"""Structured logging for the toolkit: JSON lines on stderr, console lines with --debug"""

import logging
import sys
from typing import Any, Optional

import numpy as np
import structlog

from distheat.core.config import settings

QUIET_LOGGERS = ("matplotlib", "joblib", "PIL")


def numpy_to_json(_, __, event_dict: dict) -> dict:
    """Log numpy scalars and small arrays as plain JSON values"""
    for key, value in event_dict.items():
        if isinstance(value, np.generic):
            event_dict[key] = value.item()
        elif isinstance(value, np.ndarray) and value.size <= 16:
            event_dict[key] = value.tolist()
    return event_dict


def configure_logging(
    debug: Optional[bool] = None, level: Optional[str] = None, **context: Any
) -> structlog.stdlib.BoundLogger:
    """
    Configure structlog once per process.

    ``context`` (e.g. the CLI subcommand) is bound to every event the calling
    thread emits afterwards.
    """
    debug = settings.DEBUG if debug is None else debug
    level = level or ("DEBUG" if debug else settings.LOG_LEVEL)

    # stdout carries CLI results
    logging.basicConfig(
        format="%(message)s",
        stream=sys.stderr,
        level=getattr(logging, level.upper(), logging.INFO),
        force=True,
    )
    for name in QUIET_LOGGERS:
        logging.getLogger(name).setLevel(logging.WARNING)

    structlog.configure(
        processors=[
            structlog.contextvars.merge_contextvars,
            structlog.stdlib.filter_by_level,
            structlog.stdlib.add_logger_name,
            structlog.stdlib.add_log_level,
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.processors.format_exc_info,
            numpy_to_json,
            (
                structlog.dev.ConsoleRenderer(colors=False)
                if debug
                else structlog.processors.JSONRenderer(sort_keys=True)
            ),
        ],
        wrapper_class=structlog.stdlib.BoundLogger,
        context_class=dict,
        logger_factory=structlog.stdlib.LoggerFactory(),
        cache_logger_on_first_use=True,
    )

    structlog.contextvars.clear_contextvars()
    structlog.contextvars.bind_contextvars(toolkit=settings.APP_NAME, version=settings.VERSION, **context)
    return structlog.get_logger("distheat")
