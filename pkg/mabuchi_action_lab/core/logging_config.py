from __future__ import annotations

import logging
import sys

import structlog

from .settings import settings


def _renderer(log_format: str) -> structlog.typing.Processor:
    if log_format == "json":
        return structlog.processors.JSONRenderer(sort_keys=True)
    return structlog.dev.ConsoleRenderer(
        colors=sys.stderr.isatty(),
        pad_level=False,
        exception_formatter=structlog.dev.plain_traceback,
    )


def setup_logging(level: str | None = None, log_format: str | None = None) -> None:
    """Route stdlib logging through structlog on stderr.

    Args:
        level: Level name; defaults to ``MAL_LOG_LEVEL`` (DEBUG when ``MAL_DEBUG``).
        log_format: ``console`` or ``json``; defaults to ``MAL_LOG_FORMAT``.
    """
    fmt = log_format or settings.log_format
    tail: list[structlog.typing.Processor] = [
        structlog.processors.TimeStamper(fmt="iso", utc=fmt == "json"),
    ]
    if fmt == "json":
        tail.append(structlog.processors.dict_tracebacks)
    formatter = structlog.stdlib.ProcessorFormatter(
        foreign_pre_chain=[
            structlog.stdlib.ExtraAdder(),
            structlog.stdlib.add_logger_name,
        ],
        processors=[
            structlog.stdlib.ProcessorFormatter.remove_processors_meta,
            structlog.contextvars.merge_contextvars,
            structlog.processors.add_log_level,
            structlog.processors.StackInfoRenderer(),
            *tail,
            _renderer(fmt),
        ],
    )

    root_logger = logging.getLogger()
    root_logger.handlers.clear()

    # stdout carries result records only
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(formatter)
    root_logger.addHandler(handler)

    resolved = (level or ("DEBUG" if settings.debug else settings.log_level)).upper()
    root_logger.setLevel(getattr(logging, resolved, logging.INFO))
