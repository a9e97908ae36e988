"""Logging configuration module."""

import logging
import os
import sys
from logging.handlers import TimedRotatingFileHandler
from pathlib import Path
from typing import Optional

LOG_LEVEL_ENV = "BIASFST_LOG"


def resolve_level(level: Optional[str | int] = None) -> int:
    """Resolve the effective logging level.

    The ``BIASFST_LOG`` environment variable wins over the given level.

    Args:
        level: Level name (e.g. "DEBUG") or numeric level. None means INFO.

    Returns:
        Numeric logging level.
    """
    env_level = os.environ.get(LOG_LEVEL_ENV)
    if env_level:
        level = env_level
    if level is None:
        return logging.INFO
    if isinstance(level, int):
        return level
    return getattr(logging, level.strip().upper(), logging.INFO)


def setup_logger(
    name: str = "biasfst",
    log_file: Optional[str] = None,
    level: Optional[str | int] = None,
) -> logging.Logger:
    """Set up and configure logger.

    Args:
        name: Logger name.
        log_file: Path to log file. If None, logs only to console.
        level: Logging level name or number; overridden by BIASFST_LOG.

    Returns:
        Configured logger instance.
    """
    logger = logging.getLogger(name)
    logger.setLevel(resolve_level(level))

    # Clear existing handlers
    logger.handlers.clear()

    formatter = logging.Formatter(
        "%(asctime)s | %(levelname)-8s | %(name)s | %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    )

    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setFormatter(formatter)
    logger.addHandler(console_handler)

    if log_file:
        log_path = Path(log_file)
        log_path.parent.mkdir(parents=True, exist_ok=True)

        file_handler = TimedRotatingFileHandler(
            log_path,
            when="midnight",
            interval=1,
            backupCount=30,
            encoding="utf-8",
        )
        file_handler.setFormatter(formatter)
        logger.addHandler(file_handler)

    return logger


# Default logger instance
logger = setup_logger()
