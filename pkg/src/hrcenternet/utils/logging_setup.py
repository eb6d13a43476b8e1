"""
Logging setup driven by the ``logging`` config section:

    logging:
      enabled: true      # false keeps only warnings and errors
      log_file: null     # optional plain-text log next to the console output
      verbose: false     # DEBUG instead of INFO
"""

import logging
from pathlib import Path
from typing import Any, Mapping, Optional

from rich.console import Console
from rich.logging import RichHandler

PACKAGE_LOGGER = "hrcenternet"
_FILE_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def configure_logging(
    settings: Optional[Mapping[str, Any]] = None, console: Optional[Console] = None
) -> logging.Logger:
    settings = settings or {}
    logger = logging.getLogger(PACKAGE_LOGGER)
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()

    if not settings.get("enabled", True):
        level = logging.WARNING
    elif settings.get("verbose", False):
        level = logging.DEBUG
    else:
        level = logging.INFO
    logger.setLevel(level)
    logger.propagate = False

    rich_handler = RichHandler(
        console=console or Console(stderr=True),
        show_path=False,
        rich_tracebacks=False,
    )
    rich_handler.setLevel(level)
    logger.addHandler(rich_handler)

    log_file = settings.get("log_file")
    if log_file:
        Path(log_file).parent.mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(log_file, encoding="utf-8")
        file_handler.setFormatter(logging.Formatter(_FILE_FORMAT))
        file_handler.setLevel(level)
        logger.addHandler(file_handler)
    return logger
