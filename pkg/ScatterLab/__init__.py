"""
ScatterLab : laboratoire numérique du diffuseur ponctuel sur le 3-tore avec quasi-impulsion.

Le paquet configure la journalisation loguru à l'import : une sortie console au niveau INFO
et un fichier journal quotidien au niveau DEBUG.
"""

import os
import sys
from pathlib import Path

from loguru import logger

LOG_FORMAT = "{time:YYYY-MM-DD HH:mm:ss.SSS} | {level: <8} | {name}:{function}:{line} - {message}"

# Drop loguru's default stderr sink so records are not printed twice
logger.remove()

# Console handler at INFO level (can be reconfigured to DEBUG with --debug flag)
_console_handler_id = logger.add(sys.stderr, level="INFO", format=LOG_FORMAT)

# Log directory can be moved with SCATTER_LOG_DIR (useful for batch jobs and tests)
LOG_DIR = Path(os.environ.get("SCATTER_LOG_DIR", "./logs"))
LOG_DIR.mkdir(parents=True, exist_ok=True)

# File handler at DEBUG level (always DEBUG)
_file_handler_id = logger.add(
    f"{LOG_DIR}/scatterlab_{{time:YYYY-MM-DD}}.log",
    rotation="00:00",  # Rotate at midnight
    retention="365 days",  # Keep 365 days of logs
    level="DEBUG",
    format=LOG_FORMAT,
)


def enable_debug_console():
    """Reconfigure console logger to DEBUG level."""
    global _console_handler_id
    logger.remove(_console_handler_id)
    _console_handler_id = logger.add(sys.stderr, level="DEBUG", format=LOG_FORMAT)


from ScatterLab.utils.version import __VERSION__  # noqa: E402

__all__ = ["__VERSION__", "enable_debug_console"]
