"""Logging configuration for the command-line entry points."""
import logging
import os

from src.utils.settings import LOG_DIR, LOG_LEVEL


def setup_logging(name: str) -> None:
    """Send log records to ``<LOG_DIR>/<name>.log`` and to the console."""
    # Create logs directory if it doesn't exist
    os.makedirs(LOG_DIR, exist_ok=True)

    logging.basicConfig(
        level=getattr(logging, LOG_LEVEL.upper(), logging.INFO),
        format='%(asctime)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(os.path.join(LOG_DIR, f"{name}.log")),
            logging.StreamHandler()
        ]
    )
