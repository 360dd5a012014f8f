"""Command-line entry point."""
import logging
import sys
from typing import List, Optional

import torch

from src.config import settings
from src.routes.cli import dispatch

logger = logging.getLogger(__name__)


def configure_runtime() -> None:
    """Logging and torch thread settings from the process settings."""
    logging.basicConfig(
        level=getattr(logging, settings.fps_log_level.upper(), logging.INFO),
        format=settings.fps_log_format,
    )
    if settings.fps_threads > 0:
        torch.set_num_threads(settings.fps_threads)
        logger.debug(f"torch limited to {settings.fps_threads} threads")


def main(argv: Optional[List[str]] = None) -> int:
    """Run one ``fps`` command and return its exit status."""
    configure_runtime()
    return dispatch(argv)


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
