"""
Adversarial Go Lab - Command Logging Middleware
"""

import functools
import time
from typing import Callable

import structlog
import typer

from utils.errors import GoLabError

logger = structlog.get_logger(__name__)

IO_ERROR_EXIT = 3


def logged_command(name: str) -> Callable:
    """Wrap a CLI command with start/finish logging and exit-code mapping"""

    def decorator(func: Callable) -> Callable:
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            start_time = time.time()
            logger.info("Command started", command=name)
            try:
                result = func(*args, **kwargs)
            except typer.Exit:
                raise
            except GoLabError as e:
                logger.error(
                    "Command failed",
                    command=name,
                    error=str(e),
                    error_type=type(e).__name__,
                    exit_code=e.exit_code,
                    process_time=f"{time.time() - start_time:.3f}s",
                )
                raise typer.Exit(code=e.exit_code)
            except OSError as e:
                logger.error(
                    "Command failed",
                    command=name,
                    error=str(e),
                    exit_code=IO_ERROR_EXIT,
                    process_time=f"{time.time() - start_time:.3f}s",
                )
                raise typer.Exit(code=IO_ERROR_EXIT)

            logger.info(
                "Command completed",
                command=name,
                process_time=f"{time.time() - start_time:.3f}s",
            )
            return result

        return wrapper

    return decorator
