import logging
import os
import time

from dotenv import load_dotenv

from fchc.config import defaults
from fchc.utils.logging_config import setup_logger

load_dotenv()


def _generate_timestamped_file_name(file_name_format):
    timestamp = time.strftime("%Y-%m-%d_%H-%M-%S", time.localtime())
    return file_name_format.format(timestamp)


CURRENT_LOG_NAME = _generate_timestamped_file_name("log_{}.txt")

_logger: logging.Logger | None = None


def _get_logger() -> logging.Logger:
    global _logger
    if _logger is None:
        # the log file is only written when a log directory is configured
        log_file_name = CURRENT_LOG_NAME if os.getenv("LOG_DIR_PATH") else None
        _logger = setup_logger("fchc", log_file_name=log_file_name, verbose=defaults.VERBOSE)
    return _logger


def set_verbose(verbose: bool) -> None:
    global _logger
    defaults.VERBOSE = verbose
    _logger = None


def log(message):
    _get_logger().info(message)


def log_verbose(message):
    _get_logger().debug(message)


def get_worker_count() -> int:
    """Number of parallel workers, capped by FCHC_THREADS."""
    raw = os.getenv("FCHC_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        log(f"Ignoring invalid FCHC_THREADS value '{raw}', running with a single worker.")
        return 1
