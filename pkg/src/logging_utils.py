"""
This module provides utilities for setting up logging across the main process and decode
worker processes through a multiprocessing queue, plus a small JSON-lines writer used for
structured training logs and decode outputs.
"""

import json
import logging
import multiprocessing
import os
import time
from collections.abc import Iterator
from logging import INFO, FileHandler, Formatter, StreamHandler, getLogger
from logging.handlers import QueueHandler
from pathlib import Path
from types import TracebackType

# Environment variable that sets the log verbosity.
LOG_LEVEL_ENV = "ORTHROS_LOG_LEVEL"

LOG_FORMAT = "%(asctime)s - %(processName)s - %(levelname)s - %(message)s"


def get_log_level(level_str: str | None) -> int:
    """
    Converts a log level string to a logging level constant.

    Args:
        level_str (str | None): The log level name (e.g., "DEBUG", "INFO", "WARNING").

    Returns:
        int: The corresponding logging level constant. Defaults to INFO if the string is not recognized.
    """
    level = getattr(logging, (level_str or "").upper(), INFO)
    return level if isinstance(level, int) else INFO


def level_from_env(default: str = "INFO") -> int:
    """Reads the log level from ORTHROS_LOG_LEVEL, falling back to `default`."""
    return get_log_level(os.environ.get(LOG_LEVEL_ENV, default))


def setup_logging(queue: multiprocessing.Queue, log_level: int) -> None:
    """
    Configures logging for worker processes to send log records to a multiprocessing queue,
    so that all processes log through the handlers of the main process.

    Args:
        queue (multiprocessing.Queue): The queue to which log records will be sent.
        log_level (int): The minimum logging level for messages to be processed.
    """
    logger = getLogger()
    logger.setLevel(log_level)
    logger.handlers = [QueueHandler(queue)]


def setup_main_logging(log_level: int, log_dir: str | Path | None = None) -> multiprocessing.Queue:
    """
    Configures logging in the main process with a console handler and, when `log_dir` is
    given, a timestamped log file in it, replacing any handlers already on the root logger.
    Returns a queue for worker-process records.

    Args:
        log_level (int): The minimum logging level for messages to be processed.
        log_dir (str | Path | None): Directory for the log file; no file is written if None.

    Returns:
        multiprocessing.Queue: A queue to which worker processes can send their log records.
    """
    log_queue = multiprocessing.Queue(-1)
    formatter = Formatter(LOG_FORMAT)

    handlers: list[logging.Handler] = [StreamHandler()]
    if log_dir is not None:
        os.makedirs(log_dir, exist_ok=True)
        handlers.append(
            FileHandler(os.path.join(log_dir, f"{time.strftime('%Y%m%d_%H%M%S')}.log"), mode="w", encoding="utf-8")
        )

    logger = getLogger()
    logger.setLevel(log_level)
    logger.handlers.clear()
    for handler in handlers:
        handler.setFormatter(formatter)
        logger.addHandler(handler)
    return log_queue


class JsonLinesWriter:
    """
    Appends one compact JSON object per line and flushes after every record.

    Usage:
        with JsonLinesWriter("train_log.jsonl") as log:
            log.write({"step": 1, "loss_total": 3.2})
    """

    def __init__(self, path: str | Path, append: bool = False):
        self.path = Path(path)
        self.append = append
        self._file = None
        self.count = 0

    def __enter__(self) -> "JsonLinesWriter":
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._file = open(self.path, "a" if self.append else "w", encoding="utf-8")
        return self

    def write(self, record: dict) -> None:
        if self._file is None:
            raise RuntimeError(f"JsonLinesWriter for {self.path} is not open.")
        self._file.write(json.dumps(record, separators=(",", ":")) + "\n")
        self._file.flush()
        self.count += 1

    def __exit__(
        self,
        exc_type: type[BaseException] | None,
        exc: BaseException | None,
        tb: TracebackType | None,
    ) -> None:
        if self._file is not None:
            self._file.close()
            self._file = None


def read_json_lines(path: str | Path) -> Iterator[dict]:
    """Yields the records of a JSON-lines file, skipping blank lines."""
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                yield json.loads(line)
