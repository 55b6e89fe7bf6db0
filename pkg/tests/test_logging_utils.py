"""
This module contains unit tests for the logging utilities: log level parsing, queue-based
worker logging, main-process handlers, and the JSON-lines writer and reader.
"""

import json
import logging
import multiprocessing
from logging.handlers import QueueHandler

import pytest

from logging_utils import (
    LOG_LEVEL_ENV,
    JsonLinesWriter,
    get_log_level,
    level_from_env,
    read_json_lines,
    setup_logging,
    setup_main_logging,
)


@pytest.fixture(autouse=True)
def reset_logging_handlers():
    """
    Clears root handlers and restores the root level around each test, so that each test
    runs with a clean logging configuration.
    """
    root = logging.getLogger()
    level = root.level
    saved = list(root.handlers)
    root.handlers.clear()

    yield

    for handler in root.handlers:
        handler.close()
    root.handlers[:] = saved
    root.setLevel(level)


@pytest.mark.parametrize(
    "level_str, expected_level",
    [
        ("DEBUG", logging.DEBUG),
        ("INFO", logging.INFO),
        ("WARNING", logging.WARNING),
        ("ERROR", logging.ERROR),
        ("CRITICAL", logging.CRITICAL),
        ("debug", logging.DEBUG),
        ("warning", logging.WARNING),
    ],
)
def test_get_log_level_valid_levels(level_str, expected_level):
    """
    Tests `get_log_level` for valid log level strings (case-insensitive).
    """
    assert get_log_level(level_str) == expected_level


@pytest.mark.parametrize("level_str", ["INVALID", "", None, "basicConfig"])
def test_get_log_level_invalid_levels(level_str):
    """
    Tests that unknown names, empty values and logging attributes that are not levels
    fall back to INFO.
    """
    assert get_log_level(level_str) == logging.INFO


def test_level_from_env(monkeypatch):
    monkeypatch.setenv(LOG_LEVEL_ENV, "debug")
    assert level_from_env() == logging.DEBUG
    monkeypatch.delenv(LOG_LEVEL_ENV)
    assert level_from_env("ERROR") == logging.ERROR


def test_worker_records_go_through_the_queue():
    """
    Tests that a process configured with `setup_logging` forwards its records to the queue.
    """
    log_queue = multiprocessing.Queue(-1)
    setup_logging(log_queue, logging.INFO)
    root = logging.getLogger()
    assert len(root.handlers) == 1
    assert isinstance(root.handlers[0], QueueHandler)

    logging.debug("dropped")
    logging.info("decoded 3 utterances")
    record = log_queue.get(timeout=5)
    assert record.getMessage() == "decoded 3 utterances"
    assert record.levelno == logging.INFO


def test_main_logging_console_only():
    log_queue = setup_main_logging(logging.WARNING)
    root = logging.getLogger()
    assert root.level == logging.WARNING
    assert [type(h) for h in root.handlers] == [logging.StreamHandler]
    assert log_queue is not None


def test_main_logging_replaces_previous_handlers(tmp_path):
    """
    Tests that configuring the main process twice leaves one set of handlers, not two.
    """
    setup_main_logging(logging.INFO, tmp_path)
    setup_main_logging(logging.INFO, tmp_path)
    handler_types = [type(h) for h in logging.getLogger().handlers]
    assert handler_types == [logging.StreamHandler, logging.FileHandler]


def test_main_logging_writes_a_file(tmp_path):
    """
    Tests that a log directory receives a timestamped log file in the shared format.
    """
    setup_main_logging(logging.INFO, tmp_path / "logs")
    logging.info("epoch 1 done")
    for handler in logging.getLogger().handlers:
        handler.flush()
    (log_file,) = (tmp_path / "logs").glob("*.log")
    line = log_file.read_text(encoding="utf-8").strip()
    assert line.endswith(" - MainProcess - INFO - epoch 1 done")


def test_json_lines_writer(tmp_path):
    path = tmp_path / "nested" / "train_log.jsonl"
    with JsonLinesWriter(path) as log:
        log.write({"step": 1, "loss_total": 3.5})
        log.write({"step": 2, "loss_components": {"cmlm": 2.0}})
        assert log.count == 2
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == '{"step":1,"loss_total":3.5}'
    assert json.loads(lines[1])["loss_components"] == {"cmlm": 2.0}


def test_json_lines_writer_append(tmp_path):
    path = tmp_path / "log.jsonl"
    with JsonLinesWriter(path) as log:
        log.write({"a": 1})
    with JsonLinesWriter(path, append=True) as log:
        log.write({"a": 2})
    assert [r["a"] for r in read_json_lines(path)] == [1, 2]


def test_json_lines_writer_closed(tmp_path):
    writer = JsonLinesWriter(tmp_path / "log.jsonl")
    with pytest.raises(RuntimeError, match="not open"):
        writer.write({"a": 1})


def test_read_json_lines_skips_blank_lines(tmp_path):
    path = tmp_path / "records.jsonl"
    path.write_text('{"id": 0}\n\n  \n{"id": 1}\n', encoding="utf-8")
    assert list(read_json_lines(path)) == [{"id": 0}, {"id": 1}]
