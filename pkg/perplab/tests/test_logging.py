"""
Tests for the structured JSON log setup.
"""
import json
import logging

import numpy as np
import pytest
import structlog

from src import __version__
from src.utils.logging_config import configure_logging


@pytest.fixture
def restore_logging():
    root = logging.getLogger()
    handlers, level = root.handlers[:], root.level
    yield
    for handler in root.handlers:
        handler.close()
    root.handlers, root.level = handlers, level
    logging.captureWarnings(False)
    structlog.reset_defaults()
    structlog.contextvars.clear_contextvars()


def _records(path):
    for handler in logging.getLogger().handlers:
        handler.flush()
    return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]


def test_log_lines_are_json_with_run_context(tmp_path, restore_logging):
    """Test that structlog and stdlib records land in the file as JSON with version, pid and bound context."""
    log_file = tmp_path / "logs" / "perplab.log"
    configure_logging("INFO", str(log_file))
    structlog.contextvars.bind_contextvars(command="spectral", law_hash="abc123")

    structlog.get_logger("perplab.test").info("solved", kappa=np.float64(1.125), nodes=np.arange(3))
    logging.getLogger("src.services.test").warning("censored %d replicates", 4)

    first, second = _records(log_file)
    assert first["event"] == "solved"
    assert first["kappa"] == 1.125
    assert first["nodes"] == [0, 1, 2]
    assert first["perplab_version"] == __version__
    assert isinstance(first["pid"], int)
    assert first["command"] == "spectral" and first["law_hash"] == "abc123"
    assert second["event"] == "censored 4 replicates"
    assert second["level"] == "warning"


def test_debug_is_filtered_at_info(tmp_path, restore_logging):
    """Test that the configured level drops lower records."""
    log_file = tmp_path / "run.log"
    configure_logging("info", str(log_file))
    logging.getLogger("src.services.test").debug("hidden")
    logging.getLogger("src.services.test").info("shown")
    assert [r["event"] for r in _records(log_file)] == ["shown"]


def test_large_arrays_are_summarized(tmp_path, restore_logging):
    """Test that big arrays are logged by shape rather than by value."""
    log_file = tmp_path / "run.log"
    configure_logging("INFO", str(log_file))
    structlog.get_logger("perplab.test").info("grid", points=np.zeros((200, 2)))
    assert _records(log_file)[0]["points"] == "ndarray(200, 2)"
