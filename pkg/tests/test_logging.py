import logging

import pytest

from tpgsr.logging import TPGSRLogger


def test_logger_is_singleton():
    assert TPGSRLogger.get_logger() is TPGSRLogger()


def test_set_level():
    logger = TPGSRLogger.get_logger()
    logger.set_level("warning")
    assert logger.level == logging.WARNING
    logger.set_level("DEBUG")
    assert logger.level == logging.DEBUG


def test_invalid_level():
    with pytest.raises(ValueError):
        TPGSRLogger.get_logger().set_level("LOUD")


def test_file_handler_round_trip(tmp_path):
    logger = TPGSRLogger.get_logger()
    path = tmp_path / "run.log"
    handler = logger.add_file_handler(str(path))
    try:
        logger.info("stage 2 finished")
        logger.debug("detail line")
    finally:
        logger.remove_file_handler(handler)
    logger.info("not in the file")
    text = path.read_text()
    assert "stage 2 finished" in text
    assert "detail line" in text
    assert "not in the file" not in text


def test_file_handler_level(tmp_path):
    logger = TPGSRLogger.get_logger()
    path = tmp_path / "errors.log"
    handler = logger.add_file_handler(str(path), level="ERROR")
    try:
        logger.warning("only a warning")
        logger.error("a real problem")
    finally:
        logger.remove_file_handler(handler)
    text = path.read_text()
    assert "a real problem" in text
    assert "only a warning" not in text
