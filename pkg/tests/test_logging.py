import logging as builtin_logging
import logging.handlers as builtin_logging_handlers

import pytest

from pairsim import logging
from pairsim.app import PairsimApp


def test_get_handlers_sets_up_logging_appropriately_with_debug(tmpdir):
    class App:
        config = {
            "PAIRSIM_LOG_PATH": str(tmpdir / "foo"),
            "PAIRSIM_APP_NAME": "bar",
            "PAIRSIM_LOG_LEVEL": "ERROR",
            "PAIRSIM_RUN_ID": "x",
        }
        debug = True

    app = App()

    handlers = logging.get_handlers(app)

    assert len(handlers) == 1
    assert type(handlers[0]) is builtin_logging.StreamHandler
    assert type(handlers[0].formatter) is logging.CustomLogFormatter
    assert not (tmpdir / "foo").exists()


def test_get_handlers_sets_up_logging_appropriately_without_debug(tmpdir):
    class App:
        config = {
            "PAIRSIM_LOG_PATH": str(tmpdir / "foo"),
            "PAIRSIM_APP_NAME": "bar",
            "PAIRSIM_LOG_LEVEL": "ERROR",
            "PAIRSIM_RUN_ID": "x",
        }
        debug = False

    app = App()

    handlers = logging.get_handlers(app)

    assert len(handlers) == 2
    assert type(handlers[0]) is builtin_logging.StreamHandler
    assert type(handlers[0].formatter) is logging.JSONFormatter
    assert type(handlers[1]) is builtin_logging_handlers.WatchedFileHandler
    assert type(handlers[1].formatter) is logging.JSONFormatter
    assert [p.basename for p in tmpdir.listdir()] == ["foo.json"]
    handlers[1].close()


def test_get_handlers_without_log_path_only_streams():
    app = PairsimApp("handlers-test", {"PAIRSIM_LOG_LEVEL": "INFO"})

    handlers = logging.get_handlers(app)

    assert len(handlers) == 1
    assert handlers[0].level == builtin_logging.INFO


def test_ensure_log_path_exists_creates_parent_directories(tmp_path):
    logging.ensure_log_path_exists(str(tmp_path / "a" / "b" / "run.log"))
    logging.ensure_log_path_exists(str(tmp_path / "a" / "b" / "run.log"))

    assert (tmp_path / "a" / "b").is_dir()
    assert not (tmp_path / "a" / "b" / "run.log").exists()


def test_json_formatter_renames_fields():
    record = {"asctime": "2024-01-01T00:00:00", "run_id": "abc", "app_name": "pairsim", "message": 12}

    processed = logging.JSONFormatter().process_log_record(record)

    assert processed["time"] == "2024-01-01T00:00:00"
    assert processed["runId"] == "abc"
    assert processed["application"] == "pairsim"
    assert processed["logType"] == "application"
    assert processed["message"] == "12"
    assert "asctime" not in processed


def test_custom_formatter_fills_missing_fields_and_formats_message():
    formatter = logging.CustomLogFormatter(logging.LOG_FORMAT, logging.TIME_FORMAT)
    record = builtin_logging.LogRecord("pairsim", builtin_logging.INFO, __file__, 1, "stage {levelname} done", None, None)

    line = formatter.format(record)

    assert "stage INFO done" in line
    assert "None" in line  # app_name and run_id were never stamped


@pytest.mark.parametrize("debugconfig", [True, False])
@pytest.mark.parametrize("level", ["info", "warning", "error", "critical"])
def test_logger_stamps_application_and_run_id(mocker, reset_package_logger, debugconfig, level):
    app = PairsimApp("pairsim", {"PAIRSIM_APP_NAME": "sweep", "PAIRSIM_RUN_ID": "hash-seed"}, debug=debugconfig)
    logging.init_app(app)

    if debugconfig:
        log_spy = mocker.spy(logging.CustomLogFormatter, "format")
    else:
        log_spy = mocker.spy(logging.JSONFormatter, "process_log_record")

    getattr(app.logger, level)("{} from the pipeline".format(level))

    if debugconfig:
        line = log_spy.spy_return
        assert "sweep" in line
        assert "hash-seed" in line
        assert "{} from the pipeline".format(level) in line
    else:
        record = log_spy.spy_return
        assert record["application"] == "sweep"
        assert record["runId"] == "hash-seed"
        assert record["message"] == "{} from the pipeline".format(level)


def test_init_app_sets_level_on_package_logger(reset_package_logger):
    app = PairsimApp("pairsim-level", {"PAIRSIM_LOG_LEVEL": "WARNING"})

    logging.init_app(app)

    assert builtin_logging.getLogger("pairsim").level == builtin_logging.WARNING
    assert app.logger.level == builtin_logging.WARNING
    assert app.logger.propagate is False
