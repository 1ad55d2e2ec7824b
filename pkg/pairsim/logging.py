import logging
import logging.handlers
import re
import sys
from itertools import product
from pathlib import Path

from pythonjsonlogger.jsonlogger import JsonFormatter as BaseJSONFormatter

LOG_FORMAT = "%(asctime)s %(app_name)s %(name)s %(levelname)s " '%(run_id)s "%(message)s" [in %(pathname)s:%(lineno)d]'
TIME_FORMAT = "%Y-%m-%dT%H:%M:%S"

logger = logging.getLogger(__name__)


def init_app(app):
    app.config.setdefault("PAIRSIM_LOG_LEVEL", "INFO")
    app.config.setdefault("PAIRSIM_APP_NAME", "pairsim")
    app.config.setdefault("PAIRSIM_RUN_ID", "no-run-id")

    logging.getLogger().addHandler(logging.NullHandler())

    del app.logger.handlers[:]

    if app.config.get("PAIRSIM_LOG_PATH"):
        ensure_log_path_exists(app.config["PAIRSIM_LOG_PATH"])
    handlers = get_handlers(app)
    loglevel = logging.getLevelName(app.config["PAIRSIM_LOG_LEVEL"])
    loggers = [app.logger, logging.getLogger("pairsim")]
    for current_logger, handler in product(loggers, handlers):
        if handler not in current_logger.handlers:
            current_logger.addHandler(handler)
        current_logger.setLevel(loglevel)
        current_logger.propagate = False
    logging.getLogger("matplotlib").setLevel(logging.WARNING)
    app.logger.debug("Logging configured")


def ensure_log_path_exists(path):
    """
    This function assumes you're passing a path to a file and attempts to create
    the path leading to that file.
    """
    try:
        Path(path).parent.mkdir(mode=0o755, parents=True)
    except FileExistsError:
        pass


def get_handlers(app):
    handlers = []
    standard_formatter = CustomLogFormatter(LOG_FORMAT, TIME_FORMAT)
    json_formatter = JSONFormatter(LOG_FORMAT, TIME_FORMAT)

    # stderr keeps stdout free for command results
    stream_handler = logging.StreamHandler(sys.stderr)
    if not app.debug:
        handlers.append(configure_handler(stream_handler, app, json_formatter))
        if app.config.get("PAIRSIM_LOG_PATH"):
            file_handler = logging.handlers.WatchedFileHandler(filename="{}.json".format(app.config["PAIRSIM_LOG_PATH"]))
            handlers.append(configure_handler(file_handler, app, json_formatter))
    else:
        handlers.append(configure_handler(stream_handler, app, standard_formatter))

    return handlers


def configure_handler(handler, app, formatter):
    handler.setLevel(logging.getLevelName(app.config["PAIRSIM_LOG_LEVEL"]))
    handler.setFormatter(formatter)
    handler.addFilter(AppNameFilter(app.config["PAIRSIM_APP_NAME"]))
    handler.addFilter(RunIdFilter(app.config["PAIRSIM_RUN_ID"]))

    return handler


class AppNameFilter(logging.Filter):
    def __init__(self, app_name):
        self.app_name = app_name

    def filter(self, record):
        record.app_name = self.app_name

        return record


class RunIdFilter(logging.Filter):
    """Stamps each record with the run identifier (config hash and seed) of the current pipeline run."""

    def __init__(self, run_id):
        self.run_id = run_id

    def filter(self, record):
        record.run_id = getattr(record, "run_id", None) or self.run_id

        return record


class CustomLogFormatter(logging.Formatter):
    """Accepts a format string for the message and formats it with the extra fields"""

    FORMAT_STRING_FIELDS_PATTERN = re.compile(r"\((.+?)\)", re.IGNORECASE)

    def add_fields(self, record):
        if self._fmt is None:
            raise TypeError("self._fmt is None")
        for field in self.FORMAT_STRING_FIELDS_PATTERN.findall(self._fmt):
            record.__dict__[field] = record.__dict__.get(field)
        return record

    def format(self, record):
        record = self.add_fields(record)
        try:
            record.msg = str(record.msg).format(**record.__dict__)
        except (KeyError, IndexError, ValueError) as e:
            logger.exception("failed to format log message: {} not found".format(e))

        return super(CustomLogFormatter, self).format(record)


class JSONFormatter(BaseJSONFormatter):
    def process_log_record(self, log_record):
        rename_map = {
            "asctime": "time",
            "run_id": "runId",
            "app_name": "application",
        }
        for key, newkey in rename_map.items():
            log_record[newkey] = log_record.pop(key, None)
        log_record["logType"] = "application"
        log_record["message"] = str(log_record.get("message"))

        return log_record
