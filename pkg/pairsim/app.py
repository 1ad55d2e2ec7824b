import logging
import os
from contextvars import ContextVar
from typing import Any, Optional

AMBIENT_DEFAULTS: dict[str, Any] = {
    "PAIRSIM_LOG_LEVEL": "INFO",
    "PAIRSIM_APP_NAME": "pairsim",
    "PAIRSIM_RUN_ID": "no-run-id",
    "PAIRSIM_ENVIRONMENT": "local",
    "STATSD_ENABLED": False,
    "STATSD_HOST": "localhost",
    "STATSD_PORT": 8125,
    "STATSD_PREFIX": None,
}


class PairsimApp:
    """Holds the ambient configuration shared by logging, metrics and the pipeline.

    Extensions (logging, the statsd client) attach to it through ``init_app``.
    """

    def __init__(self, name="pairsim", config=None, debug=False):
        self.name = name
        self.debug = debug
        self.config: dict[str, Any] = {}
        for key, default in AMBIENT_DEFAULTS.items():
            self.config[key] = _from_environment(key, default)
        self.config.update(config or {})
        self.logger = logging.getLogger(name)
        self.statsd_client: Any = None


def _from_environment(key, default):
    value = os.getenv(key)
    if value is None:
        return default
    if isinstance(default, bool):
        return value.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(value)
    return value


_current_app: ContextVar[Optional[PairsimApp]] = ContextVar("pairsim_current_app", default=None)


def current_app() -> PairsimApp:
    app = _current_app.get()
    if app is None:
        app = PairsimApp()
        _current_app.set(app)
    return app


def push_app(app: PairsimApp):
    return _current_app.set(app)


def pop_app(token):
    _current_app.reset(token)
