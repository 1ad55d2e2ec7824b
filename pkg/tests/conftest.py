import logging as builtin_logging
from unittest.mock import Mock

import numpy as np
import pytest

from pairsim.app import PairsimApp, pop_app, push_app
from pairsim.optics_model import CrystalSpec, PumpSpec, filter_pair_grid, matched_filter_pair


class AnyStringWith(str):
    def __eq__(self, other):
        return self in other


@pytest.fixture
def app():
    pairsim_app = PairsimApp("pairsim-test")
    token = push_app(pairsim_app)
    yield pairsim_app

    pop_app(token)


@pytest.fixture
def app_with_statsd(app):
    app.config["PAIRSIM_ENVIRONMENT"] = "test"
    app.config["PAIRSIM_APP_NAME"] = "sim"
    app.config["STATSD_HOST"] = "localhost"
    app.config["STATSD_PORT"] = "8000"
    app.config["STATSD_PREFIX"] = "prefix"
    app.statsd_client = Mock()
    return app


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def filter_pair():
    return matched_filter_pair()


@pytest.fixture(scope="session")
def wide_grid(filter_pair):
    filter_u, filter_v = filter_pair
    return filter_pair_grid(filter_u, filter_v, CrystalSpec(), PumpSpec.from_fwhm(), resolution=256, wide=True)


@pytest.fixture(scope="session")
def narrow_grid(filter_pair):
    filter_u, filter_v = filter_pair
    return filter_pair_grid(filter_u, filter_v, CrystalSpec(), PumpSpec.from_fwhm(), resolution=256, wide=False)


@pytest.fixture
def reset_package_logger():
    yield
    for name in ("pairsim", "pairsim-test"):
        del builtin_logging.getLogger(name).handlers[:]
        builtin_logging.getLogger(name).propagate = True
