import logging

import numpy as np
import pytest

from models import linear_gaussian_model, simulate, theta_logistic_model
from run_log.handler import RunLogHandler
from schema import LinearGaussianParams


@pytest.fixture
def rng():
    return np.random.default_rng(20091016)


@pytest.fixture
def theta_logistic():
    return theta_logistic_model()


@pytest.fixture
def linear_gaussian():
    return linear_gaussian_model(LinearGaussianParams(ar_coeff=0.9, state_var=1.0, obs_var=1.0))


@pytest.fixture
def lg_data(linear_gaussian):
    x, y = simulate(linear_gaussian, linear_gaussian.default_theta(), 20, seed=3)
    return x, y


@pytest.fixture
def tl_data(theta_logistic):
    x, y = simulate(theta_logistic, theta_logistic.default_theta(), 30, seed=4)
    return x, y


@pytest.fixture(autouse=True)
def quiet_root_logger():
    yield
    root = logging.getLogger()
    for handler in list(root.handlers):
        if isinstance(handler, RunLogHandler) or type(handler) is logging.StreamHandler:
            root.removeHandler(handler)
            handler.close()
