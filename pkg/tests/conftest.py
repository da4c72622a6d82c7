import time

import numpy as np
import pytest

from convorder.model import Box


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def unit_box():
    return Box.cube(-1.0, 1.0, 2)


def eye_field_a(x):
    return np.eye(2)


@pytest.fixture(scope="session")
def perturbed_transform():
    """Transform for ``a = I + 0.1 P(x2)`` on ``[-1, 1]^2`` at mesh 129 (about a minute)."""
    from convorder.scenarios import perturbation
    from convorder.transform import solve_transform

    a = perturbation(0.1)
    t0 = time.perf_counter()
    sol = solve_transform(a, Box.cube(-1.0, 1.0, 2), n=129)
    _TIMINGS["perturbed_transform"] = time.perf_counter() - t0
    return a, sol


_TIMINGS = {}


@pytest.fixture(scope="session")
def perturbed_transform_seconds(perturbed_transform):
    """Wall time spent building ``perturbed_transform``."""
    return _TIMINGS["perturbed_transform"]
