import numpy as np
import pytest

import fdslab as F
from fdslab.mlp import TrainConfig, train


@pytest.fixture(scope="session")
def schedule():
    return F.LinearSchedule()


@pytest.fixture(scope="session")
def checkerboard():
    return F.CheckerboardTarget()


@pytest.fixture(scope="session")
def empirical_checkerboard(checkerboard):
    return F.EmpiricalTarget.from_spec(checkerboard, n=100_000, seed=0)


@pytest.fixture(scope="session")
def oracle(empirical_checkerboard, schedule):
    return F.OracleField(empirical_checkerboard, schedule)


@pytest.fixture(scope="session")
def trained_field(checkerboard, schedule):
    """A checkerboard velocity net trained long enough to be a faithful
    surrogate of the oracle field (shared across the whole session)."""
    cfg = TrainConfig(target=checkerboard, schedule=schedule, steps=4_000,
                      batch=512, seed=0)
    field, _ = train(cfg)
    return field


@pytest.fixture(scope="session")
def quick_field(checkerboard, schedule):
    """A cheaply trained net for tests that only need a plausible field."""
    cfg = TrainConfig(target=checkerboard, schedule=schedule, steps=300,
                      batch=256, seed=1)
    field, _ = train(cfg)
    return field


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
