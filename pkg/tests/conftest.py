import numpy as np
import pytest

from torquelab import (VehicleParams, generate_oval, generate_straight,
                       EnvConfig, RaceEnv)


@pytest.fixture(scope="session")
def straight_track():
    return generate_straight(100.0, 10.0)


@pytest.fixture(scope="session")
def oval_track():
    return generate_oval(100.0, 30.0, 10.0)


@pytest.fixture(scope="session")
def params():
    return VehicleParams()


@pytest.fixture
def straight_env(straight_track):
    return RaceEnv(straight_track, config=EnvConfig(seed=0))


def progress_only_config(**kw) -> EnvConfig:
    """Reward reduced to the progress term: termination bonuses zeroed and
    the penalty hinge pushed out of reach."""
    base = dict(finish_reward=0.0, off_track_reward=0.0, turned_back_reward=0.0,
                damage_reward=0.0, backwards_reward=0.0, low_progress_reward=0.0,
                p_sc=1e9)
    base.update(kw)
    return EnvConfig(**base)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(1234)
