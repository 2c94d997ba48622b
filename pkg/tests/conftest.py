import numpy as np
import pytest

from ecoplatoon.platoon import PlatoonConfig, VehicleParams

MPH = 0.44704


def make_config(
    n=3,
    ds=0.1,
    horizon_steps=100,
    target_speed=45 * MPH,
    speed_limit=75 * MPH,
    headway=1.0,
    mass=1400.0,
    a_min=-5.0,
    a_max=3.0,
    **kw,
):
    vehicles = tuple(VehicleParams(mass=mass, a_min=a_min, a_max=a_max) for _ in range(n))
    return PlatoonConfig(
        vehicles=vehicles,
        headway=headway,
        target_speed=target_speed,
        speed_limit=speed_limit,
        ds=ds,
        horizon_steps=horizon_steps,
        **kw,
    )


@pytest.fixture
def config():
    return make_config()


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
