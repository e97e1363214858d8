import numpy as np
import pytest

from vslmarl.sim.layout import CorridorLayout, DemandProfile, Ramp, Scenario


def small_scenario(mainline=1200.0, ramp=None, lanes=2, length=3.0, compliance=0.05,
                   seed=0, episode_steps=5, warmup_s=60.0, gantries=None) -> Scenario:
    """A short corridor with gantries every half mile and sensors 0.1 mi upstream."""
    g = gantries if gantries is not None else [0.5 * k for k in range(1, int(length / 0.5))]
    layout = CorridorLayout(length=length, lanes=lanes, gantry_positions=g,
                            sensor_positions=[x + 0.1 for x in g],
                            ramps=[Ramp(0.95, 1)] if ramp is not None else [])
    horizon = warmup_s + episode_steps * 60.0 + 3600.0
    demand = DemandProfile(mainline=[(horizon, mainline)],
                           per_ramp=[[(horizon, ramp)]] if ramp is not None else [])
    return Scenario("small", layout, demand, compliance_rate=compliance, seed=seed,
                    episode_steps=episode_steps, warmup_s=warmup_s)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE: dict[int, str] = {}


def record_acceptance(n: int, ok: bool, detail: str):
    ACCEPTANCE[n] = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE[n])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
