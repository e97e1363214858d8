"""Named scenario presets and config-file loading."""

from __future__ import annotations

from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .layout import CorridorLayout, DemandProfile, Ramp, Scenario, sensors_near, uniform_gantries


def _peak_then_half(peak: float, peak_until_s: float, horizon_s: float):
    return [(peak_until_s, peak), (horizon_s + 3600.0, peak / 2.0)]


def training_scenario(seed: int = 0, compliance_rate: float = 0.05) -> Scenario:
    """Seven-mile, four-lane stretch: 15 gantries, the 8 upstream of the merge are agents."""
    rng = np.random.default_rng(1000 + seed)
    gantries = uniform_gantries(0.25, 15)
    layout = CorridorLayout(
        length=7.5, lanes=4, gantry_positions=gantries,
        sensor_positions=sensors_near(gantries, rng),
        ramps=[Ramp(3.6, 2), Ramp(5.3, 1), Ramp(1.8, 1)],
        agent_gantries=list(range(7, 15)),
    )
    horizon = 600.0 + 120 * 60.0
    demand = DemandProfile(
        mainline=_peak_then_half(1850.0, 600.0 + 3600.0, horizon),
        per_ramp=[_peak_then_half(1000.0, 600.0 + 3600.0, horizon), [(horizon + 3600.0, 150.0)],
                  [(horizon + 3600.0, 150.0)]],
    )
    return Scenario("training", layout, demand, compliance_rate=compliance_rate, seed=seed)


def desk_scenario(seed: int = 0, compliance_rate: float = 0.05,
                  episode_steps: int = 120) -> Scenario:
    """Three-mile desk-scale profile: one 2-lane on-ramp, 4 agents upstream of it."""
    rng = np.random.default_rng(2000 + seed)
    gantries = uniform_gantries(0.5, 5)
    layout = CorridorLayout(
        length=3.0, lanes=4, gantry_positions=gantries,
        sensor_positions=sensors_near(gantries, rng),
        ramps=[Ramp(0.95, 2)],
        agent_gantries=[1, 2, 3, 4],
    )
    horizon = 600.0 + episode_steps * 60.0
    demand = DemandProfile(
        mainline=_peak_then_half(1850.0, 600.0 + min(3600.0, episode_steps * 30.0), horizon),
        per_ramp=[_peak_then_half(1000.0, 600.0 + min(3600.0, episode_steps * 30.0), horizon)],
    )
    return Scenario("desk", layout, demand, compliance_rate=compliance_rate, seed=seed,
                    episode_steps=episode_steps)


def bottleneck_scenario(seed: int = 0, compliance_rate: float = 0.05) -> Scenario:
    """Single-bottleneck evaluation corridor; every gantry is an agent."""
    rng = np.random.default_rng(3000 + seed)
    gantries = uniform_gantries(0.5, 11)
    layout = CorridorLayout(
        length=6.0, lanes=4, gantry_positions=gantries,
        sensor_positions=sensors_near(gantries, rng),
        ramps=[Ramp(0.95, 2)],
    )
    horizon = 600.0 + 120 * 60.0
    demand = DemandProfile(
        mainline=_peak_then_half(1850.0, 600.0 + 3600.0, horizon),
        per_ramp=[_peak_then_half(1000.0, 600.0 + 3600.0, horizon)],
    )
    return Scenario("bottleneck", layout, demand, compliance_rate=compliance_rate, seed=seed)


def corridor34_scenario(seed: int = 0, compliance_rate: float = 0.05,
                        episode_steps: int = 180) -> Scenario:
    """Seventeen-mile, 34-gantry corridor with two merge bottlenecks."""
    rng = np.random.default_rng(4000 + seed)
    gantries = uniform_gantries(0.25, 34)
    layout = CorridorLayout(
        length=17.25, lanes=4, gantry_positions=gantries,
        sensor_positions=sensors_near(gantries, rng),
        ramps=[Ramp(3.7, 2), Ramp(10.2, 2)],
    )
    horizon = 600.0 + episode_steps * 60.0
    demand = DemandProfile(
        mainline=[(600.0 + 1800.0, 1500.0), (600.0 + 5400.0, 1850.0), (horizon + 3600.0, 900.0)],
        per_ramp=[[(600.0 + 5400.0, 1000.0), (horizon + 3600.0, 500.0)],
                  [(600.0 + 5400.0, 800.0), (horizon + 3600.0, 400.0)]],
    )
    return Scenario("corridor34", layout, demand, compliance_rate=compliance_rate, seed=seed,
                    episode_steps=episode_steps)


PRESETS = {
    "training": training_scenario,
    "desk": desk_scenario,
    "A": bottleneck_scenario,
    "bottleneck": bottleneck_scenario,
    "corridor34": corridor34_scenario,
}


def get_scenario(name: str, seed: int = 0, **kw) -> Scenario:
    if name in PRESETS:
        return PRESETS[name](seed=seed, **kw)
    path = Path(name)
    if path.exists():
        return load_scenario(path, seed=seed)
    raise ValueError(f"unknown scenario {name!r}; presets are {sorted(PRESETS)}")


def load_scenario(path, seed=None) -> Scenario:
    """Read a scenario from a TOML file (tables: layout, demand, driver)."""
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    if "preset" in raw:
        sc = get_scenario(raw.pop("preset"), seed=raw.pop("seed", seed or 0))
        return sc.with_(**raw) if raw else sc
    if seed is not None:
        raw["seed"] = seed
    raw.setdefault("name", Path(path).stem)
    return Scenario.from_dict(raw)
