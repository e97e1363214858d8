"""Corridor geometry, demand tables and the scenario container.

Locations on the corridor are *mileposts*: miles measured from the downstream
exit, so they grow in the upstream direction (as on a westbound interstate).
Gantries are listed downstream-first, which makes their mileposts ascending
and matches agent indexing. Vehicles internally travel from the upstream
entry (milepost == length) toward the exit (milepost 0).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .idm import DriverParams

SENSOR_MAX_OFFSET_MI = 0.2


@dataclass(frozen=True)
class Ramp:
    merge_milepost: float
    ramp_lanes: int = 1


@dataclass
class CorridorLayout:
    length: float
    lanes: int
    gantry_positions: list[float]
    sensor_positions: list[float]
    ramps: list[Ramp] = field(default_factory=list)
    agent_gantries: Optional[list[int]] = None  # None: every gantry is an agent

    def __post_init__(self):
        self.gantry_positions = [float(g) for g in self.gantry_positions]
        self.sensor_positions = [float(s) for s in self.sensor_positions]
        self.ramps = [r if isinstance(r, Ramp) else Ramp(**r) for r in self.ramps]
        g = np.asarray(self.gantry_positions)
        s = np.asarray(self.sensor_positions)
        if self.length <= 0 or self.lanes < 1:
            raise ValueError("corridor needs positive length and at least one lane")
        if g.size == 0:
            raise ValueError("corridor needs at least one gantry")
        if np.any(np.diff(g) <= 0):
            raise ValueError("gantry positions must be strictly increasing upstream")
        if g[0] < 0 or g[-1] >= self.length:
            raise ValueError("gantries must lie inside the corridor")
        if s.shape != g.shape:
            raise ValueError("exactly one sensor per gantry is required")
        off = s - g
        if np.any(off < -1e-9) or np.any(off > SENSOR_MAX_OFFSET_MI + 1e-9):
            raise ValueError("each sensor must lie within [gantry, gantry + 0.2 mi]")
        for r in self.ramps:
            if not 0 < r.merge_milepost < self.length or r.ramp_lanes < 1:
                raise ValueError(f"bad ramp {r}")
        if self.agent_gantries is None:
            self.agent_gantries = list(range(g.size))
        ag = list(self.agent_gantries)
        if not ag or ag != sorted(set(ag)) or ag[0] < 0 or ag[-1] >= g.size:
            raise ValueError("agent_gantries must be sorted unique gantry indices")

    @property
    def n_gantries(self) -> int:
        return len(self.gantry_positions)

    @property
    def n_agents(self) -> int:
        return len(self.agent_gantries)

    def segment_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Milepost interval [lo, hi) governed by each gantry's posted limit."""
        g = np.asarray(self.gantry_positions)
        hi = np.empty_like(g)
        hi[:-1] = g[1:]
        last_span = g[-1] - g[-2] if g.size > 1 else 0.5
        hi[-1] = min(g[-1] + last_span, self.length)
        return g, hi


@dataclass
class DemandProfile:
    """Piecewise-constant arrival rates in veh/lane/hr.

    Each table is a list of ``(end_time_s, rate)`` pairs; the last end time
    must cover the simulated horizon.
    """

    mainline: list[tuple[float, float]]
    per_ramp: list[list[tuple[float, float]]] = field(default_factory=list)

    def __post_init__(self):
        self.mainline = [(float(t), float(r)) for t, r in self.mainline]
        self.per_ramp = [[(float(t), float(r)) for t, r in tab] for tab in self.per_ramp]
        for tab in [self.mainline, *self.per_ramp]:
            if not tab:
                raise ValueError("empty demand table")
            ends = [t for t, _ in tab]
            if any(b <= a for a, b in zip(ends, ends[1:])) or ends[0] <= 0:
                raise ValueError("demand interval ends must be positive and increasing")
            if any(r < 0 or not np.isfinite(r) for _, r in tab):
                raise ValueError("demand rates must be finite and >= 0")

    @staticmethod
    def _lookup(tab, t: float) -> float:
        for end, rate in tab:
            if t < end:
                return rate
        return tab[-1][1]

    def mainline_rate(self, t: float) -> float:
        return self._lookup(self.mainline, t)

    def ramp_rate(self, k: int, t: float) -> float:
        return self._lookup(self.per_ramp[k], t)

    def horizon(self) -> float:
        return min(tab[-1][0] for tab in [self.mainline, *self.per_ramp])


@dataclass
class Scenario:
    name: str
    layout: CorridorLayout
    demand: DemandProfile
    driver: DriverParams = field(default_factory=DriverParams)
    compliance_rate: float = 0.05
    seed: int = 0
    dt: float = 0.5
    warmup_s: float = 600.0
    control_interval_s: float = 60.0
    episode_steps: int = 120
    ramp_speed_mph: float = 45.0
    weave_length_mi: float = 0.3
    vehicle_length_ft: float = 16.0

    def __post_init__(self):
        if isinstance(self.layout, dict):
            self.layout = CorridorLayout(**self.layout)
        if isinstance(self.demand, dict):
            self.demand = DemandProfile(**self.demand)
        if isinstance(self.driver, dict):
            self.driver = DriverParams(**self.driver)
        self.validate()

    def validate(self):
        if not 0.0 <= self.compliance_rate <= 1.0:
            raise ValueError("compliance_rate must lie in [0, 1]")
        if not 0.0 < self.dt <= 1.0:
            raise ValueError("dt must lie in (0, 1] s")
        ratio = self.control_interval_s / self.dt
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("control interval must be a whole number of sim steps")
        if self.episode_steps < 1 or self.warmup_s < 0:
            raise ValueError("episode_steps must be >= 1 and warmup_s >= 0")
        if len(self.demand.per_ramp) != len(self.layout.ramps):
            raise ValueError("one demand table per ramp is required")
        if self.demand.horizon() < self.horizon_s - 1e-9:
            raise ValueError("demand tables must cover the simulation horizon "
                             f"({self.horizon_s:.0f} s)")

    @property
    def steps_per_control(self) -> int:
        return int(round(self.control_interval_s / self.dt))

    @property
    def horizon_s(self) -> float:
        return self.warmup_s + self.episode_steps * self.control_interval_s

    def with_(self, **changes) -> "Scenario":
        d = self.to_dict()
        d.update(changes)
        return Scenario.from_dict(d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["layout"]["ramps"] = [asdict(r) if not isinstance(r, dict) else r
                                for r in self.layout.ramps]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        d = dict(d)
        lay = dict(d["layout"])
        lay["ramps"] = [Ramp(**r) if isinstance(r, dict) else r for r in lay.get("ramps", [])]
        d["layout"] = CorridorLayout(**lay)
        dem = dict(d["demand"])
        d["demand"] = DemandProfile(**dem)
        if "driver" in d and isinstance(d["driver"], dict):
            d["driver"] = DriverParams(**d["driver"])
        return cls(**d)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=float)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def uniform_gantries(first: float, count: int, spacing: float = 0.5) -> list[float]:
    return [round(first + k * spacing, 6) for k in range(count)]


def sensors_near(gantries: Sequence[float], rng: np.random.Generator) -> list[float]:
    """One sensor per gantry at a random offset in [0, 0.2] mi upstream."""
    return [round(g + rng.uniform(0.0, SENSOR_MAX_OFFSET_MI), 4) for g in gantries]
