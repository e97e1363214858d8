"""Open-loop replay of recorded detector data through a controller."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .. import MAX_LIMIT_MPH
from ..env import agent_traffic
from ..sim.layout import CorridorLayout
from ..sensing import FREE_FLOW_MPH, SensorReading, select_critical_sensor
from .rds import CADENCE_S, GantryAssignment, RdsRecord


@dataclass
class ReplayResult:
    times: np.ndarray  # window start, s since midnight
    speed_grid: np.ndarray  # (gantries, steps) critical-sensor speed
    limit_grid: np.ndarray  # (gantries, steps) posted limits
    held: np.ndarray  # (gantries, steps) True where the last reading was reused


def _windows(records: Sequence[RdsRecord]) -> dict[int, list[RdsRecord]]:
    out: dict[int, list[RdsRecord]] = {}
    for r in records:
        out.setdefault(int(r.timestamp // CADENCE_S), []).append(r)
    return out


def open_loop_replay(records: Sequence[RdsRecord], assignment: GantryAssignment,
                     controller) -> ReplayResult:
    """Feed each 60-s window to ``controller`` without affecting the data.

    Every gantry acts as an agent. A gantry with no data in a window reuses
    its previous critical reading (flagged in ``held``); before any data it
    reads free flow.
    """
    n_g = len(assignment.gantry_milemarkers)
    owner = assignment.sensor_to_gantry()
    wins = _windows(records)
    if not wins:
        empty = np.zeros((n_g, 0))
        return ReplayResult(np.zeros(0), empty, empty, empty.astype(bool))
    first, last = min(wins), max(wins)
    steps = last - first + 1
    speed = np.zeros((n_g, steps))
    limits = np.zeros((n_g, steps))
    held = np.zeros((n_g, steps), dtype=bool)
    current = [SensorReading(g, 0.0, FREE_FLOW_MPH, 0.0, 0.0) for g in range(n_g)]
    controller.reset(replay_layout(assignment))
    for j in range(steps):
        per_gantry: list[list[SensorReading]] = [[] for _ in range(n_g)]
        for r in wins.get(first + j, []):
            g = owner.get(r.sensor_id)
            if g is not None:
                per_gantry[g].append(SensorReading(g, r.timestamp, r.speed_mph, r.occupancy,
                                                   r.volume))
        for g in range(n_g):
            if per_gantry[g]:
                current[g] = select_critical_sensor(per_gantry[g])
            else:
                held[g, j] = True
        traffic = agent_traffic(current, list(range(n_g)))
        limits[:, j] = controller.act(current, traffic)
        speed[:, j] = [c.mean_speed for c in current]
    times = (first + np.arange(steps)) * CADENCE_S
    return ReplayResult(times, speed, limits, held)


def replay_layout(assignment: GantryAssignment) -> CorridorLayout:
    """Corridor view for controllers during replay.

    Every gantry is an agent and its critical reading is treated as if taken
    at the gantry itself.
    """
    g = assignment.gantry_milemarkers
    span = g[-1] - g[-2] if len(g) > 1 else 0.5
    return CorridorLayout(length=g[-1] + span, lanes=1, gantry_positions=list(g),
                          sensor_positions=list(g))


def expected_block_profile(n_gantries: int, block: tuple[int, int]) -> np.ndarray:
    """Hand-built target: 30 inside the block, stepping back up by 10 upstream."""
    out = np.full(n_gantries, float(MAX_LIMIT_MPH))
    out[block[0]:block[1] + 1] = 30.0
    for k, v in enumerate((40.0, 50.0, 60.0)):
        g = block[1] + 1 + k
        if g < n_gantries:
            out[g] = v
    return out
