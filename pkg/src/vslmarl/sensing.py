"""Roadside radar detector emulation: 60-second speed/occupancy/volume readings."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .units import METERS_PER_FOOT, MPS_PER_MPH

FREE_FLOW_MPH = 70.0
DETECTION_ZONE_FT = 6.0
OCC_SPREAD_THRESHOLD = 0.05
MIN_CROSSING_SPEED_MPH = 0.1

READING_HEADER = ["timestamp", "sensor_id", "milemarker", "speed_mph", "occupancy", "volume"]


@dataclass(frozen=True)
class SensorReading:
    sensor_id: int
    window_end: float  # s
    mean_speed: float  # mph
    occupancy: float  # fraction
    volume: float  # veh/hr


class SensorAccumulator:
    """Crossings logged by one detector during the current window."""

    def __init__(self, sensor_id: int = 0, zone_ft: float = DETECTION_ZONE_FT, lanes: int = 1):
        self.sensor_id = sensor_id
        self.zone_ft = zone_ft
        self.lanes = lanes
        self.speeds: list[float] = []
        self.occ_time = 0.0
        self.window_start = 0.0

    def record_crossing(self, speed_mph: float, length_ft: float, timestamp: float):
        if not (math.isfinite(speed_mph) and math.isfinite(length_ft)):
            raise ValueError(f"non-finite crossing speed/length ({speed_mph}, {length_ft})")
        if speed_mph < 0:
            raise ValueError("crossing speed must be >= 0")
        if timestamp < self.window_start:
            raise ValueError("crossing timestamp precedes the open window")
        self.speeds.append(float(speed_mph))
        self.occ_time += occupancy_time(speed_mph, length_ft, self.zone_ft)
        return self

    def aggregate(self, window_end: float, window: float = 60.0) -> SensorReading:
        reading = aggregate_window(self.speeds, self.occ_time, window, self.sensor_id,
                                   window_end, self.lanes)
        self.speeds = []
        self.occ_time = 0.0
        self.window_start = window_end
        return reading


def occupancy_time(speed_mph, length_ft, zone_ft=DETECTION_ZONE_FT):
    """Seconds the detection zone is occupied by one crossing vehicle."""
    v = np.maximum(np.asarray(speed_mph, dtype=float), MIN_CROSSING_SPEED_MPH) * MPS_PER_MPH
    return (np.asarray(length_ft, dtype=float) + zone_ft) * METERS_PER_FOOT / v


def aggregate_window(speeds: Sequence[float], occ_time: float, window: float = 60.0,
                     sensor_id: int = 0, window_end: float = 0.0, lanes: int = 1) -> SensorReading:
    """Mean crossing speed, lane-averaged time occupancy and hourly volume."""
    n = len(speeds)
    mean_speed = float(np.mean(speeds)) if n else FREE_FLOW_MPH
    occ = min(max(float(occ_time) / (window * lanes), 0.0), 1.0)
    return SensorReading(sensor_id, float(window_end), mean_speed, occ, n * 3600.0 / window)


class SensorBank:
    """Vectorised accumulators for every detector of one simulation."""

    def __init__(self, n: int, zone_ft: float = DETECTION_ZONE_FT, lanes: int = 1):
        self.n = n
        self.zone_ft = zone_ft
        self.lanes = lanes
        self.reset()

    def reset(self):
        self.count = np.zeros(self.n, dtype=np.int64)
        self.speed_sum = np.zeros(self.n)
        self.occ_time = np.zeros(self.n)

    def record_many(self, sensor_idx, speed_mph, length_ft):
        if not np.all(np.isfinite(speed_mph)):
            raise ValueError("non-finite crossing speed")
        np.add.at(self.count, sensor_idx, 1)
        np.add.at(self.speed_sum, sensor_idx, speed_mph)
        np.add.at(self.occ_time, sensor_idx, occupancy_time(speed_mph, length_ft, self.zone_ft))

    def aggregate(self, window_end: float, window: float = 60.0) -> list[SensorReading]:
        out = []
        for i in range(self.n):
            c = int(self.count[i])
            speed = self.speed_sum[i] / c if c else FREE_FLOW_MPH
            occ = min(self.occ_time[i] / (window * self.lanes), 1.0)
            out.append(SensorReading(i, float(window_end), float(speed), float(occ),
                                     c * 3600.0 / window))
        self.reset()
        return out


def select_critical_sensor(readings: Sequence[SensorReading],
                           spread_threshold: float = OCC_SPREAD_THRESHOLD) -> SensorReading:
    """Pick the reading that should drive a gantry's decision.

    When all occupancies sit within ``spread_threshold`` of each other the
    slowest unit wins; otherwise the most occupied one does.
    """
    if not readings:
        raise ValueError("no readings to choose from")
    occ = [r.occupancy for r in readings]
    if max(occ) - min(occ) < spread_threshold:
        return min(readings, key=lambda r: r.mean_speed)
    return max(readings, key=lambda r: r.occupancy)


def write_readings_csv(path, rows: Iterable[tuple[float, str, float, float, float, float]]):
    """Write ``(timestamp, sensor_id, milemarker, speed, occupancy, volume)`` rows."""
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(READING_HEADER)
        for ts, sid, mm, spd, occ, vol in rows:
            w.writerow([repr(float(ts)), sid, repr(float(mm)), repr(float(spd)),
                        repr(float(occ)), repr(float(vol))])
