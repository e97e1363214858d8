"""Roadside detector CSV ingestion and sensor-to-gantry assignment."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..sensing import READING_HEADER

log = logging.getLogger(__name__)

CADENCE_S = 60.0


class DataValidationError(ValueError):
    pass


@dataclass(frozen=True)
class RdsRecord:
    timestamp: float  # s since midnight
    sensor_id: str
    milemarker: float
    speed_mph: float
    occupancy: float
    volume: float  # veh/hr


@dataclass
class RdsSeries:
    records: list[RdsRecord] = field(default_factory=list)
    rejected: list[tuple[int, str]] = field(default_factory=list)  # (line number, reason)
    gaps: list[tuple[str, float, float]] = field(default_factory=list)  # (sensor, from, to)

    def sensors(self) -> dict[str, float]:
        """Sensor id -> milemarker, in order of first appearance."""
        out: dict[str, float] = {}
        for r in self.records:
            out.setdefault(r.sensor_id, r.milemarker)
        return out


def _parse_row(row: dict) -> RdsRecord:
    vals = {}
    for k in ("timestamp", "milemarker", "speed_mph", "occupancy", "volume"):
        try:
            vals[k] = float(row[k])
        except (TypeError, ValueError):
            raise ValueError(f"{k}={row[k]!r} is not a number") from None
        if not math.isfinite(vals[k]):
            raise ValueError(f"{k} is not finite")
    sid = (row["sensor_id"] or "").strip()
    if not sid:
        raise ValueError("empty sensor_id")
    if not 0.0 <= vals["occupancy"] <= 1.0:
        raise ValueError(f"occupancy {vals['occupancy']} outside [0, 1]")
    if vals["speed_mph"] < 0 or vals["volume"] < 0:
        raise ValueError("negative speed or volume")
    if not 0.0 <= vals["timestamp"] < 86400.0 + CADENCE_S:
        raise ValueError(f"timestamp {vals['timestamp']} outside the day")
    return RdsRecord(vals["timestamp"], sid, vals["milemarker"], vals["speed_mph"],
                     vals["occupancy"], vals["volume"])


def parse_rds_csv(path, strict: bool = False) -> RdsSeries:
    """Read, validate and sort detector records.

    A missing column is a hard error. Bad rows are skipped and listed in
    ``rejected`` with their line numbers, or raise when ``strict``.
    """
    path = Path(path)
    out = RdsSeries()
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        missing = [c for c in READING_HEADER if c not in (rd.fieldnames or [])]
        if missing:
            raise DataValidationError(f"{path}: missing columns {missing}")
        for row in rd:
            try:
                out.records.append(_parse_row(row))
            except (ValueError, KeyError) as exc:
                out.rejected.append((rd.line_num, str(exc)))
    if out.rejected:
        msg = "; ".join(f"line {n}: {why}" for n, why in out.rejected[:10])
        if strict:
            raise DataValidationError(f"{path}: {len(out.rejected)} rejected rows ({msg})")
        log.warning("%s: %d rows rejected (%s)", path, len(out.rejected), msg)
    out.records.sort(key=lambda r: (r.sensor_id, r.timestamp))
    last: dict[str, float] = {}
    for r in out.records:
        prev = last.get(r.sensor_id)
        if prev is not None:
            if r.timestamp <= prev:
                raise DataValidationError(f"{path}: duplicate timestamp {r.timestamp} "
                                          f"for sensor {r.sensor_id}")
            if r.timestamp - prev > CADENCE_S * 1.5:
                out.gaps.append((r.sensor_id, prev, r.timestamp))
        last[r.sensor_id] = r.timestamp
    out.records.sort(key=lambda r: (r.timestamp, r.milemarker, r.sensor_id))
    return out


def write_rds_csv(path, records: Sequence[RdsRecord]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(READING_HEADER)
        for r in records:
            w.writerow([repr(float(r.timestamp)), r.sensor_id, repr(float(r.milemarker)),
                        repr(float(r.speed_mph)), repr(float(r.occupancy)),
                        repr(float(r.volume))])
    return path


@dataclass
class GantryAssignment:
    gantry_milemarkers: list[float]
    sensors: list[list[str]]  # per gantry, ordered by milemarker
    outside: list[str] = field(default_factory=list)  # sensors snapped to an end gantry

    def sensor_to_gantry(self) -> dict[str, int]:
        return {s: g for g, ids in enumerate(self.sensors) for s in ids}


def assign_sensors(gantry_milemarkers: Sequence[float], sensor_milemarkers: Sequence[float],
                   sensor_ids: Optional[Sequence[str]] = None) -> GantryAssignment:
    """Give each sensor to the gantry whose segment contains it.

    Gantry ``k`` covers ``[g_k, g_{k+1})`` in milemarkers, i.e. the detectors
    between it and the next gantry. Sensors outside the corridor go to the
    nearest end gantry with a warning.
    """
    g = np.asarray(gantry_milemarkers, dtype=float)
    s = np.asarray(sensor_milemarkers, dtype=float)
    if g.size == 0:
        raise ValueError("no gantries")
    if np.any(np.diff(g) <= 0):
        raise ValueError("gantry milemarkers must be strictly increasing")
    ids = [str(i) for i in (sensor_ids if sensor_ids is not None else range(s.size))]
    if len(ids) != s.size:
        raise ValueError("sensor_ids and sensor_milemarkers differ in length")
    end = g[-1] + (g[-1] - g[-2] if g.size > 1 else 0.5)
    out = GantryAssignment([float(v) for v in g], [[] for _ in g])
    for k in np.argsort(s, kind="stable"):
        mm = s[k]
        idx = int(np.searchsorted(g, mm, side="right")) - 1
        if mm < g[0] or mm >= end:
            idx = 0 if mm < g[0] else g.size - 1
            out.outside.append(ids[k])
            log.warning("sensor %s at mile %.3f lies outside the corridor; assigned to gantry %d",
                        ids[k], mm, idx)
        out.sensors[idx].append(ids[k])
    return out


def synthetic_day(gantry_milemarkers: Sequence[float], start_s: float = 6 * 3600.0,
                  steps: int = 240, block: Optional[tuple[int, int]] = None,
                  block_steps: Optional[tuple[int, int]] = None, block_speed: float = 25.0,
                  free_speed: float = 68.0, sensors_per_gantry: int = 2,
                  seed: int = 0) -> list[RdsRecord]:
    """Detector records for a synthetic day, optionally with a congestion block.

    ``block`` is an inclusive gantry-index range that reads ``block_speed``
    during the step range ``block_steps`` (half-open); everything else reads
    free flow with small noise.
    """
    rng = np.random.default_rng(seed)
    g = np.asarray(gantry_milemarkers, dtype=float)
    spacing = np.diff(g).min() if g.size > 1 else 0.5
    recs = []
    for t in range(steps):
        ts = start_s + t * CADENCE_S
        for k, gk in enumerate(g):
            jam = (block is not None and block[0] <= k <= block[1]
                   and (block_steps is None or block_steps[0] <= t < block_steps[1]))
            for j in range(sensors_per_gantry):
                mm = round(float(gk + spacing * (j + 0.5) / (sensors_per_gantry + 1)), 4)
                if jam:
                    spd = block_speed + rng.normal(0, 1.0)
                    occ = 0.30 + rng.normal(0, 0.01)
                    vol = 1300.0
                else:
                    spd = free_speed + rng.normal(0, 1.0)
                    occ = 0.08 + rng.normal(0, 0.005)
                    vol = 1500.0
                recs.append(RdsRecord(ts, f"S{k:02d}{j}", mm, float(max(spd, 0.0)),
                                      float(np.clip(occ, 0, 1)), vol))
    return recs
