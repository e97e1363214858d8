"""Intelligent-Driver-Model car-following law.

The vectorised kernel works in SI units; the scalar entry point takes
``VehicleState`` objects in the external units (miles, mph, ft).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..units import METERS_PER_MILE, ft_to_m, mph_to_mps

MAX_DECEL = 8.0  # m/s^2, hard floor on any acceleration


@dataclass(frozen=True)
class DriverParams:
    desired_time_headway: float = 1.4  # s
    max_accel: float = 1.5  # m/s^2
    comfort_decel: float = 2.0  # m/s^2
    jam_gap: float = 2.0  # m
    free_speed_mean: float = 68.0  # mph
    free_speed_std: float = 5.0  # mph
    accel_exponent: float = 12.0  # high exponent keeps free-flow speed up to near capacity

    def __post_init__(self):
        for name in ("desired_time_headway", "max_accel", "comfort_decel", "jam_gap",
                     "free_speed_mean", "free_speed_std", "accel_exponent"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ValueError(f"DriverParams.{name} must be finite and > 0, got {value!r}")


@dataclass
class VehicleState:
    id: int
    lane: int
    position: float  # miles from corridor entry
    speed: float  # mph
    free_speed: float  # mph
    compliant: bool = False
    length: float = 16.0  # ft


def free_road_accel(v, v0, p: DriverParams):
    """Free-road term; above the desired speed it brakes at most at ``comfort_decel``."""
    v = np.asarray(v, dtype=float)
    v0 = np.asarray(v0, dtype=float)
    a, b, delta = p.max_accel, p.comfort_decel, p.accel_exponent
    ratio = v / v0
    below = a * (1.0 - ratio**delta)
    with np.errstate(divide="ignore"):
        above = -b * (1.0 - np.power(v0 / np.maximum(v, 1e-12), a * delta / b))
    return np.where(v <= v0, below, above)


def idm_accel(v, v0, gap, dv, p: DriverParams):
    """Vectorised IDM acceleration in m/s^2.

    ``gap`` is the bumper-to-bumper distance in metres (``inf`` for no leader)
    and ``dv = v - v_leader``. The result is clipped to [-MAX_DECEL, max_accel].
    """
    v = np.asarray(v, dtype=float)
    gap = np.asarray(gap, dtype=float)
    dv = np.asarray(dv, dtype=float)
    a, b = p.max_accel, p.comfort_decel
    s_star = p.jam_gap + np.maximum(0.0, v * p.desired_time_headway + v * dv / (2.0 * np.sqrt(a * b)))
    with np.errstate(divide="ignore"):
        interaction = np.where(np.isfinite(gap), (s_star / gap) ** 2, 0.0)
    acc = free_road_accel(v, v0, p) - a * interaction
    return np.clip(acc, -MAX_DECEL, a)


def car_following_accel(follower: VehicleState, leader: Optional[VehicleState],
                        params: DriverParams, desired_speed: float) -> float:
    """Acceleration (m/s^2) of ``follower`` behind ``leader`` at ``desired_speed`` mph."""
    v = mph_to_mps(follower.speed)
    v0 = mph_to_mps(desired_speed)
    if not (np.isfinite(v) and np.isfinite(v0)) or v0 <= 0:
        raise ValueError("speeds must be finite and desired speed positive")
    if leader is None:
        return float(idm_accel(v, v0, np.inf, 0.0, params))
    gap = (leader.position - follower.position) * METERS_PER_MILE - ft_to_m(leader.length)
    if not gap > 0:
        raise ValueError(f"non-positive gap {gap:.3f} m between vehicles "
                         f"{follower.id} and {leader.id}")
    return float(idm_accel(v, v0, gap, v - mph_to_mps(leader.speed), params))
