"""Per-agent local reward terms and their weighted total."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from . import ACTIONS_MPH, MAX_LIMIT_MPH, MIN_LIMIT_MPH


@dataclass(frozen=True)
class RewardWeights:
    w1: float = 0.2  # adaptability
    w2: float = 0.3  # step-down compliance
    w3: float = 0.5  # mobility
    a_diff: float = 10.0
    nu_max: float = 70.0
    congestion_speed: float = 35.0

    def __post_init__(self):
        if min(self.w1, self.w2, self.w3) < 0:
            raise ValueError("reward weights must be non-negative")
        if self.a_diff <= 0 or self.nu_max <= 0 or self.congestion_speed <= 0:
            raise ValueError("a_diff, nu_max and congestion_speed must be positive")


@dataclass(frozen=True)
class RewardBreakdown:
    r1: float
    r2: float
    r3: float
    total: float


def _check_action(a: float, name: str = "action"):
    if a not in ACTIONS_MPH:
        raise ValueError(f"{name} {a!r} is not one of {ACTIONS_MPH}")


def reward_adaptability(speed: float, action: float, congestion_speed: float = 35.0) -> float:
    """-10 when the sensor reads congestion but the agent does not post the minimum."""
    _check_action(action)
    return -10.0 if speed <= congestion_speed and action != MIN_LIMIT_MPH else 0.0


def reward_stepdown(prev_action: float, action: float, most_downstream: bool,
                    a_diff: float = 10.0) -> float:
    """Bonus for a smooth ascending profile, penalty for a jump above ``prev + a_diff``."""
    _check_action(action)
    if most_downstream:
        return 0.0
    _check_action(prev_action, "prev_action")
    if prev_action == 30 and action in (30, 40):
        return 0.0
    if (prev_action, action) in ((40, 50), (50, 60), (60, 70), (70, 70)):
        return 2.0
    if action > prev_action + a_diff:
        return -2.0 * (action - prev_action) / a_diff
    return 0.0


def reward_mobility(speed: float, nu_max: float = 70.0) -> float:
    """Exponentially shaped speed reward in [0, 1]."""
    if not speed >= 0:
        raise ValueError(f"speed must be >= 0, got {speed!r}")
    s = min(speed, nu_max) / nu_max
    return (math.exp(s) - 1.0) / (math.e - 1.0)


def reward_breakdown(speed: float, action: float, prev_action: float, most_downstream: bool,
                     weights: RewardWeights = RewardWeights()) -> RewardBreakdown:
    r1 = reward_adaptability(speed, action, weights.congestion_speed)
    r2 = reward_stepdown(prev_action, action, most_downstream, weights.a_diff)
    r3 = reward_mobility(speed, weights.nu_max)
    return RewardBreakdown(r1, r2, r3, weights.w1 * r1 + weights.w2 * r2 + weights.w3 * r3)


def compute_rewards(actions: Sequence[float], speeds: Sequence[float],
                    weights: RewardWeights = RewardWeights()) -> list[RewardBreakdown]:
    """Rewards for a downstream-first joint action given each agent's sensed speed."""
    if len(actions) != len(speeds):
        raise ValueError(f"{len(actions)} actions but {len(speeds)} speed readings")
    out = []
    for i, (a, nu) in enumerate(zip(actions, speeds)):
        prev = actions[i - 1] if i > 0 else MAX_LIMIT_MPH
        out.append(reward_breakdown(float(nu), float(a), float(prev), i == 0, weights))
    return out
