"""Decision-makers that turn sensor readings into posted limits.

Every controller exposes ``reset(layout)`` and
``act(readings, traffic) -> actions`` where ``readings`` holds one reading per
gantry (downstream-first), ``traffic`` is the per-agent feature array built by
the environment, and the result is one limit (mph) per agent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import ACTIONS_MPH, MAX_LIMIT_MPH, MIN_LIMIT_MPH
from .env import (Decision, apply_mask, argmax_selector, normalize_obs, sampling_selector,
                  sequential_decide)
from .nn.mlp import MLP, forward_policy
from .sensing import SensorReading
from .sim.layout import CorridorLayout


@dataclass(frozen=True)
class InvalidActionSet:
    invalid: np.ndarray  # bool over ACTIONS_MPH

    @property
    def valid(self) -> np.ndarray:
        return ~self.invalid


def invalid_action_mask(prev_action: float, a_diff: float = 10.0,
                        most_downstream: bool = False) -> InvalidActionSet:
    """Actions above ``prev_action + a_diff`` are invalid; the lead agent is unconstrained."""
    acts = np.asarray(ACTIONS_MPH, dtype=float)
    if most_downstream:
        return InvalidActionSet(np.zeros(acts.size, dtype=bool))
    return InvalidActionSet(acts > prev_action + a_diff)


def masked_probs(probs: np.ndarray, prev_action: float, a_diff: float = 10.0,
                 most_downstream: bool = False) -> np.ndarray:
    return apply_mask(np.asarray(probs, dtype=float),
                      invalid_action_mask(prev_action, a_diff, most_downstream).valid)


def stepdown_violations(profile: Sequence[float], a_diff: float = 10.0) -> int:
    """How many agents post more than ``a_diff`` above their downstream neighbour."""
    p = np.asarray(profile, dtype=float)
    return int(np.sum(p[1:] > p[:-1] + a_diff))


class NoControl:
    name = "no-control"

    def reset(self, layout: CorridorLayout):
        self.n_agents = layout.n_agents

    def act(self, readings, traffic) -> np.ndarray:
        return np.full(len(traffic), float(MAX_LIMIT_MPH))


def no_control(readings) -> np.ndarray:
    return np.full(len(readings), float(MAX_LIMIT_MPH))


def round_to_ten(speed: float) -> float:
    """Nearest multiple of 10, halves rounded up."""
    return 10.0 * math.floor(speed / 10.0 + 0.5)


@dataclass
class SpeedMatchConfig:
    trigger_speed: float = 45.0
    trigger_occ: float = 0.18
    persistence: int = 2
    release_speed: float = 55.0
    release_persistence: int = 3
    distance_limit: float = 1.0  # miles
    step_increment: float = 10.0
    bounds: tuple[float, float] = (MIN_LIMIT_MPH, MAX_LIMIT_MPH)

    def __post_init__(self):
        if self.release_speed <= self.trigger_speed:
            raise ValueError("release_speed must exceed trigger_speed")
        if self.persistence < 1 or self.release_persistence < 1 or self.distance_limit < 0:
            raise ValueError("persistence windows must be >= 1 and distance_limit >= 0")


@dataclass
class SpeedMatching:
    """Rule-based controller matching the slowest nearby downstream speed.

    A gantry latches on after ``persistence`` consecutive windows in which any
    sensor between it and ``distance_limit`` miles downstream is slower than
    ``trigger_speed`` or busier than ``trigger_occ``, and latches off after
    ``release_persistence`` windows in which all of them read at least
    ``release_speed``. Active gantries post the rounded slowest speed; gantries
    upstream of them step back up by ``step_increment`` per gantry.
    """

    config: SpeedMatchConfig = field(default_factory=SpeedMatchConfig)
    name: str = "speed-matching"

    def reset(self, layout: CorridorLayout):
        g = np.asarray(layout.gantry_positions)
        s = np.asarray(layout.sensor_positions)
        d = self.config.distance_limit
        # sensors at or downstream of each gantry, within the distance limit
        self.coverage = [np.flatnonzero((s <= gi + 0.2 + 1e-9) & (s >= gi - d - 1e-9))
                         for gi in g]
        self.agent_gantries = list(layout.agent_gantries)
        self.active = np.zeros(g.size, dtype=bool)
        self.bad_run = np.zeros(g.size, dtype=np.int64)
        self.clear_run = np.zeros(g.size, dtype=np.int64)

    def gantry_profile(self, readings: Sequence[SensorReading]) -> np.ndarray:
        cfg = self.config
        speed = np.array([r.mean_speed for r in readings])
        occ = np.array([r.occupancy for r in readings])
        lo, hi = cfg.bounds
        out = np.full(speed.size, hi)
        for g, cov in enumerate(self.coverage):
            slowest = speed[cov].min()
            bad = slowest < cfg.trigger_speed or occ[cov].max() > cfg.trigger_occ
            clear = slowest >= cfg.release_speed
            self.bad_run[g] = self.bad_run[g] + 1 if bad else 0
            self.clear_run[g] = self.clear_run[g] + 1 if clear else 0
            if not self.active[g] and self.bad_run[g] >= cfg.persistence:
                self.active[g] = True
            elif self.active[g] and self.clear_run[g] >= cfg.release_persistence:
                self.active[g] = False
            if self.active[g]:
                out[g] = min(max(round_to_ten(slowest), lo), hi)
        # step back up going upstream
        for g in range(1, out.size):
            out[g] = min(out[g], out[g - 1] + cfg.step_increment)
        assert stepdown_violations(out, cfg.step_increment) == 0
        return out

    def act(self, readings, traffic) -> np.ndarray:
        return self.gantry_profile(readings)[self.agent_gantries]


def speed_matching(history: Sequence[Sequence[SensorReading]], layout: CorridorLayout,
                   config: Optional[SpeedMatchConfig] = None) -> np.ndarray:
    """Replay a reading history through a fresh controller; return the last gantry profile."""
    ctl = SpeedMatching(config or SpeedMatchConfig())
    ctl.reset(layout)
    out = np.full(layout.n_gantries, float(MAX_LIMIT_MPH))
    for readings in history:
        out = ctl.gantry_profile(readings)
    return out


@dataclass
class PolicyController:
    """Executes a trained shared policy through the sequential protocol."""

    actor: MLP
    masking: bool = True
    mode: str = "argmax"
    seed: int = 0
    a_diff: float = 10.0
    name: str = "policy"
    last: Optional[Decision] = None

    def __post_init__(self):
        if self.mode not in ("argmax", "sample"):
            raise ValueError("mode must be 'argmax' or 'sample'")
        self.rng = np.random.default_rng(self.seed)

    def reset(self, layout: CorridorLayout):
        self.rng = np.random.default_rng(self.seed)

    def policy(self, obs: np.ndarray) -> np.ndarray:
        return forward_policy(self.actor, normalize_obs(obs))[0]

    def mask_fn(self, prev: float, first: bool) -> np.ndarray:
        return invalid_action_mask(prev, self.a_diff, first).valid

    def decide(self, traffic: np.ndarray) -> Decision:
        select = argmax_selector if self.mode == "argmax" else sampling_selector(self.rng)
        self.last = sequential_decide(self.policy, traffic, select,
                                      self.mask_fn if self.masking else None)
        return self.last

    def act(self, readings, traffic) -> np.ndarray:
        return self.decide(traffic).actions_mph


def policy_controller(actor: MLP, traffic: np.ndarray, masking: bool = True,
                      mode: str = "argmax", seed: int = 0) -> np.ndarray:
    return PolicyController(actor, masking, mode, seed).decide(traffic).actions_mph
