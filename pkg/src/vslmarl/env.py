"""Cooperative multi-agent environment around the corridor simulator.

Agents are ordered downstream-first. Each control step every agent sees
``[prev_action, speed, occupancy, upstream speed, upstream occupancy]``, where
``prev_action`` is the limit just chosen by its downstream neighbour (70 for
the most downstream agent). Limits take effect together once all agents have
decided.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import ACTIONS_MPH, MAX_LIMIT_MPH, N_ACTIONS
from .rewards import RewardBreakdown, RewardWeights, compute_rewards
from .sensing import SensorReading
from .sim.layout import Scenario
from .sim.world import World

OBS_DIM = 5
OBS_SCALE = np.array([70.0, 70.0, 1.0, 70.0, 1.0])
EPISODE_LOG_HEADER = ["step", "agent", "action_mph", "nu", "occ", "r1", "r2", "r3", "total"]

Policy = Callable[[np.ndarray], np.ndarray]
Selector = Callable[[np.ndarray], int]
MaskFn = Callable[[float, bool], np.ndarray]


def action_index(mph: float) -> int:
    for k, a in enumerate(ACTIONS_MPH):
        if float(mph) == a:
            return k
    raise ValueError(f"{mph!r} mph is not a valid speed limit")


@dataclass(frozen=True)
class SpeedLimitAction:
    index: int

    def __post_init__(self):
        if not 0 <= self.index < N_ACTIONS:
            raise ValueError(f"action index {self.index} out of range")

    @property
    def value(self) -> int:
        return ACTIONS_MPH[self.index]

    @classmethod
    def from_mph(cls, mph: float) -> "SpeedLimitAction":
        return cls(action_index(mph))


def normalize_obs(obs: np.ndarray) -> np.ndarray:
    """Divide speed-like columns by 70; occupancy stays a raw fraction."""
    obs = np.asarray(obs, dtype=float)
    if obs.shape[-1] != OBS_DIM:
        raise ValueError(f"observations need {OBS_DIM} entries, got {obs.shape[-1]}")
    return obs / OBS_SCALE


def global_state(norm_obs: np.ndarray) -> np.ndarray:
    """Concatenate every agent's normalised observation, downstream-first."""
    return np.asarray(norm_obs, dtype=float).reshape(-1)


def agent_traffic(readings: Sequence[SensorReading], agent_gantries: Sequence[int]) -> np.ndarray:
    """``(n_agents, 4)`` array of local and upstream speed/occupancy.

    The gantry just upstream supplies the upstream pair; an agent at the
    upstream end of the corridor repeats its own reading.
    """
    n_g = len(readings)
    out = np.empty((len(agent_gantries), 4))
    for i, g in enumerate(agent_gantries):
        up = readings[g + 1] if g + 1 < n_g else readings[g]
        r = readings[g]
        out[i] = (r.mean_speed, r.occupancy, up.mean_speed, up.occupancy)
    return out


def argmax_selector(probs: np.ndarray) -> int:
    return int(np.argmax(probs))


def sampling_selector(rng: np.random.Generator) -> Selector:
    def select(probs: np.ndarray) -> int:
        return int(rng.choice(N_ACTIONS, p=probs))
    return select


@dataclass
class Decision:
    actions_mph: np.ndarray  # (n,)
    indices: np.ndarray  # (n,)
    observations: np.ndarray  # raw (n, 5)
    probs: np.ndarray  # (n, 5), after masking


def _check_distribution(p: np.ndarray, agent: int) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.shape != (N_ACTIONS,) or not np.isfinite(p).all() or (p < 0).any() \
            or abs(p.sum() - 1.0) > 1e-6:
        raise ValueError(f"policy output for agent {agent} is not a distribution over "
                         f"{N_ACTIONS} actions: {p!r}")
    return p


def apply_mask(probs: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Zero out invalid actions and renormalise over the valid ones."""
    p = np.where(mask, probs, 0.0)
    s = p.sum()
    if s <= 0:
        # every valid action had zero mass; fall back to uniform over the valid set
        p = mask.astype(float)
        s = p.sum()
    return p / s


def sequential_decide(policy: Policy, traffic: np.ndarray, select: Selector = argmax_selector,
                      mask_fn: Optional[MaskFn] = None) -> Decision:
    """Let agents decide one after another, downstream first.

    ``policy`` maps a raw observation to a distribution over the five actions.
    ``traffic`` holds each agent's ``[speed, occ, up_speed, up_occ]`` (a
    leading prev-action column, if present, is ignored). ``mask_fn(prev, is_first)``
    returns the boolean set of allowed actions.
    """
    traffic = np.asarray(traffic, dtype=float)
    if traffic.ndim != 2 or traffic.shape[1] not in (4, 5):
        raise ValueError(f"traffic must be (n_agents, 4|5), got {traffic.shape}")
    traffic = traffic[:, -4:]
    n = traffic.shape[0]
    obs = np.empty((n, OBS_DIM))
    probs = np.empty((n, N_ACTIONS))
    idx = np.empty(n, dtype=np.int64)
    prev = float(MAX_LIMIT_MPH)
    for i in range(n):
        obs[i, 0] = prev
        obs[i, 1:] = traffic[i]
        p = _check_distribution(policy(obs[i]), i)
        if mask_fn is not None:
            p = apply_mask(p, np.asarray(mask_fn(prev, i == 0), dtype=bool))
        probs[i] = p
        idx[i] = select(p)
        prev = float(ACTIONS_MPH[idx[i]])
    acts = np.array([ACTIONS_MPH[k] for k in idx], dtype=float)
    return Decision(acts, idx, obs, probs)


@dataclass
class StepResult:
    traffic: np.ndarray  # (n_agents, 4) for the next decision
    rewards: list[RewardBreakdown]
    done: bool
    readings: list[SensorReading]


@dataclass
class VSLEnv:
    scenario: Scenario
    weights: RewardWeights = field(default_factory=RewardWeights)

    def __post_init__(self):
        self.scenario.validate()
        self.agent_gantries = list(self.scenario.layout.agent_gantries)
        self.n_agents = len(self.agent_gantries)
        self.n_gantries = self.scenario.layout.n_gantries
        self.world: Optional[World] = None
        self.t = 0
        self.done = True
        self.log: list[list] = []
        self.speed_grid: list[np.ndarray] = []  # per step, per gantry
        self.limit_grid: list[np.ndarray] = []
        self.readings: list[SensorReading] = []
        self.traffic = np.zeros((self.n_agents, 4))

    def initial_observations(self) -> np.ndarray:
        obs = np.empty((self.n_agents, OBS_DIM))
        obs[:, 0] = MAX_LIMIT_MPH
        obs[:, 1:] = self.traffic
        return obs

    def reset(self, seed: Optional[int] = None) -> np.ndarray:
        """Warm up under all-70 limits and return observations (prev_action = 70)."""
        sc = self.scenario
        self.world = World(sc, seed)
        limits = np.full(self.n_gantries, float(MAX_LIMIT_MPH))
        warm_ticks = int(round(sc.warmup_s / sc.dt))
        last = min(sc.steps_per_control, warm_ticks)
        self.world.run(limits, warm_ticks - last, record=False)
        self.world.sensors.reset()
        self.world.run(limits, last)
        self.readings = self.world.sensors.aggregate(self.world.time, last * sc.dt or 60.0)
        self.traffic = agent_traffic(self.readings, self.agent_gantries)
        self.t = 0
        self.done = False
        self.log = []
        self.speed_grid, self.limit_grid = [], []
        return self.initial_observations()

    def posted_limits(self, actions_mph: Sequence[float]) -> np.ndarray:
        a = np.asarray(actions_mph, dtype=float)
        if a.shape != (self.n_agents,):
            raise ValueError(f"expected {self.n_agents} actions, got shape {a.shape}")
        for v in a:
            action_index(v)
        lim = np.full(self.n_gantries, float(MAX_LIMIT_MPH))
        lim[self.agent_gantries] = a
        return lim

    def step(self, actions_mph: Sequence[float]) -> StepResult:
        if self.world is None or self.done:
            raise RuntimeError("step() called on a finished or un-reset environment")
        sc = self.scenario
        lim = self.posted_limits(actions_mph)
        self.world.run(lim, sc.steps_per_control)
        self.readings = self.world.sensors.aggregate(self.world.time, sc.control_interval_s)
        self.traffic = agent_traffic(self.readings, self.agent_gantries)
        rewards = compute_rewards(list(lim[self.agent_gantries]), self.traffic[:, 0],
                                  self.weights)
        for i, rb in enumerate(rewards):
            self.log.append([self.t, i, float(lim[self.agent_gantries[i]]),
                             float(self.traffic[i, 0]), float(self.traffic[i, 1]),
                             rb.r1, rb.r2, rb.r3, rb.total])
        self.speed_grid.append(np.array([r.mean_speed for r in self.readings]))
        self.limit_grid.append(lim)
        self.t += 1
        self.done = self.t >= sc.episode_steps
        return StepResult(self.traffic.copy(), rewards, self.done, self.readings)

    def write_log(self, path) -> Path:
        return write_episode_log(path, self.log)


def write_episode_log(path, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(EPISODE_LOG_HEADER)
        for r in rows:
            w.writerow([int(r[0]), int(r[1])] + [repr(float(v)) for v in r[2:]])
    return path


def read_episode_log(path) -> list[list]:
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if header != EPISODE_LOG_HEADER:
            raise ValueError(f"unexpected episode-log header {header}")
        return [[int(r[0]), int(r[1])] + [float(v) for v in r[2:]] for r in rd]
