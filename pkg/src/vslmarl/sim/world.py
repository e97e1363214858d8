"""Seeded multi-lane freeway microsimulation.

Vehicle state lives in parallel numpy arrays kept sorted by (lane, x), where
``x`` is metres travelled from the upstream entry. Lane 0 is the rightmost
lane, the one ramps feed into. Lane changes come from ramp merges, the
weaving of merged ramp vehicles toward their target lane, yielding near a
merge and discretionary changes with a politeness-weighted incentive rule.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .. import ACTIONS_MPH
from ..sensing import SensorBank, SensorReading
from ..units import METERS_PER_MILE, ft_to_m, m_to_miles, mph_to_mps, mps_to_mph
from ._kernel import advance, effective_desired, lane_change_pass
from .idm import MAX_DECEL, DriverParams, VehicleState
from .layout import Ramp, Scenario

MERGE_ZONE_M = 120.0  # acceleration-lane length upstream of the merge point
MERGE_HEADWAY_S = 0.4  # accepted time gap for merges and weaving
CAP_EPS_M = 0.1
YIELD_ZONE_M = 400.0  # lane-0 drivers this far upstream of a merge may move over
YIELD_PROB = 0.2
GAP_SEEK_M = 15.0  # a weaving driver may adjust this far to line up with a gap
RAMP_STORAGE_PER_LANE = 60  # arrivals beyond this divert away from the corridor
# discretionary lane changing (incentive/safety rule with politeness)
LC_POLITENESS = 0.3
LC_THRESHOLD = 0.2  # m/s^2 advantage needed to change lanes
LC_SAFE_DECEL = 8.0  # m/s^2 the new follower may be forced to brake at most
LC_KEEP_RIGHT_BIAS = 0.1  # m/s^2 in favour of moving right
LC_CONSIDER_PROB = 0.25  # share of drivers looking for a change each tick

_FIELDS = ("id", "lane", "x", "v", "v0", "compliant", "length", "target", "weave_end")


class SimulationError(RuntimeError):
    pass


class World:
    def __init__(self, scenario: Scenario, seed: Optional[int] = None):
        self.scenario = scenario
        self.layout = scenario.layout
        self.params: DriverParams = scenario.driver
        self.rng = np.random.default_rng(scenario.seed if seed is None else seed)
        self.time = 0.0
        self.next_id = 0
        self.length_m = self.layout.length * METERS_PER_MILE
        self.veh_len_m = ft_to_m(scenario.vehicle_length_ft)

        self.id = np.zeros(0, dtype=np.int64)
        self.lane = np.zeros(0, dtype=np.int64)
        self.x = np.zeros(0)
        self.v = np.zeros(0)
        self.v0 = np.zeros(0)
        self.compliant = np.zeros(0, dtype=bool)
        self.length = np.zeros(0)
        self.target = np.zeros(0, dtype=np.int64)
        self.weave_end = np.zeros(0)

        self.pending = np.zeros(self.layout.lanes)  # blocked mainline arrivals per lane
        self.ramp_queue = np.zeros(len(self.layout.ramps), dtype=np.int64)
        self.spawned = 0
        self.exited = 0
        self.blocked_insertions = 0
        self.ramp_diverted = 0
        self.lane_changes = 0

        g_lo, g_hi = self.layout.segment_bounds()
        self._seg_lo = g_lo
        self._seg_hi = g_hi
        self._seg_lo_x = self.to_x(g_lo)
        self._seg_hi_x = self.to_x(g_hi)
        sensor_mp = np.asarray(self.layout.sensor_positions)
        self._sensor_x = self.to_x(sensor_mp)
        self._sensor_order = np.argsort(self._sensor_x, kind="stable")
        self._sensor_x_sorted = self._sensor_x[self._sensor_order]
        self.sensors = SensorBank(len(sensor_mp), lanes=self.layout.lanes)
        self.limits = np.full(self.layout.n_gantries, 70.0)

    # coordinate helpers
    def to_x(self, milepost):
        return (self.layout.length - np.asarray(milepost, dtype=float)) * METERS_PER_MILE

    def to_milepost(self, x):
        return self.layout.length - np.asarray(x, dtype=float) / METERS_PER_MILE

    @property
    def n_vehicles(self) -> int:
        return int(self.x.size)

    def vehicles(self) -> list[VehicleState]:
        return [VehicleState(int(i), int(l), float(m_to_miles(x)), float(mps_to_mph(v)),
                             float(mps_to_mph(v0)), bool(c), float(ln / 0.3048))
                for i, l, x, v, v0, c, ln in zip(self.id, self.lane, self.x, self.v,
                                                 self.v0, self.compliant, self.length)]

    def snapshot(self) -> dict:
        return {f: getattr(self, f).copy() for f in _FIELDS} | {
            "time": self.time, "pending": self.pending.copy(),
            "ramp_queue": self.ramp_queue.copy()}

    # vehicle bookkeeping
    def _sample_free_speeds(self, n: int) -> np.ndarray:
        p = self.params
        out = self.rng.normal(p.free_speed_mean, p.free_speed_std, n)
        bad = (out < 50.0) | (out > 85.0)
        while bad.any():
            out[bad] = self.rng.normal(p.free_speed_mean, p.free_speed_std, int(bad.sum()))
            bad = (out < 50.0) | (out > 85.0)
        return mph_to_mps(out)

    def _append(self, lane, x, v, v0, compliant, target=None, weave_end=None):
        n = len(lane)
        if n == 0:
            return
        ids = np.arange(self.next_id, self.next_id + n, dtype=np.int64)
        self.next_id += n
        self.spawned += n
        lane = np.asarray(lane, dtype=np.int64)
        new = {
            "id": ids, "lane": lane, "x": np.asarray(x, float), "v": np.asarray(v, float),
            "v0": np.asarray(v0, float), "compliant": np.asarray(compliant, bool),
            "length": np.full(n, self.veh_len_m),
            "target": lane.copy() if target is None else np.asarray(target, np.int64),
            "weave_end": np.zeros(n) if weave_end is None else np.asarray(weave_end, float),
        }
        for f in _FIELDS:
            setattr(self, f, np.concatenate([getattr(self, f), new[f]]))
        self._sort()

    def _sort(self):
        order = np.lexsort((self.x, self.lane))
        for f in _FIELDS:
            setattr(self, f, getattr(self, f)[order])

    def _lane_slices(self):
        bounds = np.searchsorted(self.lane, np.arange(self.layout.lanes + 1))
        return [slice(bounds[l], bounds[l + 1]) for l in range(self.layout.lanes)]

    def check_finite(self):
        if not (np.isfinite(self.x).all() and np.isfinite(self.v).all()):
            raise SimulationError(f"non-finite vehicle state at t={self.time:.1f} s")

    def posted_limits_per_vehicle(self, posted_mph: np.ndarray) -> np.ndarray:
        """Posted limit (m/s) governing each vehicle; ``inf`` outside any segment."""
        mp = self.to_milepost(self.x)
        k = np.searchsorted(self._seg_lo, mp, side="right") - 1
        inside = (k >= 0) & (mp < self._seg_hi[np.clip(k, 0, None)])
        lim = np.full(self.x.size, np.inf)
        lim[inside] = mph_to_mps(posted_mph[k[inside]])
        return lim

    # one simulation tick
    def tick(self, posted_limits: Sequence[float], record: bool = True):
        """Spawn, merge, weave and advance every vehicle by one ``dt``."""
        spawn_vehicles(self, self.scenario.demand, self.rng, self.scenario.compliance_rate)
        for k, ramp in enumerate(self.layout.ramps):
            merge_onramp(self, ramp, self.rng, k)
        weave(self)
        change_lanes(self, posted_limits)
        step_simulation(self, posted_limits, self.scenario.dt, record=record)
        return self

    def run(self, posted_limits: Sequence[float], n_ticks: int, record: bool = True):
        lim = validate_limits(self, posted_limits)
        for _ in range(n_ticks):
            self.tick(lim, record=record)
        return self


def validate_limits(world: World, posted_limits) -> np.ndarray:
    if posted_limits is world.limits:
        return posted_limits
    lim = np.asarray(posted_limits, dtype=float)
    if lim.shape != (world.layout.n_gantries,):
        raise ValueError(f"expected {world.layout.n_gantries} posted limits, got {lim.shape}")
    if not np.isin(lim, ACTIONS_MPH).all():
        raise ValueError(f"posted limits must be in {ACTIONS_MPH}, got {lim.tolist()}")
    return lim


def step_simulation(world: World, posted_limits, dt: float, record: bool = True) -> World:
    """Advance every vehicle one car-following step of ``dt`` seconds."""
    if not 0.0 < dt <= 1.0:
        raise ValueError("dt must lie in (0, 1]")
    lim = validate_limits(world, posted_limits)
    world.limits = lim
    world.check_finite()
    n = world.n_vehicles
    if n == 0:
        world.time += dt
        return world

    p = world.params
    x, v = world.x, world.v
    x_new, v_new, rec, bad = advance(
        world.lane, x, v, world.v0, world.compliant, world.length,
        world._seg_lo_x, world._seg_hi_x, mph_to_mps(lim), world._sensor_x_sorted,
        dt, p.desired_time_headway, p.max_accel, p.comfort_decel, p.jam_gap,
        p.accel_exponent, MAX_DECEL, CAP_EPS_M)
    if bad >= 0:
        raise SimulationError(f"collision detected at t={world.time:.1f} s "
                              f"(vehicle {int(world.id[bad])})")
    if record and rec.shape[0]:
        k = rec[:, 0].astype(np.int64)
        world.sensors.record_many(world._sensor_order[rec[:, 1].astype(np.int64)],
                                  mps_to_mph(rec[:, 2]), world.length[k] / 0.3048)

    world.x = x_new
    world.v = v_new
    world.time += dt

    gone = world.x >= world.length_m
    if gone.any():
        keep = ~gone
        world.exited += int(gone.sum())
        for f in _FIELDS:
            setattr(world, f, getattr(world, f)[keep])
    return world


def spawn_vehicles(world: World, demand, rng: np.random.Generator,
                   compliance_rate: float) -> World:
    """Poisson mainline arrivals; blocked insertions stay pending."""
    if not 0.0 <= compliance_rate <= 1.0:
        raise ValueError("compliance_rate must lie in [0, 1]")
    rate = demand.mainline_rate(world.time)
    lanes = world.layout.lanes
    world.pending += rng.poisson(rate * world.scenario.dt / 3600.0, lanes)
    want = np.nonzero(world.pending >= 1)[0]
    if want.size == 0:
        return world
    p = world.params
    v0 = world._sample_free_speeds(want.size)
    comp = rng.random(want.size) < compliance_rate
    slices = world._lane_slices()
    ins_lane, ins_v, ins_v0, ins_c = [], [], [], []
    for j, l in enumerate(want):
        sl = slices[l]
        v_ins = v0[j]
        if sl.stop > sl.start:
            k = sl.start  # most upstream vehicle in the lane
            v_ins = min(v_ins, world.v[k])
            room = world.x[k] - world.length[k]
            if room < p.jam_gap + v_ins * p.desired_time_headway:
                world.blocked_insertions += 1
                continue
        ins_lane.append(l)
        ins_v.append(v_ins)
        ins_v0.append(v0[j])
        ins_c.append(comp[j])
        world.pending[l] -= 1
    world._append(ins_lane, np.zeros(len(ins_lane)), ins_v, ins_v0, ins_c)
    return world


def _gap_ok(world: World, gap, v) -> np.ndarray:
    """Time-gap acceptance: bumper gap of at least jam gap + ``MERGE_HEADWAY_S`` * speed."""
    return np.asarray(gap) >= world.params.jam_gap + MERGE_HEADWAY_S * np.asarray(v)


def _lane_gap_slot(world: World, lane: int, y_lo: float, y_hi: float, v_new: float):
    """Most downstream mid-gap position in [y_lo, y_hi] where a merge is safe."""
    sl = world._lane_slices()[lane]
    xs, vs, lens = world.x[sl], world.v[sl], world.length[sl]
    L = world.veh_len_m
    fol_x = np.concatenate([[-np.inf], xs])
    fol_v = np.concatenate([[0.0], vs])
    lead_x = np.concatenate([xs, [np.inf]])
    lead_len = np.concatenate([lens, [0.0]])
    lead_v = np.concatenate([vs, [np.inf]])
    # the acceleration lane lets a ramp vehicle match the speed of the gap it takes
    v_in = np.where(np.isfinite(lead_v), lead_v, v_new)
    v_in = np.where(np.isfinite(fol_x), np.minimum(v_in, np.maximum(fol_v, 0.0)), v_in)
    v_in = np.where(np.isfinite(fol_x) | np.isfinite(lead_v), v_in, v_new)
    back = fol_x + L  # insertion position where the follower gap is zero
    front = lead_x - lead_len  # insertion position where the leader gap is zero
    both = np.isfinite(back) & np.isfinite(front)
    y = np.full(back.shape, float(y_hi))
    y[both] = 0.5 * (back[both] + front[both])
    only_front = ~np.isfinite(back) & np.isfinite(front)
    y[only_front] = np.minimum(y_hi, front[only_front] - 50.0)
    inside = (y >= y_lo) & (y <= y_hi)
    if not inside.any():
        return None
    fol_gap = y - L - fol_x
    lead_gap = front - y
    ok = inside & _gap_ok(world, fol_gap, fol_v) & _gap_ok(world, lead_gap, v_in)
    idx = np.nonzero(ok)[0]
    if idx.size == 0:
        return None
    g = idx[-1]
    return float(y[g]), float(v_in[g])


def merge_onramp(world: World, ramp: Ramp, rng: np.random.Generator, k: int = 0) -> World:
    """Queue ramp arrivals and insert them into lane 0 at acceptable gaps."""
    if ramp not in world.layout.ramps:
        raise ValueError("ramp is not part of this corridor")
    sc = world.scenario
    rate = sc.demand.ramp_rate(k, world.time) * ramp.ramp_lanes
    arrivals = rng.poisson(rate * sc.dt / 3600.0)
    room = RAMP_STORAGE_PER_LANE * ramp.ramp_lanes - world.ramp_queue[k]
    world.ramp_queue[k] += min(arrivals, max(room, 0))
    world.ramp_diverted += max(arrivals - max(room, 0), 0)
    x_merge = float(world.to_x(ramp.merge_milepost))
    v_ramp = mph_to_mps(sc.ramp_speed_mph)
    weave_end = x_merge + sc.weave_length_mi * METERS_PER_MILE
    for _ in range(ramp.ramp_lanes):
        if world.ramp_queue[k] == 0:
            break
        slot = _lane_gap_slot(world, 0, x_merge - MERGE_ZONE_M, x_merge, v_ramp)
        if slot is None:
            break
        y, v_in = slot
        v0 = world._sample_free_speeds(1)
        comp = rng.random() < sc.compliance_rate
        target = rng.integers(0, world.layout.lanes)
        world._append([0], [y], [v_in], v0, [comp], [target], [weave_end])
        world.ramp_queue[k] -= 1
    return world


def _decide_yielding(world: World):
    """Lane-0 mainline drivers entering a merge area decide once whether to move over."""
    if world.layout.lanes < 2:
        return
    undecided = (world.lane == 0) & (world.weave_end == 0.0)
    if not undecided.any():
        return
    for ramp in world.layout.ramps:
        x_merge = float(world.to_x(ramp.merge_milepost))
        idx = np.nonzero(undecided & (world.x >= x_merge - YIELD_ZONE_M)
                         & (world.x < x_merge))[0]
        if idx.size == 0:
            continue
        go = world.rng.random(idx.size) < YIELD_PROB
        world.target[idx[go]] = 1
        world.weave_end[idx[go]] = x_merge
        world.weave_end[idx[~go]] = -1.0
        undecided[idx] = False


def weave(world: World) -> World:
    """Merged ramp vehicles shift one lane left when the target-lane gap allows."""
    n = world.n_vehicles
    if n == 0:
        return world
    _decide_yielding(world)
    cand = np.nonzero((world.target > world.lane))[0]
    if cand.size == 0:
        return world
    expired = world.x[cand] > world.weave_end[cand]
    if expired.any():
        world.target[cand[expired]] = world.lane[cand[expired]]
        cand = cand[~expired]
    if cand.size == 0:
        return world
    p = world.params
    slices = world._lane_slices()
    moves, dest = [], []
    taken = set()
    for c in cand[::-1]:  # downstream-first
        tl = world.lane[c] + 1
        sl = slices[tl]
        xs = world.x[sl]
        j = np.searchsorted(xs, world.x[c], side="right")
        if (tl, j) in taken:
            continue
        xc, vc = world.x[c], world.v[c]
        lo, hi = -np.inf, np.inf
        if j < xs.size:
            ld = sl.start + j
            hi = world.x[ld] - world.length[ld] - p.jam_gap - MERGE_HEADWAY_S * vc
        if j > 0:
            fo = sl.start + j - 1
            lo = world.x[fo] + world.length[c] + p.jam_gap + MERGE_HEADWAY_S * world.v[fo]
        if lo > hi:
            continue
        y = min(max(xc, lo), hi)
        if abs(y - xc) > GAP_SEEK_M:
            continue
        taken.add((tl, j))
        moves.append(c)
        dest.append(y)
    if moves:
        moves = np.asarray(moves)
        world.lane[moves] += 1
        world.x[moves] = dest
        world._sort()
    return world


def change_lanes(world: World, posted_limits) -> World:
    """Discretionary lane changes; left and right moves alternate between ticks."""
    n = world.n_vehicles
    lanes = world.layout.lanes
    if n < 2 or lanes < 2:
        return world
    lim = validate_limits(world, posted_limits)
    direction = 1 if int(round(world.time / world.scenario.dt)) % 2 == 0 else -1
    eligible = world.target == world.lane
    if direction < 0:
        # mainline drivers do not move into the merge lane close to a merge
        for ramp in world.layout.ramps:
            x_merge = float(world.to_x(ramp.merge_milepost))
            eligible &= ~((world.lane == 1) & (world.x >= x_merge - YIELD_ZONE_M)
                          & (world.x < x_merge))
    p = world.params
    desired = effective_desired(world.x, world.v0, world.compliant, world._seg_lo_x,
                                world._seg_hi_x, mph_to_mps(lim))
    u = world.rng.random(n)
    new_lane = lane_change_pass(
        world.lane, world.x, world.v, desired, world.length, eligible, u, lanes, direction,
        LC_CONSIDER_PROB, p.desired_time_headway, p.max_accel, p.comfort_decel, p.jam_gap,
        p.accel_exponent, LC_POLITENESS, LC_THRESHOLD, LC_SAFE_DECEL, LC_KEEP_RIGHT_BIAS)
    moved = new_lane != world.lane
    if moved.any():
        world.lane = new_lane
        world.target[moved] = new_lane[moved]
        world.lane_changes += int(moved.sum())
        world._sort()
    return world


def export_trajectory_csv(path, rows):
    """Rows of ``(time, id, lane, position_mi, speed_mph)``."""
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "id", "lane", "position_mi", "speed_mph"])
        for r in rows:
            w.writerow(r)


def trajectory_rows(world: World):
    pos = m_to_miles(world.x)
    spd = mps_to_mph(world.v)
    return [(world.time, int(i), int(l), float(p_), float(s))
            for i, l, p_, s in zip(world.id, world.lane, pos, spd)]


def aggregate_readings(world: World) -> list[SensorReading]:
    return world.sensors.aggregate(world.time, world.scenario.control_interval_s)
