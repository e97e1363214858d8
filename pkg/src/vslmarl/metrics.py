"""Safety and mobility metrics, seeded evaluation runs and report output."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .env import VSLEnv
from .rewards import RewardWeights
from .sim.layout import Scenario

log = logging.getLogger(__name__)

REPORT_HEADER = ["controller", "seed", "adaptation_violations", "stepdown_violations",
                 "normalized_cvs", "cvs_flagged", "max_queue_mi"]
SUMMARY_HEADER = ["controller", "metric", "mean", "std", "n_seeds"]


@dataclass(frozen=True)
class SafetyMetricConfig:
    alpha: float = 0.1
    congestion_speed: float = 35.0
    segment_length: float = 0.5
    a_diff: float = 10.0

    def __post_init__(self):
        if not 0 < self.alpha < 1 or self.congestion_speed <= 0 or self.segment_length <= 0:
            raise ValueError("need 0 < alpha < 1 and positive congestion_speed/segment_length")


def cvs_step(v_i: float, v_up: float) -> float:
    """Speed variation between a sensor and its upstream neighbour, 0 unless ``v_i`` is the slower."""
    if v_i < 0 or v_up < 0:
        raise ValueError("speeds must be >= 0")
    mean = 0.5 * (v_i + v_up)
    if mean == 0:
        return 0.0
    if v_i > mean:
        return 0.0
    return abs(v_i - v_up) / 2.0 / mean


def normalized_cvs_detail(values: Iterable[float], alpha: float = 0.1) -> tuple[float, bool]:
    """Mean of the values above ``alpha``; ``(0, True)`` when none exceed it."""
    v = np.asarray(list(values), dtype=float).ravel()
    if v.size == 0:
        raise ValueError("empty CVS history")
    hit = v[v > alpha]
    if hit.size == 0:
        return 0.0, True
    return float(hit.mean()), False


def normalized_cvs(values: Iterable[float], alpha: float = 0.1) -> float:
    return normalized_cvs_detail(values, alpha)[0]


def queue_length(speeds: Sequence[float], config: SafetyMetricConfig = SafetyMetricConfig()) -> float:
    """Miles of corridor whose gantry reads below the congestion speed."""
    s = np.asarray(speeds, dtype=float)
    return config.segment_length * int(np.sum(s < config.congestion_speed))


def violation_counts(rows: Sequence[Sequence[float]],
                     config: SafetyMetricConfig = SafetyMetricConfig()) -> tuple[int, int]:
    """Adaptation and step-down violations in an episode log.

    Rows follow the episode-log layout ``(step, agent, action_mph, nu, ...)`` with
    agents numbered downstream-first.
    """
    adapt = 0
    by_step: dict[int, dict[int, float]] = {}
    for r in rows:
        step, agent, a, nu = int(r[0]), int(r[1]), float(r[2]), float(r[3])
        if nu <= config.congestion_speed and a != 30:
            adapt += 1
        by_step.setdefault(step, {})[agent] = a
    step_down = 0
    for acts in by_step.values():
        for agent, a in acts.items():
            if agent > 0 and agent - 1 in acts and a > acts[agent - 1] + config.a_diff:
                step_down += 1
    return adapt, step_down


@dataclass
class RunMetrics:
    seed: int
    adaptation_violations: int
    stepdown_violations: int
    normalized_cvs: float
    cvs_flagged: bool
    max_queue_mi: float
    speed_grid: np.ndarray  # (gantries, steps)
    limit_grid: np.ndarray
    log: list = field(default_factory=list)


@dataclass
class EvaluationReport:
    controller: str
    runs: list[RunMetrics]
    failures: dict[int, str] = field(default_factory=dict)

    def _stat(self, name: str) -> tuple[float, float]:
        vals = np.array([float(getattr(r, name)) for r in self.runs])
        if vals.size == 0:
            return float("nan"), float("nan")
        return float(vals.mean()), float(vals.std())

    def summary(self) -> dict[str, tuple[float, float]]:
        return {k: self._stat(k) for k in ("adaptation_violations", "stepdown_violations",
                                           "normalized_cvs", "max_queue_mi")}

    def table(self) -> str:
        s = self.summary()
        cells = [f"{m:.3f} ± {sd:.3f}" for m, sd in s.values()]
        head = f"{'controller':<18}" + "".join(f"{k:>26}" for k in s)
        return head + "\n" + f"{self.controller:<18}" + "".join(f"{c:>26}" for c in cells)


def run_episode(scenario: Scenario, controller, seed: int,
                weights: RewardWeights = RewardWeights(),
                config: SafetyMetricConfig = SafetyMetricConfig()) -> RunMetrics:
    env = VSLEnv(scenario, weights)
    env.reset(seed)
    controller.reset(scenario.layout)
    cvs, queue = [], []
    while not env.done:
        res = env.step(controller.act(env.readings, env.traffic))
        cvs.extend(cvs_step(t[0], t[2]) for t in res.traffic)
        queue.append(queue_length([r.mean_speed for r in res.readings], config))
    adapt, step_down = violation_counts(env.log, config)
    ncvs, flagged = normalized_cvs_detail(cvs, config.alpha)
    return RunMetrics(seed, adapt, step_down, ncvs, flagged, max(queue),
                      np.array(env.speed_grid).T, np.array(env.limit_grid).T, env.log)


def run_evaluation(scenario: Scenario, controller_factory: Callable[[], object],
                   seeds: Sequence[int], name: Optional[str] = None,
                   config: SafetyMetricConfig = SafetyMetricConfig(),
                   out_dir=None) -> EvaluationReport:
    """Evaluate a controller over seeded runs; failed seeds are recorded and skipped."""
    runs, failures = [], {}
    label = name
    for s in seeds:
        ctl = controller_factory()
        label = label or getattr(ctl, "name", "controller")
        try:
            runs.append(run_episode(scenario, ctl, int(s), config=config))
        except Exception as exc:  # keep going, report at the end
            log.warning("seed %s failed: %s", s, exc)
            failures[int(s)] = f"{type(exc).__name__}: {exc}"
    rep = EvaluationReport(label or "controller", runs, failures)
    if out_dir is not None:
        write_report(Path(out_dir) / f"report_{rep.controller}.csv", [rep])
        for r in runs:
            write_grid(Path(out_dir) / f"speed_{rep.controller}_seed{r.seed}.csv", r.speed_grid)
            write_grid(Path(out_dir) / f"limits_{rep.controller}_seed{r.seed}.csv", r.limit_grid)
    return rep


def write_report(path, reports: Sequence[EvaluationReport]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_HEADER)
        for rep in reports:
            for r in rep.runs:
                w.writerow([rep.controller, r.seed, r.adaptation_violations,
                            r.stepdown_violations, repr(float(r.normalized_cvs)),
                            int(r.cvs_flagged), repr(float(r.max_queue_mi))])
    with open(path.with_name(path.stem + "_summary.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_HEADER)
        for rep in reports:
            for k, (m, sd) in rep.summary().items():
                w.writerow([rep.controller, k, repr(float(m)), repr(float(sd)), len(rep.runs)])
    return path


def write_grid(path, grid: np.ndarray) -> Path:
    """Rows are gantries downstream-first, columns are control steps."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, np.asarray(grid, dtype=float), delimiter=",", fmt="%.6g")
    return path


def read_grid(path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, delimiter=","))
