"""Attribution of logged policy decisions to observation features."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .controllers import PolicyController
from .env import VSLEnv, action_index, normalize_obs
from .nn import MLP, action_score, integrated_gradients
from .sim.layout import Scenario

FEATURES = ["prev_action", "speed", "occupancy", "up_speed", "up_occupancy"]

# limit transitions of one agent between consecutive steps, keyed by case number
DECISION_CASES = {
    1: (70, 30),
    2: (40, 30),
    3: (50, 40),
    4: (30, 70),
    5: (30, 40),
    6: (40, 50),
}

ATTRIBUTION_HEADER = ["case", "from_mph", "to_mph", "n_samples", *FEATURES, "score_change"]


@dataclass
class DecisionHistory:
    observations: np.ndarray  # (steps, agents, 5) raw observations at decision time
    actions: np.ndarray  # (steps, agents) mph


@dataclass
class CaseAttribution:
    case: int
    from_mph: float
    to_mph: float
    samples: list[tuple[int, int]] = field(default_factory=list)  # (step, agent)
    attributions: np.ndarray = field(default_factory=lambda: np.zeros((0, 5)))
    score_change: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def mean(self) -> np.ndarray:
        if len(self.samples) == 0:
            return np.full(len(FEATURES), np.nan)
        return self.attributions.mean(axis=0)


def record_decisions(scenario: Scenario, actor: MLP, seed: int = 0,
                     masking: bool = True) -> DecisionHistory:
    """Run the policy for one episode and keep every observation it acted on."""
    env = VSLEnv(scenario)
    env.reset(seed)
    ctl = PolicyController(actor, masking=masking)
    ctl.reset(scenario.layout)
    obs, acts = [], []
    while not env.done:
        d = ctl.decide(env.traffic)
        obs.append(d.observations)
        acts.append(d.actions_mph)
        env.step(d.actions_mph)
    return DecisionHistory(np.array(obs, dtype=float), np.array(acts, dtype=float))


def find_transitions(history: DecisionHistory, from_mph: float, to_mph: float,
                     max_samples: Optional[int] = 5) -> list[tuple[int, int]]:
    """(step, agent) pairs where an agent moved from ``from_mph`` to ``to_mph``."""
    a = history.actions
    hits = []
    for t in range(1, a.shape[0]):
        for i in range(a.shape[1]):
            if a[t - 1, i] == from_mph and a[t, i] == to_mph:
                hits.append((t, i))
                if max_samples is not None and len(hits) >= max_samples:
                    return hits
    return hits


def attribute_case(actor: MLP, history: DecisionHistory, case: int, steps: int = 256,
                   max_samples: int = 5, quantity: str = "prob") -> CaseAttribution:
    """Integrated gradients from the state one step earlier to the state at the decision.

    The target is the action actually taken at the later step.
    """
    if case not in DECISION_CASES:
        raise ValueError(f"unknown case {case}; choose from {sorted(DECISION_CASES)}")
    lo, hi = DECISION_CASES[case]
    samples = find_transitions(history, lo, hi, max_samples)
    out = CaseAttribution(case, float(lo), float(hi), samples)
    rows, deltas = [], []
    for t, i in samples:
        base = normalize_obs(history.observations[t - 1, i])
        x = normalize_obs(history.observations[t, i])
        a = action_index(history.actions[t, i])
        rows.append(integrated_gradients(actor, base, x, a, steps, quantity))
        deltas.append(float(action_score(actor, x, a, quantity) - action_score(actor, base, a, quantity)))
    if rows:
        out.attributions = np.array(rows)
        out.score_change = np.array(deltas)
    return out


def write_attributions(path, results: Sequence[CaseAttribution]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ATTRIBUTION_HEADER)
        for r in results:
            change = float(r.score_change.mean()) if r.score_change.size else float("nan")
            w.writerow([r.case, r.from_mph, r.to_mph, len(r.samples),
                        *[repr(float(v)) for v in r.mean], repr(float(change))])
    return path
