"""Training driver for the shared-parameter actor with a centralised or local critic."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .. import MAX_LIMIT_MPH, N_ACTIONS
from ..env import OBS_DIM, normalize_obs, sampling_selector, sequential_decide
from ..nn.checkpoint import Checkpoint, save_checkpoint
from ..nn.mlp import HIDDEN, MLP, forward_policy
from ..nn.optim import AdamState, PopArt
from .ppo import TrajectoryBuffer, compute_gae, ppo_update

log = logging.getLogger(__name__)

CURVE_HEADER = ["step", "seed", "mean_total", "mean_r1", "mean_r2", "mean_r3",
                "actor_loss", "critic_loss", "entropy"]


@dataclass
class TrainConfig:
    episode_length: int = 120
    batch_size: int = 120
    n_minibatch: int = 1
    ppo_epochs: int = 15
    actor_lr: float = 7e-4
    critic_lr: float = 5e-4
    entropy_coef: float = 0.05
    value_loss_coef: float = 1.0
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip: float = 0.2
    max_grad_norm: float = 10.0
    training_step_max: int = 10_000
    checkpoint_every: int = 2_400
    popart_beta: float = 0.02
    bootstrap_time_limit: bool = True  # an episode end is a time cut, not a terminal state
    seed: int = 0
    algorithm: str = "mappo"

    def __post_init__(self):
        self.algorithm = self.algorithm.lower()
        if self.algorithm not in ("mappo", "ippo"):
            raise ValueError("algorithm must be 'mappo' or 'ippo'")
        if not (0 <= self.gamma <= 1 and 0 <= self.gae_lambda <= 1):
            raise ValueError("gamma and gae_lambda must lie in [0, 1]")
        if self.batch_size < 1 or self.n_minibatch < 1 or self.batch_size % self.n_minibatch:
            raise ValueError("n_minibatch must divide batch_size")
        if self.training_step_max < 0 or self.ppo_epochs < 1:
            raise ValueError("training_step_max must be >= 0 and ppo_epochs >= 1")

    def config_hash(self) -> str:
        d = asdict(self)
        d.pop("seed")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def critic_inputs(norm_obs: np.ndarray, algorithm: str) -> np.ndarray:
    """Per-agent critic input.

    ``ippo`` sees the agent's own observation. ``mappo`` sees every agent's
    observation: its own first, then the rest in downstream-first order.
    """
    norm_obs = np.asarray(norm_obs, dtype=float)
    if algorithm == "ippo":
        return norm_obs.copy()
    n = norm_obs.shape[0]
    out = np.empty((n, n * OBS_DIM))
    for i in range(n):
        order = [i] + [j for j in range(n) if j != i]
        out[i] = norm_obs[order].reshape(-1)
    return out


def critic_input_dim(n_agents: int, algorithm: str) -> int:
    return OBS_DIM if algorithm == "ippo" else OBS_DIM * n_agents


@dataclass
class Learner:
    actor: MLP
    critic: MLP
    actor_opt: AdamState
    critic_opt: AdamState
    popart: PopArt
    algorithm: str

    @classmethod
    def create(cls, n_agents: int, cfg: TrainConfig, rng: np.random.Generator) -> "Learner":
        actor = MLP.init([OBS_DIM, *HIDDEN, N_ACTIONS], rng, out_gain=0.01)
        critic = MLP.init([critic_input_dim(n_agents, cfg.algorithm), *HIDDEN, 1], rng,
                          out_gain=1.0)
        return cls(actor, critic, AdamState.for_params(actor.params(), cfg.actor_lr),
                   AdamState.for_params(critic.params(), cfg.critic_lr),
                   PopArt(beta=cfg.popart_beta), cfg.algorithm)

    def values(self, norm_obs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        cin = critic_inputs(norm_obs, self.algorithm)
        return cin, self.popart.denormalize(self.critic.forward(cin)[:, 0])


class Runner:
    """Keeps one environment alive across rollouts, resetting at episode ends."""

    def __init__(self, env, rng: np.random.Generator):
        self.env = env
        self.rng = rng
        self.traffic: Optional[np.ndarray] = None
        self.episodes = 0

    def ensure_reset(self):
        if self.traffic is None or self.env.done:
            obs = self.env.reset(int(self.rng.integers(2**31 - 1)))
            self.traffic = np.asarray(obs)[:, -4:]
            self.episodes += 1


def collect_rollout(runner: Runner, learner: Learner, batch_size: int) -> TrajectoryBuffer:
    """Gather ``batch_size`` control steps with the stochastic shared policy."""
    env = runner.env
    n = env.n_agents
    obs = np.empty((batch_size, n, OBS_DIM))
    cin = np.empty((batch_size, n, critic_input_dim(n, learner.algorithm)))
    acts = np.empty((batch_size, n), dtype=np.int64)
    logp = np.empty((batch_size, n))
    rew = np.empty((batch_size, n))
    vals = np.empty((batch_size, n))
    terms = np.empty((batch_size, n, 3))
    dones = np.zeros(batch_size, dtype=bool)
    ends = np.zeros((batch_size, n))
    select = sampling_selector(runner.rng)

    def policy(o):
        return forward_policy(learner.actor, normalize_obs(o))[0]

    for t in range(batch_size):
        runner.ensure_reset()
        dec = sequential_decide(policy, runner.traffic, select)
        nobs = normalize_obs(dec.observations)
        obs[t] = nobs
        cin[t], vals[t] = learner.values(nobs)
        acts[t] = dec.indices
        logp[t] = np.log(dec.probs[np.arange(n), dec.indices])
        try:
            res = env.step(dec.actions_mph)
        except Exception as exc:
            raise RuntimeError(f"environment failed at rollout step {t}: {exc}") from exc
        rew[t] = [r.total for r in res.rewards]
        terms[t] = [(r.r1, r.r2, r.r3) for r in res.rewards]
        dones[t] = res.done
        runner.traffic = np.asarray(res.traffic)
        if res.done:
            ends[t] = _bootstrap_values(learner, runner.traffic)

    last = np.zeros(n) if dones[-1] else _bootstrap_values(learner, runner.traffic)
    return TrajectoryBuffer(obs, cin, acts, logp, rew, vals, dones, last, terms, ends)


def _bootstrap_values(learner: Learner, traffic: np.ndarray) -> np.ndarray:
    """Values of the state after a step, with every downstream neighbour at the default."""
    nxt = np.column_stack([np.full(traffic.shape[0], float(MAX_LIMIT_MPH)), traffic])
    return learner.values(normalize_obs(nxt))[1]


@dataclass
class TrainResult:
    learner: Learner
    curve: list[list] = field(default_factory=list)
    step_rewards: np.ndarray = field(default_factory=lambda: np.zeros(0))  # agent-mean per step
    checkpoints: list[Path] = field(default_factory=list)


def _checkpoint(learner: Learner, cfg: TrainConfig, step: int, meta: dict) -> Checkpoint:
    return Checkpoint(learner.actor, learner.critic, learner.actor_opt, learner.critic_opt,
                      learner.popart, {"algorithm": cfg.algorithm, "step": step,
                                       "seed": cfg.seed, "config_hash": cfg.config_hash(),
                                       "train_config": asdict(cfg), **meta})


def train(cfg: TrainConfig, env, out_dir=None, meta: Optional[dict] = None) -> TrainResult:
    """Collect, estimate advantages and update until ``training_step_max`` env steps."""
    rng = np.random.default_rng(cfg.seed)
    learner = Learner.create(env.n_agents, cfg, rng)
    runner = Runner(env, np.random.default_rng([cfg.seed, 1]))
    out = Path(out_dir) if out_dir is not None else None
    meta = dict(meta or {})
    res = TrainResult(learner)
    step_rewards = []
    if out is not None:
        res.checkpoints.append(save_checkpoint(out / "ckpt_0.npz",
                                               _checkpoint(learner, cfg, 0, meta)))
    step = 0
    next_ckpt = cfg.checkpoint_every
    while step < cfg.training_step_max:
        batch = min(cfg.batch_size, cfg.training_step_max - step)
        if batch % cfg.n_minibatch:
            batch -= batch % cfg.n_minibatch
            if batch == 0:
                break
        buf = collect_rollout(runner, learner, batch)
        buf.advantages, buf.returns = compute_gae(
            buf.rewards, buf.values, buf.dones, buf.last_values, cfg.gamma, cfg.gae_lambda,
            buf.end_values if cfg.bootstrap_time_limit else None)
        rep = ppo_update(learner.actor, learner.critic, learner.actor_opt, learner.critic_opt,
                         learner.popart, buf, rng, cfg.ppo_epochs, cfg.n_minibatch, cfg.clip,
                         cfg.entropy_coef, cfg.value_loss_coef, cfg.max_grad_norm)
        step += batch
        step_rewards.append(buf.rewards.mean(axis=1))
        m = buf.r_terms.reshape(-1, 3).mean(axis=0)
        res.curve.append([step, cfg.seed, float(buf.rewards.mean()), float(m[0]), float(m[1]),
                          float(m[2]), rep.actor_loss, rep.critic_loss, rep.entropy])
        log.info("step %d mean reward %.3f entropy %.3f", step, res.curve[-1][2], rep.entropy)
        if out is not None and (step >= next_ckpt or step >= cfg.training_step_max):
            res.checkpoints.append(save_checkpoint(out / f"ckpt_{step}.npz",
                                                   _checkpoint(learner, cfg, step, meta)))
            next_ckpt += cfg.checkpoint_every
    res.step_rewards = np.concatenate(step_rewards) if step_rewards else np.zeros(0)
    if out is not None:
        write_curve(out / "learning_curve.csv", res.curve)
        np.savetxt(out / "step_rewards.csv", res.step_rewards, fmt="%.17g")
        res.checkpoints.append(save_checkpoint(out / "final.npz",
                                               _checkpoint(learner, cfg, step, meta)))
    return res


def write_curve(path, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CURVE_HEADER)
        for r in rows:
            w.writerow([int(r[0]), int(r[1])] + [repr(float(v)) for v in r[2:]])
    return path


def moving_average(x: np.ndarray, window: int) -> np.ndarray:
    """Trailing mean; the first ``window - 1`` entries average what is available."""
    x = np.asarray(x, dtype=float)
    c = np.cumsum(np.insert(x, 0, 0.0))
    idx = np.arange(1, x.size + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)
