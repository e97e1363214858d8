"""Rollout storage, advantage estimation and the clipped-surrogate update."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .. import N_ACTIONS
from ..nn.mlp import MLP, clip_grad_norm, log_softmax
from ..nn.optim import AdamState, PopArt, adam_update


@dataclass
class TrajectoryBuffer:
    """Arrays indexed ``[t, agent, ...]`` for one batch of control steps."""

    obs: np.ndarray  # (T, n, 5) normalised
    critic_in: np.ndarray  # (T, n, d)
    actions: np.ndarray  # (T, n) action indices
    logp: np.ndarray  # (T, n)
    rewards: np.ndarray  # (T, n)
    values: np.ndarray  # (T, n) denormalised estimates
    dones: np.ndarray  # (T,) episode ended after step t
    last_values: np.ndarray  # (n,) bootstrap after the final step (0 if terminal)
    r_terms: np.ndarray  # (T, n, 3) reward components for logging
    end_values: Optional[np.ndarray] = None  # (T, n) bootstrap where an episode hit its time limit
    advantages: Optional[np.ndarray] = None
    returns: Optional[np.ndarray] = None

    @property
    def size(self) -> int:
        return self.rewards.shape[0]

    @property
    def n_agents(self) -> int:
        return self.rewards.shape[1]

    def validate(self):
        T, n = self.rewards.shape
        for name in ("obs", "critic_in", "actions", "logp", "values", "r_terms"):
            arr = getattr(self, name)
            if arr.shape[:2] != (T, n):
                raise ValueError(f"buffer field {name} has shape {arr.shape}, expected ({T}, {n}, ...)")
        if self.dones.shape != (T,) or self.last_values.shape != (n,):
            raise ValueError("dones/last_values shape mismatch")
        if self.end_values is not None and self.end_values.shape != (T, n):
            raise ValueError("end_values shape mismatch")
        if self.advantages is not None and not np.isfinite(self.advantages).all():
            raise FloatingPointError("non-finite advantages")


def compute_gae(rewards: np.ndarray, values: np.ndarray, dones: np.ndarray,
                last_values: np.ndarray, gamma: float = 0.99, lam: float = 0.95,
                end_values: Optional[np.ndarray] = None):
    """Backward generalised-advantage recursion; returns ``(advantages, returns)``.

    ``rewards``/``values`` are ``(T,)`` or ``(T, n)``; ``dones[t]`` marks that
    the episode ended after step ``t`` so the recursion does not run across it.
    By default an ended episode bootstraps nothing. Episodes cut by a time
    limit pass ``end_values``, whose row ``t`` is then used as the value of
    the state after step ``t``.
    """
    if not (0.0 <= gamma <= 1.0 and 0.0 <= lam <= 1.0):
        raise ValueError("gamma and lambda must lie in [0, 1]")
    r = np.asarray(rewards, dtype=float)
    v = np.asarray(values, dtype=float)
    d = np.asarray(dones, dtype=float)
    T = r.shape[0]
    adv = np.zeros_like(r)
    next_v = np.asarray(last_values, dtype=float)
    running = np.zeros_like(r[0])
    ends = None if end_values is None else np.asarray(end_values, dtype=float)
    for t in range(T - 1, -1, -1):
        cont = 1.0 - d[t]
        boot = next_v * cont
        if ends is not None and d[t]:
            boot = ends[t]
        delta = r[t] + gamma * boot - v[t]
        running = delta + gamma * lam * cont * running
        adv[t] = running
        next_v = v[t]
    return adv, adv + v


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    a = np.asarray(adv, dtype=float)
    std = a.std()
    return (a - a.mean()) / (std if std > 1e-8 else 1.0)


def entropy(probs: np.ndarray, logp: np.ndarray) -> np.ndarray:
    return -np.sum(np.where(probs > 0, probs * logp, 0.0), axis=-1)


def actor_loss_and_grad(actor: MLP, obs: np.ndarray, actions: np.ndarray, old_logp: np.ndarray,
                        adv: np.ndarray, clip: float, entropy_coef: float):
    """Clipped surrogate plus entropy bonus; returns ``(loss, entropy, grads)``."""
    logits, acts = actor.forward(obs, keep=True)
    logp_all = log_softmax(logits)
    p = np.exp(logp_all)
    N = obs.shape[0]
    rows = np.arange(N)
    logp = logp_all[rows, actions]
    ratio = np.exp(logp - old_logp)
    surr1 = ratio * adv
    surr2 = np.clip(ratio, 1.0 - clip, 1.0 + clip) * adv
    surr = np.minimum(surr1, surr2)
    ent = entropy(p, logp_all)
    loss = -surr.mean() - entropy_coef * ent.mean()

    # gradient of the surrogate flows only where the unclipped branch is the minimum
    unclipped = surr1 <= surr2
    d_logp = np.where(unclipped, -ratio * adv, 0.0) / N
    onehot = np.zeros_like(p)
    onehot[rows, actions] = 1.0
    g = d_logp[:, None] * (onehot - p)
    g += entropy_coef * p * (logp_all + ent[:, None]) / N
    grads, _ = actor.backward(acts, g)
    return float(loss), float(ent.mean()), grads


def critic_loss_and_grad(critic: MLP, x: np.ndarray, targets: np.ndarray, coef: float):
    pred, acts = critic.forward(x, keep=True)
    err = pred[:, 0] - targets
    loss = coef * float(np.mean(err * err))
    grads, _ = critic.backward(acts, (2.0 * coef / x.shape[0]) * err[:, None])
    return loss, grads


@dataclass
class UpdateReport:
    actor_loss: float
    critic_loss: float
    entropy: float
    grad_norm_actor: float
    grad_norm_critic: float


def ppo_update(actor: MLP, critic: MLP, actor_opt: AdamState, critic_opt: AdamState,
               popart: PopArt, buf: TrajectoryBuffer, rng: np.random.Generator,
               epochs: int = 15, n_minibatch: int = 1, clip: float = 0.2,
               entropy_coef: float = 0.05, value_coef: float = 1.0,
               max_grad_norm: float = 10.0) -> UpdateReport:
    """Pooled update of the shared actor and the critic on one buffer."""
    if buf.advantages is None or buf.returns is None:
        raise ValueError("compute advantages before updating")
    buf.validate()
    T, n = buf.rewards.shape
    N = T * n
    if N % n_minibatch:
        raise ValueError("minibatch count must divide the sample count")
    obs = buf.obs.reshape(N, -1)
    cin = buf.critic_in.reshape(N, -1)
    act = buf.actions.reshape(N)
    old_logp = buf.logp.reshape(N)
    adv = normalize_advantages(buf.advantages.reshape(N))
    targets = popart.update(critic, buf.returns.reshape(N))

    a_loss = c_loss = ent = gna = gnc = 0.0
    for _ in range(epochs):
        perm = rng.permutation(N)
        for mb in np.array_split(perm, n_minibatch):
            a_loss, ent, ga = actor_loss_and_grad(actor, obs[mb], act[mb], old_logp[mb],
                                                  adv[mb], clip, entropy_coef)
            c_loss, gc = critic_loss_and_grad(critic, cin[mb], targets[mb], value_coef)
            if not (np.isfinite(a_loss) and np.isfinite(c_loss)):
                raise FloatingPointError(f"non-finite loss (actor {a_loss}, critic {c_loss}); "
                                         f"advantage range [{adv.min()}, {adv.max()}]")
            gna = clip_grad_norm(ga, max_grad_norm)
            gnc = clip_grad_norm(gc, max_grad_norm)
            adam_update(actor.params(), ga, actor_opt)
            adam_update(critic.params(), gc, critic_opt)
    return UpdateReport(a_loss, c_loss, ent, gna, gnc)


UNIFORM_ENTROPY = float(np.log(N_ACTIONS))
