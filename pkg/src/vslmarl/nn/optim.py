"""Adam and PopArt."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mlp import MLP


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params, lr: float, **kw) -> "AdamState":
        return cls(lr, m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params], **kw)


def adam_update(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState):
    """One bias-corrected Adam step, applied to ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer state differ in length")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


@dataclass
class PopArt:
    """Running target statistics with output-preserving rescaling of a value head.

    ``beta`` is the per-update weight of the newest batch; a debiasing term
    makes the very first update adopt the batch statistics exactly.
    """

    beta: float = 0.02
    sigma_min: float = 1e-4
    mean: float = 0.0
    mean_sq: float = 0.0
    debias: float = 0.0

    @property
    def mu(self) -> float:
        return self.mean / self.debias if self.debias > 0 else 0.0

    @property
    def sigma(self) -> float:
        if self.debias <= 0:
            return 1.0
        var = self.mean_sq / self.debias - self.mu**2
        return float(max(np.sqrt(max(var, 0.0)), self.sigma_min))

    def normalize(self, y):
        return (np.asarray(y, dtype=float) - self.mu) / self.sigma

    def denormalize(self, y):
        return np.asarray(y, dtype=float) * self.sigma + self.mu

    def update(self, head: MLP, targets) -> np.ndarray:
        """Fold ``targets`` into the statistics, rescale ``head``'s output layer.

        Returns the targets normalised with the new statistics.
        """
        t = np.asarray(targets, dtype=float).ravel()
        if t.size == 0:
            raise ValueError("empty target batch")
        old_mu, old_sigma = self.mu, self.sigma
        b = self.beta
        self.mean = (1 - b) * self.mean + b * float(t.mean())
        self.mean_sq = (1 - b) * self.mean_sq + b * float(np.mean(t * t))
        self.debias = (1 - b) * self.debias + b
        new_mu, new_sigma = self.mu, self.sigma
        w, bias = head.weights[-1], head.biases[-1]
        w *= old_sigma / new_sigma
        bias[...] = (old_sigma * bias + old_mu - new_mu) / new_sigma
        return self.normalize(t)
