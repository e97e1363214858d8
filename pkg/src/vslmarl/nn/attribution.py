"""Integrated-gradients attribution for the policy network."""

from __future__ import annotations

import numpy as np

from .mlp import MLP, log_softmax


def action_score(net: MLP, obs: np.ndarray, action: int, quantity: str = "prob") -> np.ndarray:
    """Probability (or log-probability) of ``action`` for one or many observations."""
    logp = log_softmax(net.forward(obs))[..., action]
    if quantity == "prob":
        return np.exp(logp)
    if quantity == "logp":
        return logp
    raise ValueError(f"quantity must be 'prob' or 'logp', got {quantity!r}")


def score_input_gradient(net: MLP, obs: np.ndarray, action: int, quantity: str = "prob"):
    """Gradient of :func:`action_score` w.r.t. each row of ``obs``."""
    x = np.atleast_2d(np.asarray(obs, dtype=float))
    logits, acts = net.forward(x, keep=True)
    logp = log_softmax(logits)
    p = np.exp(logp)
    onehot = np.zeros_like(p)
    onehot[:, action] = 1.0
    g = onehot - p  # d logp_a / d logits
    if quantity == "prob":
        g = g * p[:, [action]]
    elif quantity != "logp":
        raise ValueError(f"quantity must be 'prob' or 'logp', got {quantity!r}")
    # backward sums over the batch for parameters; the input gradient stays per-row
    _, gx = net.backward(acts, g)
    return gx


def integrated_gradients(net: MLP, baseline, obs, action: int, steps: int = 256,
                         quantity: str = "prob") -> np.ndarray:
    """Midpoint-rule path integral of the score gradient from ``baseline`` to ``obs``."""
    if steps < 2:
        raise ValueError("steps must be >= 2")
    base = np.asarray(baseline, dtype=float)
    x = np.asarray(obs, dtype=float)
    if base.shape != x.shape or x.ndim != 1:
        raise ValueError(f"baseline {base.shape} and input {x.shape} must be equal 1-d shapes")
    alphas = (np.arange(steps) + 0.5) / steps
    path = base[None, :] + alphas[:, None] * (x - base)[None, :]
    grads = score_input_gradient(net, path, action, quantity)
    return (x - base) * grads.mean(axis=0)
