"""Fully connected tanh networks with hand-written reverse mode."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

HIDDEN = (64, 64)


def orthogonal(shape, gain: float, rng: np.random.Generator) -> np.ndarray:
    rows, cols = shape
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


@dataclass
class MLP:
    """``sizes = [in, h1, ..., out]``; tanh on hidden layers, linear output.

    Weights are stored input-major (``W[k]`` has shape ``(sizes[k], sizes[k+1])``)
    so a batch ``X`` of shape ``(n, in)`` maps through ``X @ W + b``.
    """

    sizes: list[int]
    weights: list[np.ndarray] = field(default_factory=list)
    biases: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def init(cls, sizes: Sequence[int], rng: np.random.Generator,
             out_gain: float = 0.01, hidden_gain: float = np.sqrt(2.0)) -> "MLP":
        sizes = [int(s) for s in sizes]
        ws, bs = [], []
        for k in range(len(sizes) - 1):
            gain = out_gain if k == len(sizes) - 2 else hidden_gain
            ws.append(orthogonal((sizes[k], sizes[k + 1]), gain, rng))
            bs.append(np.zeros(sizes[k + 1]))
        return cls(sizes, ws, bs)

    @classmethod
    def zeros(cls, sizes: Sequence[int]) -> "MLP":
        sizes = [int(s) for s in sizes]
        return cls(sizes, [np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])],
                   [np.zeros(b) for b in sizes[1:]])

    def copy(self) -> "MLP":
        return MLP(list(self.sizes), [w.copy() for w in self.weights],
                   [b.copy() for b in self.biases])

    # parameter plumbing
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params()])

    def set_flat(self, vec: np.ndarray):
        i = 0
        for p in self.params():
            p[...] = vec[i:i + p.size].reshape(p.shape)
            i += p.size

    def check(self):
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.sizes[k], self.sizes[k + 1]) or b.shape != (self.sizes[k + 1],):
                raise ValueError(f"layer {k} shape mismatch")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ValueError(f"layer {k} has non-finite parameters")

    # passes
    def forward(self, x: np.ndarray, keep: bool = False):
        x = np.asarray(x, dtype=float)
        if not np.isfinite(x).all():
            raise ValueError("non-finite network input")
        single = x.ndim == 1
        h = x[None, :] if single else x
        acts = [h]
        last = len(self.weights) - 1
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if k < last:
                h = np.tanh(h)
            acts.append(h)
        out = h[0] if single else h
        return (out, acts) if keep else out

    def backward(self, acts: list[np.ndarray], grad_out: np.ndarray):
        """Gradients of ``sum(grad_out * output)`` w.r.t. every parameter and the input.

        Returns ``(grads, grad_input)`` with ``grads`` ordered like ``params()``.
        """
        g = np.asarray(grad_out, dtype=float)
        if g.ndim == 1:
            g = g[None, :]
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.weights)
        for k in range(len(self.weights) - 1, -1, -1):
            if k < len(self.weights) - 1:
                g = g * (1.0 - acts[k + 1] ** 2)
            grads_w[k] = acts[k].T @ g
            grads_b[k] = g.sum(axis=0)
            g = g @ self.weights[k].T
        if not all(np.isfinite(gw).all() for gw in grads_w):
            raise FloatingPointError("non-finite gradient")
        grads = []
        for gw, gb in zip(grads_w, grads_b):
            grads += [gw, gb]
        return grads, g


def log_softmax(logits: np.ndarray, mask: Optional[np.ndarray] = None) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    if mask is not None:
        z = np.where(mask, z, -np.inf)
    m = np.max(z, axis=-1, keepdims=True)
    s = z - m
    return s - np.log(np.sum(np.exp(s), axis=-1, keepdims=True))


def forward_policy(net: MLP, obs: np.ndarray, mask: Optional[np.ndarray] = None):
    """Action probabilities and log-probabilities for normalised observations."""
    logp = log_softmax(net.forward(obs), mask)
    return np.exp(logp), logp


def forward_value(net: MLP, state: np.ndarray):
    out = net.forward(state)
    return out[..., 0]


def clip_grad_norm(grads: list[np.ndarray], max_norm: float) -> float:
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads:
            g *= scale
    return total
