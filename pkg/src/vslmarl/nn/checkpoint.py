"""Checkpoint container: one ``.npz`` with arrays plus a JSON metadata entry."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .mlp import MLP
from .optim import AdamState, PopArt

FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


@dataclass
class Checkpoint:
    actor: MLP
    critic: Optional[MLP] = None
    actor_opt: Optional[AdamState] = None
    critic_opt: Optional[AdamState] = None
    popart: Optional[PopArt] = None
    meta: dict = field(default_factory=dict)  # algorithm, step, seed, config_hash, ...


def _put_net(arrays: dict, prefix: str, net: MLP):
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        arrays[f"{prefix}/W{k}"] = w
        arrays[f"{prefix}/b{k}"] = b


def _get_net(data, prefix: str, sizes) -> MLP:
    n = len(sizes) - 1
    net = MLP(list(sizes), [data[f"{prefix}/W{k}"].copy() for k in range(n)],
              [data[f"{prefix}/b{k}"].copy() for k in range(n)])
    net.check()
    return net


def _put_opt(arrays: dict, prefix: str, opt: AdamState) -> dict:
    for k, (m, v) in enumerate(zip(opt.m, opt.v)):
        arrays[f"{prefix}/m{k}"] = m
        arrays[f"{prefix}/v{k}"] = v
    return {"lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps,
            "step": opt.step, "n": len(opt.m)}


def _get_opt(data, prefix: str, info: dict) -> AdamState:
    n = info["n"]
    return AdamState(info["lr"], info["beta1"], info["beta2"], info["eps"], info["step"],
                     [data[f"{prefix}/m{k}"].copy() for k in range(n)],
                     [data[f"{prefix}/v{k}"].copy() for k in range(n)])


def save_checkpoint(path, ck: Checkpoint) -> Path:
    path = Path(path)
    if path.suffix != ".npz":
        path = path.with_suffix(".npz")
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays: dict = {}
    header = {"format": FORMAT_VERSION, "meta": ck.meta, "actor_sizes": ck.actor.sizes}
    _put_net(arrays, "actor", ck.actor)
    if ck.critic is not None:
        header["critic_sizes"] = ck.critic.sizes
        _put_net(arrays, "critic", ck.critic)
    if ck.actor_opt is not None:
        header["actor_opt"] = _put_opt(arrays, "actor_opt", ck.actor_opt)
    if ck.critic_opt is not None:
        header["critic_opt"] = _put_opt(arrays, "critic_opt", ck.critic_opt)
    if ck.popart is not None:
        pa = ck.popart
        header["popart"] = {"beta": pa.beta, "sigma_min": pa.sigma_min, "mean": pa.mean,
                            "mean_sq": pa.mean_sq, "debias": pa.debias}
    arrays["header"] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, **arrays)
    tmp.replace(path)
    return path


def load_checkpoint(path, expect_hash: Optional[str] = None) -> Checkpoint:
    """Load a checkpoint; ``expect_hash`` guards against a mismatched config."""
    path = Path(path)
    if not path.exists() and path.with_suffix(".npz").exists():
        path = path.with_suffix(".npz")
    try:
        with np.load(path, allow_pickle=False) as data:
            header = json.loads(bytes(data["header"]).decode())
            if header.get("format") != FORMAT_VERSION:
                raise CheckpointError(f"unsupported checkpoint format {header.get('format')}")
            ck = Checkpoint(_get_net(data, "actor", header["actor_sizes"]),
                            meta=header.get("meta", {}))
            if "critic_sizes" in header:
                ck.critic = _get_net(data, "critic", header["critic_sizes"])
            if "actor_opt" in header:
                ck.actor_opt = _get_opt(data, "actor_opt", header["actor_opt"])
            if "critic_opt" in header:
                ck.critic_opt = _get_opt(data, "critic_opt", header["critic_opt"])
            if "popart" in header:
                ck.popart = PopArt(**header["popart"])
    except CheckpointError:
        raise
    except (OSError, ValueError, KeyError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    got = ck.meta.get("config_hash")
    if expect_hash is not None and got != expect_hash:
        raise CheckpointError(f"config hash mismatch: checkpoint {got}, expected {expect_hash}")
    return ck
