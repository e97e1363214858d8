"""TOML run configuration: training hyperparameters plus a scenario reference."""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .sim.layout import Scenario
from .sim.scenarios import get_scenario, load_scenario
from .train.loop import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    train: TrainConfig
    scenario: Scenario


def _scenario_from(raw, base: Path) -> Scenario:
    if raw is None:
        return get_scenario("desk")
    if isinstance(raw, str):
        p = base / raw
        return load_scenario(p) if p.exists() else get_scenario(raw)
    raw = dict(raw)
    if "preset" in raw:
        preset = raw.pop("preset")
        seed = int(raw.pop("seed", 0))
        extra = {k: raw.pop(k) for k in ("compliance_rate", "episode_steps") if k in raw}
        try:
            sc = get_scenario(preset, seed=seed, **extra)
        except TypeError as exc:
            raise ConfigError(f"preset {preset!r} does not accept {sorted(extra)}") from exc
        return sc.with_(**raw) if raw else sc
    raw.setdefault("name", "custom")
    return Scenario.from_dict(raw)


def load_run_config(path) -> RunConfig:
    """Read ``[train]`` (TrainConfig fields) and ``scenario`` (preset name, file or table)."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    with open(path, "rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    unknown = set(raw) - {"train", "scenario"}
    if unknown:
        raise ConfigError(f"{path}: unknown sections {sorted(unknown)}")
    tr = dict(raw.get("train", {}))
    known = {f.name for f in fields(TrainConfig)}
    bad = set(tr) - known
    if bad:
        raise ConfigError(f"{path}: unknown train keys {sorted(bad)}")
    try:
        cfg = TrainConfig(**tr)
        sc = _scenario_from(raw.get("scenario"), path.parent)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return RunConfig(cfg, sc)


def resolve_scenario(arg) -> Scenario:
    """Preset name, scenario TOML, or a run config whose ``[scenario]`` table is used."""
    path = Path(arg)
    try:
        if not path.is_file():
            return get_scenario(str(arg))
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
        if "scenario" in raw:
            return load_run_config(path).scenario
        return load_scenario(path)
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"scenario {arg}: {exc}") from exc
