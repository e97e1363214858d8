"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 input data failed
validation, 3 runtime failure (including checkpoint/config mismatch).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import ConfigError, load_run_config, resolve_scenario
from .controllers import NoControl, PolicyController, SpeedMatching
from .env import VSLEnv, read_episode_log, write_episode_log
from .explain import DECISION_CASES, attribute_case, record_decisions, write_attributions
from .io import DataValidationError, assign_sensors, open_loop_replay, parse_rds_csv
from .metrics import run_evaluation, write_grid, write_report
from .nn import CheckpointError, load_checkpoint
from .train import train, write_curve

log = logging.getLogger("vslmarl")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3
CONTROLLERS = ("no-control", "speed-matching", "policy")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _load_actor(path, config: Optional[str] = None):
    expect = load_run_config(config).train.config_hash() if config else None
    return load_checkpoint(path, expect_hash=expect).actor


def _cmd_train(args) -> int:
    run = load_run_config(args.config)
    cfg = run.train
    if args.seed is not None:
        cfg.seed = args.seed
    if args.steps is not None:
        cfg.training_step_max = args.steps
    out = Path(args.out)
    res = train(cfg, VSLEnv(run.scenario), out_dir=out,
                meta={"scenario": run.scenario.name,
                      "scenario_hash": run.scenario.config_hash()})
    write_curve(out / "learning_curve.csv", res.curve)
    print(f"trained {cfg.algorithm} seed {cfg.seed} for {cfg.training_step_max} steps -> {out}")
    return EXIT_OK


def _controller_factory(name: str, args):
    if name == "no-control":
        return NoControl
    if name == "speed-matching":
        return SpeedMatching
    if not args.checkpoint:
        raise UsageError("--checkpoint is required for the policy controller")
    actor = _load_actor(args.checkpoint, args.config)
    return lambda: PolicyController(actor, masking=args.mask)


def _cmd_evaluate(args) -> int:
    out = Path(args.out)
    reports = []
    seeds = list(range(args.first_seed, args.first_seed + args.seeds))
    for name in args.controller:
        factory = _controller_factory(name, args)
        rep = run_evaluation(resolve_scenario(args.scenario), factory, seeds, name=name)
        reports.append(rep)
        for r in rep.runs:
            write_episode_log(out / f"log_{name}_seed{r.seed}.csv", r.log)
            write_grid(out / f"speed_{name}_seed{r.seed}.csv", r.speed_grid)
            write_grid(out / f"limits_{name}_seed{r.seed}.csv", r.limit_grid)
        print(rep.table())
        for s, why in rep.failures.items():
            print(f"seed {s} failed: {why}", file=sys.stderr)
    path = write_report(out / "report.csv", reports)
    print(f"report -> {path}")
    return EXIT_RUNTIME if any(r.failures for r in reports) else EXIT_OK


def _gantries_from(arg: str) -> list[float]:
    try:
        return [float(v) for v in arg.split(",") if v.strip()]
    except ValueError:
        pass
    return list(resolve_scenario(arg).layout.gantry_positions)


def _cmd_replay(args) -> int:
    series = parse_rds_csv(args.data, strict=args.strict)
    for sid, a, b in series.gaps:
        log.warning("sensor %s has no data between %.0f and %.0f s", sid, a, b)
    if not series.records:
        raise DataValidationError(f"{args.data}: no usable records")
    sensors = series.sensors()
    assignment = assign_sensors(_gantries_from(args.gantries), list(sensors.values()),
                                list(sensors))
    if args.controller == "policy":
        if not args.checkpoint:
            raise UsageError("--checkpoint is required for the policy controller")
        ctl = PolicyController(_load_actor(args.checkpoint, args.config), masking=args.mask)
    else:
        ctl = _controller_factory(args.controller, args)()
    res = open_loop_replay(series.records, assignment, ctl)
    out = Path(args.out)
    write_grid(out / "replay_speed.csv", res.speed_grid)
    write_grid(out / "replay_limits.csv", res.limit_grid)
    held = int(res.held.sum())
    print(f"replayed {res.times.size} windows over {len(assignment.gantry_milemarkers)} gantries"
          f" ({held} held readings) -> {out}")
    return EXIT_OK


def _cmd_attribute(args) -> int:
    actor = _load_actor(args.checkpoint, args.config)
    history = record_decisions(resolve_scenario(args.scenario), actor, args.seed)
    results = [attribute_case(actor, history, c, args.steps, args.samples) for c in args.case]
    path = write_attributions(Path(args.out), results)
    for r in results:
        cells = " ".join(f"{v:+.4f}" for v in r.mean)
        print(f"case {r.case} ({r.from_mph:.0f}->{r.to_mph:.0f}): {len(r.samples)} samples  {cells}")
    print(f"attributions -> {path}")
    return EXIT_OK


def _cmd_export_grids(args) -> int:
    try:
        rows = read_episode_log(args.log)
    except (ValueError, IndexError) as exc:
        raise DataValidationError(f"{args.log}: {exc}") from exc
    if not rows:
        raise DataValidationError(f"{args.log}: empty episode log")
    steps = max(r[0] for r in rows) + 1
    agents = max(r[1] for r in rows) + 1
    speed = np.full((agents, steps), np.nan)
    limits = np.full((agents, steps), np.nan)
    for r in rows:
        limits[r[1], r[0]] = r[2]
        speed[r[1], r[0]] = r[3]
    out = Path(args.out)
    stem = Path(args.log).stem
    write_grid(out / f"{stem}_speed.csv", speed)
    write_grid(out / f"{stem}_limits.csv", limits)
    print(f"grids ({agents} agents x {steps} steps) -> {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="vslmarl", description="Multi-agent variable speed limit control.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a shared policy")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--steps", type=int, help="override training_step_max")
    t.add_argument("--out", default="runs/train")
    t.set_defaults(func=_cmd_train)

    def mask_flags(q):
        q.add_argument("--mask", dest="mask", action="store_true", default=True)
        q.add_argument("--no-mask", dest="mask", action="store_false")

    e = sub.add_parser("evaluate", help="seeded evaluation runs and a metrics report")
    e.add_argument("--controller", action="append", choices=CONTROLLERS, required=True)
    e.add_argument("--scenario", default="A")
    e.add_argument("--seeds", type=int, default=5)
    e.add_argument("--first-seed", type=int, default=0)
    e.add_argument("--checkpoint")
    e.add_argument("--config", help="run config whose hash the checkpoint must match")
    e.add_argument("--out", default="runs/eval")
    mask_flags(e)
    e.set_defaults(func=_cmd_evaluate)

    r = sub.add_parser("replay", help="open-loop replay of detector data")
    r.add_argument("--data", required=True)
    r.add_argument("--checkpoint")
    r.add_argument("--config")
    r.add_argument("--controller", choices=CONTROLLERS, default="policy")
    r.add_argument("--gantries", default="corridor34",
                   help="comma-separated gantry milemarkers or a scenario preset")
    r.add_argument("--strict", action="store_true", help="fail on any malformed row")
    r.add_argument("--out", default="runs/replay")
    mask_flags(r)
    r.set_defaults(func=_cmd_replay)

    a = sub.add_parser("attribute", help="integrated gradients over logged decision cases")
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--config")
    a.add_argument("--scenario", default="A")
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--case", type=int, action="append", choices=sorted(DECISION_CASES))
    a.add_argument("--steps", type=int, default=256)
    a.add_argument("--samples", type=int, default=5)
    a.add_argument("--out", default="runs/attributions.csv")
    a.set_defaults(func=_cmd_attribute)

    x = sub.add_parser("export-grids", help="convert an episode log to grid CSVs")
    x.add_argument("--log", required=True)
    x.add_argument("--out", default="runs/grids")
    x.set_defaults(func=_cmd_export_grids)
    return p


def cli_main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "case", "") is None:
        args.case = sorted(DECISION_CASES)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataValidationError as exc:
        print(f"invalid data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (OSError, RuntimeError, ValueError, FloatingPointError) as exc:
        print(f"failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
