from pathlib import Path

import numpy as np
import pytest

from vslmarl.cli import EXIT_DATA, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, cli_main
from vslmarl.io import synthetic_day, write_rds_csv
from vslmarl.metrics import read_grid

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
SMOKE = str(CONFIGS / "smoke.toml")


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("train")
    assert cli_main(["train", "--config", SMOKE, "--seed", "1", "--out", str(out)]) == EXIT_OK
    return out


@pytest.fixture
def tiny_scenario(tmp_path):
    p = tmp_path / "tiny.toml"
    p.write_text('preset = "desk"\nepisode_steps = 4\n')
    return str(p)


def test_train_writes_curve_and_checkpoint(trained):
    assert (trained / "learning_curve.csv").is_file()
    assert (trained / "final.npz").is_file()


def test_train_is_deterministic(trained, tmp_path):
    assert cli_main(["train", "--config", SMOKE, "--seed", "1", "--out", str(tmp_path)]) == 0
    a = (trained / "learning_curve.csv").read_bytes()
    assert (tmp_path / "learning_curve.csv").read_bytes() == a


def test_evaluate_no_control_scenario_a(tmp_path, capsys):
    code = cli_main(["evaluate", "--controller", "no-control", "--scenario", "A",
                     "--seeds", "3", "--out", str(tmp_path)])
    assert code == EXIT_OK
    lines = (tmp_path / "report.csv").read_text().splitlines()
    assert len(lines) == 4 and lines[1].startswith("no-control,0,")
    assert (tmp_path / "report_summary.csv").is_file()
    assert read_grid(tmp_path / "speed_no-control_seed2.csv").shape == (11, 120)
    assert "no-control" in capsys.readouterr().out


def test_evaluate_policy_and_hash_check(trained, tmp_path, tiny_scenario):
    args = ["evaluate", "--controller", "policy", "--controller", "speed-matching",
            "--scenario", tiny_scenario, "--seeds", "2", "--checkpoint",
            str(trained / "final.npz"), "--out", str(tmp_path)]
    assert cli_main(args + ["--config", SMOKE]) == EXIT_OK
    rows = (tmp_path / "report.csv").read_text().splitlines()[1:]
    assert [r.split(",")[0] for r in rows] == ["policy"] * 2 + ["speed-matching"] * 2
    # masked policy: step-down column is zero
    assert all(r.split(",")[3] == "0" for r in rows)
    assert cli_main(args + ["--config", str(CONFIGS / "desk.toml")]) == EXIT_RUNTIME


def test_policy_needs_checkpoint(tmp_path, tiny_scenario):
    code = cli_main(["evaluate", "--controller", "policy", "--scenario", tiny_scenario,
                     "--seeds", "1", "--out", str(tmp_path)])
    assert code == EXIT_USAGE


def test_replay_writes_two_grids(trained, tmp_path):
    g = [0.5 * k for k in range(8)]
    data = write_rds_csv(tmp_path / "day.csv", synthetic_day(g, steps=6, block=(2, 4)))
    code = cli_main(["replay", "--data", str(data), "--checkpoint", str(trained / "final.npz"),
                     "--gantries", ",".join(map(str, g)), "--mask", "--out", str(tmp_path)])
    assert code == EXIT_OK
    limits = read_grid(tmp_path / "replay_limits.csv")
    assert limits.shape == (8, 6)
    assert np.all(np.diff(limits, axis=0) <= 10)
    assert read_grid(tmp_path / "replay_speed.csv").shape == (8, 6)


def test_replay_bad_data(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("timestamp,sensor_id\n1,a\n")
    code = cli_main(["replay", "--data", str(bad), "--controller", "no-control",
                     "--out", str(tmp_path)])
    assert code == EXIT_DATA
    rows = tmp_path / "rows.csv"
    rows.write_text("timestamp,sensor_id,milemarker,speed_mph,occupancy,volume\n"
                    "21600,A,0.1,60,1.4,1000\n")
    args = ["replay", "--data", str(rows), "--controller", "no-control", "--gantries", "0,0.5",
            "--out", str(tmp_path)]
    assert cli_main(args) == EXIT_DATA
    assert cli_main(args + ["--strict"]) == EXIT_DATA


def test_attribute(trained, tmp_path, tiny_scenario):
    out = tmp_path / "attr.csv"
    code = cli_main(["attribute", "--checkpoint", str(trained / "final.npz"), "--scenario",
                     tiny_scenario, "--case", "1", "--case", "4", "--steps", "64",
                     "--out", str(out)])
    assert code == EXIT_OK
    lines = out.read_text().splitlines()
    assert lines[0].startswith("case,from_mph,to_mph") and len(lines) == 3


def test_export_grids(tmp_path, tiny_scenario):
    assert cli_main(["evaluate", "--controller", "speed-matching", "--scenario", tiny_scenario,
                     "--seeds", "1", "--out", str(tmp_path)]) == EXIT_OK
    log = tmp_path / "log_speed-matching_seed0.csv"
    assert cli_main(["export-grids", "--log", str(log), "--out", str(tmp_path / "g")]) == 0
    limits = read_grid(tmp_path / "g" / f"{log.stem}_limits.csv")
    assert limits.shape == (4, 4)
    assert np.array_equal(limits, read_grid(tmp_path / "limits_speed-matching_seed0.csv")[1:])


@pytest.mark.parametrize("argv", [[], ["fly"], ["train"], ["evaluate", "--controller", "x"],
                                  ["train", "--config", SMOKE, "--bogus"]])
def test_usage_errors(argv):
    assert cli_main(argv) == EXIT_USAGE


def test_missing_config(tmp_path):
    assert cli_main(["train", "--config", str(tmp_path / "none.toml")]) == EXIT_USAGE


def test_bad_config_key(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text("[train]\nlearning_speed = 3\n")
    assert cli_main(["train", "--config", str(p)]) == EXIT_USAGE


def test_scenario_from_run_config(tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text('[scenario]\npreset = "desk"\nepisode_steps = 2\n')
    code = cli_main(["evaluate", "--controller", "no-control", "--scenario", str(cfg),
                     "--seeds", "1", "--out", str(tmp_path)])
    assert code == EXIT_OK
    assert read_grid(tmp_path / "speed_no-control_seed0.csv").shape[1] == 2


@pytest.mark.parametrize("text", ["preset = 1\n", "[layout]\nlength = 3\n"])
def test_bad_scenario_file(tmp_path, text):
    p = tmp_path / "s.toml"
    p.write_text(text)
    code = cli_main(["evaluate", "--controller", "no-control", "--scenario", str(p),
                     "--seeds", "1", "--out", str(tmp_path)])
    assert code == EXIT_USAGE


def test_unknown_scenario_name(tmp_path):
    code = cli_main(["evaluate", "--controller", "no-control", "--scenario", "nowhere",
                     "--seeds", "1", "--out", str(tmp_path)])
    assert code == EXIT_USAGE


def test_missing_checkpoint(tmp_path):
    assert cli_main(["attribute", "--checkpoint", str(tmp_path / "no.npz")]) == EXIT_RUNTIME


def test_export_grids_bad_log(tmp_path):
    p = tmp_path / "log.csv"
    p.write_text("step,agent\n")
    assert cli_main(["export-grids", "--log", str(p), "--out", str(tmp_path)]) == EXIT_DATA
