import csv
import json

import pytest

from fesrl.cli import main

FAST_CONFIG = """\
schema_version: 1
plant: vertical_arm
episodes: 2
seed: 0
episode_steps: 200
sac: {updates_per_episode: 10, batch_size: 32}
"""


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "run.yaml"
    cfg.write_text(FAST_CONFIG)
    assert main(["train", "--config", str(cfg), "--out", str(root / "run")]) == 0
    return root


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_missing_config_exits_2(tmp_path, capsys):
    assert main(["train", "--config", str(tmp_path / "nope.yaml"), "--out", str(tmp_path)]) == 2
    assert "cannot read config" in capsys.readouterr().err


def test_bad_config_exits_2_with_line(tmp_path, capsys):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("schema_version: 1\nepisodes: many\n")
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "bad.yaml:2:" in capsys.readouterr().err


def test_usage_error_exits_2(tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["train", "--out", str(tmp_path)])
    assert info.value.code == 2


def test_train_outputs(trained):
    run = trained / "run"
    rows = read_rows(run / "learning_curve.csv")
    assert [r["episode"] for r in rows] == ["1", "2"]
    manifest = json.loads((run / "manifest.json").read_text())
    assert manifest["seed"] == 0 and manifest["config"]["episodes"] == 2
    assert manifest["checkpoints"]["controller"] == "checkpoint.npz"
    assert (run / "checkpoint.npz").exists() and (run / "diagnostics.csv").exists()
    assert sorted(p.name for p in run.glob("manifest*")) == ["manifest.json"]


def test_progress_goes_to_stderr(tmp_path, capsys):
    cfg = tmp_path / "run.yaml"
    cfg.write_text(FAST_CONFIG)
    main(["train", "--config", str(cfg), "--out", str(tmp_path / "o"), "--episodes", "1"])
    out, err = capsys.readouterr()
    assert out == ""
    assert err.count("episode ") == 1 and "wall" in err


def test_rerun_is_byte_identical(trained, tmp_path):
    cfg = trained / "run.yaml"
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "again")]) == 0
    a = (trained / "run" / "learning_curve.csv").read_bytes()
    assert (tmp_path / "again" / "learning_curve.csv").read_bytes() == a


def test_rerun_from_manifest(trained, tmp_path):
    manifest = trained / "run" / "manifest.json"
    assert main(["train", "--config", str(manifest), "--out", str(tmp_path / "m")]) == 0
    a = (trained / "run" / "learning_curve.csv").read_bytes()
    assert (tmp_path / "m" / "learning_curve.csv").read_bytes() == a


def test_eval_writes_metrics_and_trace(trained, tmp_path):
    ckpt = str(trained / "run" / "checkpoint.npz")
    out = tmp_path / "eval"
    assert main(["eval", "--checkpoint", ckpt, "--task", "step_70_20", "--out", str(out)]) == 0
    rows = read_rows(out / "metrics.csv")
    assert len(rows) == 1
    for key in ("rmse", "first_half_err", "second_half_err"):
        assert float(rows[0][key]) >= 0.0
    trace = read_rows(out / "trace_step_70_20_rl_seed0.csv")
    assert len(trace) == 1800 and "theta_deg" in trace[0]


def test_eval_rerun_identical(trained, tmp_path):
    ckpt = str(trained / "run" / "checkpoint.npz")
    for name in ("a", "b"):
        main(["eval", "--checkpoint", ckpt, "--task", "step_70_20", "--out", str(tmp_path / name)])
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()


def test_eval_parallel_matches_serial(trained, tmp_path):
    ckpt = str(trained / "run" / "checkpoint.npz")
    base = ["eval", "--checkpoint", ckpt, "--task", "step_70_20", "--repeats", "2"]
    main(base + ["--out", str(tmp_path / "s"), "--jobs", "1"])
    main(base + ["--out", str(tmp_path / "p"), "--jobs", "2"])
    assert (tmp_path / "s" / "metrics.csv").read_bytes() == (tmp_path / "p" / "metrics.csv").read_bytes()


def test_unknown_task_lists_valid_ones(trained, tmp_path, capsys):
    ckpt = str(trained / "run" / "checkpoint.npz")
    assert main(["eval", "--checkpoint", ckpt, "--task", "bogus", "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert "step_70_20" in err and "cycling_cadence" in err


def test_plant_mismatch_exits_2(trained, tmp_path):
    ckpt = str(trained / "run" / "checkpoint.npz")
    assert main(["eval", "--checkpoint", ckpt, "--task", "long_horizontal",
                 "--out", str(tmp_path)]) == 2


def test_missing_checkpoint_exits_2(tmp_path):
    assert main(["eval", "--checkpoint", str(tmp_path / "x.npz"), "--task", "step_70_20",
                 "--out", str(tmp_path)]) == 2


def test_compare_table_two_rows(trained, tmp_path):
    ckpt = str(trained / "run" / "checkpoint.npz")
    out = tmp_path / "cmp"
    assert main(["compare", "--checkpoint", ckpt, "--task", "step_70_20",
                 "--pid-gains", "0.05,0.5,0.05", "--out", str(out)]) == 0
    rows = read_rows(out / "metrics.csv")
    assert [r["controller"] for r in rows] == ["rl", "pid"]
    assert all(r["seed"] == "0" and r["overshoots"] for r in rows)
    assert (out / "trace_step_70_20_pid_seed0.csv").exists()


def test_compare_shares_fatigue_draw(trained, tmp_path, monkeypatch):
    from fesrl.neurosim import FesEnv
    seen = []
    original = FesEnv.reset_with_sampled_fatigue

    def spy(self, rng):
        state = original(self, rng)
        seen.append((state.fatigued.copy(), state.fatigue_rates.copy()))
        return state

    monkeypatch.setattr(FesEnv, "reset_with_sampled_fatigue", spy)
    ckpt = str(trained / "run" / "checkpoint.npz")
    main(["compare", "--checkpoint", ckpt, "--task", "step_70_20",
          "--pid-gains", "0.05,0.5,0.05", "--out", str(tmp_path), "--seed", "5"])
    assert len(seen) == 2
    assert (seen[0][0] == seen[1][0]).all() and (seen[0][1] == seen[1][1]).all()


def test_compare_bad_gains_exit_2(trained, tmp_path):
    ckpt = str(trained / "run" / "checkpoint.npz")
    assert main(["compare", "--checkpoint", ckpt, "--task", "step_70_20",
                 "--pid-gains", "1,2", "--out", str(tmp_path)]) == 2


def test_trace_command(trained, tmp_path):
    ckpt = str(trained / "run" / "checkpoint.npz")
    assert main(["trace", "--checkpoint", ckpt, "--out", str(tmp_path), "--seed", "2"]) == 0
    rows = read_rows(tmp_path / "episode_trace_seed2.csv")
    assert len(rows) == 200


def test_numeric_failure_exits_3(tmp_path, monkeypatch, capsys):
    import fesrl.cli as cli
    from fesrl.sacagent import UpdateDivergedError

    def diverge(config, progress=None):
        raise UpdateDivergedError(17, "critic loss")

    monkeypatch.setattr(cli, "train_controller", diverge)
    cfg = tmp_path / "run.yaml"
    cfg.write_text(FAST_CONFIG)
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3
    assert "batch 17" in capsys.readouterr().err
