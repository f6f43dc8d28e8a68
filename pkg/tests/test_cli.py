import json
import xml.etree.ElementTree as ET

import pytest

from inneratt.cli import cli
from inneratt.config import ExperimentConfig, parse_config
from inneratt.trainer import METRICS_HEADER, train


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_run")
    cfg = ExperimentConfig(episodes=48, workers=2, batch=32, warmup=40,
                           buffer_capacity=2000, update_interval=50,
                           metrics_interval=12, checkpoint_interval=1000,
                           eval_episodes=4, out_dir=str(root), seed=13)
    result = train(cfg)
    return cfg, result


def test_unknown_subcommand_exits_2(capsys):
    assert cli(["frobnicate"]) == 2
    assert "usage" in capsys.readouterr().err.lower()


def test_unknown_flag_exits_2(capsys):
    assert cli(["gradcheck", "--wat"]) == 2


def test_missing_config_error_line(capsys):
    status = cli(["train", "--config", "/nonexistent/zzz.json", "--quiet"])
    assert status == 1
    err = capsys.readouterr().err
    assert err.startswith("error: ")
    assert len(err.strip().splitlines()) == 1


def test_train_writes_resolved_config_and_metrics(tmp_path, capsys):
    config_path = tmp_path / "cfg.json"
    config_path.write_text(json.dumps({
        "episodes": 24, "workers": 2, "batch": 32, "warmup": 40,
        "buffer_capacity": 500, "update_interval": 50, "metrics_interval": 12,
        "checkpoint_interval": 1000, "out_dir": str(tmp_path / "out"),
    }))
    status = cli(["train", "--config", str(config_path), "--scenario", "s2",
                  "--seed", "9", "--quiet"])
    assert status == 0
    resolved = parse_config(tmp_path / "out" / "resolved_config.json")
    assert resolved.scenario == "s2"
    assert resolved.seed == 9
    metrics = (tmp_path / "out" / "metrics.csv").read_text().splitlines()
    assert metrics[0] == METRICS_HEADER


def test_threads_env_overrides_workers(tmp_path, monkeypatch):
    config_path = tmp_path / "cfg.json"
    config_path.write_text(json.dumps({
        "episodes": 0, "out_dir": str(tmp_path / "out")}))
    monkeypatch.setenv("INNERATT_THREADS", "3")
    assert cli(["train", "--config", str(config_path), "--quiet"]) == 0
    resolved = parse_config(tmp_path / "out" / "resolved_config.json")
    assert resolved.workers == 3


def test_eval_runs_default_80_episodes(tiny_run, capsys):
    _, result = tiny_run
    assert cli(["eval", "--checkpoint", result.checkpoint_path]) == 0
    out = capsys.readouterr().out
    assert "evaluated 80 episodes" in out


def test_eval_respects_episode_count(tiny_run, capsys):
    _, result = tiny_run
    assert cli(["eval", "--checkpoint", result.checkpoint_path,
                "--episodes", "3"]) == 0
    assert "evaluated 3 episodes" in capsys.readouterr().out


def test_eval_missing_checkpoint(capsys):
    assert cli(["eval", "--checkpoint", "/nonexistent.ckpt"]) == 1
    assert capsys.readouterr().err.startswith("error: ")


def test_robustness_command(tiny_run, tmp_path, capsys):
    _, result = tiny_run
    out_csv = tmp_path / "rob.csv"
    status = cli(["robustness", "--checkpoint", result.checkpoint_path,
                  "--trials", "50", "--delta1", "0.05", "--out", str(out_csv)])
    assert status == 0
    assert "spectral bound" in capsys.readouterr().out
    assert out_csv.read_text().startswith("eps,")


def test_trace_command(tiny_run, tmp_path, capsys):
    _, result = tiny_run
    out_csv = tmp_path / "trace.csv"
    status = cli(["trace", "--checkpoint", result.checkpoint_path,
                  "--robot", "1", "--out", str(out_csv)])
    assert status == 0
    header = out_csv.read_text().splitlines()[0]
    assert header.startswith("step,")
    assert "mean_to_0" in header


def test_gradcheck_command_exit_zero(capsys):
    assert cli(["gradcheck", "--samples", "2"]) == 0
    out = capsys.readouterr().out
    assert "max relative error" in out


def test_plot_emits_wellformed_svg(tiny_run, tmp_path):
    _, result = tiny_run
    out_svg = tmp_path / "metrics.svg"
    assert cli(["plot", "--metrics", result.metrics_path, "--out", str(out_svg)]) == 0
    root = ET.parse(out_svg).getroot()
    assert root.tag.endswith("svg")
    assert root.get("version") == "1.1"
    polylines = root.findall(".//{http://www.w3.org/2000/svg}polyline")
    assert len(polylines) >= 5  # reward plus one per attention head


def test_plot_missing_metrics_file(tmp_path, capsys):
    assert cli(["plot", "--metrics", str(tmp_path / "none.csv"),
                "--out", str(tmp_path / "o.svg")]) == 1
    assert capsys.readouterr().err.startswith("error: ")


def test_train_resume_flag(tiny_run, tmp_path, capsys):
    _, result = tiny_run
    import dataclasses
    from inneratt.checkpoint import load_checkpoint, save_checkpoint

    ckpt = load_checkpoint(result.checkpoint_path)
    cfg2 = dataclasses.replace(ckpt.config, episodes=ckpt.meta["episodes_done"] + 4,
                               out_dir=str(tmp_path / "resumed"))
    moved = tmp_path / "resume_me.ckpt"
    save_checkpoint(moved, dataclasses.replace(ckpt, config=cfg2))
    assert cli(["train", "--resume", str(moved), "--quiet"]) == 0
    assert (tmp_path / "resumed" / "metrics.csv").exists()


def test_eval_trajectory_dump(tiny_run, tmp_path):
    _, result = tiny_run
    out = tmp_path / "traj.csv"
    assert cli(["eval", "--checkpoint", result.checkpoint_path,
                "--episodes", "2", "--trajectories", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("episode,step,")
    assert len(lines) == 1 + 2 * 25
