import json

import pytest

from inneratt.config import ExperimentConfig, config_from_dict, parse_config
from inneratt.errors import ConfigError


def write(tmp_path, doc):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc))
    return path


def test_empty_document_yields_full_defaults(tmp_path):
    cfg = parse_config(write(tmp_path, {}))
    assert cfg.episodes == 25000
    assert cfg.workers == 12
    assert cfg.batch == 1024
    assert cfg.lr == 0.001
    assert cfg.gamma == 0.99
    assert cfg.hidden_dim == 128
    assert cfg.heads == 4
    assert cfg.eval_episodes == 80
    assert cfg.variant == "td"
    assert cfg.critic == "inneratt"


def test_out_of_range_value_names_key(tmp_path):
    with pytest.raises(ConfigError, match="gamma"):
        parse_config(write(tmp_path, {"gamma": 1.5}))


def test_unknown_key_rejected(tmp_path):
    with pytest.raises(ConfigError, match="gamma_x"):
        parse_config(write(tmp_path, {"gamma_x": 0.9}))


def test_wrong_type_rejected():
    with pytest.raises(ConfigError, match="episodes"):
        config_from_dict({"episodes": 12.5})
    with pytest.raises(ConfigError, match="variant"):
        config_from_dict({"variant": "sarsa"})
    with pytest.raises(ConfigError, match="out_dir"):
        config_from_dict({"out_dir": 7})
    with pytest.raises(ConfigError, match="episodes"):
        config_from_dict({"episodes": True})


def test_missing_file_is_config_error(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        parse_config(tmp_path / "absent.json")


def test_malformed_json_is_config_error(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{nope")
    with pytest.raises(ConfigError, match="malformed"):
        parse_config(path)


def test_non_object_document_rejected(tmp_path):
    path = tmp_path / "list.json"
    path.write_text("[1, 2, 3]")
    with pytest.raises(ConfigError):
        parse_config(path)


def test_resolved_dump_round_trips(tmp_path):
    cfg = ExperimentConfig(episodes=123, scenario="s2", lr=0.01,
                           out_dir="somewhere/else")
    path = tmp_path / "resolved.json"
    path.write_text(cfg.resolved_json())
    assert parse_config(path) == cfg


def test_hidden_dim_must_divide_by_heads():
    with pytest.raises(ConfigError, match="heads"):
        config_from_dict({"hidden_dim": 30, "heads": 4})


def test_env_params_mapping():
    cfg = ExperimentConfig(capture_radius=0.2, dt=0.05, episode_len=30)
    params = cfg.env_params()
    assert params.capture_radius == 0.2
    assert params.dt == 0.05
    assert params.episode_len == 30
