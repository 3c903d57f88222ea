"""Run-config structure, defaults, rejection of unknown keys, round-trip."""

import json

import pytest

from geoaware.config import RunConfig, load_config, save_config
from geoaware.errors import ConfigError


def test_defaults_everywhere():
    cfg = RunConfig.from_dict({})
    assert cfg.seed == 0
    assert cfg.policy.repr_dim == 64
    assert cfg.train.steps == 5000
    assert cfg.geo.num_layers == 12
    assert cfg.sim.max_episode_steps == 200


def test_partial_section_overrides():
    cfg = RunConfig.from_dict({"seed": 3, "train": {"steps": 10}, "sim": {"grasp_radius": 0.05}})
    assert cfg.seed == 3
    assert cfg.train.steps == 10
    assert cfg.train.batch_size == 64          # untouched default
    assert cfg.sim.grasp_radius == 0.05


def test_unknown_top_level_key_rejected():
    with pytest.raises(ConfigError, match="top-level"):
        RunConfig.from_dict({"seeed": 1})


def test_unknown_section_key_rejected():
    with pytest.raises(ConfigError, match="policy"):
        RunConfig.from_dict({"policy": {"reprdim": 32}})


def test_section_must_be_object():
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"train": 7})


def test_round_trip_lossless(tmp_path):
    cfg = RunConfig.from_dict({"seed": 11, "policy": {"chunk_len": 2}, "geo": {"lift_seed": 9}})
    path = tmp_path / "run.json"
    save_config(cfg, path)
    again = load_config(path)
    assert again.to_dict() == cfg.to_dict()
    # file is plain namespaced JSON
    raw = json.loads(path.read_text())
    assert set(raw) == {"seed", "policy", "train", "geo", "sim"}


def test_load_missing_file():
    with pytest.raises(ConfigError, match="not found"):
        load_config("/nonexistent/run.json")


def test_load_invalid_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError, match="valid JSON"):
        load_config(p)


def test_load_validates(tmp_path):
    p = tmp_path / "bad_cfg.json"
    p.write_text(json.dumps({"policy": {"hidden_dim": 65}}))   # not divisible by heads
    with pytest.raises(ConfigError):
        load_config(p)
