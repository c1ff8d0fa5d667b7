import math
import os

import pytest
import yaml

from synadapt.config import (RunConfig, config_to_yaml, load_config,
                             save_config)


def test_defaults_complete():
    cfg = RunConfig()
    assert cfg.policy.hidden == [64, 32, 16]
    assert cfg.policy.plastic_layer == 3
    assert abs(cfg.policy.lam_v - math.exp(-0.1)) < 1e-15
    assert cfg.plasticity.update_scale == 0.01  # desk-scale profile
    assert cfg.ppo.clip == 0.2 and cfg.ppo.epochs == 5 and cfg.ppo.minibatches == 4
    assert cfg.ppo.lr == 1e-3 and cfg.ppo.lr_decay == 0.999
    assert cfg.a2c.ent_coef == 0.005 and cfg.a2c.window == 30
    assert cfg.a2c.trace_penalty == 1e-2
    assert cfg.estimator.history_len == 10
    assert cfg.rma.z_dim == 8
    assert cfg.env.extrinsics_ranges["motor_gain"] == [0.8, 1.2]
    assert cfg.env.extrinsics_ranges["kp"] == [12.5, 37.5]
    assert cfg.env.extrinsics_ranges["kd"] == [0.25, 0.75]
    assert cfg.env.extrinsics_ranges["damping"] == [0.1, 2.75]


def test_paper_profile_overrides():
    cfg = load_config(profile="paper")
    assert cfg.policy.hidden == [512, 128, 64]
    assert cfg.ppo.n_envs == 10000 and cfg.ppo.n_steps == 25
    assert cfg.a2c.n_envs == 2048 and cfg.a2c.n_steps == 30
    assert cfg.plasticity.rate_scale == 1e-3
    assert cfg.plasticity.rate_decay == 0.995
    assert cfg.plasticity.update_scale == 1e-3


def test_yaml_roundtrip(tmp_path):
    cfg = RunConfig()
    cfg.seed = 77
    cfg.ppo.n_envs = 17
    path = str(tmp_path / "c.yaml")
    save_config(cfg, path)
    loaded = load_config(path)
    assert config_to_yaml(loaded) == config_to_yaml(cfg)


def test_unknown_key_rejected(tmp_path):
    path = str(tmp_path / "c.yaml")
    with open(path, "w") as f:
        yaml.safe_dump({"ppo": {"n_env": 4}}, f)
    with pytest.raises(KeyError, match="ppo.n_env"):
        load_config(path)


def test_env_var_override():
    cfg = load_config(environ={"SYNADAPT_PPO__N_ENVS": "64",
                               "SYNADAPT_ENV__EPISODE_LEN": "123",
                               "SYNADAPT_NO_NUMBA": "1"})
    assert cfg.ppo.n_envs == 64
    assert cfg.env.episode_len == 123


def test_cli_style_overrides_win(tmp_path):
    path = str(tmp_path / "c.yaml")
    with open(path, "w") as f:
        yaml.safe_dump({"seed": 5, "out_dir": "somewhere"}, f)
    cfg = load_config(path, seed=9, out_dir="elsewhere")
    assert cfg.seed == 9
    assert cfg.out_dir == "elsewhere"


def test_unknown_profile_rejected():
    with pytest.raises(ValueError, match="profile"):
        load_config(profile="gpu")
