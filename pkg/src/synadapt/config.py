"""Run configuration: dataclasses with full defaults, YAML loading, profile
presets, and environment-variable overrides (prefix SYNADAPT_, e.g.
SYNADAPT_PPO__N_ENVS=64 sets ppo.n_envs).

The resolved configuration is echoed into every run directory as
config.yaml; loading that echo reproduces the run bit-exactly under the
same seed.
"""

from __future__ import annotations

import dataclasses
import math
import os
from dataclasses import dataclass, field, fields

import yaml


@dataclass
class EnvConfig:
    dt: float = 0.005
    substeps: int = 4
    episode_len: int = 500
    n_joints: int = 2
    q_max: float = 12.0
    torque_limit: float = 10.0
    inertia: list = field(default_factory=lambda: [1.0, 1.0])
    q0: list = field(default_factory=lambda: [0.0, 0.0])
    action_scale: float = 0.25
    kin_map: list = field(default_factory=lambda: [[0.8, 0.2], [-0.2, 0.7]])
    ang_map: list = field(default_factory=lambda: [0.5, -0.5])
    cmd_v_range: list = field(default_factory=lambda: [-0.3, 0.3])
    cmd_w_range: list = field(default_factory=lambda: [-0.5, 0.5])
    extrinsics_resample_prob: float = 0.008
    extrinsics_nominal: dict = field(default_factory=lambda: {
        "motor_gain": 1.0, "kp": 20.0, "kd": 0.5, "damping": 1.0, "payload": 1.0})
    extrinsics_ranges: dict = field(default_factory=lambda: {
        "motor_gain": [0.8, 1.2], "kp": [12.5, 37.5], "kd": [0.25, 0.75],
        "damping": [0.1, 2.75], "payload": [0.5, 1.5]})
    noise: dict = field(default_factory=lambda: {
        "joint_pos": 0.01, "joint_vel": 1.5, "gravity": 0.05,
        "lin_vel": 0.1, "ang_vel": 0.2})
    obs_scales: dict = field(default_factory=lambda: {
        "lin_vel": 2.0, "ang_vel": 0.25, "joint_pos": 1.0, "joint_vel": 0.05})
    obs_clip: float = 100.0
    reward_scales: list = field(default_factory=lambda: [
        1.0, 0.5, -0.05, -2.0e-4, -2.5e-7, -0.01])
    tracking_sigma: float = 0.25


@dataclass
class PolicyConfig:
    hidden: list = field(default_factory=lambda: [64, 32, 16])
    plastic_layer: int = 3
    lam_v: float = math.exp(-1.0 / 10.0)
    theta: float = 1.0
    surrogate_slope: float = 0.3
    surrogate_width: float = 1.0
    alpha_out: float = math.exp(-1.0 / 10.0)
    init_gain: float = 1.0
    wout_scale: float = 0.1
    log_std_init: float = math.log(0.5)
    modulator_per_pre: bool = False


@dataclass
class PlasticityConfig:
    alpha_x: float = math.exp(-1.0 / 10.0)
    beta: float = 1.0
    gamma: float = math.exp(-1.0 / 200.0)
    update_scale: float = 0.01
    rate_scale: float = 0.5
    rate_decay: float = 1.0
    reset_eligibility_on_done: bool = True


@dataclass
class PpoConfig:
    n_envs: int = 256
    n_steps: int = 25
    updates: int = 500
    epochs: int = 5
    minibatches: int = 4
    clip: float = 0.2
    ent_coef: float = 0.01
    vf_coef: float = 0.5
    gamma: float = 0.99
    gae_lambda: float = 0.95
    lr: float = 1e-3
    lr_decay: float = 0.999
    max_grad_norm: float = 1.0


@dataclass
class A2cConfig:
    n_envs: int = 128
    n_steps: int = 30
    window: int = 30
    updates: int = 2000
    ent_coef: float = 0.005
    vf_coef: float = 0.5
    gamma: float = 0.99
    gae_lambda: float = 0.95
    lr: float = 3e-4
    lr_decay: float = 0.999
    max_grad_norm: float = 1.0
    trace_penalty: float = 1e-2


@dataclass
class EncoderConfig:
    hidden: list = field(default_factory=lambda: [64, 64])
    final_scale: float = 1.0


@dataclass
class EstimatorConfig:
    hidden: list = field(default_factory=lambda: [64, 64])
    history_len: int = 10
    rollouts: int = 60
    epochs: int = 40
    batch_size: int = 1024
    lr: float = 1e-3
    holdout_frac: float = 0.2


@dataclass
class RmaConfig:
    z_dim: int = 8


@dataclass
class RoaConfig:
    reg_lambda: float = 1.0


@dataclass
class EvalConfig:
    grid_points: int = 7
    episodes_per_sample: int = 3
    paired_seeds: int = 20
    episodes_per_seed: int = 3
    noise_axis_max: float = 2.0
    base_seed: int = 10_000


@dataclass
class RunConfig:
    profile: str = "desk"
    seed: int = 0
    out_dir: str = "runs/default"
    pretrain_return_threshold: float = 150.0
    env: EnvConfig = field(default_factory=EnvConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    plasticity: PlasticityConfig = field(default_factory=PlasticityConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)
    a2c: A2cConfig = field(default_factory=A2cConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    rma: RmaConfig = field(default_factory=RmaConfig)
    roa: RoaConfig = field(default_factory=RoaConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)


PAPER_OVERRIDES = {
    "policy": {"hidden": [512, 128, 64]},
    "plasticity": {"update_scale": 1e-3, "rate_scale": 1e-3,
                   "rate_decay": 0.995},
    "ppo": {"n_envs": 10000, "n_steps": 25, "updates": 2000},
    "a2c": {"n_envs": 2048, "n_steps": 30, "updates": 5000},
}


def _apply_dict(obj, data: dict, path: str = ""):
    valid = {f.name: f for f in fields(obj)}
    for key, value in data.items():
        if key not in valid:
            raise KeyError(f"unknown config key '{path}{key}'")
        current = getattr(obj, key)
        if dataclasses.is_dataclass(current) and isinstance(value, dict):
            _apply_dict(current, value, path=f"{path}{key}.")
        else:
            setattr(obj, key, value)


def _apply_env_overrides(cfg: RunConfig, environ=None):
    environ = os.environ if environ is None else environ
    for name, raw in sorted(environ.items()):
        if not name.startswith("SYNADAPT_") or name == "SYNADAPT_NO_NUMBA":
            continue
        parts = name[len("SYNADAPT_"):].lower().split("__")
        value = yaml.safe_load(raw)
        node = {parts[-1]: value}
        for p in reversed(parts[:-1]):
            node = {p: node}
        _apply_dict(cfg, node)


def load_config(path: str = None, profile: str = None, seed: int = None,
                out_dir: str = None, environ=None) -> RunConfig:
    """Defaults <- profile preset <- YAML file <- env vars <- CLI overrides."""
    cfg = RunConfig()
    data = {}
    if path is not None:
        with open(path) as f:
            data = yaml.safe_load(f) or {}
    prof = profile or data.get("profile", cfg.profile)
    if prof == "paper":
        _apply_dict(cfg, PAPER_OVERRIDES)
        cfg.profile = "paper"
    elif prof != "desk":
        raise ValueError(f"unknown profile '{prof}' (expected 'desk' or 'paper')")
    if data:
        _apply_dict(cfg, data)
    if profile is not None:
        cfg.profile = profile
    _apply_env_overrides(cfg, environ)
    if seed is not None:
        cfg.seed = seed
    if out_dir is not None:
        cfg.out_dir = out_dir
    return cfg


def config_to_yaml(cfg: RunConfig) -> str:
    return yaml.safe_dump(dataclasses.asdict(cfg), sort_keys=True)


def save_config(cfg: RunConfig, path: str) -> None:
    with open(path, "w") as f:
        f.write(config_to_yaml(cfg))
