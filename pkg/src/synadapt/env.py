"""Desk-scale randomized-dynamics control testbed.

Two independently actuated joints drive a planar body velocity through a
fixed full-rank kinematic map (v_b = J @ qdot, yaw rate = k . qdot). Under
domain randomization the privileged parameters are drawn per episode and,
with a small per-step probability, re-drawn mid-episode: conditions keep
changing underneath the policy, which is what adaptation is for. The
policy outputs joint-target offsets; a PD controller turns them into
torques which are integrated semi-implicitly with 4 substeps per policy
step. Episodes terminate on joint-bound violation (failure) or at the
episode length (timeout, flagged separately for value bootstrapping).

The body cannot tilt: the gravity-projection observation is a noisy
constant and the roll/pitch rate entering the angular-velocity penalty is
identically zero. Both are kept for observation/reward shape parity.

Privileged environment parameters live in `ExtrinsicsVector`; every read
through its public accessors is counted, which is how the evaluation suite
asserts that non-privileged policies never touch them. The simulator
itself reads the underlying storage directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels as K
from .config import EnvConfig

EXT_FIELDS = ("motor_gain", "kp", "kd", "damping", "payload")
GRAVITY = np.array([0.0, 0.0, -1.0])
N_NOISE = 10  # lin vel 2, ang vel 1, gravity 3, joint pos 2, joint vel 2


class ExtrinsicsVector:
    """Privileged environment parameters with read tracking.

    Public accessors (field properties, `as_array`, `normalized`) increment
    `privileged_reads`; the simulator uses the private storage.
    """

    def __init__(self, values: np.ndarray):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim == 1:
            values = values.reshape(1, -1)
        if values.shape[1] != len(EXT_FIELDS):
            raise ValueError(f"expected {len(EXT_FIELDS)} extrinsic fields")
        self._values = values
        self.privileged_reads = 0

    def __len__(self):
        return self._values.shape[0]

    def _tracked(self) -> np.ndarray:
        self.privileged_reads += 1
        return self._values

    def as_array(self) -> np.ndarray:
        return self._tracked().copy()

    def normalized(self, ranges: dict) -> np.ndarray:
        """Map each field into [-1, 1] using the configured sampling ranges."""
        vals = self._tracked()
        out = np.zeros_like(vals)
        for i, name in enumerate(EXT_FIELDS):
            lo, hi = ranges[name]
            if hi > lo:
                out[:, i] = 2.0 * (vals[:, i] - lo) / (hi - lo) - 1.0
        return out


def _add_ext_props():
    for _i, _name in enumerate(EXT_FIELDS):
        def getter(self, col=_i):
            return self._tracked()[:, col].copy()
        setattr(ExtrinsicsVector, _name, property(getter))


_add_ext_props()


@dataclass
class EnvState:
    """Joint-space state of one environment."""

    q: np.ndarray
    q_dot: np.ndarray
    step_index: int = 0
    episode_step: int = 0


@dataclass
class Command:
    v_star: np.ndarray      # target planar velocity (2,)
    omega_star: float       # target yaw rate


@dataclass
class StepResult:
    obs: np.ndarray
    reward: np.ndarray
    done: np.ndarray
    timeout: np.ndarray
    final_obs: np.ndarray = None     # observation of the pre-reset next state
    reward_terms: np.ndarray = None


def sample_extrinsics(ranges: dict, rng: np.random.Generator, n: int = 1) -> ExtrinsicsVector:
    """Uniform draw of each field over its configured range."""
    vals = np.zeros((n, len(EXT_FIELDS)))
    for i, name in enumerate(EXT_FIELDS):
        lo, hi = ranges[name]
        if lo > hi:
            raise ValueError(f"invalid range for {name}: [{lo}, {hi}]")
        vals[:, i] = rng.uniform(lo, hi, size=n) if hi > lo else lo
    return ExtrinsicsVector(vals)


def pd_torque(action: np.ndarray, q: np.ndarray, qdot: np.ndarray,
              ext: ExtrinsicsVector, cfg: EnvConfig) -> np.ndarray:
    """Joint torques from target offsets, clipped to the torque limits.

    tau = motor_gain * (kp * (c_a * a + q0 - q) - kd * qdot)
    """
    action = np.atleast_2d(np.asarray(action, dtype=np.float64))
    q = np.atleast_2d(np.asarray(q, dtype=np.float64))
    qdot = np.atleast_2d(np.asarray(qdot, dtype=np.float64))
    if not np.all(np.isfinite(action)):
        raise ValueError("non-finite action")
    vals = ext._values
    q0 = np.asarray(cfg.q0)
    target = cfg.action_scale * action + q0
    tau = vals[:, 0:1] * (vals[:, 1:2] * (target - q) - vals[:, 2:3] * qdot)
    return np.clip(tau, -cfg.torque_limit, cfg.torque_limit)


def tracking_phi(err, sigma: float = 0.25):
    """exp(-||err||^2 / sigma).

    Scalars and 1-D inputs are treated as (batches of) scalar errors;
    2-D inputs as batches of vectors, squared-summed over the last axis.
    """
    err = np.asarray(err, dtype=np.float64)
    sq = err ** 2 if err.ndim <= 1 else (err ** 2).sum(axis=-1)
    return np.exp(-sq / sigma)


def reward_terms(v_b, om_b, om_xy, cmd_v, cmd_w, torque, qddot,
                 action, prev_action, scales, sigma: float = 0.25):
    """Per-term reward vector and the clipped (non-negative) total.

    terms = [tracking v, tracking omega, roll/pitch-rate penalty,
             torque penalty, joint-acceleration penalty, action-rate penalty]
    """
    v_b = np.atleast_2d(v_b)
    om_xy = np.atleast_2d(om_xy)
    torque = np.atleast_2d(torque)
    qddot = np.atleast_2d(qddot)
    action = np.atleast_2d(action)
    prev_action = np.atleast_2d(prev_action)
    cmd_v = np.atleast_2d(cmd_v)
    om_b = np.atleast_1d(om_b)
    cmd_w = np.atleast_1d(cmd_w)
    n = v_b.shape[0]
    terms = np.zeros((n, 6))
    terms[:, 0] = scales[0] * tracking_phi(cmd_v - v_b, sigma)
    terms[:, 1] = scales[1] * tracking_phi(cmd_w - om_b, sigma)
    terms[:, 2] = scales[2] * (om_xy ** 2).sum(axis=1)
    terms[:, 3] = scales[3] * (torque ** 2).sum(axis=1)
    terms[:, 4] = scales[4] * (qddot ** 2).sum(axis=1)
    terms[:, 5] = scales[5] * ((action - prev_action) ** 2).sum(axis=1)
    total = np.maximum(0.0, terms.sum(axis=1))
    return terms, total


def obs_dim(cfg: EnvConfig) -> int:
    return 2 + 1 + 3 + 3 + cfg.n_joints + cfg.n_joints + cfg.n_joints


def assemble_obs(q, qdot, v_b, om_b, cmd_v, cmd_w, prev_action, noise, cfg: EnvConfig):
    """Concatenate, scale and clip the observation vector.

    `noise` holds pre-drawn additive sensor noise in physical units,
    columns [lin vel(2), ang vel(1), gravity(3), joint pos(2), joint vel(2)].
    """
    n = q.shape[0]
    sc = cfg.obs_scales
    parts = [
        (v_b + noise[:, 0:2]) * sc["lin_vel"],
        (om_b[:, None] + noise[:, 2:3]) * sc["ang_vel"],
        GRAVITY[None, :] + noise[:, 3:6],
        cmd_v,
        cmd_w[:, None],
        (q + noise[:, 6:8]) * sc["joint_pos"],
        (qdot + noise[:, 8:10]) * sc["joint_vel"],
        prev_action,
    ]
    obs = np.concatenate(parts, axis=1)
    return np.clip(obs, -cfg.obs_clip, cfg.obs_clip)


def observe(state: EnvState, cmd: Command, prev_action: np.ndarray,
            rng: np.random.Generator, cfg: EnvConfig, kin_map=None,
            noise_scale: float = 1.0) -> np.ndarray:
    """Single-environment observation (noisy, scaled, clipped)."""
    J = np.asarray(cfg.kin_map) if kin_map is None else kin_map
    kvec = np.asarray(cfg.ang_map)
    q = state.q.reshape(1, -1)
    qd = state.q_dot.reshape(1, -1)
    vb = qd @ J.T
    omb = qd @ kvec
    mags = _noise_magnitudes(cfg) * noise_scale
    noise = rng.uniform(-1.0, 1.0, size=(1, N_NOISE)) * mags if np.any(mags > 0) \
        else np.zeros((1, N_NOISE))
    return assemble_obs(q, qd, vb, omb, cmd.v_star.reshape(1, -1),
                        np.array([cmd.omega_star]), prev_action.reshape(1, -1),
                        noise, cfg)[0]


def _noise_magnitudes(cfg: EnvConfig) -> np.ndarray:
    nz = cfg.noise
    return np.array([nz["lin_vel"]] * 2 + [nz["ang_vel"]] + [nz["gravity"]] * 3
                    + [nz["joint_pos"]] * 2 + [nz["joint_vel"]] * 2)


def weighted_eval_metric(returns, probs) -> float:
    """Probability-weighted sum of per-sample rollout returns."""
    returns = np.asarray(returns, dtype=np.float64)
    probs = np.asarray(probs, dtype=np.float64)
    if returns.shape != probs.shape:
        raise ValueError(f"length mismatch: {returns.shape} vs {probs.shape}")
    if np.any(probs < 0.0):
        raise ValueError("sample probabilities must be non-negative")
    if abs(probs.sum() - 1.0) > 1e-9:
        raise ValueError(f"sample probabilities sum to {probs.sum()!r}, not 1")
    return float(np.dot(returns, probs))


class VecEnv:
    """Batch of independent testbed instances with per-env RNG streams."""

    def __init__(self, cfg: EnvConfig, n_envs: int, seed: int,
                 randomize: bool = True, noise_on: bool = True,
                 noise_scale: float = 1.0, fixed_extrinsics: dict = None,
                 episode_len: int = None):
        self.cfg = cfg
        self.n = n_envs
        self.randomize = randomize
        self.noise_on = noise_on
        self.noise_scale = noise_scale
        self.fixed = fixed_extrinsics
        self.episode_len = cfg.episode_len if episode_len is None else episode_len
        self._rngs = [np.random.default_rng(s)
                      for s in np.random.SeedSequence(seed).spawn(n_envs)]
        self.J = np.asarray(cfg.kin_map, dtype=np.float64)
        self.kvec = np.asarray(cfg.ang_map, dtype=np.float64)
        self.inertia = np.asarray(cfg.inertia, dtype=np.float64)
        self.q0 = np.asarray(cfg.q0, dtype=np.float64)
        self._mags = _noise_magnitudes(cfg) * noise_scale
        nj = cfg.n_joints
        self.q = np.zeros((n_envs, nj))
        self.qdot = np.zeros((n_envs, nj))
        self.prev_action = np.zeros((n_envs, nj))
        self.cmd_v = np.zeros((n_envs, 2))
        self.cmd_w = np.zeros(n_envs)
        self.episode_step = np.zeros(n_envs, dtype=np.int64)
        self.extrinsics = ExtrinsicsVector(np.zeros((n_envs, len(EXT_FIELDS))))

    @property
    def obs_dim(self) -> int:
        return obs_dim(self.cfg)

    def extrinsics_norm(self) -> np.ndarray:
        """Privileged (tracked) read of the normalized extrinsics."""
        return self.extrinsics.normalized(self.cfg.extrinsics_ranges)

    def _sample_ext(self, rng) -> np.ndarray:
        vals = np.zeros(len(EXT_FIELDS))
        for i, name in enumerate(EXT_FIELDS):
            if self.fixed is not None and name in self.fixed:
                vals[i] = self.fixed[name]
            elif self.randomize:
                lo, hi = self.cfg.extrinsics_ranges[name]
                vals[i] = rng.uniform(lo, hi)
            else:
                vals[i] = self.cfg.extrinsics_nominal[name]
        return vals

    def _reset_env(self, i: int) -> None:
        rng = self._rngs[i]
        self.extrinsics._values[i] = self._sample_ext(rng)
        lo, hi = self.cfg.cmd_v_range
        self.cmd_v[i] = rng.uniform(lo, hi, size=2)
        lo, hi = self.cfg.cmd_w_range
        self.cmd_w[i] = rng.uniform(lo, hi)
        self.q[i] = self.q0
        self.qdot[i] = 0.0
        self.prev_action[i] = 0.0
        self.episode_step[i] = 0

    def reset(self) -> np.ndarray:
        for i in range(self.n):
            self._reset_env(i)
        return self._observe(np.arange(self.n))

    def _observe(self, idx: np.ndarray) -> np.ndarray:
        m = idx.shape[0]
        noise = np.zeros((m, N_NOISE))
        if self.noise_on and np.any(self._mags > 0):
            for j, i in enumerate(idx):
                noise[j] = self._rngs[i].uniform(-1.0, 1.0, size=N_NOISE) * self._mags
        q = self.q[idx]
        qd = self.qdot[idx]
        vb = qd @ self.J.T
        omb = qd @ self.kvec
        return assemble_obs(q, qd, vb, omb, self.cmd_v[idx], self.cmd_w[idx],
                            self.prev_action[idx], noise, self.cfg)

    def step(self, actions: np.ndarray) -> StepResult:
        # private copy: prev_action is mutated on auto-reset and must not
        # alias the caller's array
        a = np.array(actions, dtype=np.float64).reshape(self.n, -1)
        target = self.cfg.action_scale * a + self.q0
        ev = self.extrinsics._values
        q2, qd2, tau, qddot = K.physics_substeps(
            self.q, self.qdot, target,
            np.ascontiguousarray(ev[:, 0]), np.ascontiguousarray(ev[:, 1]),
            np.ascontiguousarray(ev[:, 2]), np.ascontiguousarray(ev[:, 3]),
            np.ascontiguousarray(ev[:, 4]), self.inertia,
            self.cfg.dt, self.cfg.substeps, self.cfg.torque_limit,
        )
        # mid-episode randomized-dynamics jumps (per-env streams)
        if self.randomize and self.cfg.extrinsics_resample_prob > 0.0:
            for i in range(self.n):
                if self._rngs[i].random() < self.cfg.extrinsics_resample_prob:
                    self.extrinsics._values[i] = self._sample_ext(self._rngs[i])
        vb = qd2 @ self.J.T
        omb = qd2 @ self.kvec
        om_xy = np.zeros((self.n, 2))
        terms, reward = reward_terms(vb, omb, om_xy, self.cmd_v, self.cmd_w,
                                     tau, qddot, a, self.prev_action,
                                     self.cfg.reward_scales, self.cfg.tracking_sigma)
        self.q, self.qdot = q2, qd2
        self.prev_action = a
        self.episode_step += 1
        fail = (np.abs(q2) > self.cfg.q_max).any(axis=1)
        timeout = (self.episode_step >= self.episode_len) & ~fail
        done = fail | timeout

        all_idx = np.arange(self.n)
        final_obs = self._observe(all_idx)
        didx = np.flatnonzero(done)
        obs = final_obs
        if didx.size:
            for i in didx:
                self._reset_env(i)
            obs = final_obs.copy()
            obs[didx] = self._observe(didx)
        return StepResult(obs=obs, reward=reward, done=done, timeout=timeout,
                          final_obs=final_obs, reward_terms=terms)
