import numpy as np
import pytest

import synadapt.kernels as K
from synadapt.config import EnvConfig
from synadapt.env import (Command, EnvState, ExtrinsicsVector, VecEnv,
                          assemble_obs, obs_dim, observe, pd_torque,
                          reward_terms, sample_extrinsics, tracking_phi,
                          weighted_eval_metric)


@pytest.fixture
def cfg():
    return EnvConfig()


class TestSampleExtrinsics:
    def test_degenerate_range(self, cfg):
        ranges = dict(cfg.extrinsics_ranges)
        ranges["motor_gain"] = [1.0, 1.0]
        ext = sample_extrinsics(ranges, np.random.default_rng(0), n=50)
        assert np.all(ext.motor_gain == 1.0)

    def test_uniform_mean(self, cfg):
        ext = sample_extrinsics(cfg.extrinsics_ranges,
                                np.random.default_rng(1), n=100_000)
        assert abs(ext.motor_gain.mean() - 1.0) < 0.01

    def test_seed_determinism(self, cfg):
        a = sample_extrinsics(cfg.extrinsics_ranges, np.random.default_rng(7), n=4)
        b = sample_extrinsics(cfg.extrinsics_ranges, np.random.default_rng(7), n=4)
        assert np.array_equal(a.as_array(), b.as_array())

    def test_invalid_range(self, cfg):
        ranges = dict(cfg.extrinsics_ranges)
        ranges["kp"] = [5.0, 2.0]
        with pytest.raises(ValueError, match="kp"):
            sample_extrinsics(ranges, np.random.default_rng(0))

    def test_privileged_read_tracking(self, cfg):
        ext = sample_extrinsics(cfg.extrinsics_ranges, np.random.default_rng(0), n=2)
        assert ext.privileged_reads == 0
        ext.as_array()
        _ = ext.kp
        ext.normalized(cfg.extrinsics_ranges)
        assert ext.privileged_reads == 3

    def test_normalized_range(self, cfg):
        ext = sample_extrinsics(cfg.extrinsics_ranges, np.random.default_rng(3), n=100)
        norm = ext.normalized(cfg.extrinsics_ranges)
        assert np.all(norm >= -1.0) and np.all(norm <= 1.0)


class TestPdTorque:
    def nominal_ext(self, cfg, **over):
        vals = dict(cfg.extrinsics_nominal)
        vals.update(over)
        return ExtrinsicsVector(np.array([[vals[k] for k in
                                           ("motor_gain", "kp", "kd", "damping", "payload")]]))

    def test_equilibrium_zero(self, cfg):
        ext = self.nominal_ext(cfg)
        tau = pd_torque(np.zeros(2), np.asarray(cfg.q0), np.zeros(2), ext, cfg)
        assert np.all(tau == 0.0)

    def test_proportional_term_exact(self, cfg):
        # position error exactly 0.1 with kp=20 gives tau = 2.0
        ext = self.nominal_ext(cfg, kp=20.0, kd=0.5)
        tau = pd_torque(np.zeros(2), np.array([-0.1, 0.0]), np.zeros(2), ext, cfg)
        assert tau[0, 0] == 2.0
        assert tau[0, 1] == 0.0

    def test_damping_term(self, cfg):
        ext = self.nominal_ext(cfg, kp=20.0, kd=0.5)
        tau = pd_torque(np.zeros(2), np.asarray(cfg.q0), np.array([1.0, 0.0]), ext, cfg)
        assert tau[0, 0] == -0.5

    def test_clipping(self, cfg):
        ext = self.nominal_ext(cfg, kp=37.5)
        tau = pd_torque(np.zeros(2), np.array([-5.0, 5.0]), np.zeros(2), ext, cfg)
        assert np.all(np.abs(tau) <= cfg.torque_limit)

    def test_motor_gain_scales_pointwise(self, cfg):
        # same states, larger motor gain: torques scale exactly (pre-clip)
        rng = np.random.default_rng(0)
        q = rng.normal(0, 0.2, (50, 2))
        qd = rng.normal(0, 0.5, (50, 2))
        a = rng.normal(0, 1, (50, 2))
        lo = ExtrinsicsVector(np.tile([1.0, 20.0, 0.5, 1.0, 1.0], (50, 1)))
        hi = ExtrinsicsVector(np.tile([1.2, 20.0, 0.5, 1.0, 1.0], (50, 1)))
        t_lo = pd_torque(a, q, qd, lo, cfg)
        t_hi = pd_torque(a, q, qd, hi, cfg)
        inside = np.abs(t_hi) < cfg.torque_limit
        assert np.all(np.abs(t_hi[inside]) >= np.abs(t_lo[inside]))
        assert np.allclose(t_hi[inside], 1.2 * t_lo[inside], rtol=1e-12)

    def test_nonfinite_action_rejected(self, cfg):
        ext = self.nominal_ext(cfg)
        with pytest.raises(ValueError):
            pd_torque(np.array([np.nan, 0.0]), np.zeros(2), np.zeros(2), ext, cfg)


class TestRewardTerms:
    scales = [1.0, 0.5, -0.05, -2.0e-4, -2.5e-7, -0.01]

    def test_perfect_tracking_total(self):
        v = np.array([[0.2, -0.1]])
        terms, total = reward_terms(v, np.array([0.3]), np.zeros((1, 2)),
                                    v, np.array([0.3]), np.zeros((1, 2)),
                                    np.zeros((1, 2)), np.zeros((1, 2)),
                                    np.zeros((1, 2)), self.scales)
        assert total[0] == 1.5

    def test_tracking_kernel_value(self):
        # squared error 0.25 in the tracking kernel gives exp(-1)
        err = np.array([[0.5, 0.0]])
        terms, _ = reward_terms(np.zeros((1, 2)), np.array([0.0]), np.zeros((1, 2)),
                                err, np.array([0.0]), np.zeros((1, 2)),
                                np.zeros((1, 2)), np.zeros((1, 2)),
                                np.zeros((1, 2)), self.scales)
        assert abs(terms[0, 0] - np.exp(-1.0)) < 1e-12

    def test_clipped_to_zero(self):
        terms, total = reward_terms(np.zeros((1, 2)), np.array([0.0]),
                                    np.full((1, 2), 10.0),
                                    np.full((1, 2), 5.0), np.array([5.0]),
                                    np.full((1, 2), 50.0), np.full((1, 2), 100.0),
                                    np.zeros((1, 2)), np.full((1, 2), 10.0),
                                    self.scales)
        assert terms.sum() < 0.0
        assert total[0] == 0.0

    def test_penalty_terms_formula(self):
        torque = np.array([[2.0, -1.0]])
        qddot = np.array([[100.0, 0.0]])
        action = np.array([[1.0, 1.0]])
        prev = np.array([[0.0, 0.0]])
        om_xy = np.array([[0.3, -0.4]])
        terms, _ = reward_terms(np.zeros((1, 2)), np.array([0.0]), om_xy,
                                np.zeros((1, 2)), np.array([0.0]), torque,
                                qddot, action, prev, self.scales)
        assert abs(terms[0, 2] - (-0.05 * 0.25)) < 1e-15
        assert abs(terms[0, 3] - (-2e-4 * 5.0)) < 1e-15
        assert abs(terms[0, 4] - (-2.5e-7 * 1e4)) < 1e-12
        assert abs(terms[0, 5] - (-0.01 * 2.0)) < 1e-15


class TestObserve:
    def test_zero_noise_deterministic(self, cfg):
        cfg.noise = {k: 0.0 for k in cfg.noise}
        state = EnvState(q=np.array([0.1, -0.2]), q_dot=np.array([1.0, 0.5]))
        cmd = Command(v_star=np.array([0.2, 0.0]), omega_star=0.1)
        a = observe(state, cmd, np.zeros(2), np.random.default_rng(0), cfg)
        b = observe(state, cmd, np.zeros(2), np.random.default_rng(1), cfg)
        assert np.array_equal(a, b)

    def test_joint_velocity_scaling(self, cfg):
        cfg.noise = {k: 0.0 for k in cfg.noise}
        state = EnvState(q=np.zeros(2), q_dot=np.array([10.0, 0.0]))
        cmd = Command(v_star=np.zeros(2), omega_star=0.0)
        obs = observe(state, cmd, np.zeros(2), np.random.default_rng(0), cfg)
        assert obs[11] == 0.5  # 10 rad/s * 0.05

    def test_clipping(self, cfg):
        cfg.noise = {k: 0.0 for k in cfg.noise}
        state = EnvState(q=np.zeros(2), q_dot=np.array([5000.0, 0.0]))
        cmd = Command(v_star=np.zeros(2), omega_star=0.0)
        obs = observe(state, cmd, np.zeros(2), np.random.default_rng(0), cfg)
        assert np.all(np.abs(obs) <= cfg.obs_clip)
        assert obs.max() == cfg.obs_clip

    def test_layout_and_dim(self, cfg):
        assert obs_dim(cfg) == 15
        cfg.noise = {k: 0.0 for k in cfg.noise}
        state = EnvState(q=np.array([0.3, -0.3]), q_dot=np.zeros(2))
        cmd = Command(v_star=np.array([0.1, 0.2]), omega_star=-0.4)
        prev = np.array([0.7, -0.7])
        obs = observe(state, cmd, prev, np.random.default_rng(0), cfg)
        assert np.array_equal(obs[6:9], [0.1, 0.2, -0.4])   # command block
        assert np.array_equal(obs[9:11], [0.3, -0.3])       # joint positions
        assert np.array_equal(obs[13:15], prev)             # previous action


class TestWeightedEvalMetric:
    def test_basic(self):
        assert weighted_eval_metric([1.0, 2.0], [0.5, 0.5]) == 1.5

    def test_one_hot(self):
        assert weighted_eval_metric([3.0, 7.0, 5.0], [0.0, 1.0, 0.0]) == 7.0

    def test_uniform_equals_mean(self):
        r = np.arange(11, dtype=float)
        p = np.full(11, 1.0 / 11)
        assert abs(weighted_eval_metric(r, p) - r.mean()) < 1e-12

    def test_brute_force_agreement(self):
        rng = np.random.default_rng(0)
        r = rng.normal(0, 10, 64)
        p = rng.random(64)
        p /= p.sum()
        brute = sum(float(ri) * float(pi) for ri, pi in zip(r, p))
        assert abs(weighted_eval_metric(r, p) - brute) < 1e-12

    def test_errors(self):
        with pytest.raises(ValueError, match="mismatch"):
            weighted_eval_metric([1.0], [0.5, 0.5])
        with pytest.raises(ValueError, match="sum"):
            weighted_eval_metric([1.0, 2.0], [0.6, 0.5])
        with pytest.raises(ValueError, match="non-negative"):
            weighted_eval_metric([1.0, 2.0], [-0.5, 1.5])


class TestVecEnv:
    def test_zero_torque_equilibrium(self, cfg):
        env = VecEnv(cfg, 3, 0, randomize=False, noise_on=False)
        env.reset()
        q0 = env.q.copy()
        steps0 = env.episode_step.copy()
        res = env.step(np.zeros((3, 2)))
        assert np.array_equal(env.q, q0)
        assert np.all(env.qdot == 0.0)
        assert np.array_equal(env.episode_step, steps0 + 1)
        assert not res.done.any()

    def test_terminal_velocity_matches_torque_balance(self, cfg):
        # re-anchored target keeps torque near constant; at steady state the
        # realized velocity is tau / damping
        damping = 25.0
        q = np.zeros((1, 2))
        qd = np.zeros((1, 2))
        mg = np.ones(1)
        kp = np.ones(1)
        kd = np.zeros(1)
        dmp = np.full(1, damping)
        pl = np.ones(1)
        for _ in range(3000):
            target = q + 1.0     # unit torque under kp=1 at the first substep
            q, qd, tau, _ = K.physics_substeps(q, qd, target, mg, kp, kd, dmp,
                                               pl, np.ones(2), cfg.dt, 1, 10.0)
        assert np.allclose(qd, tau / damping, rtol=1e-6)

    def test_timeout_flags_and_reset(self, cfg):
        env = VecEnv(cfg, 2, 3, randomize=False, noise_on=False, episode_len=5)
        env.reset()
        for t in range(5):
            res = env.step(np.zeros((2, 2)))
        assert res.timeout.all() and res.done.all()
        assert np.all(env.episode_step == 0)  # auto-reset happened
        assert res.final_obs is not None

    def test_bound_violation_is_failure_not_timeout(self, cfg):
        env = VecEnv(cfg, 1, 4, randomize=False, noise_on=False, episode_len=500)
        env.reset()
        env.q[0] = cfg.q_max + 1.0  # force bound violation on next step
        res = env.step(np.zeros((1, 2)))
        assert res.done[0] and not res.timeout[0]

    def test_reward_nonnegative_over_random_steps(self, cfg):
        env = VecEnv(cfg, 200, 5, randomize=True, noise_on=True)
        env.reset()
        rng = np.random.default_rng(0)
        for _ in range(500):
            res = env.step(rng.normal(0, 5, (200, 2)))
            assert np.all(res.reward >= 0.0)

    def test_seeded_bitwise_determinism(self, cfg):
        rng = np.random.default_rng(1)
        actions = rng.normal(0, 1, (20, 4, 2))
        outs = []
        for _ in range(2):
            env = VecEnv(cfg, 4, 42, randomize=True, noise_on=True)
            obs = env.reset()
            acc = [obs.tobytes()]
            for t in range(20):
                res = env.step(actions[t])
                acc.append(res.obs.tobytes())
                acc.append(res.reward.tobytes())
            outs.append(b"".join(acc))
        assert outs[0] == outs[1]

    def test_sim_does_not_count_privileged_reads(self, cfg):
        env = VecEnv(cfg, 2, 0, randomize=True, noise_on=True)
        env.reset()
        for _ in range(10):
            env.step(np.zeros((2, 2)))
        assert env.extrinsics.privileged_reads == 0
        env.extrinsics_norm()
        assert env.extrinsics.privileged_reads == 1

    def test_energy_dissipates_from_rest_position(self, cfg):
        # starting at q0 with zero action: PD damping and viscous friction
        # oppose the motion; kinetic energy falls across each substep
        rng = np.random.default_rng(2)
        for trial in range(10):
            q = np.zeros((1, 2))
            qd = rng.uniform(0.5, 2.0, (1, 2)) * rng.choice([-1, 1], (1, 2))
            mg, kp, kd = np.ones(1), np.full(1, 20.0), np.full(1, 0.5)
            dmp, pl = np.full(1, 1.5), np.ones(1)
            ke_prev = 0.5 * (qd ** 2).sum()
            for _ in range(4):
                q, qd, _, _ = K.physics_substeps(q, qd, np.zeros((1, 2)), mg,
                                                 kp, kd, dmp, pl, np.ones(2),
                                                 cfg.dt, 1, cfg.torque_limit)
                ke = 0.5 * (qd ** 2).sum()
                assert ke <= ke_prev
                ke_prev = ke

    def test_decimation_equivalence_zero_torque(self, cfg):
        # with zero torque the four substeps have a closed form
        q0 = np.array([[0.3, -0.2]])
        qd0 = np.array([[1.0, -0.5]])
        damping, payload = 1.3, 0.9
        q, qd, _, _ = K.physics_substeps(q0, qd0, np.zeros((1, 2)), np.zeros(1),
                                         np.full(1, 20.0), np.full(1, 0.5),
                                         np.full(1, damping), np.full(1, payload),
                                         np.ones(2), cfg.dt, 4, cfg.torque_limit)
        lam = 1.0 - cfg.dt * damping / payload
        qd_closed = qd0 * lam ** 4
        q_closed = q0 + cfg.dt * qd0 * (lam + lam ** 2 + lam ** 3 + lam ** 4)
        assert np.allclose(qd, qd_closed, atol=1e-9)
        assert np.allclose(q, q_closed, atol=1e-9)

    def test_tracking_phi_identity(self):
        assert tracking_phi(0.0) == 1.0
        assert abs(tracking_phi(np.array([[0.5, 0.0]]))[0] - np.exp(-1.0)) < 1e-12
        assert abs(tracking_phi(np.array([0.5]))[0] - np.exp(-1.0)) < 1e-12
