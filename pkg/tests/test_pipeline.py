"""Pipeline mechanics that are cheap to verify: zero-modulator equivalence,
phase separation, the stop-gradient regularizer, privilege isolation,
evaluation-suite bookkeeping, and checkpoint/metric round-trips."""

import numpy as np
import pytest

import synadapt.kernels as K
from synadapt import pipeline as P
from synadapt.config import RunConfig
from synadapt.env import VecEnv
from synadapt.metagrad import LossGrads, Segment, SOURCE_ENCODER, backward, unroll_forward
from synadapt.nets import (copy_params, init_mlp, mlp_backward, mlp_forward,
                           params_checksum, zeros_like_params)
from synadapt.policy import (MOD_ENCODER, MOD_ESTIMATOR, MOD_NONE, MOD_ZERO,
                             PolicyState)
from synadapt.runio import (CheckpointError, MetricsWriter, load_checkpoint,
                            read_metrics, save_checkpoint)


@pytest.fixture(scope="module")
def tiny_cfg():
    cfg = RunConfig()
    cfg.seed = 3
    cfg.ppo.n_envs = 8
    cfg.ppo.n_steps = 12
    cfg.ppo.updates = 2
    cfg.a2c.n_envs = 6
    cfg.a2c.n_steps = 30
    cfg.a2c.updates = 2
    cfg.estimator.rollouts = 4
    cfg.estimator.epochs = 4
    cfg.eval.grid_points = 3
    cfg.eval.episodes_per_sample = 2
    cfg.env.episode_len = 40
    return cfg


@pytest.fixture(scope="module")
def tiny_stages(tiny_cfg):
    base, _ = P.pretrain_base(tiny_cfg)
    p1, _ = P.phase1_train(tiny_cfg, base)
    p2, info2 = P.phase2_train_estimator(tiny_cfg, p1)
    rma, _ = P.rma_baseline_train(tiny_cfg, base)
    return {"pretrain": base, "phase1": p1, "phase2": p2, "rma": rma,
            "phase2_info": info2}


def test_zero_modulators_match_nonplastic_baseline(tiny_cfg, tiny_stages):
    """Forcing the modulator source to zero reproduces the fixed-weight
    policy's behaviour exactly, episode by episode."""
    base = tiny_stages["pretrain"]
    spec_fix = P.build_policy_spec(tiny_cfg, K.MODE_NONE)
    spec_mod = P.build_policy_spec(tiny_cfg, K.MODE_MODULATED)
    b_fix = P.PolicyBundle("fix", base, spec_fix, MOD_NONE)
    b_zero = P.PolicyBundle("zero", base, spec_mod, MOD_ZERO)
    for seed in range(5):
        env1 = VecEnv(tiny_cfg.env, 2, seed, randomize=True, noise_on=True)
        env2 = VecEnv(tiny_cfg.env, 2, seed, randomize=True, noise_on=True)
        r1 = P.run_episode_batch(b_fix, env1, tiny_cfg)
        r2 = P.run_episode_batch(b_zero, env2, tiny_cfg)
        assert np.array_equal(r1, r2)


def test_phase1_attaches_encoder_and_keeps_shapes(tiny_cfg, tiny_stages):
    p1 = tiny_stages["phase1"]
    spec = P.build_policy_spec(tiny_cfg, K.MODE_MODULATED)
    dmp, dmm = spec.mod_dims
    assert p1["enc.W2"].shape[0] == dmp + dmm
    base = tiny_stages["pretrain"]
    for k in base:
        assert p1[k].shape == base[k].shape


def test_phase2_constant_predictor_baseline_is_variance(tiny_cfg):
    rng = np.random.default_rng(0)
    Y = rng.normal(2.0, 1.5, (500, 4))
    hold = np.arange(100)
    train = np.arange(100, 500)
    baseline = ((Y[hold] - Y[train].mean(axis=0)) ** 2).mean()
    direct = (Y[hold].var(axis=0)
              + (Y[hold].mean(axis=0) - Y[train].mean(axis=0)) ** 2).mean()
    assert abs(baseline - direct) < 1e-12


def test_phase2_perfect_oracle_mse_zero():
    Y = np.random.default_rng(1).normal(0, 1, (50, 3))
    assert ((Y - Y) ** 2).mean() == 0.0


def test_phase2_never_touches_frozen_parameters(tiny_cfg, tiny_stages):
    p1 = tiny_stages["phase1"]
    p2 = tiny_stages["phase2"]
    for k, v in p1.items():
        assert params_checksum({k: p2[k]}) == params_checksum({k: v}), k
    assert any(k.startswith("est.") for k in p2)


def test_expert_estimator_consistency_under_perfect_estimates(tiny_cfg, tiny_stages):
    """With the estimator's outputs replaced by the encoder's, the modulated
    weight trajectories coincide (linearity of the update in the third
    factor makes near-equal inputs give near-equal trajectories)."""
    p2 = tiny_stages["phase2"]
    spec = P.build_policy_spec(tiny_cfg, K.MODE_MODULATED)
    rng = np.random.default_rng(0)
    T, B = 12, 3
    obs = rng.normal(0, 1, (T, B, spec.obs_dim))
    e = rng.uniform(-1, 1, (T, B, 5))
    state0 = PolicyState.zeros(spec, p2, B)
    seg = Segment(obs=obs, resets=np.zeros((T, B)), state0=state0, e_norm=e,
                  source=SOURCE_ENCODER)
    _, tape = unroll_forward(p2, spec, seg)
    seg_given = Segment(obs=obs, resets=np.zeros((T, B)), state0=state0,
                        mp=tape.mp, mm=tape.mm, source="given")
    _, tape2 = unroll_forward(p2, spec, seg_given)
    assert np.array_equal(tape.final_state.Wp, tape2.final_state.Wp)
    eps = 1e-6
    seg_pert = Segment(obs=obs, resets=np.zeros((T, B)), state0=state0,
                       mp=tape.mp + eps, mm=tape.mm, source="given")
    _, tape3 = unroll_forward(p2, spec, seg_pert)
    drift = np.abs(tape3.final_state.Wp - tape.final_state.Wp).max()
    assert drift < 50 * eps  # O(eps) trajectory deviation


class TestRoaRegularizer:
    def test_coincident_embeddings_zero(self):
        z = np.random.default_rng(0).normal(0, 1, (6, 4))
        loss, d_mu, d_phi = P.roa_regularizer(z, z.copy())
        assert loss == 0.0
        assert np.all(d_mu == 0.0) and np.all(d_phi == 0.0)

    def test_one_sided_gradients(self):
        rng = np.random.default_rng(1)
        z_mu = rng.normal(0, 1, (5, 3))
        z_phi = rng.normal(0, 1, (5, 3))
        loss, d_mu, d_phi = P.roa_regularizer(z_mu, z_phi)
        diff = z_mu - z_phi
        nrm = np.sqrt((diff ** 2).sum(axis=1, keepdims=True))
        assert np.allclose(d_mu, diff / nrm / 5, atol=1e-12)
        assert np.array_equal(d_phi, -d_mu)

    def test_mu_term_gives_estimator_no_gradient(self):
        """The imitation term with the stop-gradient on z_phi contributes
        nothing to the estimator parameters, and vice versa."""
        rng = np.random.default_rng(2)
        params = {}
        init_mlp(params, "est", [7, 8, 3], rng)
        X = rng.normal(0, 1, (10, 7))
        z_mu = rng.normal(0, 1, (10, 3))
        z_phi, cache = mlp_forward(params, "est", X)
        _, d_mu, d_phi = P.roa_regularizer(z_mu, z_phi)
        grads = zeros_like_params(params)
        # term 1 (mu side) routes only through d_mu -> encoder path; the
        # estimator sees exactly zero from it
        assert all(np.all(v == 0.0) for v in grads.values())
        # term 2 (phi side) routes only through the estimator
        mlp_backward(params, "est", cache, d_phi, grads)
        assert any(np.abs(v).sum() > 0 for v in grads.values())

    def test_encoder_gradient_comes_only_from_mu_term(self, tiny_cfg):
        cfg = tiny_cfg
        spec_base = P.build_policy_spec(cfg, K.MODE_NONE)
        rng = np.random.default_rng(3)
        params = P.build_base_params(cfg, spec_base, rng)
        spec = P.build_policy_spec(cfg, K.MODE_NONE, z_dim=cfg.rma.z_dim)
        P.extend_input_layer(params, cfg.rma.z_dim, rng)
        P.attach_encoder(params, cfg, cfg.rma.z_dim, rng)
        T, B = 4, 2
        obs = rng.normal(0, 1, (T, B, spec.obs_dim))
        seg = Segment(obs=obs, resets=np.zeros((T, B)),
                      state0=PolicyState.zeros(spec, params, B),
                      e_norm=rng.uniform(-1, 1, (T, B, 5)),
                      source=SOURCE_ENCODER)
        _, tape = unroll_forward(params, spec, seg)
        d_z = rng.normal(0, 1, (T, B, cfg.rma.z_dim))
        grads = backward(params, spec, tape, LossGrads(d_z=d_z))
        assert any(np.abs(grads[k]).sum() > 0 for k in grads if k.startswith("enc."))
        assert all(np.all(grads[k] == 0.0) for k in grads if k.startswith("est."))


def test_roa_joint_train_runs_and_reports(tiny_cfg, tiny_stages):
    params, info = P.roa_joint_train(tiny_cfg, tiny_stages["pretrain"])
    assert not info["diverged"]
    assert any(k.startswith("est.") for k in params)
    assert any(k.startswith("enc.") for k in params)


class TestEvaluateSuite:
    def test_identical_policies_identical_rows(self, tiny_cfg, tiny_stages):
        base = tiny_stages["pretrain"]
        spec = P.build_policy_spec(tiny_cfg, K.MODE_NONE)
        bundles = {
            "non_adaptive_snn": P.PolicyBundle("non_adaptive_snn", base, spec, MOD_NONE),
            "rma": P.PolicyBundle("rma", base, spec, MOD_NONE),
        }
        axes = P.make_eval_axes(tiny_cfg)[:2]
        with pytest.warns(UserWarning):
            records, table, cells = P.evaluate_suite(tiny_cfg, bundles, axes)
        for sweep in axes:
            a = cells[("non_adaptive_snn", sweep.axis)]
            b = cells[("rma", sweep.axis)]
            assert a == b

    def test_missing_policy_row_omitted_with_warning(self, tiny_cfg, tiny_stages):
        base = tiny_stages["pretrain"]
        spec = P.build_policy_spec(tiny_cfg, K.MODE_NONE)
        bundles = {"non_adaptive_snn": P.PolicyBundle("x", base, spec, MOD_NONE)}
        axes = P.make_eval_axes(tiny_cfg)[:1]
        with pytest.warns(UserWarning, match="row omitted"):
            records, table, cells = P.evaluate_suite(tiny_cfg, bundles, axes)
        assert len(records) == 1
        assert "Non-Adaptive SNN" in table and "SMA" not in table

    def test_privilege_isolation_on_nonexpert_rows(self, tiny_cfg, tiny_stages):
        """Non-expert rows must complete without a single privileged read;
        a sneaky read trips the tracking assertion."""
        p2 = tiny_stages["phase2"]
        spec = P.build_policy_spec(tiny_cfg, K.MODE_MODULATED)
        bundle = P.PolicyBundle("sma", p2, spec, MOD_ESTIMATOR)
        sweep = P.make_eval_axes(tiny_cfg)[1]
        rec = P.eval_axis(bundle, sweep, tiny_cfg)   # must not raise
        assert np.isfinite(rec["metric"])

        class SneakyBundle(P.PolicyBundle):
            pass

        sneaky = SneakyBundle("sma", p2, spec, MOD_ESTIMATOR)
        orig = P.run_episode_batch

        def peeking(bundle, env, cfg, record_traj=False):
            env.extrinsics.as_array()  # privileged read a non-expert must not do
            return orig(bundle, env, cfg, record_traj)

        P.run_episode_batch, saved = peeking, P.run_episode_batch
        try:
            with pytest.raises(RuntimeError, match="privilege isolation"):
                P.eval_axis(sneaky, sweep, tiny_cfg)
        finally:
            P.run_episode_batch = saved

    def test_eval_sweep_spec_validation(self):
        with pytest.raises(ValueError):
            P.EvalSweepSpec("motor_gain", np.array([0.8, 1.2]),
                            np.array([0.7, 0.7]), 2, 0)

    def test_expert_rows_read_privileged_info(self, tiny_cfg, tiny_stages):
        p1 = tiny_stages["phase1"]
        spec = P.build_policy_spec(tiny_cfg, K.MODE_MODULATED)
        bundle = P.PolicyBundle("sma_expert", p1, spec, MOD_ENCODER)
        env = VecEnv(tiny_cfg.env, 2, 0, randomize=True, noise_on=True)
        P.run_episode_batch(bundle, env, tiny_cfg)
        assert env.extrinsics.privileged_reads > 0


class TestCheckpoints:
    def test_roundtrip(self, tmp_path):
        params = {"pol.W0": np.arange(6.0).reshape(2, 3),
                  "plast.alpha_x": np.array(0.9)}
        path = str(tmp_path / "x.ckpt.npz")
        save_checkpoint(path, "pretrain", params, meta={"eval_return": 1.5})
        stage, loaded, meta = load_checkpoint(path)
        assert stage == "pretrain"
        assert meta["eval_return"] == 1.5
        for k in params:
            assert np.array_equal(loaded[k], params[k])

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError, match="not found"):
            load_checkpoint(str(tmp_path / "nope.npz"))

    def test_corrupt_file_names_path(self, tmp_path):
        path = str(tmp_path / "bad.ckpt.npz")
        with open(path, "wb") as f:
            f.write(b"garbage")
        with pytest.raises(CheckpointError, match="bad.ckpt.npz"):
            load_checkpoint(path)

    def test_foreign_npz_rejected(self, tmp_path):
        path = str(tmp_path / "foreign.npz")
        np.savez(path, __meta__=np.array('{"magic": "other"}'), x=np.ones(3))
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)


class TestMetrics:
    def test_stream_roundtrip(self, tmp_path):
        path = str(tmp_path / "m.jsonl")
        w = MetricsWriter(path, "pretrain")
        w.write({"update": 1, "mean_return": 1.5})
        w.write({"update": 2, "mean_return": np.float64(2.5)})
        w.close()
        header, records = read_metrics(path)
        assert header["magic"] == "synadapt-metrics"
        assert records[1]["mean_return"] == 2.5

    def test_identical_writes_identical_bytes(self, tmp_path):
        blobs = []
        for name in ("a.jsonl", "b.jsonl"):
            path = str(tmp_path / name)
            w = MetricsWriter(path, "pretrain")
            for i in range(5):
                w.write({"update": i, "x": 0.1 * i})
            w.close()
            blobs.append(open(path, "rb").read())
        assert blobs[0] == blobs[1]


def test_weight_trajectory_probe(tiny_cfg, tiny_stages):
    p1 = tiny_stages["phase1"]
    spec = P.build_policy_spec(tiny_cfg, K.MODE_MODULATED)
    bundle = P.PolicyBundle("sma_expert", p1, spec, MOD_ENCODER)
    norms, snaps = P.plastic_weight_trajectory(bundle, tiny_cfg, seed=0, steps=30)
    assert norms.shape == (30,)
    assert np.all(np.isfinite(norms))
    assert 0 in snaps and 29 in snaps
