"""Two-phase adaptation training, baselines, and the evaluation suite.

Stages
------
pretrain_base           PPO on a fixed-weight spiking policy, no noise, no
                        randomization (the behavioural foundation)
phase1_train            A2C through the plasticity dynamics with the
                        privileged encoder emitting the two modulators
phase2_train_estimator  supervised regression of the modulator trajectory
                        from local (action, observation) history
rma_baseline_train      latent-input baseline: non-plastic policy fed an
                        8-d embedding of the extrinsics, then history
                        regression onto that embedding
roa_joint_train         single-stage latent baseline with the symmetric
                        stop-gradient regularizer
evaluate_suite          probability-weighted returns over per-axis
                        extrinsic sweeps for the six policy rows
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import kernels as K
from .config import RunConfig
from .env import VecEnv, obs_dim, weighted_eval_metric
from .metagrad import SOURCE_ENCODER
from .nets import (copy_params, estimator_forward, init_mlp, mlp_backward,
                   mlp_forward, params_checksum, zeros_like_params)
from .policy import (MOD_ENCODER, MOD_ESTIMATOR, MOD_NONE, MOD_ZERO, Agent,
                     PolicySpec, init_policy_params)
from .rl import Adam, SnnAdapter, a2c_update, collect_rollout, ppo_update
from .rollout import compute_gae
from .runio import MetricsWriter, save_checkpoint

ROW_ORDER = [
    ("non_adaptive_snn", "Non-Adaptive SNN"),
    ("plastic_snn", "Plastic SNN"),
    ("rma", "RMA"),
    ("sma", "SMA"),
    ("rma_expert", "RMA Expert"),
    ("sma_expert", "SMA Expert"),
]

AXIS_FIELDS = {"motor_gain": "motor_gain", "p_gain": "kp",
               "d_gain": "kd", "friction": "damping"}
AXIS_LABELS = {"no_noise": "No noise", "motor_gain": "Motor gain",
               "p_gain": "P-gain", "d_gain": "D-gain", "friction": "Friction",
               "obs_noise": "Obs noise"}

WP_NORM_LIMIT = 1e3


def stage_seed(base: int, k: int) -> int:
    return int(np.random.SeedSequence([base, k]).generate_state(1)[0])


@dataclass
class PolicyBundle:
    """Everything needed to act: parameters, architecture, modulator source."""

    name: str
    params: dict
    spec: PolicySpec
    source: str


def build_policy_spec(cfg: RunConfig, mode: int, z_dim: int = 0) -> PolicySpec:
    pc = cfg.policy
    return PolicySpec(
        obs_dim=obs_dim(cfg.env), act_dim=cfg.env.n_joints,
        hidden=tuple(pc.hidden), plastic_layer=pc.plastic_layer, mode=mode,
        mod_per_pre=pc.modulator_per_pre, z_dim=z_dim,
        lam_v=pc.lam_v, theta=pc.theta, slope=pc.surrogate_slope,
        width=pc.surrogate_width, alpha_out=pc.alpha_out,
        beta=cfg.plasticity.beta, update_scale=cfg.plasticity.update_scale,
    )


def build_base_params(cfg: RunConfig, spec: PolicySpec, rng) -> dict:
    params: dict = {}
    init_policy_params(params, spec, rng, gain=cfg.policy.init_gain,
                       wout_scale=cfg.policy.wout_scale,
                       log_std_init=cfg.policy.log_std_init,
                       rate_scale=cfg.plasticity.rate_scale,
                       alpha_x=cfg.plasticity.alpha_x,
                       gamma_e=cfg.plasticity.gamma)
    init_mlp(params, "val", [spec.obs_dim] + [64, 64] + [1], rng)
    return params


def attach_encoder(params: dict, cfg: RunConfig, out_dim: int, rng) -> None:
    init_mlp(params, "enc", [5] + list(cfg.encoder.hidden) + [out_dim], rng,
             final_scale=cfg.encoder.final_scale)


def attach_estimator(params: dict, cfg: RunConfig, in_dim: int, out_dim: int, rng) -> None:
    init_mlp(params, "est", [in_dim] + list(cfg.estimator.hidden) + [out_dim], rng)


def extend_input_layer(params: dict, z_dim: int, rng) -> None:
    """Grow the first-layer weights with small columns for the latent input."""
    W0 = params["pol.W0"]
    k = 0.1 / np.sqrt(z_dim)
    params["pol.W0"] = np.concatenate(
        [W0, rng.uniform(-k, k, size=(W0.shape[0], z_dim))], axis=1)


def make_agent(bundle: PolicyBundle, n: int, cfg: RunConfig) -> Agent:
    agent = Agent(bundle.params, bundle.spec, source=bundle.source,
                  hist_len=cfg.estimator.history_len, obs_dim=obs_dim(cfg.env))
    agent.reset(n)
    return agent


def run_episode_batch(bundle: PolicyBundle, env: VecEnv, cfg: RunConfig,
                      record_traj: bool = False):
    """One deterministic (mean-action) episode per environment instance.

    Returns per-env total rewards; rewards after an env's first termination
    are ignored (the env auto-resets but the episode is over).
    """
    agent = make_agent(bundle, env.n, cfg)
    obs = env.reset()
    active = np.ones(env.n, dtype=bool)
    total = np.zeros(env.n)
    traj = [] if record_traj else None
    for _ in range(env.episode_len):
        e_norm = env.extrinsics_norm() if agent.source == MOD_ENCODER else None
        action, _, _, info = agent.act(obs, e_norm, deterministic=True)
        if record_traj:
            traj.append(info)
        res = env.step(action)
        total += res.reward * active
        active &= ~res.done
        agent.notify_done(res.done)
        obs = res.obs
        if not active.any():
            break
    return (total, traj) if record_traj else total


def eval_return_randomized(bundle: PolicyBundle, cfg: RunConfig, seed: int,
                           episodes: int) -> float:
    """Mean episode return under fully randomized extrinsics and noise."""
    env = VecEnv(cfg.env, episodes, seed, randomize=True, noise_on=True)
    return float(run_episode_batch(bundle, env, cfg).mean())


def eval_return_nominal(bundle: PolicyBundle, cfg: RunConfig, seed: int,
                        episodes: int) -> float:
    env = VecEnv(cfg.env, episodes, seed, randomize=False, noise_on=False)
    return float(run_episode_batch(bundle, env, cfg).mean())


def _params_finite(params: dict) -> bool:
    return all(np.all(np.isfinite(v)) for v in params.values())


def _emit(metrics, record):
    if metrics is not None:
        metrics(record)


def pretrain_base(cfg: RunConfig, metrics=None):
    """PPO-train the fixed-weight spiking policy on the noise-free testbed."""
    spec = build_policy_spec(cfg, K.MODE_NONE)
    rng_init = np.random.default_rng(stage_seed(cfg.seed, 1))
    params = build_base_params(cfg, spec, rng_init)
    hp = cfg.ppo
    env = VecEnv(cfg.env, hp.n_envs, stage_seed(cfg.seed, 2),
                 randomize=False, noise_on=False)
    agent = Agent(params, spec, source=MOD_NONE,
                  hist_len=cfg.estimator.history_len)
    agent.reset(hp.n_envs)
    samp_rng = np.random.default_rng(stage_seed(cfg.seed, 3))
    mb_rng = np.random.default_rng(stage_seed(cfg.seed, 4))
    opt = Adam(params)
    obs = env.reset()
    recent = []
    for u in range(hp.updates):
        buf, obs, finished = collect_rollout(env, agent, hp.n_steps,
                                             hp.n_steps, samp_rng, obs)
        vtail, _ = mlp_forward(params, "val", obs)
        gae = compute_gae(buf, vtail[:, 0], hp.gamma, hp.gae_lambda)
        adapter = SnnAdapter(params, spec, buf)
        stats = ppo_update(adapter, buf, gae, hp, opt, mb_rng)
        recent.extend(finished)
        recent = recent[-200:]
        if (u + 1) % 10 == 0 or u == hp.updates - 1:
            _emit(metrics, {
                "update": u + 1, "env_steps": (u + 1) * hp.n_steps * hp.n_envs,
                "mean_return": float(np.mean(recent)) if recent else 0.0,
                "mean_reward": float(buf.rewards.mean()), **stats})
    bundle = PolicyBundle("pretrain", params, spec, MOD_NONE)
    final_eval = eval_return_nominal(bundle, cfg, stage_seed(cfg.seed, 5), 20)
    converged = final_eval >= cfg.pretrain_return_threshold
    _emit(metrics, {"event": "final_eval", "eval_return": final_eval,
                    "threshold": cfg.pretrain_return_threshold,
                    "converged": bool(converged)})
    info = {"eval_return": final_eval, "converged": bool(converged)}
    return params, info


def _a2c_stage(cfg: RunConfig, params: dict, spec: PolicySpec, metrics,
               seed_offset: int, adapter_cls=SnnAdapter, adapter_kwargs=None,
               record_hist: bool = False, rate_decay: float = None):
    """Shared A2C loop for the plastic phase and the latent baselines.

    Aborts on divergence (non-finite parameters or plastic-weight blowup)
    and returns the last good parameter snapshot in that case.
    """
    hp = cfg.a2c
    env = VecEnv(cfg.env, hp.n_envs, stage_seed(cfg.seed, seed_offset),
                 randomize=True, noise_on=True)
    agent = Agent(params, spec, source=MOD_ENCODER,
                  hist_len=cfg.estimator.history_len)
    agent.reset(hp.n_envs)
    samp_rng = np.random.default_rng(stage_seed(cfg.seed, seed_offset + 1))
    opt = Adam(params)
    obs = env.reset()
    recent = []
    last_good = copy_params(params)
    diverged = False
    for u in range(hp.updates):
        buf, obs, finished = collect_rollout(env, agent, hp.n_steps, hp.window,
                                             samp_rng, obs,
                                             record_hist=record_hist)
        vtail, _ = mlp_forward(params, "val", obs)
        gae = compute_gae(buf, vtail[:, 0], hp.gamma, hp.gae_lambda)
        kwargs = {"source": SOURCE_ENCODER} if adapter_cls is SnnAdapter else {}
        kwargs.update(adapter_kwargs or {})
        adapter = adapter_cls(params, spec, buf, **kwargs)
        try:
            stats = a2c_update(adapter, buf, gae, hp, opt)
        except FloatingPointError as exc:
            _emit(metrics, {"event": "divergence_abort", "update": u + 1,
                            "reason": str(exc)})
            diverged = True
            break
        if rate_decay is not None and "plast.rate" in params:
            params["plast.rate"] = params["plast.rate"] * rate_decay
        wp_norm = float(np.sqrt((agent.state.Wp ** 2).sum(axis=(1, 2)).max()))
        if not _params_finite(params) or wp_norm > WP_NORM_LIMIT:
            _emit(metrics, {"event": "divergence_abort", "update": u + 1,
                            "reason": f"wp_norm={wp_norm}"})
            diverged = True
            break
        recent.extend(finished)
        recent = recent[-200:]
        if (u + 1) % 25 == 0:
            last_good = copy_params(params)
        if (u + 1) % 10 == 0 or u == hp.updates - 1:
            extra = {}
            if isinstance(adapter, RoaAdapter):
                extra = {"reg_mu": adapter.reg_mu_loss,
                         "reg_phi": adapter.reg_phi_loss}
            _emit(metrics, {
                "update": u + 1, "env_steps": (u + 1) * hp.n_steps * hp.n_envs,
                "mean_return": float(np.mean(recent)) if recent else 0.0,
                "mean_reward": float(buf.rewards.mean()),
                "wp_norm": wp_norm, **stats, **extra})
    if diverged:
        params.clear()
        params.update(last_good)
    return params, {"diverged": diverged}


def phase1_train(cfg: RunConfig, base_params: dict, metrics=None):
    """Meta-train the modulated plasticity jointly with the privileged
    encoder, starting from the pre-trained fixed-weight policy."""
    spec = build_policy_spec(cfg, K.MODE_MODULATED)
    params = copy_params(base_params)
    rng = np.random.default_rng(stage_seed(cfg.seed, 10))
    dmp, dmm = spec.mod_dims
    attach_encoder(params, cfg, dmp + dmm, rng)
    return _a2c_stage(cfg, params, spec, metrics, seed_offset=11,
                      rate_decay=cfg.plasticity.rate_decay)


def phase2_train_estimator(cfg: RunConfig, phase1_params: dict, metrics=None,
                           target_latent: bool = False, z_dim: int = 0):
    """Regress the privileged head's trajectory from local history.

    Freezes the policy and encoder (verified by checksum), collects expert
    rollouts, and fits the estimator MLP by minibatch MSE. Returns the
    augmented parameters and the held-out/baseline MSE summary.
    """
    mode = K.MODE_NONE if target_latent else K.MODE_MODULATED
    spec = build_policy_spec(cfg, mode, z_dim=z_dim)
    params = copy_params(phase1_params)
    ec = cfg.estimator
    agent = Agent(params, spec, source=MOD_ENCODER, hist_len=ec.history_len)
    env = VecEnv(cfg.env, cfg.a2c.n_envs, stage_seed(cfg.seed, 20),
                 randomize=True, noise_on=True)
    agent.reset(env.n)
    samp_rng = np.random.default_rng(stage_seed(cfg.seed, 21))
    obs = env.reset()
    xs, ys = [], []
    for _ in range(ec.rollouts):
        buf, obs, _ = collect_rollout(env, agent, cfg.a2c.n_steps,
                                      cfg.a2c.window, samp_rng, obs,
                                      record_hist=True, record_head=True)
        xs.append(buf.hist.reshape(-1, buf.hist.shape[2]))
        ys.append(buf.head.reshape(-1, buf.head.shape[2]))
    X = np.concatenate(xs, axis=0)
    Y = np.concatenate(ys, axis=0)

    frozen_keys = [k for k in params if not k.startswith("est.")]
    frozen_before = params_checksum({k: params[k] for k in frozen_keys})

    rng = np.random.default_rng(stage_seed(cfg.seed, 22))
    perm = rng.permutation(X.shape[0])
    n_hold = int(X.shape[0] * ec.holdout_frac)
    hold, train = perm[:n_hold], perm[n_hold:]
    base_pred = Y[train].mean(axis=0)
    baseline_mse = float(((Y[hold] - base_pred) ** 2).mean())

    attach_estimator(params, cfg, X.shape[1], Y.shape[1], rng)
    # fixed whitening stats: the modulator targets can sit orders of
    # magnitude below unit scale, which would put plain MSE training at its
    # optimization floor
    x_std = X[train].std(axis=0)
    y_std = Y[train].std(axis=0)
    params["est.x_mean"] = X[train].mean(axis=0)
    params["est.x_std"] = np.where(x_std > 1e-8, x_std, 1.0)
    params["est.y_mean"] = base_pred.copy()
    params["est.y_std"] = np.where(y_std > 1e-8, y_std, 1.0)
    est = {k: params[k] for k in params if k.startswith("est.")}
    Xn = (X - est["est.x_mean"]) / est["est.x_std"]
    Yn = (Y - est["est.y_mean"]) / est["est.y_std"]
    opt = Adam(est)
    for epoch in range(ec.epochs):
        order = rng.permutation(train.size)
        for i0 in range(0, train.size, ec.batch_size):
            idx = train[order[i0:i0 + ec.batch_size]]
            pred, cache = mlp_forward(est, "est", Xn[idx])
            err = pred - Yn[idx]
            grads = zeros_like_params(est)
            mlp_backward(est, "est", cache, 2.0 * err / err.size, grads)
            opt.step(est, grads, ec.lr)
        pred_h, _ = estimator_forward(est, "est", X[hold])
        mse_h = float(((pred_h - Y[hold]) ** 2).mean())
        _emit(metrics, {"epoch": epoch + 1, "holdout_mse": mse_h,
                        "baseline_mse": baseline_mse})
    params.update(est)

    frozen_after = params_checksum({k: params[k] for k in frozen_keys})
    if frozen_before != frozen_after:
        raise RuntimeError("estimator training modified frozen parameters")
    info = {"baseline_mse": baseline_mse, "holdout_mse": mse_h,
            "mse_ratio": mse_h / baseline_mse if baseline_mse > 0 else float("inf")}
    return params, info


def rma_baseline_train(cfg: RunConfig, base_params: dict, metrics=None):
    """Latent-input baseline: train (policy, encoder) with the embedding as
    extra observation, then regress the embedding from history."""
    z_dim = cfg.rma.z_dim
    spec = build_policy_spec(cfg, K.MODE_NONE, z_dim=z_dim)
    params = copy_params(base_params)
    rng = np.random.default_rng(stage_seed(cfg.seed, 30))
    extend_input_layer(params, z_dim, rng)
    attach_encoder(params, cfg, z_dim, rng)
    params, info1 = _a2c_stage(cfg, params, spec, metrics, seed_offset=31)
    params, info2 = phase2_train_estimator(cfg, params, metrics,
                                           target_latent=True, z_dim=z_dim)
    return params, {**info1, **info2}


def roa_regularizer(z_mu: np.ndarray, z_phi: np.ndarray):
    """Shared value and the two one-sided gradients of the L2 imitation gap.

    loss = mean_i ||z_mu_i - z_phi_i||_2 ; the mu-side gradient treats z_phi
    as constant and vice versa. Exactly zero (value and gradients) when the
    embeddings coincide.
    """
    diff = z_mu - z_phi
    nrm = np.sqrt((diff ** 2).sum(axis=1))
    loss = float(nrm.mean())
    safe = np.where(nrm > 0.0, nrm, 1.0)
    d = diff / (safe[:, None] * nrm.size)
    d[nrm == 0.0] = 0.0
    return loss, d, -d


class RoaAdapter(SnnAdapter):
    """A2C adapter adding the symmetric stop-gradient regularizer between
    the privileged embedding and its history estimate."""

    def __init__(self, params, spec, buffer, reg_lambda: float = 1.0):
        super().__init__(params, spec, buffer, source=SOURCE_ENCODER)
        self.reg_lambda = reg_lambda
        self.reg_mu_loss = 0.0
        self.reg_phi_loss = 0.0

    def evaluate(self, idx=None):
        self.reg_mu_loss = 0.0
        self.reg_phi_loss = 0.0
        return super().evaluate(idx)

    def _augment_window(self, lg, t0, t1, tape, grads):
        T, b = t1 - t0, self._idx.size
        z_dim = self.spec.z_dim
        hist = self.buffer.hist[t0:t1, self._idx].reshape(T * b, -1)
        z_mu = tape.z_seq.reshape(T * b, z_dim)
        z_phi, cache = mlp_forward(self.params, "est", hist)
        loss, d_mu, d_phi = roa_regularizer(z_mu, z_phi)
        self.reg_mu_loss += self.reg_lambda * loss
        self.reg_phi_loss += loss
        lg.d_z = (self.reg_lambda * d_mu).reshape(T, b, z_dim)
        mlp_backward(self.params, "est", cache, d_phi, grads)


def roa_joint_train(cfg: RunConfig, base_params: dict, metrics=None):
    """Single-stage variant: encoder and estimator trained jointly with the
    stop-gradient-regularized loss; the policy consumes the privileged
    embedding during training."""
    z_dim = cfg.rma.z_dim
    spec = build_policy_spec(cfg, K.MODE_NONE, z_dim=z_dim)
    params = copy_params(base_params)
    rng = np.random.default_rng(stage_seed(cfg.seed, 40))
    extend_input_layer(params, z_dim, rng)
    attach_encoder(params, cfg, z_dim, rng)
    agent_probe = Agent(params, spec, source=MOD_ENCODER,
                        hist_len=cfg.estimator.history_len,
                        obs_dim=obs_dim(cfg.env))
    attach_estimator(params, cfg, agent_probe.hist_dim, z_dim, rng)
    return _a2c_stage(cfg, params, spec, metrics, seed_offset=41,
                      adapter_cls=RoaAdapter,
                      adapter_kwargs={"reg_lambda": cfg.roa.reg_lambda},
                      record_hist=True)


@dataclass
class EvalSweepSpec:
    """One evaluation axis: sample grid, weights, episode counts, seed."""

    axis: str
    grid: np.ndarray
    probs: np.ndarray
    episodes_per_sample: int
    seed: int

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=np.float64)
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if np.any(self.probs < 0) or abs(self.probs.sum() - 1.0) > 1e-9:
            raise ValueError("sample probabilities must be >= 0 and sum to 1")


def make_eval_axes(cfg: RunConfig):
    ev = cfg.eval
    axes = [EvalSweepSpec("no_noise", np.array([0.0]), np.array([1.0]),
                          ev.episodes_per_sample, ev.base_seed)]
    for i, (axis, fieldname) in enumerate(AXIS_FIELDS.items()):
        lo, hi = cfg.env.extrinsics_ranges[fieldname]
        grid = np.linspace(lo, hi, ev.grid_points)
        probs = np.full(ev.grid_points, 1.0 / ev.grid_points)
        axes.append(EvalSweepSpec(axis, grid, probs, ev.episodes_per_sample,
                                  ev.base_seed + 1000 * (i + 1)))
    grid = np.linspace(0.0, ev.noise_axis_max, ev.grid_points)
    probs = np.full(ev.grid_points, 1.0 / ev.grid_points)
    axes.append(EvalSweepSpec("obs_noise", grid, probs, ev.episodes_per_sample,
                              ev.base_seed + 9000))
    return axes


def eval_axis(bundle: PolicyBundle, sweep: EvalSweepSpec, cfg: RunConfig):
    """Weighted return of one policy along one sweep axis."""
    sample_means = np.zeros(sweep.grid.size)
    sample_vars = np.zeros(sweep.grid.size)
    episodes = []
    for i, value in enumerate(sweep.grid):
        kw = dict(randomize=False, noise_on=True, noise_scale=1.0,
                  fixed_extrinsics=None)
        if sweep.axis == "no_noise":
            kw["noise_on"] = False
        elif sweep.axis == "obs_noise":
            kw["noise_scale"] = float(value)
        else:
            kw["fixed_extrinsics"] = {AXIS_FIELDS[sweep.axis]: float(value)}
        env = VecEnv(cfg.env, sweep.episodes_per_sample,
                     sweep.seed + 97 * i, **kw)
        rets = run_episode_batch(bundle, env, cfg)
        if bundle.source != MOD_ENCODER and env.extrinsics.privileged_reads > 0:
            raise RuntimeError(
                f"privilege isolation violated: {bundle.name} read the "
                f"extrinsics {env.extrinsics.privileged_reads} times")
        sample_means[i] = rets.mean()
        sample_vars[i] = rets.var(ddof=1) if rets.size > 1 else 0.0
        episodes.append(rets.tolist())
    cell = weighted_eval_metric(sample_means, sweep.probs)
    se = float(np.sqrt((sweep.probs ** 2 * sample_vars
                        / max(1, sweep.episodes_per_sample)).sum()))
    return {"policy": bundle.name, "axis": sweep.axis,
            "grid": sweep.grid.tolist(), "probs": sweep.probs.tolist(),
            "sample_means": sample_means.tolist(), "metric": cell,
            "ci95": 1.96 * se, "episodes": episodes}


def evaluate_suite(cfg: RunConfig, bundles: dict, axes=None):
    """Table-shaped evaluation: rows are the provided policy bundles (missing
    rows are warned about and omitted), columns the sweep axes."""
    axes = make_eval_axes(cfg) if axes is None else axes
    records = []
    cells = {}
    for key, label in ROW_ORDER:
        if key not in bundles:
            warnings.warn(f"missing policy '{key}'; row omitted")
            continue
        for sweep in axes:
            rec = eval_axis(bundles[key], sweep, cfg)
            records.append(rec)
            cells[(key, sweep.axis)] = (rec["metric"], rec["ci95"])
    table = format_table(cells, axes)
    return records, table, cells


def format_table(cells: dict, axes) -> str:
    axis_names = [s.axis for s in axes]
    header = ["Policy"] + [AXIS_LABELS.get(a, a) for a in axis_names]
    rows = []
    for key, label in ROW_ORDER:
        if not any((key, a) in cells for a in axis_names):
            continue
        row = [label]
        for a in axis_names:
            if (key, a) in cells:
                m, ci = cells[(key, a)]
                row.append(f"{m:8.2f} ±{ci:5.2f}")
            else:
                row.append("-")
        rows.append(row)
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)))
    return "\n".join(lines)


def bundles_from_params(cfg: RunConfig, stage_params: dict) -> dict:
    """Build the six evaluation rows from available stage parameter dicts.

    stage_params maps stage name ('pretrain', 'phase1', 'phase2', 'rma') to
    its parameter dict; missing stages yield missing rows.
    """
    out = {}
    if "pretrain" in stage_params:
        base = stage_params["pretrain"]
        out["non_adaptive_snn"] = PolicyBundle(
            "non_adaptive_snn", base, build_policy_spec(cfg, K.MODE_NONE), MOD_NONE)
        out["plastic_snn"] = PolicyBundle(
            "plastic_snn", base, build_policy_spec(cfg, K.MODE_STDP), MOD_NONE)
    if "phase1" in stage_params:
        out["sma_expert"] = PolicyBundle(
            "sma_expert", stage_params["phase1"],
            build_policy_spec(cfg, K.MODE_MODULATED), MOD_ENCODER)
    if "phase2" in stage_params:
        out["sma"] = PolicyBundle(
            "sma", stage_params["phase2"],
            build_policy_spec(cfg, K.MODE_MODULATED), MOD_ESTIMATOR)
    if "rma" in stage_params:
        spec_z = build_policy_spec(cfg, K.MODE_NONE, z_dim=cfg.rma.z_dim)
        out["rma_expert"] = PolicyBundle("rma_expert", stage_params["rma"],
                                         spec_z, MOD_ENCODER)
        out["rma"] = PolicyBundle("rma", stage_params["rma"], spec_z,
                                  MOD_ESTIMATOR)
    return out


def modulator_trajectory(bundle: PolicyBundle, cfg: RunConfig, seed: int,
                         steps: int = 200, fixed_extrinsics: dict = None):
    """Per-step modulator (or latent) outputs of one deterministic rollout."""
    env = VecEnv(cfg.env, 1, seed, randomize=fixed_extrinsics is None,
                 noise_on=True, fixed_extrinsics=fixed_extrinsics)
    agent = make_agent(bundle, 1, cfg)
    obs = env.reset()
    out = []
    for _ in range(steps):
        e_norm = env.extrinsics_norm() if agent.source == MOD_ENCODER else None
        action, _, _, info = agent.act(obs, e_norm, deterministic=True)
        if info["z"] is not None:
            out.append(info["z"][0])
        else:
            out.append(np.concatenate([info["mp"][0], info["mm"][0]]))
        res = env.step(action)
        agent.notify_done(res.done)
        obs = res.obs
    return np.asarray(out)


def plastic_weight_trajectory(bundle: PolicyBundle, cfg: RunConfig, seed: int,
                              steps: int, episode_len: int = None):
    """Frobenius norm of the plastic weights along one long rollout."""
    env = VecEnv(cfg.env, 1, seed, randomize=True, noise_on=True,
                 episode_len=episode_len or steps)
    agent = make_agent(bundle, 1, cfg)
    obs = env.reset()
    norms = np.zeros(steps)
    snaps = {}
    for t in range(steps):
        e_norm = env.extrinsics_norm() if agent.source == MOD_ENCODER else None
        action, _, _, _ = agent.act(obs, e_norm, deterministic=True)
        res = env.step(action)
        norms[t] = np.sqrt((agent.state.Wp[0] ** 2).sum())
        if t in (0, steps - 1):
            snaps[t] = agent.state.Wp[0].copy()
        agent.notify_done(res.done)
        obs = res.obs
    return norms, snaps


def run_stage(cfg: RunConfig, stage: str, run_dir: str, prereq_params=None):
    """Train one pipeline stage, streaming metrics and saving a checkpoint."""
    import os

    os.makedirs(run_dir, exist_ok=True)
    writer = MetricsWriter(os.path.join(run_dir, f"metrics-{stage}.jsonl"), stage)
    try:
        if stage == "pretrain":
            params, info = pretrain_base(cfg, metrics=writer.write)
        elif stage == "phase1":
            params, info = phase1_train(cfg, prereq_params, metrics=writer.write)
        elif stage == "phase2":
            params, info = phase2_train_estimator(cfg, prereq_params,
                                                  metrics=writer.write)
        elif stage == "rma":
            params, info = rma_baseline_train(cfg, prereq_params,
                                              metrics=writer.write)
        elif stage == "roa":
            params, info = roa_joint_train(cfg, prereq_params,
                                           metrics=writer.write)
        else:
            raise ValueError(f"unknown stage '{stage}'")
    finally:
        writer.close()
    save_checkpoint(os.path.join(run_dir, f"{stage}.ckpt.npz"), stage, params,
                    meta={k: v for k, v in info.items()
                          if isinstance(v, (int, float, bool, str))})
    return params, info
