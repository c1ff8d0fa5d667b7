"""On-policy training: rollout collection, Adam, PPO (clipped surrogate,
rollout minibatches, multiple epochs) and A2C (single pass per truncation
window through the plasticity dynamics, with the synaptic-trace penalty).

Both update functions work through a small adapter protocol so the same
machinery drives the spiking policies and the tiny tabular policies used
in tests:

    evaluate(idx) -> (logp (T,b), value (T,b), entropy)
    backward(dlogp, dvalue, ent_coef, trace_coef) -> grads dict
    params -> dict of trainable leaves
    trace_sq_mean() -> mean squared plastic-layer trace (after evaluate)
"""

from __future__ import annotations

import numpy as np

from . import metagrad as mg
from .metagrad import LossGrads, Segment, clip_global_norm, unroll_forward
from .nets import mlp_forward, zeros_like_params
from .policy import Agent, PolicySpec, gaussian_entropy, gaussian_logp
from .rollout import (GaeResult, RolloutBuffer, normalize_advantages,
                      rollout_minibatches, state_rows)


class Adam:
    """Plain Adam over a parameter dict; deterministic given call order."""

    def __init__(self, params: dict, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.m = zeros_like_params(params)
        self.v = zeros_like_params(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0

    def step(self, params: dict, grads: dict, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for k in sorted(grads):
            g = grads[k]
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g
            params[k] = params[k] - lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def lr_at(lr0: float, decay: float, n_updates: int) -> float:
    """Learning rate after n optimizer updates: lr0 * decay ** n."""
    return lr0 * decay ** n_updates


def collect_rollout(env, agent: Agent, n_steps: int, window: int,
                    rng: np.random.Generator, obs: np.ndarray,
                    record_hist: bool = False, record_head: bool = False):
    """Run the policy in the vectorized env for n_steps.

    Returns (buffer, next_obs, episode_returns) where episode_returns lists
    the total rewards of episodes that finished during collection. The
    caller keeps `obs` and the agent state across successive rollouts.
    """
    B = env.n
    D = obs.shape[1]
    A = agent.spec.act_dim
    needs_e = agent.source == "encoder"
    buf = RolloutBuffer(
        obs=np.zeros((n_steps, B, D)),
        actions=np.zeros((n_steps, B, A)),
        log_probs=np.zeros((n_steps, B)),
        values=np.zeros((n_steps, B)),
        rewards=np.zeros((n_steps, B)),
        dones=np.zeros((n_steps, B)),
        timeouts=np.zeros((n_steps, B)),
        timeout_values=np.zeros((n_steps, B)),
        resets=np.zeros((n_steps, B)),
        window=window,
        snapshots=[],
        e_norm=np.zeros((n_steps, B, 5)) if needs_e else None,
        hist=np.zeros((n_steps, B, agent.hist_dim)) if record_hist else None,
        head=None,
    )
    finished = []
    for t in range(n_steps):
        if t % window == 0:
            buf.snapshots.append(agent.state.copy())
        e_norm = env.extrinsics_norm() if needs_e else None
        buf.obs[t] = obs
        if needs_e:
            buf.e_norm[t] = e_norm
        action, logp, value, info = agent.act(obs, e_norm, rng)
        if record_hist:
            buf.hist[t] = info["hist"]
        if record_head:
            if buf.head is None:
                buf.head = np.zeros((n_steps, B, info["head"].shape[1]))
            buf.head[t] = info["head"]
        res = env.step(action)
        buf.actions[t] = action
        buf.log_probs[t] = logp
        buf.values[t] = value
        buf.rewards[t] = res.reward
        buf.dones[t] = res.done
        buf.timeouts[t] = res.timeout
        if t + 1 < n_steps:
            buf.resets[t + 1] = res.done
        tidx = np.flatnonzero(res.timeout)
        if tidx.size:
            vterm, _ = mlp_forward(agent.params, "val", res.final_obs[tidx])
            buf.timeout_values[t, tidx] = vterm[:, 0]
        agent._ep_return += res.reward
        didx = np.flatnonzero(res.done)
        if didx.size:
            finished.extend(agent._ep_return[didx].tolist())
            agent._ep_return[didx] = 0.0
        agent.notify_done(res.done)
        obs = res.obs
    return buf, obs, finished


class SnnAdapter:
    """Window-re-unrolling adapter binding a spiking policy to the updates."""

    def __init__(self, params: dict, spec: PolicySpec, buffer: RolloutBuffer,
                 source: str = mg.SOURCE_ZERO):
        self.params = params
        self.spec = spec
        self.buffer = buffer
        self.source = source
        self._tapes = None
        self._idx = None

    def evaluate(self, idx: np.ndarray = None):
        buf = self.buffer
        if idx is None:
            idx = np.arange(buf.n_envs)
        self._idx = idx
        self._tapes = []
        logp = np.zeros((buf.n_steps, idx.size))
        value = np.zeros((buf.n_steps, idx.size))
        log_std = self.params["pol.log_std"]
        for w, (t0, t1) in enumerate(buf.window_bounds()):
            resets = buf.resets[t0:t1, idx].copy()
            resets[0] = 0.0
            seg = Segment(
                obs=np.ascontiguousarray(buf.obs[t0:t1, idx]),
                resets=resets,
                state0=state_rows(buf.snapshots[w], idx),
                e_norm=(np.ascontiguousarray(buf.e_norm[t0:t1, idx])
                        if buf.e_norm is not None else None),
                source=self.source,
            )
            out, tape = unroll_forward(self.params, self.spec, seg)
            self._tapes.append((t0, t1, tape))
            logp[t0:t1] = gaussian_logp(buf.actions[t0:t1, idx], out.amean, log_std)
            value[t0:t1] = out.value
        return logp, value, gaussian_entropy(log_std)

    def _augment_window(self, lg, t0, t1, tape, grads):
        """Hook for extra per-window loss terms (see the joint-training
        adapter in pipeline)."""

    def trace_sq_mean(self) -> float:
        num, cnt = 0.0, 0
        for _, _, tape in self._tapes:
            num += float((tape.xpre_seq ** 2).sum() + (tape.xpost_seq ** 2).sum())
            cnt += tape.xpre_seq.size + tape.xpost_seq.size
        return num / cnt

    def backward(self, dlogp: np.ndarray, dvalue: np.ndarray,
                 ent_coef: float = 0.0, trace_coef: float = 0.0) -> dict:
        grads = zeros_like_params(self.params)
        buf = self.buffer
        idx = self._idx
        log_std = self.params["pol.log_std"]
        sig2 = np.exp(2.0 * log_std)
        trace_cnt = 0
        if trace_coef > 0.0:
            trace_cnt = sum(t.xpre_seq.size + t.xpost_seq.size
                            for _, _, t in self._tapes)
        for (t0, t1, tape) in self._tapes:
            a = buf.actions[t0:t1, idx]
            diff = a - tape.amean
            dl = dlogp[t0:t1]
            d_amean = dl[:, :, None] * diff / sig2
            d_log_std = (dl[:, :, None] * (diff ** 2 / sig2 - 1.0)).sum(axis=(0, 1))
            lg = LossGrads(
                d_amean=d_amean,
                d_value=dvalue[t0:t1],
                d_log_std=d_log_std,
                d_xpre=(2.0 * trace_coef / trace_cnt) * tape.xpre_seq if trace_coef > 0 else None,
                d_xpost=(2.0 * trace_coef / trace_cnt) * tape.xpost_seq if trace_coef > 0 else None,
            )
            self._augment_window(lg, t0, t1, tape, grads)
            mg.backward(self.params, self.spec, tape, lg, grads=grads)
        if ent_coef != 0.0:
            grads["pol.log_std"] += -ent_coef * np.ones_like(log_std)
        return grads


def _check_finite(stats: dict):
    bad = [k for k, v in stats.items() if not np.isfinite(v)]
    if bad:
        raise FloatingPointError(f"non-finite loss terms {bad}: {stats}")


def clipped_surrogate(ratio: np.ndarray, adv: np.ndarray, clip: float):
    """PPO objective per sample and its gradient w.r.t. the new log-prob.

    surr = min(ratio * A, clip(ratio, 1-eps, 1+eps) * A); the gradient is
    ratio * A where the unclipped branch is active and zero otherwise.
    """
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - clip, 1.0 + clip) * adv
    use_unclipped = unclipped <= clipped
    surr = np.minimum(unclipped, clipped)
    dsurr_dlogp = ratio * adv * use_unclipped
    return surr, dsurr_dlogp, use_unclipped


def ppo_update(adapter, buffer: RolloutBuffer, gae: GaeResult, hp, opt: Adam,
               rng: np.random.Generator) -> dict:
    """Clipped-surrogate PPO with rollout (environment-axis) minibatches."""
    adv_n = normalize_advantages(gae.advantages)
    stats = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": 0.0,
             "grad_norm": 0.0, "clip_frac": 0.0, "lr": 0.0}
    n_batches = 0
    for _ in range(hp.epochs):
        for idx in rollout_minibatches(buffer, hp.minibatches, rng):
            logp, value, entropy = adapter.evaluate(idx)
            logp_old = buffer.log_probs[:, idx]
            ratio = np.exp(logp - logp_old)
            A = adv_n[:, idx]
            surr, dsurr, use_unclipped = clipped_surrogate(ratio, A, hp.clip)
            N = surr.size
            pol_loss = -surr.mean()
            ret = gae.returns[:, idx]
            v_loss = ((value - ret) ** 2).mean()
            loss_stats = {"policy_loss": pol_loss, "value_loss": v_loss,
                          "entropy": entropy}
            _check_finite(loss_stats)
            dlogp = -dsurr / N
            dvalue = hp.vf_coef * 2.0 * (value - ret) / N
            grads = adapter.backward(dlogp, dvalue, ent_coef=hp.ent_coef)
            grads, norm = clip_global_norm(grads, hp.max_grad_norm)
            lr = lr_at(hp.lr, hp.lr_decay, opt.t)
            opt.step(adapter.params, grads, lr)
            stats["policy_loss"] += pol_loss
            stats["value_loss"] += v_loss
            stats["entropy"] += entropy
            stats["grad_norm"] += norm
            stats["clip_frac"] += float(1.0 - use_unclipped.mean())
            stats["lr"] = lr
            n_batches += 1
    for k in ("policy_loss", "value_loss", "entropy", "grad_norm", "clip_frac"):
        stats[k] /= n_batches
    return stats


def a2c_update(adapter, buffer: RolloutBuffer, gae: GaeResult, hp,
               opt: Adam) -> dict:
    """Advantage actor-critic: one gradient pass over the whole buffer,
    re-unrolled per truncation window, with the synaptic-trace penalty."""
    adv_n = normalize_advantages(gae.advantages)
    logp, value, entropy = adapter.evaluate(None)
    N = logp.size
    pol_loss = -(adv_n * logp).mean()
    v_loss = ((value - gae.returns) ** 2).mean()
    trace_pen = 0.0
    if hp.trace_penalty > 0.0:
        trace_pen = hp.trace_penalty * adapter.trace_sq_mean()
    loss_stats = {"policy_loss": pol_loss, "value_loss": v_loss,
                  "entropy": entropy, "trace_penalty": trace_pen}
    _check_finite(loss_stats)
    dlogp = -adv_n / N
    dvalue = hp.vf_coef * 2.0 * (value - gae.returns) / N
    grads = adapter.backward(dlogp, dvalue, ent_coef=hp.ent_coef,
                             trace_coef=hp.trace_penalty)
    grads, norm = clip_global_norm(grads, hp.max_grad_norm)
    lr = lr_at(hp.lr, hp.lr_decay, opt.t)
    opt.step(adapter.params, grads, lr)
    return {"policy_loss": pol_loss, "value_loss": v_loss, "entropy": entropy,
            "trace_penalty": trace_pen, "grad_norm": norm, "lr": lr}
