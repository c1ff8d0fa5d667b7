"""Trajectory storage for temporally-dependent policies, GAE with timeout
bootstrapping, and robot-axis minibatch sampling.

Minibatches partition the environment axis: a temporally-dependent policy
(recurrent state, plastic weights) cannot be re-evaluated at isolated
timesteps, so whole trajectories are sampled and re-unrolled from stored
window-start state snapshots.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .policy import PolicyState


@dataclass
class GaeResult:
    advantages: np.ndarray   # (T, B)
    returns: np.ndarray      # (T, B)


@dataclass
class RolloutBuffer:
    """n_steps x n_envs on-policy store plus per-window state snapshots."""

    obs: np.ndarray              # (T, B, D)
    actions: np.ndarray          # (T, B, A)
    log_probs: np.ndarray        # (T, B)
    values: np.ndarray           # (T, B)
    rewards: np.ndarray          # (T, B)
    dones: np.ndarray            # (T, B) {0,1}
    timeouts: np.ndarray         # (T, B) {0,1}
    timeout_values: np.ndarray   # (T, B) V(s') where timeout, else 0
    resets: np.ndarray           # (T, B) reset-before-step flags; row 0 zero
    window: int
    snapshots: list              # PolicyState at each window start
    e_norm: np.ndarray = None    # (T, B, E) normalized extrinsics
    hist: np.ndarray = None      # (T, B, Hd) estimator input history
    head: np.ndarray = None      # (T, B, M) modulator/latent head outputs

    @property
    def n_steps(self) -> int:
        return self.obs.shape[0]

    @property
    def n_envs(self) -> int:
        return self.obs.shape[1]

    @property
    def batch_size(self) -> int:
        return self.n_steps * self.n_envs

    def window_bounds(self):
        T, w = self.n_steps, self.window
        return [(t0, min(t0 + w, T)) for t0 in range(0, T, w)]


def state_rows(state: PolicyState, idx: np.ndarray) -> PolicyState:
    return PolicyState(
        v=state.v[idx].copy(), xpre=state.xpre[idx].copy(),
        xpost=state.xpost[idx].copy(), Ep=state.Ep[idx].copy(),
        Em=state.Em[idx].copy(), Wp=state.Wp[idx].copy(),
        otr=state.otr[idx].copy(), te=state.te[idx].copy(),
    )


def compute_gae(buffer: RolloutBuffer, bootstrap_values: np.ndarray,
                gamma: float = 0.99, lam: float = 0.95) -> GaeResult:
    """Standard GAE with the timeout bootstrapping correction.

    On timeout steps the reward is augmented to r + gamma * V(s') before the
    recursion, and the step still restarts the recursion like any terminal.
    """
    T, B = buffer.rewards.shape
    if bootstrap_values.shape != (B,):
        raise ValueError("bootstrap values must be one per environment")
    adv = np.zeros((T, B))
    carry = np.zeros(B)
    for t in range(T - 1, -1, -1):
        nonterminal = 1.0 - buffer.dones[t]
        r_eff = buffer.rewards[t] + gamma * buffer.timeout_values[t] * buffer.timeouts[t]
        v_next = buffer.values[t + 1] if t < T - 1 else bootstrap_values
        delta = r_eff + gamma * v_next * nonterminal - buffer.values[t]
        carry = delta + gamma * lam * nonterminal * carry
        adv[t] = carry
    return GaeResult(advantages=adv, returns=adv + buffer.values)


def rollout_minibatches(buffer: RolloutBuffer, k: int, rng: np.random.Generator):
    """Random partition of the environment axis into k index groups.

    Group sizes differ by at most one when k does not divide n_envs. Each
    group carries full-length trajectories; re-unrolling starts from the
    stored window snapshots.
    """
    n = buffer.n_envs
    if k > n:
        raise ValueError(f"cannot split {n} environments into {k} minibatches")
    perm = rng.permutation(n)
    return [np.sort(chunk) for chunk in np.array_split(perm, k)]


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    return (adv - adv.mean()) / (adv.std() + 1e-8)
