"""Spiking policy: configuration, state, parameter initialization, window
marshalling around the fused kernels, and the acting Agent.

Parameter-dict layout (see nets.py):
  pol.W0..W{L-1}   layer weights; the plastic layer's slot holds the
                   *initial* plastic weights restored at episode resets
  pol.Wout/bout    linear readout from the output-trace vector
  pol.log_std      state-independent Gaussian log-stddev
  plast.A_plus/A_minus/rate   LTP/LTD coefficients and per-synapse rates
  plast.alpha_x/gamma         learnable trace / eligibility decay scalars
  enc.*, est.*, val.*         encoder, estimator, value MLPs
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels as K
from .nets import estimator_forward, init_mlp, mlp_forward

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class PolicySpec:
    """Static architecture description of one spiking policy."""

    obs_dim: int
    act_dim: int
    hidden: tuple = (64, 32, 16)
    plastic_layer: int = 3          # 1-based among hidden layers; >= 2
    mode: int = K.MODE_NONE
    mod_per_pre: bool = False       # potentiation modulator indexed per pre-neuron
    z_dim: int = 0                  # extra latent appended to the observation
    lam_v: float = math.exp(-1.0 / 10.0)
    theta: float = 1.0
    slope: float = 0.3
    width: float = 1.0
    alpha_out: float = math.exp(-1.0 / 10.0)
    beta: float = 1.0
    update_scale: float = 1e-3

    def __post_init__(self):
        if not 2 <= self.plastic_layer <= len(self.hidden):
            raise ValueError("plastic layer must be >= 2 and within the hidden stack")

    @property
    def in_dim(self) -> int:
        return self.obs_dim + self.z_dim

    @property
    def n_layers(self) -> int:
        return len(self.hidden)

    @property
    def pidx(self) -> int:
        return self.plastic_layer - 1

    @property
    def n_pre(self) -> int:
        return self.hidden[self.pidx - 1]

    @property
    def n_post(self) -> int:
        return self.hidden[self.pidx]

    @property
    def mod_dims(self) -> tuple:
        if self.mode != K.MODE_MODULATED:
            return 1, 1
        mp = self.n_pre if self.mod_per_pre else self.n_post
        return mp, self.n_post

    @property
    def offsets(self) -> np.ndarray:
        return np.array([0] + list(np.cumsum(self.hidden)), dtype=np.int64)

    @property
    def h_sum(self) -> int:
        return int(sum(self.hidden))

    def lam_arr(self) -> np.ndarray:
        return np.full(self.n_layers, self.lam_v)

    def theta_arr(self) -> np.ndarray:
        return np.full(self.n_layers, self.theta)


def init_policy_params(params: dict, spec: PolicySpec, rng: np.random.Generator,
                       gain: float = 1.0, wout_scale: float = 0.1,
                       log_std_init: float = math.log(0.5),
                       rate_scale: float = 1e-3,
                       alpha_x: float = math.exp(-1.0 / 10.0),
                       gamma_e: float = math.exp(-1.0 / 200.0)) -> None:
    """Fill `params` with freshly initialized policy (and plasticity) leaves."""
    sizes = [spec.in_dim] + list(spec.hidden)
    for l in range(spec.n_layers):
        k = gain / np.sqrt(sizes[l])
        params[f"pol.W{l}"] = rng.uniform(-k, k, size=(sizes[l + 1], sizes[l]))
    k = wout_scale / np.sqrt(spec.hidden[-1])
    params["pol.Wout"] = rng.uniform(-k, k, size=(spec.act_dim, spec.hidden[-1]))
    params["pol.bout"] = np.zeros(spec.act_dim)
    params["pol.log_std"] = np.full(spec.act_dim, log_std_init)
    q, p = spec.n_post, spec.n_pre
    params["plast.A_plus"] = rng.uniform(0.0, 1.0, size=(q, p))
    params["plast.A_minus"] = rng.uniform(0.0, 1.0, size=(q, p))
    params["plast.rate"] = rng.uniform(0.0, 1.0, size=(q, p)) * rate_scale
    params["plast.alpha_x"] = np.array(alpha_x)
    params["plast.gamma"] = np.array(gamma_e)


@dataclass
class PolicyState:
    """Per-environment recurrent state of the spiking policy."""

    v: np.ndarray        # (B, Hsum)
    xpre: np.ndarray     # (B, P)
    xpost: np.ndarray    # (B, Q)
    Ep: np.ndarray       # (B, Q, P)
    Em: np.ndarray       # (B, Q, P)
    Wp: np.ndarray       # (B, Q, P)
    otr: np.ndarray      # (B, Hlast)
    te: np.ndarray       # (B,) int64

    @classmethod
    def zeros(cls, spec: PolicySpec, params: dict, n: int) -> "PolicyState":
        q, p = spec.n_post, spec.n_pre
        return cls(
            v=np.zeros((n, spec.h_sum)),
            xpre=np.zeros((n, p)),
            xpost=np.zeros((n, q)),
            Ep=np.zeros((n, q, p)),
            Em=np.zeros((n, q, p)),
            Wp=np.tile(params[f"pol.W{spec.pidx}"], (n, 1, 1)),
            otr=np.zeros((n, spec.hidden[-1])),
            te=np.ones(n, dtype=np.int64),
        )

    def copy(self) -> "PolicyState":
        return PolicyState(self.v.copy(), self.xpre.copy(), self.xpost.copy(),
                           self.Ep.copy(), self.Em.copy(), self.Wp.copy(),
                           self.otr.copy(), self.te.copy())

    def reset_rows(self, mask: np.ndarray, spec: PolicySpec, params: dict) -> None:
        idx = np.flatnonzero(mask)
        if idx.size == 0:
            return
        self.v[idx] = 0.0
        self.xpre[idx] = 0.0
        self.xpost[idx] = 0.0
        self.Ep[idx] = 0.0
        self.Em[idx] = 0.0
        self.Wp[idx] = params[f"pol.W{spec.pidx}"]
        self.otr[idx] = 0.0
        self.te[idx] = 1


@dataclass
class UnrollTape:
    """Forward record of one truncation window; replays bit-exactly."""

    spec: PolicySpec
    obs_aug: np.ndarray
    mp: np.ndarray
    mm: np.ndarray
    resets: np.ndarray
    state0: PolicyState
    u_seq: np.ndarray
    s_seq: np.ndarray
    xpre_seq: np.ndarray
    xpost_seq: np.ndarray
    Ep_seq: np.ndarray
    Em_seq: np.ndarray
    Wused_seq: np.ndarray
    te_seq: np.ndarray
    otr_seq: np.ndarray
    amean: np.ndarray
    final_state: PolicyState
    enc_cache: list = None
    val_cache: list = None
    value: np.ndarray = None
    z_seq: np.ndarray = None


def _marshal(params: dict, spec: PolicySpec):
    Ws = tuple(np.ascontiguousarray(params[f"pol.W{l}"]) for l in range(spec.n_layers))
    WsT = tuple(np.ascontiguousarray(w.T) for w in Ws)
    Wout = np.ascontiguousarray(params["pol.Wout"])
    WoutT = np.ascontiguousarray(Wout.T)
    bout = np.ascontiguousarray(params["pol.bout"])
    Ap = np.ascontiguousarray(params["plast.A_plus"])
    Am = np.ascontiguousarray(params["plast.A_minus"])
    rate = np.ascontiguousarray(params["plast.rate"])
    ax = float(params["plast.alpha_x"])
    ga = float(params["plast.gamma"])
    return Ws, WsT, Wout, WoutT, bout, Ap, Am, rate, ax, ga


def policy_step(params: dict, spec: PolicySpec, state: PolicyState,
                obs_aug: np.ndarray, mp: np.ndarray = None, mm: np.ndarray = None):
    """One acting step for a batch; resets must have been applied already."""
    B = obs_aug.shape[0]
    dmp, dmm = spec.mod_dims
    if mp is None:
        mp = np.zeros((B, dmp))
    if mm is None:
        mm = np.zeros((B, dmm))
    Ws, WsT, _, WoutT, bout, Ap, Am, rate, ax, ga = _marshal(params, spec)
    amean, s_t, v, xpre, xpost, Ep, Em, Wp, otr, te = K.step_forward(
        np.ascontiguousarray(obs_aug), np.ascontiguousarray(mp), np.ascontiguousarray(mm),
        state.v, state.xpre, state.xpost, state.Ep, state.Em, state.Wp, state.otr, state.te,
        Ws, WsT, WoutT, bout, Ap, Am, rate,
        spec.offsets, spec.lam_arr(), spec.theta_arr(),
        ax, spec.beta, ga, spec.update_scale, spec.alpha_out,
        spec.pidx, spec.mode, int(spec.mod_per_pre),
    )
    new_state = PolicyState(v, xpre, xpost, Ep, Em, Wp, otr, te)
    return amean, s_t, new_state


def policy_window(params: dict, spec: PolicySpec, state0: PolicyState,
                  obs_aug: np.ndarray, mp: np.ndarray = None, mm: np.ndarray = None,
                  resets: np.ndarray = None, backend=None) -> UnrollTape:
    """Unroll a truncation window, recording the full tape."""
    T, B, _ = obs_aug.shape
    dmp, dmm = spec.mod_dims
    if mp is None:
        mp = np.zeros((T, B, dmp))
    if mm is None:
        mm = np.zeros((T, B, dmm))
    if resets is None:
        resets = np.zeros((T, B))
    obs_aug = np.ascontiguousarray(obs_aug)
    mp = np.ascontiguousarray(mp)
    mm = np.ascontiguousarray(mm)
    resets = np.ascontiguousarray(resets)
    Ws, WsT, _, WoutT, bout, Ap, Am, rate, ax, ga = _marshal(params, spec)
    fwd = K.forward_window if backend is None else backend
    out = fwd(
        obs_aug, mp, mm, resets,
        state0.v, state0.xpre, state0.xpost, state0.Ep, state0.Em, state0.Wp,
        state0.otr, state0.te,
        Ws, WsT, WoutT, bout, Ap, Am, rate,
        spec.offsets, spec.lam_arr(), spec.theta_arr(),
        ax, spec.beta, ga, spec.update_scale, spec.alpha_out,
        spec.pidx, spec.mode, int(spec.mod_per_pre),
    )
    (u_seq, s_seq, xpre_seq, xpost_seq, Ep_seq, Em_seq, Wused_seq,
     te_seq, otr_seq, amean, v_f, xpre_f, xpost_f, Ep_f, Em_f, Wp_f, otr_f, te_f) = out
    final = PolicyState(v_f, xpre_f, xpost_f, Ep_f, Em_f, Wp_f, otr_f, te_f)
    return UnrollTape(
        spec=spec, obs_aug=obs_aug, mp=mp, mm=mm, resets=resets, state0=state0,
        u_seq=u_seq, s_seq=s_seq, xpre_seq=xpre_seq, xpost_seq=xpost_seq,
        Ep_seq=Ep_seq, Em_seq=Em_seq, Wused_seq=Wused_seq, te_seq=te_seq,
        otr_seq=otr_seq, amean=amean, final_state=final,
    )


def policy_window_backward(params: dict, tape: UnrollTape, grads: dict,
                           d_amean=None, d_u=None, d_xpre=None, d_xpost=None,
                           d_Ep=None, d_Em=None, d_W=None, backend=None):
    """Adjoint of `policy_window`; accumulates into `grads`.

    Returns (gmp, gmm, gobs) for the modulator/latent paths.
    """
    spec = tape.spec
    T, B, _ = tape.obs_aug.shape
    dmp, dmm = spec.mod_dims
    q, p = spec.n_post, spec.n_pre

    def _z(x, shape):
        return np.zeros(shape) if x is None else x

    d_amean = _z(d_amean, (T, B, spec.act_dim))
    d_u = _z(d_u, (T, B, spec.h_sum))
    d_xpre = _z(d_xpre, (T, B, p))
    d_xpost = _z(d_xpost, (T, B, q))
    d_Ep = _z(d_Ep, (T, B, q, p))
    d_Em = _z(d_Em, (T, B, q, p))
    d_W = _z(d_W, (T, B, q, p))

    Ws, _, Wout, _, _, Ap, Am, rate, ax, ga = _marshal(params, spec)
    gWs = tuple(grads[f"pol.W{l}"] for l in range(spec.n_layers))
    gscal = np.zeros(2)
    gmp = np.zeros((T, B, dmp))
    gmm = np.zeros((T, B, dmm))
    gobs = np.zeros((T, B, spec.in_dim))
    bwd = K.backward_window if backend is None else backend
    bwd(
        tape.obs_aug, tape.mp, tape.mm, tape.resets,
        tape.u_seq, tape.s_seq, tape.xpre_seq, tape.xpost_seq,
        tape.Ep_seq, tape.Em_seq, tape.Wused_seq, tape.te_seq, tape.otr_seq,
        tape.state0.xpre, tape.state0.xpost, tape.state0.Ep, tape.state0.Em,
        Ws, Wout, Ap, Am, rate,
        spec.offsets, spec.lam_arr(), spec.theta_arr(),
        spec.slope, spec.width, ax, spec.beta, ga, spec.update_scale, spec.alpha_out,
        spec.pidx, spec.mode, int(spec.mod_per_pre),
        d_amean, d_u, d_xpre, d_xpost, d_Ep, d_Em, d_W,
        gWs, grads["pol.Wout"], grads["pol.bout"],
        grads["plast.A_plus"], grads["plast.A_minus"], grads["plast.rate"],
        gscal, gmp, gmm, gobs,
    )
    grads["plast.alpha_x"] += gscal[0]
    grads["plast.gamma"] += gscal[1]
    return gmp, gmm, gobs


def gaussian_sample(rng: np.random.Generator, mean: np.ndarray, log_std: np.ndarray):
    return mean + np.exp(log_std) * rng.standard_normal(mean.shape)


def gaussian_logp(action: np.ndarray, mean: np.ndarray, log_std: np.ndarray):
    """Diagonal-Gaussian log density, summed over the action axis."""
    z = (action - mean) / np.exp(log_std)
    return -0.5 * (z ** 2 + LOG_2PI).sum(axis=-1) - log_std.sum()


def gaussian_entropy(log_std: np.ndarray) -> float:
    return float(log_std.sum() + 0.5 * log_std.size * (1.0 + LOG_2PI))


MOD_NONE = "none"
MOD_ENCODER = "encoder"
MOD_ESTIMATOR = "estimator"
MOD_ZERO = "zero"


class Agent:
    """Acting wrapper: modulator/latent source + spiking policy + critic.

    The caller feeds observations (and, for the privileged source, the
    normalized extrinsics); the agent keeps the recurrent policy state and
    the local (action, observation) history used by the estimator.
    """

    def __init__(self, params: dict, spec: PolicySpec, source: str = MOD_NONE,
                 hist_len: int = 10, obs_dim: int = None):
        self.params = params
        self.spec = spec
        self.source = source
        self.hist_len = hist_len
        self.obs_dim = spec.obs_dim if obs_dim is None else obs_dim
        self.state: PolicyState = None
        self.hist = None
        self.prev_action = None
        self.n = 0

    @property
    def uses_latent(self) -> bool:
        return self.spec.z_dim > 0

    @property
    def hist_dim(self) -> int:
        return self.hist_len * (self.obs_dim + self.spec.act_dim)

    def reset(self, n: int) -> None:
        self.n = n
        self.state = PolicyState.zeros(self.spec, self.params, n)
        self.hist = np.zeros((n, self.hist_len, self.obs_dim + self.spec.act_dim))
        self.prev_action = np.zeros((n, self.spec.act_dim))
        self._ep_return = np.zeros(n)

    def notify_done(self, done_mask: np.ndarray) -> None:
        idx = np.flatnonzero(done_mask)
        if idx.size == 0:
            return
        self.state.reset_rows(done_mask, self.spec, self.params)
        self.hist[idx] = 0.0
        self.prev_action[idx] = 0.0

    def _push_hist(self, obs_env: np.ndarray) -> np.ndarray:
        pair = np.concatenate([self.prev_action, obs_env], axis=1)
        self.hist = np.concatenate([self.hist[:, 1:], pair[:, None, :]], axis=1)
        return self.hist.reshape(self.n, -1)

    def modulators(self, e_norm: np.ndarray, hist_flat: np.ndarray):
        """Returns (mp, mm, z, head_out) per the configured source."""
        dmp, dmm = self.spec.mod_dims
        out_dim = self.spec.z_dim if self.uses_latent else dmp + dmm
        if self.source == MOD_ENCODER:
            if e_norm is None:
                raise ValueError("privileged source requires the extrinsics input")
            out, _ = mlp_forward(self.params, "enc", e_norm)
        elif self.source == MOD_ESTIMATOR:
            out, _ = estimator_forward(self.params, "est", hist_flat)
        else:
            out = np.zeros((self.n, out_dim))
        if self.uses_latent:
            return None, None, out, out
        return out[:, :dmp], out[:, dmp:], None, out

    def act(self, obs_env: np.ndarray, e_norm: np.ndarray = None,
            rng: np.random.Generator = None, deterministic: bool = False):
        """One step: returns (action, logp, value, info)."""
        hist_flat = self._push_hist(obs_env)
        mp, mm, z, head_out = self.modulators(e_norm, hist_flat)
        obs_aug = obs_env if z is None else np.concatenate([obs_env, z], axis=1)
        amean, spikes, self.state = policy_step(self.params, self.spec, self.state,
                                                obs_aug, mp, mm)
        log_std = self.params["pol.log_std"]
        if deterministic:
            action = amean.copy()
        else:
            action = gaussian_sample(rng, amean, log_std)
        logp = gaussian_logp(action, amean, log_std)
        value = None
        if "val.W0" in self.params:
            value, _ = mlp_forward(self.params, "val", obs_env)
            value = value[:, 0]
        self.prev_action = action.copy()
        info = {"amean": amean, "mp": mp, "mm": mm, "z": z, "head": head_out,
                "hist": hist_flat, "spike_frac": float(spikes.mean())}
        return action, logp, value, info
