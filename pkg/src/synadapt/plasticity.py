"""Synaptic traces, pair-based STDP, dual eligibility traces, and the
neuromodulated weight update with its stabilization schedule.

Ordering within one policy step (fixed; tests depend on it):
  1. spikes are computed,
  2. synaptic traces are updated (the step's own spikes included),
  3. eligibility traces are updated from the fresh traces,
  4. the weight update is applied,
  5. the stabilization clock advances.

All matrices are oriented (n_post, n_pre). The depression eligibility
accumulates with a negative sign so that a positive depression modulator
drives weights down.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

DEFAULT_TRACE_DECAY = math.exp(-1.0 / 10.0)
DEFAULT_ELIG_DECAY = math.exp(-1.0 / 200.0)
DEFAULT_UPDATE_SCALE = 1e-3


@dataclass
class TraceState:
    """Pre/post synaptic activity traces of the plastic layer."""

    x_pre: np.ndarray
    x_post: np.ndarray
    alpha_x: float = DEFAULT_TRACE_DECAY
    beta: float = 1.0

    @classmethod
    def zeros(cls, n_pre: int, n_post: int, **kw) -> "TraceState":
        return cls(x_pre=np.zeros(n_pre), x_post=np.zeros(n_post), **kw)


@dataclass
class EligibilityPair:
    """Potentiation/depression eligibility traces, shape (n_post, n_pre)."""

    E_plus: np.ndarray
    E_minus: np.ndarray
    gamma: float = DEFAULT_ELIG_DECAY
    rate: np.ndarray = None  # per-synapse incorporation rate alpha_ij

    def __post_init__(self):
        if self.rate is None:
            self.rate = np.ones_like(np.asarray(self.E_plus, dtype=np.float64))

    @classmethod
    def zeros(cls, n_pre: int, n_post: int, **kw) -> "EligibilityPair":
        return cls(E_plus=np.zeros((n_post, n_pre)), E_minus=np.zeros((n_post, n_pre)), **kw)


@dataclass
class StdpCoefficients:
    """LTP/LTD rate coefficients, shape (n_post, n_pre).

    Initialized Hebbian (both positive); the optimization is free to change
    their signs later.
    """

    A_plus: np.ndarray
    A_minus: np.ndarray

    @classmethod
    def hebbian(cls, n_pre: int, n_post: int, rng: np.random.Generator) -> "StdpCoefficients":
        return cls(
            A_plus=rng.uniform(0.0, 1.0, size=(n_post, n_pre)),
            A_minus=rng.uniform(0.0, 1.0, size=(n_post, n_pre)),
        )


@dataclass
class ModulatorSignal:
    """Learned third-factor vectors gating potentiation and depression."""

    m_plus: np.ndarray
    m_minus: np.ndarray


@dataclass
class PlasticWeights:
    """Time-varying weights of the plastic layer plus the step clock."""

    W: np.ndarray
    update_scale: float = DEFAULT_UPDATE_SCALE
    t: int = 1


def _check_binary(s, n, name):
    s = np.asarray(s, dtype=np.float64)
    if s.shape != (n,):
        raise ValueError(f"{name} has shape {s.shape}, expected ({n},)")
    return s


def update_trace(trace: TraceState, spikes_pre, spikes_post) -> TraceState:
    """x' = alpha_x * x + beta * s, elementwise for both trace vectors."""
    s_pre = _check_binary(spikes_pre, trace.x_pre.shape[0], "spikes_pre")
    s_post = _check_binary(spikes_post, trace.x_post.shape[0], "spikes_post")
    return replace(
        trace,
        x_pre=trace.alpha_x * trace.x_pre + trace.beta * s_pre,
        x_post=trace.alpha_x * trace.x_post + trace.beta * s_post,
    )


def stdp_delta(coef: StdpCoefficients, trace: TraceState, spikes_pre, spikes_post) -> np.ndarray:
    """Pair-based STDP weight delta for the current step.

    delta[j,i] = A_plus[j,i] * x_pre[i] * s_post[j]
               - A_minus[j,i] * x_post[j] * s_pre[i]

    Expects the traces already updated to the current step.
    """
    n_post, n_pre = coef.A_plus.shape
    s_pre = _check_binary(spikes_pre, n_pre, "spikes_pre")
    s_post = _check_binary(spikes_post, n_post, "spikes_post")
    ltp = coef.A_plus * np.outer(s_post, trace.x_pre)
    ltd = coef.A_minus * np.outer(trace.x_post, s_pre)
    return ltp - ltd


def update_eligibility(
    elig: EligibilityPair,
    trace: TraceState,
    spikes_pre,
    spikes_post,
    coef: StdpCoefficients | None = None,
) -> EligibilityPair:
    """Fold the step's STDP pairing terms into the dual eligibility traces.

    E_plus'  = gamma * E_plus  + rate * A_plus  * (s_post x x_pre)
    E_minus' = gamma * E_minus - rate * A_minus * (x_post x s_pre)

    `coef` carries the LTP/LTD pairing coefficients; omitted, both default
    to ones and the drive reduces to the bare rate-scaled outer products.
    The depression trace accumulates negatively so a positive modulator on
    it depresses weights.
    """
    n_post, n_pre = elig.E_plus.shape
    s_pre = _check_binary(spikes_pre, n_pre, "spikes_pre")
    s_post = _check_binary(spikes_post, n_post, "spikes_post")
    a_plus = coef.A_plus if coef is not None else 1.0
    a_minus = coef.A_minus if coef is not None else 1.0
    drive_p = elig.rate * a_plus * np.outer(s_post, trace.x_pre)
    drive_m = elig.rate * a_minus * np.outer(trace.x_post, s_pre)
    return replace(
        elig,
        E_plus=elig.gamma * elig.E_plus + drive_p,
        E_minus=elig.gamma * elig.E_minus - drive_m,
    )


def stabilization(t) -> float:
    """exp(1/t) - 1: front-loads plastic updates early in an episode.

    Strictly decreasing in the episode-step clock t >= 1, tending to zero.
    """
    t_arr = np.asarray(t)
    if np.any(t_arr < 1):
        raise ValueError(f"stabilization clock must be >= 1, got {t}")
    out = np.expm1(1.0 / t_arr)
    return out if out.ndim else float(out)


def modulated_update(
    w: PlasticWeights, elig: EligibilityPair, mod: ModulatorSignal
) -> PlasticWeights:
    """Third-factor gated weight update with stabilization.

    delta[j,i] = m_plus[j] * E_plus[j,i] + m_minus[j] * E_minus[j,i]
    W' = W + stabilization(t) * update_scale * delta;  t' = t + 1

    Both modulators are per-post-neuron and broadcast across pre-synapses.
    """
    if w.t < 1:
        raise ValueError("plastic update applied with clock t < 1")
    m_plus = np.asarray(mod.m_plus, dtype=np.float64)
    m_minus = np.asarray(mod.m_minus, dtype=np.float64)
    n_post = w.W.shape[0]
    if m_plus.shape != (n_post,) or m_minus.shape != (n_post,):
        raise ValueError("modulator length does not match the plastic layer")
    if not (np.all(np.isfinite(m_plus)) and np.all(np.isfinite(m_minus))):
        raise ValueError("non-finite modulator signal")
    delta = m_plus[:, None] * elig.E_plus + m_minus[:, None] * elig.E_minus
    W_new = w.W + stabilization(w.t) * w.update_scale * delta
    return replace(w, W=W_new, t=w.t + 1)


def unmodulated_stdp_update(
    w: PlasticWeights, coef: StdpCoefficients, trace: TraceState, spikes_pre, spikes_post
) -> PlasticWeights:
    """Plain pair-based STDP update: W' = W + update_scale * stdp_delta.

    No stabilization and no third factor; the fixed-rule plastic baseline.
    """
    delta = stdp_delta(coef, trace, spikes_pre, spikes_post)
    return replace(w, W=w.W + w.update_scale * delta, t=w.t + 1)
