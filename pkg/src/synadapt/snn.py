"""Leaky integrate-and-fire layers with surrogate-gradient spike generation.

Conventions fixed here and relied on everywhere else:

* membrane leak is applied before current injection: u = lam_v * v + current
* a neuron fires when its pre-reset potential u reaches the threshold
* reset is by subtraction (v' = u - theta on a spike), preserving the
  excess over threshold exactly
* the pseudo-derivative of the spike nonlinearity is a triangle centred
  on the threshold with compact support
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DEFAULT_DECAY = math.exp(-1.0 / 10.0)


@dataclass
class LayerConfig:
    """Static description of one LIF layer."""

    n_in: int
    n_out: int
    lam_v: float = DEFAULT_DECAY
    theta: float = 1.0
    surrogate_slope: float = 0.3
    surrogate_width: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.lam_v < 1.0:
            raise ValueError(f"lam_v must lie in (0,1), got {self.lam_v}")
        if self.theta <= 0.0:
            raise ValueError(f"theta must be positive, got {self.theta}")
        if self.surrogate_slope <= 0.0 or self.surrogate_width <= 0.0:
            raise ValueError("surrogate slope and width must be positive")


@dataclass
class NeuronState:
    """Membrane potentials and spike outputs of one layer at one timestep."""

    v: np.ndarray
    s: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "NeuronState":
        return cls(v=np.zeros(n), s=np.zeros(n))


@dataclass
class StaticWeights:
    """Fixed weight matrix of a non-plastic layer, shape (n_out, n_in)."""

    W0: np.ndarray

    def __post_init__(self):
        self.W0 = np.asarray(self.W0, dtype=np.float64)
        if not np.all(np.isfinite(self.W0)):
            raise ValueError("static weights contain non-finite entries")


def lif_step(state: NeuronState, current: np.ndarray, cfg: LayerConfig) -> NeuronState:
    """Advance one LIF layer by a single timestep.

    u = lam_v * v + current; spikes where u >= theta; reset by subtraction.
    """
    current = np.asarray(current, dtype=np.float64)
    if current.shape != state.v.shape:
        raise ValueError(
            f"current shape {current.shape} does not match state shape {state.v.shape}"
        )
    if not np.all(np.isfinite(current)):
        raise ValueError("input current contains non-finite values")
    u = cfg.lam_v * state.v + current
    s = (u >= cfg.theta).astype(np.float64)
    v = u - cfg.theta * s
    return NeuronState(v=v, s=s)


def surrogate_grad(v_pre_spike, cfg: LayerConfig):
    """Triangle pseudo-derivative of the spike nonlinearity.

    Peaks at the threshold with value `surrogate_slope`, falls linearly to
    zero at distance `surrogate_width`, zero outside. Total function.
    """
    v = np.asarray(v_pre_spike, dtype=np.float64)
    out = np.maximum(
        0.0, cfg.surrogate_slope * (1.0 - np.abs(v - cfg.theta) / cfg.surrogate_width)
    )
    return out if out.ndim else float(out)


def forward_layer(
    spikes_in: np.ndarray, W: np.ndarray, state: NeuronState, cfg: LayerConfig
) -> NeuronState:
    """One layer step driven by upstream spikes: current = W @ spikes_in."""
    spikes_in = np.asarray(spikes_in, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    if W.shape[1] != spikes_in.shape[-1]:
        raise ValueError(
            f"weight shape {W.shape} incompatible with input of {spikes_in.shape[-1]}"
        )
    return lif_step(state, spikes_in @ W.T, cfg)
