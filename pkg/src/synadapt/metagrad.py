"""Reverse-mode differentiation through the unrolled spiking+plasticity
dynamics (truncated windows), plus the finite-difference oracle used to
validate it.

The tape is explicit: `unroll_forward` records every forward intermediate
(potentials, spikes, traces, eligibilities, weights, modulators) so the
window replays bit-exactly and `backward` can run the hand-written
adjoints of each recurrence. The spike Heaviside is differentiated with
the triangle surrogate; trace/eligibility/weight recurrences use their
exact linear adjoints; the stabilization factor is treated as a constant
of the step index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nets import mlp_backward, mlp_forward, zeros_like_params
from .policy import (PolicySpec, PolicyState, UnrollTape, policy_window,
                     policy_window_backward)

SOURCE_ZERO = "zero"
SOURCE_ENCODER = "encoder"
SOURCE_GIVEN = "given"


@dataclass
class Segment:
    """Inputs of one truncation window."""

    obs: np.ndarray                 # (T, B, obs_dim) environment observations
    resets: np.ndarray              # (T, B); row 0 must be zero
    state0: PolicyState
    e_norm: np.ndarray = None       # (T, B, E) normalized extrinsics
    mp: np.ndarray = None           # direct modulator inputs (source 'given')
    mm: np.ndarray = None
    source: str = SOURCE_ZERO


@dataclass
class WindowOutputs:
    amean: np.ndarray               # (T, B, act_dim)
    value: np.ndarray               # (T, B) or None


@dataclass
class LossGrads:
    """Per-step gradients of a scalar loss w.r.t. window observables.

    Any field left as None contributes nothing. d_u attaches to pre-reset
    membrane potentials; d_xpre/d_xpost/d_Ep/d_Em/d_W to the post-update
    traces, eligibilities, and plastic weights of each step.
    """

    d_amean: np.ndarray = None
    d_value: np.ndarray = None
    d_u: np.ndarray = None
    d_xpre: np.ndarray = None
    d_xpost: np.ndarray = None
    d_Ep: np.ndarray = None
    d_Em: np.ndarray = None
    d_W: np.ndarray = None
    d_log_std: np.ndarray = None
    d_mp: np.ndarray = None         # extra gradient on encoder modulator heads
    d_mm: np.ndarray = None
    d_z: np.ndarray = None          # extra gradient on the latent head


def unroll_forward(params: dict, spec: PolicySpec, seg: Segment,
                   backend=None) -> tuple:
    """Unroll one window; returns (WindowOutputs, UnrollTape)."""
    T, B, _ = seg.obs.shape
    mp, mm, z_seq, enc_cache = seg.mp, seg.mm, None, None
    obs_aug = seg.obs
    if seg.source == SOURCE_ENCODER:
        flat = seg.e_norm.reshape(T * B, -1)
        out, enc_cache = mlp_forward(params, "enc", flat)
        if spec.z_dim > 0:
            z_seq = out.reshape(T, B, spec.z_dim)
            obs_aug = np.concatenate([seg.obs, z_seq], axis=2)
            mp = mm = None
        else:
            dmp, _ = spec.mod_dims
            mp = out[:, :dmp].reshape(T, B, dmp)
            mm = out[:, dmp:].reshape(T, B, -1)
    tape = policy_window(params, spec, seg.state0, obs_aug, mp, mm, seg.resets,
                         backend=backend)
    tape.enc_cache = enc_cache
    tape.z_seq = z_seq
    value = None
    if "val.W0" in params:
        vflat, val_cache = mlp_forward(params, "val", seg.obs.reshape(T * B, -1))
        value = vflat[:, 0].reshape(T, B)
        tape.val_cache = val_cache
        tape.value = value
    return WindowOutputs(amean=tape.amean, value=value), tape


def backward(params: dict, spec: PolicySpec, tape: UnrollTape, lg: LossGrads,
             grads: dict = None, backend=None) -> dict:
    """Gradients of the loss described by `lg` w.r.t. every parameter leaf."""
    if grads is None:
        grads = zeros_like_params(params)
    T, B, _ = tape.obs_aug.shape
    gmp, gmm, gobs = policy_window_backward(
        params, tape, grads,
        d_amean=lg.d_amean, d_u=lg.d_u, d_xpre=lg.d_xpre, d_xpost=lg.d_xpost,
        d_Ep=lg.d_Ep, d_Em=lg.d_Em, d_W=lg.d_W, backend=backend,
    )
    if lg.d_log_std is not None:
        grads["pol.log_std"] += lg.d_log_std
    if tape.enc_cache is not None:
        if spec.z_dim > 0:
            gz = gobs[:, :, spec.obs_dim:]
            if lg.d_z is not None:
                gz = gz + lg.d_z
            dY = gz.reshape(T * B, spec.z_dim)
        else:
            if lg.d_mp is not None:
                gmp = gmp + lg.d_mp
            if lg.d_mm is not None:
                gmm = gmm + lg.d_mm
            dY = np.concatenate([gmp, gmm], axis=2).reshape(T * B, -1)
        mlp_backward(params, "enc", tape.enc_cache, dY, grads)
    if lg.d_value is not None and tape.val_cache is not None:
        mlp_backward(params, "val", tape.val_cache,
                     lg.d_value.reshape(T * B, 1), grads)
    return grads


def fd_oracle(loss_fn, params: dict, h: float = 1e-5, keys=None) -> dict:
    """Central-difference gradients of loss_fn(params) per scalar parameter.

    loss_fn must be deterministic; a double evaluation guards against
    hidden randomness and aborts on any mismatch.
    """
    l1 = loss_fn(params)
    l2 = loss_fn(params)
    if not (l1 == l2):
        raise RuntimeError(
            f"non-deterministic forward pass detected ({l1!r} != {l2!r}); "
            "finite differences would be meaningless"
        )
    grads = {}
    for k in sorted(params if keys is None else keys):
        arr = params[k]
        g = np.zeros_like(arr, dtype=np.float64)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = loss_fn(params)
            flat[i] = orig - h
            lm = loss_fn(params)
            flat[i] = orig
            gflat[i] = (lp - lm) / (2.0 * h)
        grads[k] = g
    return grads


def clip_global_norm(grads: dict, max_norm: float = 1.0):
    """Scale all gradients so the global L2 norm is at most `max_norm`.

    Returns (grads, pre-clip norm). A NaN in any leaf raises with its name.
    """
    total = 0.0
    for k in sorted(grads):
        v = grads[k]
        if np.isnan(v).any():
            raise FloatingPointError(f"NaN gradient in leaf '{k}'")
        total += float((np.asarray(v, dtype=np.float64) ** 2).sum())
    norm = float(np.sqrt(total))
    if norm > max_norm:
        scale = max_norm / norm
        for k in grads:
            grads[k] = grads[k] * scale
    return grads, norm
