"""Fused per-timestep kernels for the spiking policy and the testbed physics.

Everything here is written as vectorized numpy so the same source serves
both backends: `backend.jit` wraps each function with numba's @njit when
enabled and leaves it untouched otherwise (SYNADAPT_NO_NUMBA=1). The
`*_py` aliases always point at the un-jitted functions.

Layer state is packed: potentials/spikes of all LIF layers live in one
(B, Hsum) array, layer l occupying columns off[l]:off[l+1]. Static weights
are a tuple of (H_l, H_in_l) matrices plus a matching tuple of contiguous
transposes (numba's dot wants contiguous operands). The slot of the
plastic layer holds the *initial* plastic weights, which is what
mid-window episode resets restore.

Plasticity modes: 0 = none (fixed weights), 1 = modulated dual-trace rule,
2 = plain pair-based STDP (no third factor, no stabilization).

One policy step, in order: reset -> spikes -> synaptic traces ->
eligibility traces -> weight update -> output trace -> action readout ->
clock increment. The backward kernel is the exact adjoint of that
composition; the spike Heaviside is differentiated via the triangle
surrogate (peak `slope` at the threshold, support `width`).
"""

import numpy as np

from .backend import jit

MODE_NONE = 0
MODE_MODULATED = 1
MODE_STDP = 2


def _forward_window_impl(
    obs,            # (T, B, D)
    mp,             # (T, B, Mp) potentiation modulator (zeros if unused)
    mm,             # (T, B, Mm) depression modulator
    resets,         # (T, B) 1.0 where an episode reset precedes the step; row 0 zero
    v0,             # (B, Hsum)
    xpre0,          # (B, P)   P = size of the plastic layer's pre side
    xpost0,         # (B, Q)   Q = size of the plastic layer's post side
    Ep0, Em0,       # (B, Q, P)
    Wp0,            # (B, Q, P) plastic weights entering the window
    otr0,           # (B, Hlast) output trace
    te0,            # (B,) int64 stabilization clock entering the window
    Ws,             # tuple of (H_l, H_in_l); slot `pidx` = initial plastic weights
    WsT,            # tuple of contiguous transposes of Ws
    WoutT,          # (Hlast, A) contiguous transpose of the readout
    bout,           # (A,)
    Aplus, Aminus,  # (Q, P)
    rate,           # (Q, P)
    off,            # (L+1,) int64
    lam, theta,     # (L,), (L,)
    alpha_x, beta_tr, gamma_e, upd_scale, alpha_out,
    pidx, mode, mplus_per_pre,
):
    T, B, _ = obs.shape
    L = off.shape[0] - 1
    Hsum = off[L]
    Q, P = Wp0.shape[1], Wp0.shape[2]
    Hlast = otr0.shape[1]
    A = bout.shape[0]
    pre_lo, pre_hi = off[pidx - 1], off[pidx]
    post_lo, post_hi = off[pidx], off[pidx + 1]
    last_lo = off[L - 1]

    u_seq = np.zeros((T, B, Hsum))
    s_seq = np.zeros((T, B, Hsum))
    xpre_seq = np.zeros((T, B, P))
    xpost_seq = np.zeros((T, B, Q))
    Ep_seq = np.zeros((T, B, Q, P))
    Em_seq = np.zeros((T, B, Q, P))
    Wused_seq = np.zeros((T, B, Q, P))
    te_seq = np.zeros((T, B), dtype=np.int64)
    otr_seq = np.zeros((T, B, Hlast))
    amean = np.zeros((T, B, A))

    v = v0.copy()
    xpre = xpre0.copy()
    xpost = xpost0.copy()
    Ep = Ep0.copy()
    Em = Em0.copy()
    Wp = Wp0.copy()
    otr = otr0.copy()
    te = te0.copy()
    W0p = Ws[pidx]

    for t in range(T):
        rmask = resets[t]
        if rmask.sum() > 0.0:
            keep = 1.0 - rmask
            keep2 = keep.reshape(B, 1)
            keep3 = keep.reshape(B, 1, 1)
            v = v * keep2
            xpre = xpre * keep2
            xpost = xpost * keep2
            Ep = Ep * keep3
            Em = Em * keep3
            otr = otr * keep2
            Wp = Wp * keep3 + W0p.reshape(1, Q, P) * rmask.reshape(B, 1, 1)
            te = te * keep.astype(np.int64) + rmask.astype(np.int64)

        obs_t = np.ascontiguousarray(obs[t])
        u_t = np.zeros((B, Hsum))
        s_t = np.zeros((B, Hsum))
        for l in range(L):
            lo, hi = off[l], off[l + 1]
            if l == 0:
                cur = obs_t @ WsT[0]
            elif l == pidx:
                s_prev = np.ascontiguousarray(s_t[:, pre_lo:pre_hi])
                cur = (Wp * s_prev.reshape(B, 1, P)).sum(axis=2)
            else:
                s_prev = np.ascontiguousarray(s_t[:, off[l - 1]:off[l]])
                cur = s_prev @ WsT[l]
            u = lam[l] * v[:, lo:hi] + cur
            s = (u >= theta[l]).astype(np.float64)
            v[:, lo:hi] = u - theta[l] * s
            u_t[:, lo:hi] = u
            s_t[:, lo:hi] = s

        s_pre = np.ascontiguousarray(s_t[:, pre_lo:pre_hi])
        s_post = np.ascontiguousarray(s_t[:, post_lo:post_hi])

        if mode != MODE_NONE:
            xpre = alpha_x * xpre + beta_tr * s_pre
            xpost = alpha_x * xpost + beta_tr * s_post

        if mode == MODE_MODULATED:
            pair_p = s_post.reshape(B, Q, 1) * xpre.reshape(B, 1, P)
            pair_m = xpost.reshape(B, Q, 1) * s_pre.reshape(B, 1, P)
            Ep = gamma_e * Ep + (rate * Aplus).reshape(1, Q, P) * pair_p
            Em = gamma_e * Em - (rate * Aminus).reshape(1, Q, P) * pair_m
            eta = np.expm1(1.0 / te.astype(np.float64))
            if mplus_per_pre == 1:
                dW = mp[t].reshape(B, 1, P) * Ep + mm[t].reshape(B, Q, 1) * Em
            else:
                dW = mp[t].reshape(B, Q, 1) * Ep + mm[t].reshape(B, Q, 1) * Em
            Wnew = Wp + (eta * upd_scale).reshape(B, 1, 1) * dW
        elif mode == MODE_STDP:
            pair_p = s_post.reshape(B, Q, 1) * xpre.reshape(B, 1, P)
            pair_m = xpost.reshape(B, Q, 1) * s_pre.reshape(B, 1, P)
            dW = Aplus.reshape(1, Q, P) * pair_p - Aminus.reshape(1, Q, P) * pair_m
            Wnew = Wp + upd_scale * dW
        else:
            Wnew = Wp

        otr = alpha_out * otr + np.ascontiguousarray(s_t[:, last_lo:])
        amean[t] = otr @ WoutT + bout.reshape(1, A)

        u_seq[t] = u_t
        s_seq[t] = s_t
        xpre_seq[t] = xpre
        xpost_seq[t] = xpost
        Ep_seq[t] = Ep
        Em_seq[t] = Em
        Wused_seq[t] = Wp
        te_seq[t] = te
        otr_seq[t] = otr

        Wp = Wnew
        te = te + 1

    return (
        u_seq, s_seq, xpre_seq, xpost_seq, Ep_seq, Em_seq, Wused_seq,
        te_seq, otr_seq, amean, v, xpre, xpost, Ep, Em, Wp, otr, te,
    )


def _backward_window_impl(
    # tape
    obs, mp, mm, resets,
    u_seq, s_seq, xpre_seq, xpost_seq, Ep_seq, Em_seq, Wused_seq, te_seq, otr_seq,
    xpre0, xpost0, Ep0, Em0,
    # parameters
    Ws, Wout, Aplus, Aminus, rate,
    off, lam, theta,
    slope, width, alpha_x, beta_tr, gamma_e, upd_scale, alpha_out,
    pidx, mode, mplus_per_pre,
    # incoming loss gradients (zeros where unused)
    d_amean,        # (T, B, A)
    d_u,            # (T, B, Hsum) gradient on pre-reset potentials
    d_xpre, d_xpost,  # (T, B, P), (T, B, Q) on post-update traces
    d_Ep, d_Em,     # (T, B, Q, P) on post-update eligibilities
    d_W,            # (T, B, Q, P) on post-update plastic weights
    # output buffers, accumulated into
    gWs,            # tuple of (H_l, H_in_l); slot pidx takes the plastic-init grad
    gWout, gbout, gAplus, gAminus, grate,
    gscalars,       # (2,) [g_alpha_x, g_gamma]
    gmp, gmm,       # (T, B, Mp), (T, B, Mm)
    gobs,           # (T, B, D)
):
    T, B, _ = obs.shape
    L = off.shape[0] - 1
    Hsum = off[L]
    Q, P = rate.shape
    pre_lo, pre_hi = off[pidx - 1], off[pidx]
    post_lo, post_hi = off[pidx], off[pidx + 1]
    last_lo = off[L - 1]

    gv = np.zeros((B, Hsum))
    gxpre = np.zeros((B, P))
    gxpost = np.zeros((B, Q))
    gEp = np.zeros((B, Q, P))
    gEm = np.zeros((B, Q, P))
    gWp = np.zeros((B, Q, P))
    gotr = np.zeros((B, otr_seq.shape[2]))
    g_ax = 0.0
    g_ga = 0.0

    rA_p = rate * Aplus
    rA_m = rate * Aminus
    gW_plastic = gWs[pidx]

    for t in range(T - 1, -1, -1):
        obs_t = np.ascontiguousarray(obs[t])
        u_t = u_seq[t]
        s_t = s_seq[t]
        s_pre = np.ascontiguousarray(s_t[:, pre_lo:pre_hi])
        s_post = np.ascontiguousarray(s_t[:, post_lo:post_hi])
        xpre_t = xpre_seq[t]
        xpost_t = xpost_seq[t]
        rmask = resets[t]
        keep = 1.0 - rmask

        # values entering the step (post-reset): tape index t-1 or the
        # window-initial state, zeroed on reset rows
        if t == 0:
            xpre_in = xpre0 * keep.reshape(B, 1)
            xpost_in = xpost0 * keep.reshape(B, 1)
            Ep_in = Ep0 * keep.reshape(B, 1, 1)
            Em_in = Em0 * keep.reshape(B, 1, 1)
        else:
            xpre_in = xpre_seq[t - 1] * keep.reshape(B, 1)
            xpost_in = xpost_seq[t - 1] * keep.reshape(B, 1)
            Ep_in = Ep_seq[t - 1] * keep.reshape(B, 1, 1)
            Em_in = Em_seq[t - 1] * keep.reshape(B, 1, 1)

        gs = np.zeros((B, Hsum))

        # readout
        da = np.ascontiguousarray(d_amean[t])
        gWout += np.ascontiguousarray(da.T) @ otr_seq[t]
        gbout += da.sum(axis=0)
        gotr = gotr + da @ Wout

        # output trace recurrence
        gs[:, last_lo:] += gotr
        gotr = alpha_out * gotr

        # plastic weight update
        gWp = gWp + d_W[t]
        if mode == MODE_MODULATED:
            coef = (np.expm1(1.0 / te_seq[t].astype(np.float64)) * upd_scale).reshape(B, 1, 1)
            gWc = gWp * coef
            Ep_t = Ep_seq[t]
            Em_t = Em_seq[t]
            if mplus_per_pre == 1:
                gmp[t] += (gWc * Ep_t).sum(axis=1)
                gEp = gEp + gWc * mp[t].reshape(B, 1, P)
            else:
                gmp[t] += (gWc * Ep_t).sum(axis=2)
                gEp = gEp + gWc * mp[t].reshape(B, Q, 1)
            gmm[t] += (gWc * Em_t).sum(axis=2)
            gEm = gEm + gWc * mm[t].reshape(B, Q, 1)
        elif mode == MODE_STDP:
            gWc = gWp * upd_scale
            sp3 = s_post.reshape(B, Q, 1)
            xr3 = xpre_t.reshape(B, 1, P)
            xo3 = xpost_t.reshape(B, Q, 1)
            sr3 = s_pre.reshape(B, 1, P)
            gAplus += (gWc * sp3 * xr3).sum(axis=0)
            gAminus -= (gWc * xo3 * sr3).sum(axis=0)
            gs[:, post_lo:post_hi] += (gWc * Aplus.reshape(1, Q, P) * xr3).sum(axis=2)
            gxpre = gxpre + (gWc * Aplus.reshape(1, Q, P) * sp3).sum(axis=1)
            gxpost = gxpost - (gWc * Aminus.reshape(1, Q, P) * sr3).sum(axis=2)
            gs[:, pre_lo:pre_hi] -= (gWc * Aminus.reshape(1, Q, P) * xo3).sum(axis=1)

        # eligibility traces
        if mode == MODE_MODULATED:
            gEp = gEp + d_Ep[t]
            gEm = gEm + d_Em[t]
            sp3 = s_post.reshape(B, Q, 1)
            xr3 = xpre_t.reshape(B, 1, P)
            xo3 = xpost_t.reshape(B, Q, 1)
            sr3 = s_pre.reshape(B, 1, P)
            g_ga += (gEp * Ep_in).sum() + (gEm * Em_in).sum()
            grate += (gEp * Aplus.reshape(1, Q, P) * sp3 * xr3).sum(axis=0)
            gAplus += (gEp * rate.reshape(1, Q, P) * sp3 * xr3).sum(axis=0)
            gs[:, post_lo:post_hi] += (gEp * rA_p.reshape(1, Q, P) * xr3).sum(axis=2)
            gxpre = gxpre + (gEp * rA_p.reshape(1, Q, P) * sp3).sum(axis=1)
            grate -= (gEm * Aminus.reshape(1, Q, P) * xo3 * sr3).sum(axis=0)
            gAminus -= (gEm * rate.reshape(1, Q, P) * xo3 * sr3).sum(axis=0)
            gxpost = gxpost - (gEm * rA_m.reshape(1, Q, P) * sr3).sum(axis=2)
            gs[:, pre_lo:pre_hi] -= (gEm * rA_m.reshape(1, Q, P) * xo3).sum(axis=1)
            gEp = gamma_e * gEp
            gEm = gamma_e * gEm

        # synaptic traces
        if mode != MODE_NONE:
            gxpre = gxpre + d_xpre[t]
            gxpost = gxpost + d_xpost[t]
            g_ax += (gxpre * xpre_in).sum() + (gxpost * xpost_in).sum()
            gs[:, pre_lo:pre_hi] += beta_tr * gxpre
            gs[:, post_lo:post_hi] += beta_tr * gxpost
            gxpre = alpha_x * gxpre
            gxpost = alpha_x * gxpost

        # LIF layers, last to first
        Wused_t = Wused_seq[t]
        d_u_t = d_u[t]
        for l in range(L - 1, -1, -1):
            lo, hi = off[l], off[l + 1]
            u_l = u_t[:, lo:hi]
            psi = np.maximum(0.0, slope * (1.0 - np.abs(u_l - theta[l]) / width))
            gv_l = gv[:, lo:hi].copy()
            gu = gv_l + psi * (gs[:, lo:hi] - theta[l] * gv_l) + d_u_t[:, lo:hi]
            gv[:, lo:hi] = lam[l] * gu
            gu = np.ascontiguousarray(gu)
            if l == 0:
                gW_l = gWs[0]
                gW_l += np.ascontiguousarray(gu.T) @ obs_t
                gobs[t] += gu @ Ws[0]
            elif l == pidx:
                gWp = gWp + gu.reshape(B, Q, 1) * s_pre.reshape(B, 1, P)
                gs[:, pre_lo:pre_hi] += (Wused_t * gu.reshape(B, Q, 1)).sum(axis=1)
            else:
                plo, phi = off[l - 1], off[l]
                sprev = np.ascontiguousarray(s_t[:, plo:phi])
                gW_l = gWs[l]
                gW_l += np.ascontiguousarray(gu.T) @ sprev
                gs[:, plo:phi] += gu @ Ws[l]

        # reset boundary: the post-reset plastic weights were a copy of the
        # initial-weight parameter; every other state adjoint stops here
        if rmask.sum() > 0.0:
            gW_plastic += (gWp * rmask.reshape(B, 1, 1)).sum(axis=0)
            keep2 = keep.reshape(B, 1)
            keep3 = keep.reshape(B, 1, 1)
            gv = gv * keep2
            gxpre = gxpre * keep2
            gxpost = gxpost * keep2
            gEp = gEp * keep3
            gEm = gEm * keep3
            gWp = gWp * keep3
            gotr = gotr * keep2

    # truncation boundary: window-initial plastic weights follow the identity
    # path back to the initial-weight parameter; other initial-state
    # adjoints are dropped
    gW_plastic += gWp.sum(axis=0)
    gscalars[0] += g_ax
    gscalars[1] += g_ga


def _step_forward_impl(
    obs_b,          # (B, D)
    mp_b, mm_b,     # (B, Mp), (B, Mm)
    v, xpre, xpost, Ep, Em, Wp, otr, te,
    Ws, WsT, WoutT, bout, Aplus, Aminus, rate,
    off, lam, theta,
    alpha_x, beta_tr, gamma_e, upd_scale, alpha_out,
    pidx, mode, mplus_per_pre,
):
    """Single collection step; same arithmetic as one forward_window step.

    Episode resets are the caller's job (apply before calling). Returns the
    action mean, the spike vector, and the advanced state (fresh arrays).
    """
    B = obs_b.shape[0]
    L = off.shape[0] - 1
    Hsum = off[L]
    Q, P = Wp.shape[1], Wp.shape[2]
    A = bout.shape[0]
    pre_lo, pre_hi = off[pidx - 1], off[pidx]
    post_lo, post_hi = off[pidx], off[pidx + 1]
    last_lo = off[L - 1]

    v = v.copy()
    s_t = np.zeros((B, Hsum))
    for l in range(L):
        lo, hi = off[l], off[l + 1]
        if l == 0:
            cur = obs_b @ WsT[0]
        elif l == pidx:
            s_prev = np.ascontiguousarray(s_t[:, pre_lo:pre_hi])
            cur = (Wp * s_prev.reshape(B, 1, P)).sum(axis=2)
        else:
            s_prev = np.ascontiguousarray(s_t[:, off[l - 1]:off[l]])
            cur = s_prev @ WsT[l]
        u = lam[l] * v[:, lo:hi] + cur
        s = (u >= theta[l]).astype(np.float64)
        v[:, lo:hi] = u - theta[l] * s
        s_t[:, lo:hi] = s

    s_pre = np.ascontiguousarray(s_t[:, pre_lo:pre_hi])
    s_post = np.ascontiguousarray(s_t[:, post_lo:post_hi])

    if mode != MODE_NONE:
        xpre = alpha_x * xpre + beta_tr * s_pre
        xpost = alpha_x * xpost + beta_tr * s_post
    else:
        xpre = xpre.copy()
        xpost = xpost.copy()

    if mode == MODE_MODULATED:
        pair_p = s_post.reshape(B, Q, 1) * xpre.reshape(B, 1, P)
        pair_m = xpost.reshape(B, Q, 1) * s_pre.reshape(B, 1, P)
        Ep = gamma_e * Ep + (rate * Aplus).reshape(1, Q, P) * pair_p
        Em = gamma_e * Em - (rate * Aminus).reshape(1, Q, P) * pair_m
        eta = np.expm1(1.0 / te.astype(np.float64))
        if mplus_per_pre == 1:
            dW = mp_b.reshape(B, 1, P) * Ep + mm_b.reshape(B, Q, 1) * Em
        else:
            dW = mp_b.reshape(B, Q, 1) * Ep + mm_b.reshape(B, Q, 1) * Em
        Wp = Wp + (eta * upd_scale).reshape(B, 1, 1) * dW
    elif mode == MODE_STDP:
        pair_p = s_post.reshape(B, Q, 1) * xpre.reshape(B, 1, P)
        pair_m = xpost.reshape(B, Q, 1) * s_pre.reshape(B, 1, P)
        Ep = Ep.copy()
        Em = Em.copy()
        Wp = Wp + upd_scale * (
            Aplus.reshape(1, Q, P) * pair_p - Aminus.reshape(1, Q, P) * pair_m
        )
    else:
        Ep = Ep.copy()
        Em = Em.copy()
        Wp = Wp.copy()

    otr = alpha_out * otr + np.ascontiguousarray(s_t[:, last_lo:])
    amean = otr @ WoutT + bout.reshape(1, A)
    return amean, s_t, v, xpre, xpost, Ep, Em, Wp, otr, te + 1


def _physics_substeps_impl(q, qdot, target, mg, kp, kd, damping, payload, inertia,
                           dt, nsub, torque_limit):
    """Semi-implicit Euler over `nsub` substeps, PD torque recomputed each
    substep. Returns final (q, qdot), the last clipped torque, and the
    effective acceleration over the whole policy step."""
    q = q.copy()
    qdot = qdot.copy()
    qdot_start = qdot.copy()
    B, J = q.shape
    tau = np.zeros((B, J))
    for _ in range(nsub):
        tau = mg.reshape(B, 1) * (kp.reshape(B, 1) * (target - q) - kd.reshape(B, 1) * qdot)
        tau = np.minimum(np.maximum(tau, -torque_limit), torque_limit)
        qddot = (tau - damping.reshape(B, 1) * qdot) / (inertia.reshape(1, J) * payload.reshape(B, 1))
        qdot = qdot + dt * qddot
        q = q + dt * qdot
    qddot_eff = (qdot - qdot_start) / (dt * nsub)
    return q, qdot, tau, qddot_eff


# un-jitted handles (always available; used by equivalence tests and benchmarks)
forward_window_py = _forward_window_impl
backward_window_py = _backward_window_impl
step_forward_py = _step_forward_impl
physics_substeps_py = _physics_substeps_impl

forward_window = jit(_forward_window_impl)
backward_window = jit(_backward_window_impl)
step_forward = jit(_step_forward_impl)
physics_substeps = jit(_physics_substeps_impl)
