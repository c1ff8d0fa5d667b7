"""Small dense networks (value, encoder, estimator) and parameter-dict helpers.

All trainable leaves of a model live in one flat dict[str, ndarray] with
dotted keys ("pol.W0", "enc.W1", "plast.rate", ...). MLPs use tanh hidden
layers and a linear output; their leaves are "<prefix>.W<i>" / "<prefix>.b<i>".
"""

from __future__ import annotations

import numpy as np


def init_mlp(params: dict, prefix: str, sizes, rng: np.random.Generator,
             final_scale: float = 1.0) -> None:
    """Add MLP leaves for the given layer sizes to `params`.

    Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights, zero biases; the last
    layer is scaled by `final_scale` (small values make the initial output
    near zero, useful for modulator heads).
    """
    for i in range(len(sizes) - 1):
        k = 1.0 / np.sqrt(sizes[i])
        W = rng.uniform(-k, k, size=(sizes[i + 1], sizes[i]))
        if i == len(sizes) - 2:
            W = W * final_scale
        params[f"{prefix}.W{i}"] = W
        params[f"{prefix}.b{i}"] = np.zeros(sizes[i + 1])


def mlp_layers(params: dict, prefix: str):
    Ws, bs, i = [], [], 0
    while f"{prefix}.W{i}" in params:
        Ws.append(params[f"{prefix}.W{i}"])
        bs.append(params[f"{prefix}.b{i}"])
        i += 1
    if not Ws:
        raise KeyError(f"no MLP leaves under prefix '{prefix}'")
    return Ws, bs


def mlp_forward(params: dict, prefix: str, X: np.ndarray):
    """X (N, in) -> (N, out). Returns (output, activation cache)."""
    Ws, bs = mlp_layers(params, prefix)
    acts = [X]
    h = X
    for i, (W, b) in enumerate(zip(Ws, bs)):
        z = h @ W.T + b
        h = z if i == len(Ws) - 1 else np.tanh(z)
        acts.append(h)
    return h, acts


def mlp_backward(params: dict, prefix: str, acts, dY: np.ndarray, grads: dict):
    """Accumulate MLP gradients into `grads`; returns gradient w.r.t. X."""
    Ws, _ = mlp_layers(params, prefix)
    dh = dY
    for i in range(len(Ws) - 1, -1, -1):
        if i != len(Ws) - 1:
            dh = dh * (1.0 - acts[i + 1] ** 2)
        grads[f"{prefix}.W{i}"] += dh.T @ acts[i]
        grads[f"{prefix}.b{i}"] += dh.sum(axis=0)
        dh = dh @ Ws[i]
    return dh


def estimator_forward(params: dict, prefix: str, X: np.ndarray):
    """MLP forward with optional input/target standardization.

    When `<prefix>.x_mean` (and friends) are present, inputs are whitened
    and outputs de-whitened; the stats are fixed constants stored alongside
    the weights. Returns (output, cache) like `mlp_forward`.
    """
    if f"{prefix}.x_mean" in params:
        Xn = (X - params[f"{prefix}.x_mean"]) / params[f"{prefix}.x_std"]
        out, cache = mlp_forward(params, prefix, Xn)
        return out * params[f"{prefix}.y_std"] + params[f"{prefix}.y_mean"], cache
    return mlp_forward(params, prefix, X)


def zeros_like_params(params: dict) -> dict:
    return {k: np.zeros_like(v) for k, v in params.items()}


def copy_params(params: dict) -> dict:
    return {k: v.copy() for k, v in params.items()}


def params_to_vector(params: dict) -> np.ndarray:
    """Deterministic flattening (sorted keys) into one vector."""
    return np.concatenate([np.asarray(params[k], dtype=np.float64).ravel()
                           for k in sorted(params)])


def vector_to_params(vec: np.ndarray, template: dict) -> dict:
    out, i = {}, 0
    for k in sorted(template):
        n = np.asarray(template[k]).size
        out[k] = vec[i:i + n].reshape(np.asarray(template[k]).shape).copy()
        i += n
    if i != vec.size:
        raise ValueError(f"vector length {vec.size} does not match template ({i})")
    return out


def params_checksum(params: dict) -> str:
    """Exact content digest (key names + raw bytes), for before/after checks."""
    import hashlib

    h = hashlib.sha256()
    for k in sorted(params):
        h.update(k.encode())
        h.update(np.ascontiguousarray(params[k]).tobytes())
    return h.hexdigest()
