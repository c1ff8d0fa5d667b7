"""Figure emission from run directories: learning curves, modulator
trajectories, and plastic-weight histograms (the weight-drift diagnostic).
"""

from __future__ import annotations

import glob
import os

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .runio import read_metrics  # noqa: E402


def learning_curve(metrics_path: str):
    """(env_steps, mean_return) arrays from one metric stream."""
    _, records = read_metrics(metrics_path)
    rows = [(r.get("env_steps", i), r["mean_return"])
            for i, r in enumerate(records) if "mean_return" in r]
    if not rows:
        raise ValueError(f"no curve data in {metrics_path}")
    xs, ys = zip(*rows)
    return np.asarray(xs), np.asarray(ys)


def weight_histogram(weights: np.ndarray, bins: int = 50):
    """Histogram counts/edges of a weight matrix (flattened)."""
    return np.histogram(np.asarray(weights).ravel(), bins=bins)


def plot_learning_curves(run_dir: str, out_path: str) -> int:
    """One curve per metric stream in the run directory; returns #points."""
    paths = sorted(glob.glob(os.path.join(run_dir, "metrics-*.jsonl")))
    if not paths:
        raise FileNotFoundError(f"no metric streams under {run_dir}")
    fig, ax = plt.subplots(figsize=(7, 4))
    total = 0
    for p in paths:
        stage = os.path.basename(p)[len("metrics-"):-len(".jsonl")]
        try:
            xs, ys = learning_curve(p)
        except ValueError:
            continue
        ax.plot(xs, ys, label=stage)
        total += xs.size
    if total == 0:
        plt.close(fig)
        raise ValueError(f"metric streams under {run_dir} carry no curve data")
    ax.set_xlabel("environment steps")
    ax.set_ylabel("mean episode return")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return total


def plot_modulator_traces(traj: np.ndarray, out_path: str) -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    for j in range(traj.shape[1]):
        ax.plot(traj[:, j], lw=0.8)
    ax.set_xlabel("step")
    ax.set_ylabel("modulator output")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def plot_weight_histograms(snaps: dict, out_path: str) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, W in snaps.items():
        counts, edges = weight_histogram(W)
        centers = 0.5 * (edges[:-1] + edges[1:])
        ax.step(centers, counts, where="mid", label=str(label))
    ax.set_xlabel("plastic weight value")
    ax.set_ylabel("count")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)


def make_plots(run_dir: str, cfg=None) -> list:
    """Emit all figures derivable from the run directory's contents."""
    written = []
    curve_png = os.path.join(run_dir, "learning_curves.png")
    plot_learning_curves(run_dir, curve_png)
    written.append(curve_png)

    ckpt = os.path.join(run_dir, "phase1.ckpt.npz")
    if cfg is not None and os.path.exists(ckpt):
        from .pipeline import (PolicyBundle, build_policy_spec,
                               modulator_trajectory, plastic_weight_trajectory)
        from . import kernels as K
        from .policy import MOD_ENCODER
        from .runio import load_checkpoint

        _, params, _ = load_checkpoint(ckpt)
        bundle = PolicyBundle("sma_expert", params,
                              build_policy_spec(cfg, K.MODE_MODULATED),
                              MOD_ENCODER)
        traj = modulator_trajectory(bundle, cfg, seed=1234, steps=200)
        mod_png = os.path.join(run_dir, "modulator_traces.png")
        plot_modulator_traces(traj, mod_png)
        written.append(mod_png)
        _, snaps = plastic_weight_trajectory(bundle, cfg, seed=1234, steps=300)
        hist_png = os.path.join(run_dir, "weight_histograms.png")
        plot_weight_histograms({f"step {k}": v for k, v in snaps.items()},
                               hist_png)
        written.append(hist_png)
    return written
