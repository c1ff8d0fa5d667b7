"""Wall-clock comparison of the hot kernels: numba-jitted vs pure numpy.

The same source backs both paths (backend.jit wraps with @njit when
enabled), so this measures the jit payoff directly. The jitted variants
are warmed up once before timing; outputs of both paths are cross-checked.

Run:
    python benchmarks/bench_kernels.py [--t 30] [--b 256] [--repeats 5]
"""

import argparse
import time

import numpy as np

import synadapt.kernels as K
from synadapt import pipeline as P
from synadapt.backend import USING_NUMBA
from synadapt.config import RunConfig
from synadapt.metagrad import LossGrads, Segment, backward, unroll_forward
from synadapt.policy import PolicyState


def build_case(T, B):
    cfg = RunConfig()
    spec = P.build_policy_spec(cfg, K.MODE_MODULATED)
    rng = np.random.default_rng(0)
    params = P.build_base_params(cfg, spec, rng)
    dmp, dmm = spec.mod_dims
    P.attach_encoder(params, cfg, dmp + dmm, rng)
    seg = Segment(
        obs=rng.normal(0, 1.5, (T, B, spec.obs_dim)),
        resets=np.zeros((T, B)),
        state0=PolicyState.zeros(spec, params, B),
        e_norm=rng.uniform(-1, 1, (T, B, 5)),
        source="encoder",
    )
    lg = LossGrads(d_amean=rng.normal(0, 1, (T, B, spec.act_dim)))
    return cfg, spec, params, seg, lg


def time_fn(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times), float(np.mean(times))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--t", type=int, default=30, help="window length")
    ap.add_argument("--b", type=int, default=256, help="batch (environments)")
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    cfg, spec, params, seg, lg = build_case(args.t, args.b)
    print(f"numba available and enabled: {USING_NUMBA}")
    print(f"window T={args.t}, batch B={args.b}, "
          f"hidden {spec.hidden}, plastic layer {spec.plastic_layer}")

    variants = {}
    if USING_NUMBA:
        variants["numba"] = (K.forward_window, K.backward_window)
        # warm the jit before timing
        unroll_forward(params, spec, seg)
    variants["numpy"] = (K.forward_window_py, K.backward_window_py)

    results = {}
    tapes = {}
    for name, (fwd, bwd) in variants.items():
        def run_fwd(fwd=fwd):
            return unroll_forward(params, spec, seg, backend=fwd)

        _, tape = run_fwd()
        tapes[name] = tape

        def run_bwd(tape=tape, bwd=bwd):
            return backward(params, spec, tape, lg, backend=bwd)

        results[name] = {
            "forward": time_fn(lambda: run_fwd(), args.repeats),
            "backward": time_fn(lambda: run_bwd(), args.repeats),
        }

    if len(tapes) == 2:
        d = np.max(np.abs(tapes["numba"].amean - tapes["numpy"].amean))
        print(f"cross-check max |amean difference|: {d:.3e}")

    header = f"{'variant':8s} {'forward best':>14s} {'forward mean':>14s} " \
             f"{'backward best':>14s} {'backward mean':>14s}"
    print(header)
    print("-" * len(header))
    for name, r in results.items():
        fb, fm = r["forward"]
        bb, bm = r["backward"]
        print(f"{name:8s} {fb * 1e3:12.2f}ms {fm * 1e3:12.2f}ms "
              f"{bb * 1e3:12.2f}ms {bm * 1e3:12.2f}ms")
    if "numba" in results and "numpy" in results:
        sf = results["numpy"]["forward"][0] / results["numba"]["forward"][0]
        sb = results["numpy"]["backward"][0] / results["numba"]["backward"][0]
        print(f"\nspeedup (numpy / numba, best-of): forward {sf:.2f}x, "
              f"backward {sb:.2f}x")


if __name__ == "__main__":
    main()
