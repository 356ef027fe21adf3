"""Time the rollout kernel under the numba and numpy backends on the pendulum network.

    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --shape 20000x200 --repeats 5

The numpy kernel vectorizes over trials and loops over steps in Python, so
it pays a fixed cost per step; the numba kernel loops over both. Few trials
over long horizons therefore favor numba, and wide batches narrow the gap.
Both backends are called explicitly, so PRIVDETECT_BACKEND does not matter
here unless it is ``numpy`` (numba is then not imported and its column is
skipped). The two backends sum in different orders, so their outputs agree to
rounding rather than bit for bit; the largest difference is reported.
"""
import argparse
import time

import numpy as np

from privdetect import HAS_NUMBA
from privdetect.bench_cli import PendulumParams, build_pendulum_benchmark
from privdetect.noise_design import PrivacySchedule
from privdetect.sysmodel import build_plan, rollout


def make_plan():
    net, gains = build_pendulum_benchmark(PendulumParams())
    sched = PrivacySchedule.isotropic(net[2].neighbor_ids, [net[j].n for j in net[2].neighbor_ids], 0.01)
    # no attack: the attacker state evolves under the open-loop (unstable) A and ends long horizons early
    return build_plan(net, gains, {2: sched})


def best_time(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def shape(text):
    trials, steps = text.lower().split("x")
    return int(trials), int(steps)


def max_rel_diff(a, b):
    return max(float(np.max(np.abs(a[k] - b[k]) / np.maximum(np.abs(a[k]), 1.0))) for k in a if k != "steps")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--shape", type=shape, action="append",
                    help="TRIALSxSTEPS, repeatable (default: 10x5000 100x2000 2000x500 20000x200)")
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    shapes = args.shape or [(10, 5000), (100, 2000), (2000, 500), (20_000, 200)]

    plan = make_plan()
    backends = ["numpy"] + (["numba"] if HAS_NUMBA else [])
    if HAS_NUMBA:
        rollout(plan, 8, 2, seed=args.seed, backend="numba")  # compile outside the timed region

    print(f"best of {args.repeats}; rates in trial-steps per second")
    head = f"{'trials':>7} {'steps':>6}" + "".join(f" {be + ' s':>10} {be + ' rate':>13}" for be in backends)
    if HAS_NUMBA:
        head += f" {'speedup':>8} {'max rel diff':>13}"
    print(head)
    for trials, steps in shapes:
        row, outs = f"{trials:>7} {steps:>6}", {}
        for be in backends:
            outs[be] = best_time(lambda: rollout(plan, trials, steps, [steps], seed=args.seed, backend=be),
                                 args.repeats)
            t = outs[be][0]
            row += f" {t:10.4f} {trials * steps / t:13.0f}"
        if HAS_NUMBA:
            (tn, a), (tb, b) = outs["numpy"], outs["numba"]
            row += f" {tn / tb:7.2f}x {max_rel_diff(a, b):13.2e}"
        print(row)
    if not HAS_NUMBA:
        print("numba unavailable; only the numpy backend was timed")


if __name__ == "__main__":
    main()
