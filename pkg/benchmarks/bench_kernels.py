"""Time the numba and numpy batch kernels on the default experiment.

    python3 benchmarks/bench_kernels.py [--runs 100] [--steps 2025] [--repeat 3]

The first numba call includes JIT compilation (cached on disk afterwards);
it is reported separately.
"""

import argparse
import time

import numpy as np

from quorum_ra.config import parse_text
from quorum_ra.harness import ensemble_inputs, make_setup
from quorum_ra.kernels import simulate_batch


def bench(backend, setup, y, x0, seed, record, repeat):
    runs = np.arange(y.shape[0])
    t = time.perf_counter()
    first = simulate_batch(setup, y, x0, seed, runs, backend=backend, record_rk=record)
    warm = time.perf_counter() - t
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        simulate_batch(setup, y, x0, seed, runs, backend=backend, record_rk=record)
        times.append(time.perf_counter() - t)
    return first, warm, min(times)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--runs", type=int, default=100)
    ap.add_argument("--steps", type=int, default=2025)
    ap.add_argument("--repeat", type=int, default=3)
    a = ap.parse_args()
    cfg = parse_text(f"runs = {a.runs}\nsteps = {a.steps}\n")
    g, _, setup = make_setup(cfg)
    y, x0 = ensemble_inputs(g.n, cfg.theta, cfg.sigma, cfg.seed, np.arange(cfg.runs))
    print(f"n={g.n} runs={a.runs} steps={a.steps}")
    print(f"{'backend':<8} {'rk':<4} {'first (s)':>10} {'best (s)':>10}")
    res = {}
    for record in (False, True):
        for backend in ("numba", "numpy"):
            out, warm, best = bench(backend, setup, y, x0, cfg.seed, record, a.repeat)
            res[backend] = out
            print(f"{backend:<8} {'on' if record else 'off':<4} {warm:>10.3f} {best:>10.3f}")
        diff = np.nanmax(np.abs(res["numba"].mse_xbar - res["numpy"].mse_xbar))
        print(f"max |numba - numpy| on MSE_xbar: {diff:.2e}")


if __name__ == "__main__":
    main()
