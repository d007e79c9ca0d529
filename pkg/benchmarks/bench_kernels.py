"""Time the numba kernels against the pure-numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--n 100]

Each case runs once per backend to warm up (numba compiles or loads its
cache), then reports the best of ``--repeat`` timings and the agreement of the
two backends' outputs.
"""

from __future__ import annotations

import argparse
import math
import time

import numpy as np

from pwdeming import kernels
from pwdeming.baselines import passing_bablok
from pwdeming.data import MCDataset, data_scale
from pwdeming.deming_known import fit_known
from pwdeming.deming_rl import fit_rl
from pwdeming.profiles import PrecisionProfile


def make_data(n: int, seed: int = 1) -> MCDataset:
    rng = np.random.default_rng(seed)
    mu = np.geomspace(20, 100, n)
    sd = np.sqrt(25 + 0.01 * mu ** 2)
    return MCDataset(mu + sd * rng.standard_normal(n), mu + sd * rng.standard_normal(n))


def cases(data: MCDataset):
    rl = PrecisionProfile.rocke_lorenzato(5, 0.1)
    scale = data_scale(data.x)
    z = np.array([math.log(5.0), math.log(0.1), 0.0, 1.0])
    lsmin, lkmin = math.log(1e-10 * scale), math.log(1e-10)
    return {
        "rl objective (one evaluation)": (
            lambda: kernels.rl_objective(z, data.x, data.y, 1.0, scale, lsmin, lkmin),
            lambda out: np.asarray([out])),
        "fit_known (RL profiles)": (
            lambda: fit_known(data, rl, rl), lambda f: np.array([f.alpha, f.beta])),
        "fit_rl": (lambda: fit_rl(data), lambda f: np.array([f.alpha, f.beta])),
        "pairwise slopes + Passing-Bablok": (
            lambda: passing_bablok(data), lambda f: np.array([f.alpha, f.beta])),
    }


def best_time(fn, repeat: int) -> float:
    best = math.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--n", type=int, default=100)
    args = parser.parse_args(argv)
    if not kernels.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    data = make_data(args.n)
    print(f"n = {args.n}, best of {args.repeat}")
    print(f"{'case':36s}{'numba':>12s}{'numpy':>12s}{'speedup':>10s}{'max |diff|':>14s}")
    for name, (fn, key) in cases(data).items():
        timings, outputs = {}, {}
        for backend in ("numba", "numpy"):
            with kernels.use_backend(backend):
                outputs[backend] = key(fn())
                timings[backend] = best_time(fn, args.repeat)
        diff = float(np.max(np.abs(outputs["numba"] - outputs["numpy"])))
        print(f"{name:36s}{timings['numba'] * 1e3:10.3f}ms{timings['numpy'] * 1e3:10.3f}ms"
              f"{timings['numpy'] / timings['numba']:9.1f}x{diff:14.2e}")


if __name__ == "__main__":
    main()
