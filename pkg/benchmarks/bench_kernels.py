"""Time the compiled kernels against the numpy fallback.

Run as `python benchmarks/bench_kernels.py [--repeats N]`. Each kernel is
timed on a navigation-sized workload; the table reports best-of-N wall
times per call and the compiled/numpy speedup.
"""

import argparse
import time

import numpy as np

from offnav._kernels import pure

try:
    from offnav._kernels import _speedups
except ImportError:
    _speedups = None


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def workloads(rng):
    xs, ys = np.meshgrid(np.linspace(-40, 40, 300),
                         np.linspace(-40, 40, 300), indexing="ij")
    bumps = np.column_stack([rng.uniform(-30, 30, (30, 2)),
                             rng.uniform(0.1, 1.0, (30, 1)),
                             rng.uniform(1, 3, (30, 1)),
                             rng.integers(0, 3, (30, 1))]).astype(float)

    size = 240
    n_pts = 40000
    fuse_args = (rng.integers(0, size, n_pts), rng.integers(0, size, n_pts),
                 rng.normal(size=n_pts))

    gsize = 200
    height = rng.uniform(0, 1, (gsize, gsize))
    known = (rng.uniform(size=(gsize, gsize)) < 0.8).astype(np.uint8)
    pxs = rng.uniform(0, 50, 5000)
    pys = rng.uniform(0, 50, 5000)

    cost = rng.uniform(0, 1, (gsize, gsize))
    std = rng.uniform(0, 0.3, (gsize, gsize))
    actions = np.stack([rng.uniform(-0.4, 0.4, (512, 20)),
                        rng.uniform(-3, 3, (512, 20))], axis=-1)

    def make(backend):
        def fresh_fuse():
            mean = np.zeros((size, size))
            var = np.ones((size, size))
            nobs = np.zeros((size, size), dtype=np.int64)
            backend.fuse_points(*fuse_args, mean, var, nobs, 0.05)

        return {
            "terrain_heights (300x300, 30 bumps)":
                lambda: backend.terrain_heights(xs, ys, 7, 0.1, 1.5, bumps),
            "fuse_points (40k pts, 240^2 grid)": fresh_fuse,
            "extract_patches (5k centres)":
                lambda: backend.extract_patches(height, known, pxs, pys,
                                                0.3, 0.0, 0.0, 0.25),
            "rollout_batch (512x20)":
                lambda: backend.rollout_batch(
                    25.0, 25.0, 0.3, 5.0, actions, cost, std, known,
                    0.0, 0.0, 0.25, 0.1, 2.0, 10.0, 5.0, 4.0, 1.0, 2.0,
                    8.333, 0.02),
        }

    return make


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    if _speedups is None:
        print("compiled extension not built; nothing to compare")
        return

    make = workloads(np.random.default_rng(0))
    numpy_work = make(pure)
    cython_work = make(_speedups)

    width = max(len(k) for k in numpy_work)
    print(f"{'kernel':<{width}}  {'numpy':>10}  {'cython':>10}  {'speedup':>8}")
    for name in numpy_work:
        tn = best_of(numpy_work[name], args.repeats)
        tc = best_of(cython_work[name], args.repeats)
        print(f"{name:<{width}}  {tn * 1e3:>8.2f}ms  {tc * 1e3:>8.2f}ms"
              f"  {tn / tc:>7.1f}x")


if __name__ == "__main__":
    main()
