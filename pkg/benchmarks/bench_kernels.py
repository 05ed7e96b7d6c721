"""Time the numba and numpy paths of each preprocessing kernel.

    python benchmarks/bench_kernels.py [--repeat 5]

Sizes match one grid-64 sample: ~4000 nodes, 3 holes x 64 boundary points.
"""

import argparse
import time

import numpy as np

from refop import _kernels as K


def best_of(fn, repeat):
    fn()  # warm-up (includes numba compilation on first call)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(rng):
    nodes = rng.uniform(0, 1, (4225, 2))
    bpts = rng.uniform(0, 1, (192, 2))
    kinds = np.array([K.KIND_CIRCLE, K.KIND_CIRCLE, K.KIND_SQUARE], dtype=np.int64)
    params = np.array([[0.3, 0.3, 0.1], [0.7, 0.6, 0.08], [0.4, 0.75, 0.06]])
    px, py = nodes.T.copy()
    simplices = rng.integers(0, 4225, (4225, 3))
    w = rng.dirichlet(np.ones(3), 4225)
    vals = rng.normal(size=(4225, 1))
    return {
        "nearest_point": (nodes, bpts),
        "link_fraction": (px, py, 1 / 64, 0.0, kinds, params),
        "barycentric_gather": (simplices, w, vals),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':<20}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for name, inputs in cases(rng).items():
        t_np = best_of(lambda: K.NUMPY_KERNELS[name](*inputs), args.repeat)
        t_nb = best_of(lambda: K.NUMBA_KERNELS[name](*inputs), args.repeat)
        print(f"{name:<20}{t_np * 1e3:>10.3f}{t_nb * 1e3:>10.3f}{t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
