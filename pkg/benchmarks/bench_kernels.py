"""Time the numba kernels against their numpy twins.

    python3 benchmarks/bench_kernels.py [--points 20000] [--walkers 20000] [--repeat 3]

Each case is run once untimed (numba compiles on first call), then the best
of ``--repeat`` timings is reported.
"""

import argparse
import time

import numpy as np

from hml import kernels
from hml.fractal import build_ifs
from hml.harmonic import WalkConfig, _walk_arrays
from hml.lattice import build_lattice


def best_time(fn, repeat):
    fn()
    ts = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t0)
    return min(ts)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--points", type=int, default=20_000)
    p.add_argument("--walkers", type=int, default=20_000)
    p.add_argument("--depth", type=int, default=6)
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args()

    model = build_ifs("corner_cantor_2d", 0.25)
    lat = build_lattice(model, args.depth)
    rng = np.random.default_rng(0)
    X = model.center + rng.uniform(-1.5, 1.5, (args.points, 2))
    kargs = model.kernel_args(args.depth)
    a = _walk_arrays(model, args.depth, WalkConfig())

    def dist(backend):
        return lambda: kernels.distance_batch(X, *kargs, 0.0, 1e-9, backend=backend)

    def walk(backend):
        return lambda: kernels.walk(kernels.KIND_IFS, args.walkers, 0, np.uint64(0), a["mode"],
                                    a["pole"], a["center"], a["far"], a["R_out"], a["eps"], 0.95,
                                    a["step_cap"], 100_000, 0.05, *kargs, 0, backend=backend)

    backends = ["numpy"] + (["numba"] if kernels._compiled is not None else [])
    kernels.set_threads(1)
    print(f"lattice depth {lat.max_depth}, {args.points} query points, {args.walkers} walkers")
    print(f"{'kernel':<16}" + "".join(f"{b:>12}" for b in backends) + f"{'speedup':>10}")
    for name, make in [("distance_batch", dist), ("walk", walk)]:
        t = [best_time(make(b), args.repeat) for b in backends]
        sp = f"{t[0] / t[-1]:>9.1f}x" if len(t) > 1 else ""
        print(f"{name:<16}" + "".join(f"{v:>11.3f}s" for v in t) + sp)


if __name__ == "__main__":
    main()
