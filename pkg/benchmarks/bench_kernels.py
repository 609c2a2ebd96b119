"""Time the compiled and numpy encoding kernels on one training-sized batch.

    python3 benchmarks/bench_kernels.py [--samples N] [--repeat R]
"""

import argparse
import time

import numpy as np

from tetfield import _kernels_py
from tetfield.encoding import make_layout
from tetfield.scenes import TOY_MODEL


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=30_000, help="encoded points per call")
    ap.add_argument("--tets", type=int, default=24, help="tets in the layout")
    ap.add_argument("--levels", type=int, default=8, help="grid levels")
    ap.add_argument("--repeat", type=int, default=3, help="timed repetitions (best is kept)")
    args = ap.parse_args()

    lay = make_layout(args.tets, TOY_MODEL.log2_size, levels=args.levels, features=2)
    rng = np.random.default_rng(0)
    data = rng.normal(size=(lay.rows, lay.features)).astype(np.float32)
    tets = rng.integers(0, args.tets, args.samples)
    bary = rng.dirichlet(np.ones(4), args.samples)
    up = rng.normal(size=(args.samples, lay.out_dim)).astype(np.float32)

    backends = {"python": _kernels_py}
    try:
        from tetfield import _ckernels

        backends["cython"] = _ckernels
    except ImportError:
        print("cython=unavailable")
    results = {}
    for name, k in backends.items():
        grad = np.zeros_like(data)
        fwd = best_of(lambda: k.encode_forward(data, tets, bary, *lay.arrays(), lay.slice_size),
                      args.repeat)
        bwd = best_of(lambda: k.encode_backward(grad, tets, bary, up, *lay.arrays(), lay.slice_size),
                      args.repeat)
        results[name] = (fwd, bwd)
        print(f"backend={name} forward_ms={fwd * 1e3:.1f} backward_ms={bwd * 1e3:.1f}")
    if len(results) == 2:
        (pf, pb), (cf, cb) = results["python"], results["cython"]
        print(f"speedup_forward={pf / cf:.1f} speedup_backward={pb / cb:.1f}")


if __name__ == "__main__":
    main()
