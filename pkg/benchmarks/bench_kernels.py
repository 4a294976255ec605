"""Time each hot kernel on its numba and numpy paths.

    python benchmarks/bench_kernels.py [--grid 100] [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from acmdsa import _accel, kernels
from acmdsa.problems import simple_column


def cases(grid):
    prob = simple_column(grid, grid)
    fem, mesh = prob.fem, prob.mesh
    rng = np.random.default_rng(0)
    E = rng.uniform(1e-4, 1.0, mesh.n)
    U = rng.normal(size=(mesh.ndof, 2))
    n = mesh.n
    a = rng.normal(-np.log(n), 1.0, n)
    lo, hi = np.full(n, 0.2 / n), np.full(n, 3.0 / n)
    return {
        "element_energy": lambda v: getattr(kernels, f"element_energy_{v}")(U, mesh.edofs, fem.k0),
        "scatter_values": lambda v: getattr(kernels, f"scatter_values_{v}")(
            E, fem._k0flat, fem._ent_elem, fem._ent_k, fem._pos, fem._nnz),
        "filter_triplets": lambda v: getattr(kernels, f"filter_triplets_{v}")(mesh.grid_index, 3.0),
        "bisect_shift": lambda v: getattr(kernels, f"bisect_shift_{v}")(a, lo, hi, -50.0, 50.0, 1e-12, 200),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--grid", type=int, default=100)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    variants = ("np", "nb") if _accel.NUMBA_AVAILABLE else ("np",)
    print(f"grid {args.grid}x{args.grid}, best of {args.repeat}")
    print(f"{'kernel':<16}" + "".join(f"{v + ' [ms]':>12}" for v in variants) + f"{'speedup':>10}")
    for name, fn in cases(args.grid).items():
        for v in variants:
            fn(v)  # warm up, triggers compilation
        best = {v: min(timeit.repeat(lambda: fn(v), number=1, repeat=args.repeat)) * 1e3 for v in variants}
        speed = f"{best['np'] / best['nb']:>9.1f}x" if "nb" in best else ""
        print(f"{name:<16}" + "".join(f"{best[v]:>12.3f}" for v in variants) + speed)


if __name__ == "__main__":
    main()
