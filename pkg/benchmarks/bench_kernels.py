"""Compare the compiled and pure-Python kernel backends.

Usage::

    python benchmarks/bench_kernels.py [--repeat 5] [--no-solve]

Times the preconditioned CG kernel on implicit-Euler step matrices, the
per-bin maxima kernel used by the Hoelder estimator, and one end-to-end
solve of the cubic example on a 16x16x32 grid. Each row reports the best of
``--repeat`` runs and the speed-up of the compiled kernels.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from parabolic_ocp import _backend
from parabolic_ocp.mesh import assemble_elliptic, build_mesh


def best_time(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def pcg_case(n_side):
    mesh = build_mesh(2, nx=n_side, ny=n_side, nt=32)
    op = assemble_elliptic(mesh)
    indptr, indices, data = op.scaled(mesh.dt)
    rng = np.random.default_rng(0)
    b = rng.standard_normal(mesh.n)
    shift = np.ones(mesh.n)

    def run():
        x = np.zeros(mesh.n)
        _backend.pcg_csr(indptr, indices, data, shift, b, x, 1e-12, 10 * mesh.n)
    return f"pcg {n_side}x{n_side}", run


def bins_case(n_pairs):
    rng = np.random.default_rng(1)
    bins = rng.integers(0, 12, n_pairs)
    inc = rng.random(n_pairs)
    dist = rng.random(n_pairs)
    return f"bin_maxima {n_pairs}", lambda: _backend.bin_maxima(bins, inc, dist, 12)


def solve_case():
    from parabolic_ocp.optimize import solve_augmented_lagrangian
    from parabolic_ocp.problem import make_example_cubic
    mesh = build_mesh(2, nx=16, ny=16, nt=32)
    spec = make_example_cubic()
    op = assemble_elliptic(mesh)
    return "cubic solve 16x16x32", lambda: solve_augmented_lagrangian(spec, op)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--no-solve", action="store_true", help="skip the end-to-end solve")
    args = ap.parse_args(argv)

    backends = _backend.available_backends()
    cases = [pcg_case(16), pcg_case(32), pcg_case(64), bins_case(20_000), bins_case(200_000)]
    if not args.no_solve:
        cases.append(solve_case())
    print(f"backends: {', '.join(backends)}")
    print(f"{'case':<24}" + "".join(f"{b:>12}" for b in backends) + ("     speed-up" if len(backends) > 1 else ""))
    for name, fn in cases:
        times = {}
        for b in backends:
            with _backend.backend(b):
                fn()  # warm caches outside the timed runs
                times[b] = best_time(fn, 1 if name.startswith("cubic") else args.repeat)
        row = f"{name:<24}" + "".join(f"{times[b] * 1e3:>10.2f}ms" for b in backends)
        if "cython" in times and "python" in times:
            row += f"{times['python'] / times['cython']:>12.1f}x"
        print(row)


if __name__ == "__main__":
    main()
