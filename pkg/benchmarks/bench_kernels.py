"""Compiled vs NumPy kernels on a desk-sized plate.

    python benchmarks/bench_kernels.py [--steps 400] [--columns 4] [--repeat 3]

Times ``march`` (CDM with banded solves) and ``correlate`` (element-wise
time correlation) on both backends and checks they agree.
"""

import argparse
import time

import numpy as np
from scipy import sparse

from voidfwi import assembly, geometry, material
from voidfwi.grid import build_grid, interpolation_matrix
from voidfwi.propagate import _permuted, sine_burst
from voidfwi._kernels import _fallback

try:
    from voidfwi._kernels import _core
except ImportError:  # extension not built
    _core = None


def setup(columns: int):
    grid = build_grid(2, [0.05, 0.025], 0.0005, 1)
    void = geometry.Circle((0.025, 0.0125), 0.0025)
    qset = geometry.build_quadrature_set(grid, void, depth=5)
    mat = material.MaterialModel.uniform(grid, 2700.0, 6300.0, "rho")
    ops = assembly.assemble(grid, mat, geometry.IndicatorField(void, 1.0, 1e-5), qset)
    xs = np.linspace(0.005, 0.045, columns)
    pos = np.column_stack([xs, np.full(columns, 0.025)])
    loads = assembly.point_load_matrix(grid, pos)
    perm = ops.factor.perm
    return grid, ops, sparse.csr_matrix(loads)[perm], interpolation_matrix(grid, pos).tocsr()[:, perm]


def best_of(repeat, fn):
    times, out = [], None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--steps", type=int, default=400)
    ap.add_argument("--columns", type=int, default=4)
    ap.add_argument("--stride", type=int, default=10)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    grid, ops, b, p = setup(args.columns)
    nc, n = args.columns, grid.n_nodes
    dt = 1.0 / ops.max_frequency()  # half the CDM stability limit
    t = np.arange(args.steps + 1) * dt
    signals = np.zeros((args.steps + 1, nc, nc))
    for c in range(nc):
        signals[:, c, c] = sine_burst(t, 1e6, 2.0)
    zeros = np.zeros((nc, n))
    k = _permuted(ops)
    backends = {"python": _fallback}
    if _core is not None:
        backends["cython"] = _core
    print(f"plate {grid.counts[0]}x{grid.counts[1]} elements, {n} nodes, band {ops.factor.cb.shape[0] - 1}, "
          f"{nc} columns, {args.steps} steps")

    results = {}
    for name, mod in backends.items():
        tm, (status, _, rec, hist) = best_of(args.repeat, lambda: mod.march(
            ops.factor.cb, k, b, signals, p, zeros, zeros, dt, args.steps, args.stride, True))
        assert status == _fallback.OK
        conn = np.ascontiguousarray(grid.connectivity)
        w = np.ones(hist.shape[0] - 1)
        tc, corr = best_of(args.repeat, lambda: mod.correlate(hist, hist, conn, w, True))
        results[name] = (tm, tc, rec, corr)
        print(f"{name:>7}: march {tm * 1e3:8.1f} ms   correlate {tc * 1e3:8.1f} ms")

    if "cython" in results:
        py, cy = results["python"], results["cython"]
        drec = np.abs(py[2] - cy[2]).max() / np.abs(py[2]).max()
        dcor = np.abs(py[3] - cy[3]).max() / np.abs(py[3]).max()
        print(f"speedup: march {py[0] / cy[0]:.2f}x, correlate {py[1] / cy[1]:.2f}x")
        print(f"max relative difference: recordings {drec:.1e}, correlations {dcor:.1e}")
    else:
        print("compiled extension not built; only the fallback was timed")


if __name__ == "__main__":
    main()
