"""Benchmark the candidate-scan kernels: numba JIT vs pure numpy.

Builds a synthetic ten-snapshot scenario, factorizes the sensitivity system
once, then times the full lattice sweep (bias solve + membership statistics
per candidate) on both backends. The two backends must agree candidate for
candidate; the run fails loudly if they drift.

Usage:
    python benchmarks/bench_scan.py [--step 0.004] [--alpha 0.2]
                                    [--repeats 3] [--workers 1 4]
"""

import argparse
import math
import time

import numpy as np

import pmucal as pc
from pmucal import kernels
from pmucal.calibrator import _grid_array
from pmucal.estimator import LseFactorization, computed_params_stack
from pmucal.sensitivity import assemble_H


def build_inputs(step: float, alpha: float):
    ds = pc.generate(pc.preset("case2"))
    snaps = list(ds.snapshots)
    fact = LseFactorization(assemble_H(snaps))
    computed = computed_params_stack(snaps)
    half = int(math.floor(alpha / step + 1e-9))
    ems = np.array(ds.ems.as_tuple()[:3])
    grid = _grid_array(ems, step, half)
    return fact.G, computed, grid


def time_backend(fn, repeats: int):
    best = float("inf")
    result = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        result = fn()
        best = min(best, time.perf_counter() - t0)
    return best, result


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--step", type=float, default=0.004,
                    help="lattice step as a fraction of the reference values")
    ap.add_argument("--alpha", type=float, default=0.2,
                    help="half-width of the scanned cube")
    ap.add_argument("--repeats", type=int, default=3,
                    help="timed repeats per backend; best is reported")
    ap.add_argument("--workers", type=int, nargs="*", default=[1, 4],
                    help="numba thread counts to time")
    args = ap.parse_args()

    G, computed, grid = build_inputs(args.step, args.alpha)
    m = grid.shape[0]
    bound, min_pts = 1e-3, 3
    print(f"{m} candidates ({int(round(m ** (1 / 3)))} per axis), "
          f"{computed.shape[0] // 3} snapshots")

    t_np, ref = time_backend(
        lambda: kernels.scan_stats_numpy(G, computed, grid, bound, min_pts),
        args.repeats)
    print(f"{'numpy':>10}            {t_np:8.3f} s   {m / t_np:12.0f} cand/s")

    try:
        import numba  # noqa: F401
        have_numba = True
    except Exception:
        have_numba = False
        print(f"{'numba':>10}            unavailable (JIT import failed)")

    if have_numba:
        # warm the JIT outside the timed region
        kernels.scan_stats_numba(G, computed, grid[:64], bound, min_pts)
        for w in args.workers:
            t_nb, got = time_backend(
                lambda: kernels.scan_stats_numba(G, computed, grid, bound,
                                                 min_pts, workers=w),
                args.repeats)
            print(f"{'numba':>10} workers={w}  {t_nb:8.3f} s   "
                  f"{m / t_nb:12.0f} cand/s   {t_np / t_nb:6.2f}x vs numpy")
            if not np.array_equal(ref[0], got[0]):
                print("ERROR: backends disagree on cluster sizes")
                return 1
            finite = np.isfinite(ref[1])
            if not np.array_equal(finite, np.isfinite(got[1])) or \
                    np.abs(ref[1][finite] - got[1][finite]).max() > 1e-12:
                print("ERROR: backends disagree on tightness")
                return 1
        print("backend agreement verified (sizes exact, tightness within 1e-12)")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
