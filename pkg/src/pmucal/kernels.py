"""Hot-path scan kernels with two interchangeable backends.

The scan evaluates, for every lattice candidate, the 7-channel bias solve
F = G @ (tile(candidate) - computed) followed by the zero-seeded membership
statistics (cluster size, tightness). The numba backend JIT-compiles a
parallel per-candidate loop; the numpy backend does the same arithmetic as
chunked matrix products. Both produce bitwise-identical statistics arrays
regardless of worker count, so backend and parallelism never change results.

Select with PMUCAL_BACKEND=numba|numpy (default numba, falling back to numpy
when compilation is unavailable).
"""

from __future__ import annotations

import os

import numpy as np

# thread pool sizing must happen before numba initializes
if "NUMBA_NUM_THREADS" not in os.environ:
    os.environ["NUMBA_NUM_THREADS"] = str(max(4, os.cpu_count() or 1))

_BACKEND_ENV = "PMUCAL_BACKEND"


def _try_import_numba():
    try:
        import numba  # noqa: F401
        return True
    except Exception:
        return False


def requested_backend() -> str:
    req = os.environ.get(_BACKEND_ENV, "numba").strip().lower()
    if req not in ("numba", "numpy"):
        raise ValueError(f"{_BACKEND_ENV} must be 'numba' or 'numpy', got {req!r}")
    return req


def active_backend() -> str:
    req = requested_backend()
    if req == "numba" and not _try_import_numba():
        return "numpy"
    return req


def _stats_from_F(F: np.ndarray, bound: float, min_pts: int):
    """Vectorized per-candidate statistics from a 7xM solution block."""
    member = np.abs(F) <= bound
    size = 1 + member.sum(axis=0)
    # tightness: max nearest-neighbor gap of sorted members plus the zero seed.
    # Non-members are parked at +inf so they fall off the end of the sort;
    # gaps touching the pad are masked out.
    padded = np.where(member, F, np.inf)
    pts = np.concatenate([np.zeros((1, F.shape[1])), padded], axis=0)
    s = np.sort(pts, axis=0)
    with np.errstate(invalid="ignore"):
        gaps = np.diff(s, axis=0)
    valid = np.isfinite(s[1:])
    tight = np.where(valid, gaps, 0.0).max(axis=0)
    tight = np.where(size.astype(np.int64) >= min_pts, tight, np.inf)
    return size.astype(np.int64), tight


def scan_stats_numpy(G: np.ndarray, computed: np.ndarray, grid: np.ndarray,
                     bound: float, min_pts: int, chunk: int = 65536):
    """size, tightness arrays for every candidate; numpy backend."""
    n3 = computed.shape[0]
    m = grid.shape[0]
    sizes = np.empty(m, dtype=np.int64)
    tights = np.empty(m, dtype=np.float64)
    reps = n3 // 3
    for lo in range(0, m, chunk):
        hi = min(lo + chunk, m)
        E = np.tile(grid[lo:hi], (1, reps)) - computed
        F = G @ E.T
        sizes[lo:hi], tights[lo:hi] = _stats_from_F(F, bound, min_pts)
    return sizes, tights


_NUMBA_KERNEL = None


def _build_numba_kernel():
    global _NUMBA_KERNEL
    if _NUMBA_KERNEL is not None:
        return _NUMBA_KERNEL
    import numba

    @numba.njit(parallel=True, fastmath=False, cache=True)
    def kernel(G, computed, grid, bound, min_pts, sizes, tights):
        m = grid.shape[0]
        n3 = computed.shape[0]
        for idx in numba.prange(m):
            f = np.zeros(7)
            for row in range(7):
                acc = 0.0
                for k in range(n3):
                    acc += G[row, k] * (grid[idx, k % 3] - computed[k])
                f[row] = acc
            # membership and sorted-member tightness, seed at zero
            members = np.empty(8)
            members[0] = 0.0
            cnt = 1
            for row in range(7):
                if abs(f[row]) <= bound:
                    members[cnt] = f[row]
                    cnt += 1
            sizes[idx] = cnt
            if cnt < min_pts:
                tights[idx] = np.inf
                continue
            sub = np.sort(members[:cnt])
            t = 0.0
            for k in range(cnt - 1):
                g = sub[k + 1] - sub[k]
                if g > t:
                    t = g
            tights[idx] = t

    _NUMBA_KERNEL = kernel
    return kernel


def scan_stats_numba(G: np.ndarray, computed: np.ndarray, grid: np.ndarray,
                     bound: float, min_pts: int, workers: int | None = None):
    import numba

    kernel = _build_numba_kernel()
    m = grid.shape[0]
    sizes = np.empty(m, dtype=np.int64)
    tights = np.empty(m, dtype=np.float64)
    if workers is not None:
        # each prange iteration is self-contained, so the thread count can
        # only change timing, never the stats
        numba.set_num_threads(max(1, min(workers, numba.config.NUMBA_NUM_THREADS)))
    kernel(np.ascontiguousarray(G), np.ascontiguousarray(computed),
           np.ascontiguousarray(grid), bound, min_pts, sizes, tights)
    return sizes, tights


def scan_stats(G: np.ndarray, computed: np.ndarray, grid: np.ndarray,
               bound: float, min_pts: int, backend: str | None = None,
               chunk: int = 65536, workers: int | None = None):
    """Dispatch to the selected backend; results are worker-count independent."""
    use = backend or active_backend()
    if use == "numba":
        try:
            return scan_stats_numba(G, computed, grid, bound, min_pts,
                                    workers=workers)
        except Exception:
            if backend == "numba":
                raise
            use = "numpy"  # jit failure: quiet fallback per contract
    return scan_stats_numpy(G, computed, grid, bound, min_pts, chunk=chunk)
