"""Least-squares bias estimation against a candidate parameter hypothesis.

The residual vector stacks (candidate - computed) differences of (R, X, Bc)
per snapshot; the bias vector F solves min ||H F - E||. The solve uses a QR
factorization; the textbook normal-equations route is kept behind a flag for
cross-checking and agrees to well below acceptance tolerances.

The multi-hypothesis form factors H once and reuses it for every candidate
column, which is what makes a million-point scan affordable.
"""

from __future__ import annotations

import numpy as np

from .errors import RankDeficient
from .line import LineParams, MeasurementSnapshot, compute_line_params
from .phasor import BiasVector
from .sensitivity import DesignMatrix

RANK_COND_LIMIT = 1e12


def computed_params_stack(snaps: list[MeasurementSnapshot]) -> np.ndarray:
    """(3N,) stack of per-snapshot computed (r, x, bc)."""
    out = np.empty(3 * len(snaps))
    for i, snap in enumerate(snaps):
        lp = compute_line_params(snap, snapshot_index=i)
        out[3 * i: 3 * i + 3] = (lp.r, lp.x, lp.bc)
    return out


def build_residuals(snaps: list[MeasurementSnapshot],
                    candidate: LineParams) -> np.ndarray:
    """E = tiled candidate minus computed parameters, ordered (R, X, Bc) per snapshot."""
    computed = computed_params_stack(snaps)
    cand = np.array(candidate.as_tuple())
    return np.tile(cand, len(snaps)) - computed


class LseFactorization:
    """One-time QR factorization of H with a pseudoinverse for repeated solves."""

    def __init__(self, H: DesignMatrix):
        m = H.matrix
        if m.shape[0] < 7:
            raise RankDeficient(
                f"H has {m.shape[0]} rows, rank 7 impossible", rank=min(m.shape))
        q, r = np.linalg.qr(m)
        diag = np.abs(np.diag(r))
        cond = float(np.linalg.cond(m))
        if diag.min() == 0.0 or cond > RANK_COND_LIMIT:
            rank = int(np.linalg.matrix_rank(m))
            raise RankDeficient(
                f"design matrix numerically rank-deficient: rank {rank}, "
                f"condition number {cond:.3e}", rank=rank, cond=cond)
        self.cond = cond
        # G maps residual stacks directly to bias vectors: F = G @ E
        self.G = np.linalg.solve(r, q.T)

    def solve(self, e: np.ndarray) -> np.ndarray:
        return self.G @ e

    def solve_multi(self, E: np.ndarray) -> np.ndarray:
        if E.ndim == 2 and E.shape[1] == 1:
            # route through the vector path so a 1-column solve is bitwise
            # identical to solve()
            return self.solve(E[:, 0])[:, None]
        return self.G @ E


def solve_lse(H: DesignMatrix, e: np.ndarray,
              use_normal_equations: bool = False) -> BiasVector:
    """Unique least-squares solution for one residual vector."""
    if use_normal_equations:
        m = H.matrix
        hth = m.T @ m
        cond = float(np.linalg.cond(m))
        if cond > RANK_COND_LIMIT:
            rank = int(np.linalg.matrix_rank(m))
            raise RankDeficient(
                f"design matrix numerically rank-deficient: rank {rank}, "
                f"condition number {cond:.3e}", rank=rank, cond=cond)
        f = np.linalg.solve(hth, m.T @ e)
    else:
        f = LseFactorization(H).solve(np.asarray(e, dtype=float))
    return BiasVector.from_sequence(f)


def solve_lse_multi(H: DesignMatrix, E: np.ndarray) -> np.ndarray:
    """Column-wise least squares: E is (3N)xM, result is 7xM."""
    E = np.asarray(E, dtype=float)
    if E.ndim == 1:
        E = E[:, None]
    return LseFactorization(H).solve_multi(E)


def estimate_biases(snaps: list[MeasurementSnapshot], references: LineParams,
                    H: DesignMatrix | None = None) -> BiasVector:
    """Single-candidate convenience: residuals against known references, one solve."""
    from .sensitivity import assemble_H
    if H is None:
        H = assemble_H(snaps)
    e = build_residuals(snaps, references)
    return solve_lse(H, e)
