"""Density clustering for bias identification.

Two layers: a generic DBSCAN over d-dimensional points, and the zero-seeded
one-dimensional variant used in the calibration pipeline. The pipeline
clusters the 8-point set {0, f1..f7} per candidate; channels whose estimates
sit inside the searching distance of the zero seed are unbiased, the rest are
flagged. Candidate ranking prefers the largest cluster, then the tightest,
then the hypothesis closest to the reference point.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NoFeasibleHypothesis
from .phasor import CHANNELS, BiasVector

CORE = "core"
REACHABLE = "reachable"
OUTLIER = "outlier"


def dbscan(points, eps: float, min_pts: int):
    """Standard DBSCAN labels over Euclidean distance.

    Returns (roles, cluster_ids): roles[i] in {core, reachable, outlier};
    cluster_ids[i] is -1 for outliers, else a 0-based cluster number in
    first-touched order. O(n^2); the pipeline only ever clusters 8 points.
    """
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    if min_pts < 1:
        raise ValueError("min_pts must be >= 1")
    pts = np.asarray(points, dtype=float)
    if pts.size == 0:
        return [], []
    pts = np.atleast_2d(pts)
    n = pts.shape[0]

    d2 = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=2)
    neighbors = [np.flatnonzero(d2[i] <= eps * eps) for i in range(n)]
    is_core = np.array([len(nb) >= min_pts for nb in neighbors])

    cluster_ids = np.full(n, -1, dtype=int)
    next_id = 0
    for i in range(n):
        if not is_core[i] or cluster_ids[i] != -1:
            continue
        # flood fill through core points only
        cluster_ids[i] = next_id
        stack = [i]
        while stack:
            p = stack.pop()
            for q in neighbors[p]:
                if cluster_ids[q] == -1:
                    cluster_ids[q] = next_id
                    if is_core[q]:
                        stack.append(q)
        next_id += 1

    roles = []
    for i in range(n):
        if is_core[i]:
            roles.append(CORE)
        elif cluster_ids[i] != -1:
            roles.append(REACHABLE)
        else:
            roles.append(OUTLIER)
    return roles, cluster_ids.tolist()


@dataclass(frozen=True)
class ClusterConfig:
    min_pts: int = 3
    eps_mode: str = "fixed"          # "fixed" or "gap"
    eps_fixed: float = 1e-3
    membership_bound: float = 1e-3   # p.u. / rad

    def __post_init__(self):
        if self.min_pts < 1:
            raise ValueError("min_pts must be >= 1")
        if self.eps_mode not in ("fixed", "gap"):
            raise ValueError(f"unknown eps_mode {self.eps_mode!r}")
        if self.eps_mode == "fixed" and self.eps_fixed <= 0.0:
            raise ValueError("eps_fixed must be positive in fixed mode")


@dataclass(frozen=True)
class ClusterOutcome:
    labels: tuple            # per point: core / reachable / outlier, seed first
    cluster_size: int        # members including the zero seed
    tightness: float         # max nearest-neighbor distance inside the cluster
    outlier_indices: tuple   # channel indices (0..6)
    outlier_values: tuple
    degenerate: bool = False
    eps_used: float = float("nan")

    @property
    def outlier_channels(self) -> tuple:
        return tuple(CHANNELS[i] for i in self.outlier_indices)


def _tightness(members: np.ndarray) -> float:
    if members.size <= 1:
        return 0.0
    s = np.sort(members)
    return float(np.diff(s).max())


def zero_seeded_cluster(f, cfg: ClusterConfig = ClusterConfig()) -> ClusterOutcome:
    """Cluster {0, f1..f7} on the real line with the zero seed pinned.

    fixed mode: a channel is a member iff |f_i| <= membership_bound.
    gap mode: the largest gap in sorted absolute values splits members from
    outliers, provided the member side keeps at least min_pts points.
    Degenerate when the seed cannot gather min_pts members (seed included).
    """
    if isinstance(f, BiasVector):
        vals = np.array(f.as_tuple())
    else:
        vals = np.asarray(f, dtype=float)
    if vals.shape != (7,) or not np.all(np.isfinite(vals)):
        raise ValueError("expected 7 finite bias components")

    absvals = np.abs(vals)
    if cfg.eps_mode == "fixed":
        eps = cfg.membership_bound
        member = absvals <= eps
    else:
        # data-adaptive split at the widest gap of the sorted |f| sequence,
        # seed included; everything beyond the gap is out
        order = np.argsort(absvals)
        s = np.concatenate([[0.0], absvals[order]])
        gaps = np.diff(s)
        k = int(np.argmax(gaps))
        # gap position k splits after the k-th sorted point (seed is s[0])
        if gaps[k] == 0.0:
            member = np.ones(7, dtype=bool)
        else:
            cutoff = s[k]
            member = absvals <= cutoff
        eps = float(gaps[k])

    size = 1 + int(member.sum())
    if size < cfg.min_pts:
        labels = tuple([CORE] + [OUTLIER] * 7)
        return ClusterOutcome(labels=labels, cluster_size=size,
                              tightness=float("inf"),
                              outlier_indices=tuple(range(7)),
                              outlier_values=tuple(vals),
                              degenerate=True, eps_used=eps)

    members = np.concatenate([[0.0], vals[member]])
    labels = [CORE]
    for i in range(7):
        labels.append(REACHABLE if member[i] else OUTLIER)
    out_idx = tuple(int(i) for i in np.flatnonzero(~member))
    return ClusterOutcome(labels=tuple(labels), cluster_size=size,
                          tightness=_tightness(members),
                          outlier_indices=out_idx,
                          outlier_values=tuple(float(vals[i]) for i in out_idx),
                          degenerate=False, eps_used=eps)


@dataclass(frozen=True, order=True)
class CandidateScore:
    """Lexicographic sort key: bigger cluster, tighter cluster, closer to the
    reference point, lower index. Stored negated/ascending so tuple order works."""

    neg_cluster_size: int
    tightness: float
    ref_distance: float
    index: int


def candidate_score(outcome: ClusterOutcome, candidate, ems,
                    index: int) -> CandidateScore:
    cand = np.asarray(candidate, dtype=float)
    ref = np.asarray(ems, dtype=float)
    dist = float(np.sqrt(np.sum(((cand - ref) / ref) ** 2)))
    return CandidateScore(neg_cluster_size=-outcome.cluster_size,
                          tightness=outcome.tightness,
                          ref_distance=dist, index=index)


def score_candidates(outcomes, candidates, ems) -> int:
    """Best candidate index under the ranking; degenerate outcomes never win."""
    best = None
    best_key = None
    for i, (outcome, cand) in enumerate(zip(outcomes, candidates)):
        if outcome.degenerate:
            continue
        key = candidate_score(outcome, cand, ems, i)
        if best_key is None or key < best_key:
            best_key = key
            best = i
    if best is None:
        raise NoFeasibleHypothesis(
            "every candidate produced a degenerate cluster")
    return best
