"""End-to-end calibration pipeline.

Builds the feasibility cube around the impedance references, evaluates the
bias hypothesis at every lattice candidate (one shared least-squares
factorization, one matrix product per block), clusters each candidate's
seven-channel solution around zero, and ranks candidates by
(cluster size, tightness, distance to the references). A second lattice at
finer resolution around the stage-1 winner sharpens the estimate; the winner
itself sits on the refine lattice, so refinement can only improve the score.

Results are deterministic for a given input and config regardless of
worker_count or backend parallelism.
"""

from __future__ import annotations

import dataclasses
import math
import time
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import kernels
from .cluster import ClusterConfig, zero_seeded_cluster
from .errors import DomainError, GridTooLarge, NoFeasibleHypothesis
from .estimator import LseFactorization, computed_params_stack
from .line import LineParams, MeasurementSnapshot, compute_line_params
from .phasor import CHANNELS, ANG_CEILING_DEFAULT, MAG_CEILING_DEFAULT, BiasVector
from .sensitivity import COND_WARN_THRESHOLD, assemble_H

AXES = ("r", "x", "bc")

# reference channel: every angle bias is solved relative to this one
REFERENCE_CHANNEL_NOTE = "dThIr: reference channel, assumed unbiased"

SNAPSHOT_CAP_DEFAULT = 200


@dataclass(frozen=True)
class ScanConfig:
    """Lattice and clustering knobs for the candidate scan."""

    alpha: float = 0.20
    coarse_step: float = 0.01
    refine_step: float = 0.001
    refine_radius: float = 0.015
    max_candidates: int = 2_000_000
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    worker_count: int = 1

    def __post_init__(self):
        if not (0.0 < self.alpha <= 0.5):
            raise DomainError(f"alpha must be in (0, 0.5], got {self.alpha}")
        if not (0.0 < self.refine_step <= self.coarse_step <= self.alpha):
            raise DomainError(
                "need 0 < refine_step <= coarse_step <= alpha, got "
                f"refine_step={self.refine_step} coarse_step={self.coarse_step} "
                f"alpha={self.alpha}")
        if self.refine_radius <= 0:
            raise DomainError(f"refine_radius must be positive, got {self.refine_radius}")
        if self.max_candidates < 1:
            raise DomainError("max_candidates must be at least 1")
        if self.worker_count < 1:
            raise DomainError("worker_count must be at least 1")


@dataclass(frozen=True)
class Candidate:
    index: int
    params: LineParams


@dataclass(frozen=True)
class StageSummary:
    name: str
    candidate_count: int
    winner: tuple
    winner_cluster_size: int
    winner_tightness: float


@dataclass(frozen=True)
class CalibrationReport:
    selected: LineParams
    ems: LineParams
    ems_error_pct: dict
    biases: BiasVector
    unbiased_channels: tuple
    outlier_channels: tuple
    cluster_size: int
    tightness: float
    reference_note: str
    stages: tuple
    condition_number: float
    snapshot_count: int
    decimation: dict
    warnings: tuple
    config_echo: dict
    input_digests: dict
    timing_seconds: float

    def to_dict(self) -> dict:
        """JSON-ready form. Timing stays out so repeated runs on the same
        input produce byte-identical files."""
        return {
            "schema": "pmucal-report/1",
            "selected": {"r": self.selected.r, "x": self.selected.x,
                         "bc": self.selected.bc},
            "ems": {"r": self.ems.r, "x": self.ems.x, "bc": self.ems.bc},
            "ems_error_pct": dict(self.ems_error_pct),
            "biases": {name: self.biases[name] for name in CHANNELS},
            "unbiased_channels": list(self.unbiased_channels),
            "outlier_channels": list(self.outlier_channels),
            "cluster_size": self.cluster_size,
            "tightness": self.tightness,
            "reference_note": self.reference_note,
            "stages": [{"name": s.name,
                        "candidate_count": int(s.candidate_count),
                        "winner": [float(v) for v in s.winner],
                        "winner_cluster_size": int(s.winner_cluster_size),
                        "winner_tightness": float(s.winner_tightness)}
                       for s in self.stages],
            "condition_number": self.condition_number,
            "snapshot_count": self.snapshot_count,
            "decimation": dict(self.decimation),
            "warnings": list(self.warnings),
            "config_echo": dict(self.config_echo),
            "input_digests": dict(self.input_digests),
        }


def _lattice_axis(center: float, step_frac: float, half_count: int) -> np.ndarray:
    k = np.arange(-half_count, half_count + 1, dtype=np.float64)
    return center * (1.0 + step_frac * k)


def _grid_array(centers: Sequence[float], step_frac: float, half_count: int,
                clip: tuple | None = None) -> np.ndarray:
    """Axis-aligned lattice, r-major ordering, optionally clipped to a cube."""
    axes = []
    for i, c in enumerate(centers):
        vals = _lattice_axis(c, step_frac, half_count)
        if clip is not None:
            lo, hi = clip[0][i], clip[1][i]
            tol = 1e-12 * abs(hi - lo)
            vals = vals[(vals >= lo - tol) & (vals <= hi + tol)]
        axes.append(vals)
    rr, xx, bb = np.meshgrid(axes[0], axes[1], axes[2], indexing="ij")
    return np.column_stack([rr.ravel(), xx.ravel(), bb.ravel()])


def _half_count(extent: float, step: float) -> int:
    # 1e-9 nudge keeps 0.20/0.01 from landing on 19 via float dust
    return int(math.floor(extent / step + 1e-9))


def build_grid(ems: LineParams, cfg: ScanConfig) -> list:
    """Coarse feasibility lattice around the reference values."""
    if ems.r <= 0 or ems.x <= 0 or ems.bc <= 0:
        raise DomainError("grid construction needs all-positive reference r, x, bc")
    half = _half_count(cfg.alpha, cfg.coarse_step)
    per_axis = 2 * half + 1
    count = per_axis ** 3
    if count > cfg.max_candidates:
        raise GridTooLarge(
            f"lattice of {count} candidates exceeds max_candidates="
            f"{cfg.max_candidates}", count=count)
    arr = _grid_array((ems.r, ems.x, ems.bc), cfg.coarse_step, half)
    return [Candidate(i, LineParams(r=row[0], x=row[1], bc=row[2]))
            for i, row in enumerate(arr)]


def scan(snaps: Sequence[MeasurementSnapshot], candidates: Sequence[Candidate],
         cfg: ScanConfig) -> list:
    """Reference scan: (Candidate, BiasVector, ClusterOutcome) per candidate.

    Ordered by candidate index; worker_count is a hint and never changes the
    output. Degenerate cluster outcomes are recorded, not fatal.
    """
    if not candidates:
        raise DomainError("scan needs at least one candidate")
    H = assemble_H(snaps)
    fact = LseFactorization(H)
    computed = computed_params_stack(snaps)
    E = np.empty((computed.shape[0], len(candidates)))
    for j, cand in enumerate(candidates):
        E[:, j] = np.tile(np.array(cand.params.as_tuple()), len(snaps)) - computed
    F = fact.solve_multi(E)
    out = []
    for j, cand in enumerate(candidates):
        f = F[:, j]
        outcome = zero_seeded_cluster(f, cfg.cluster)
        out.append((cand, BiasVector.from_sequence(f), outcome))
    return out


def _fast_stats(G: np.ndarray, computed: np.ndarray, grid: np.ndarray,
                cfg: ScanConfig):
    """(sizes, tightness) per candidate. Kernel path for the fixed-bound
    membership rule; gap mode goes through the exact per-candidate code."""
    ccfg = cfg.cluster
    if ccfg.eps_mode == "fixed":
        return kernels.scan_stats(G, computed, grid, ccfg.membership_bound,
                                  ccfg.min_pts, workers=cfg.worker_count)
    reps = computed.shape[0] // 3
    E = np.tile(grid, (1, reps)) - computed
    F = G @ E.T
    sizes = np.empty(grid.shape[0], dtype=np.int64)
    tights = np.empty(grid.shape[0], dtype=np.float64)
    for j in range(grid.shape[0]):
        oc = zero_seeded_cluster(F[:, j], ccfg)
        sizes[j] = oc.cluster_size
        tights[j] = oc.tightness
    return sizes, tights


def _rank(grid: np.ndarray, sizes: np.ndarray, tights: np.ndarray,
          ems_vec: np.ndarray) -> int:
    rel = (grid - ems_vec) / ems_vec
    dist = np.sqrt((rel * rel).sum(axis=1))
    order = np.lexsort((np.arange(grid.shape[0]), dist, tights, -sizes))
    return int(order[0])


def _resolve_ems(snaps, ems, cfg):
    """Fill in missing reference axes from per-snapshot computed params."""
    warnings = []
    if isinstance(ems, LineParams):
        return ems, cfg, warnings
    given = dict(ems) if ems is not None else {}
    unknown = set(given) - set(AXES)
    if unknown:
        raise DomainError(f"unknown reference axes: {sorted(unknown)}")
    missing = [a for a in AXES if a not in given or given[a] is None]
    if not missing:
        return LineParams(r=given["r"], x=given["x"], bc=given["bc"]), cfg, warnings
    per_snap = np.array([compute_line_params(s).as_tuple()[:3] for s in snaps])
    means = per_snap.mean(axis=0)
    filled = {a: given.get(a) if given.get(a) is not None else float(means[i])
              for i, a in enumerate(AXES)}
    cfg = dataclasses.replace(cfg, alpha=0.5)
    warnings.append(
        f"reference axes {missing} missing; using per-snapshot means and "
        "widening alpha to 0.5")
    return LineParams(r=filled["r"], x=filled["x"], bc=filled["bc"]), cfg, warnings


def _decimate(snaps, cap):
    n = len(snaps)
    if n <= cap:
        return list(snaps), {"applied": False, "kept": n, "total": n}
    idx = np.unique(np.round(np.linspace(0, n - 1, cap)).astype(int))
    return ([snaps[i] for i in idx],
            {"applied": True, "kept": int(idx.size), "total": n})


def calibrate(snaps: Sequence[MeasurementSnapshot],
              ems: LineParams | Mapping | None,
              cfg: ScanConfig | None = None,
              flat_scan: bool = False,
              snapshot_cap: int = SNAPSHOT_CAP_DEFAULT,
              input_digests: Mapping | None = None,
              config_echo: Mapping | None = None) -> CalibrationReport:
    """Two-stage scan (or single flat lattice when flat_scan) with ranking by
    cluster size, then tightness, then distance to the references."""
    t0 = time.perf_counter()
    cfg = cfg or ScanConfig()
    warnings = []

    snaps, decimation = _decimate(list(snaps), snapshot_cap)
    if decimation["applied"]:
        warnings.append(
            f"input decimated from {decimation['total']} to "
            f"{decimation['kept']} snapshots (even time spacing)")

    ems, cfg, w = _resolve_ems(snaps, ems, cfg)
    warnings.extend(w)
    ems_vec = np.array([ems.r, ems.x, ems.bc])

    H = assemble_H(snaps)
    if H.cond > COND_WARN_THRESHOLD:
        warnings.append(
            f"sensitivity matrix condition number {H.cond:.3e} exceeds "
            f"{COND_WARN_THRESHOLD:.0e}; load diversity may be insufficient")
    fact = LseFactorization(H)
    computed = computed_params_stack(snaps)

    half = _half_count(cfg.alpha, cfg.coarse_step)
    count = (2 * half + 1) ** 3
    if count > cfg.max_candidates:
        raise GridTooLarge(
            f"lattice of {count} candidates exceeds max_candidates="
            f"{cfg.max_candidates}", count=count)
    grid1 = _grid_array(ems_vec, cfg.coarse_step, half)
    sizes1, tights1 = _fast_stats(fact.G, computed, grid1, cfg)
    best1 = _rank(grid1, sizes1, tights1, ems_vec)
    if sizes1[best1] < cfg.cluster.min_pts:
        raise NoFeasibleHypothesis(
            "every candidate produced a degenerate cluster; no bias "
            "hypothesis is consistent with the measurements")
    stages = [StageSummary("flat" if flat_scan else "coarse", grid1.shape[0],
                           tuple(grid1[best1]), int(sizes1[best1]),
                           float(tights1[best1]))]
    win_vec = grid1[best1]
    win_size, win_tight = int(sizes1[best1]), float(tights1[best1])

    if not flat_scan:
        lo = ems_vec * (1.0 - cfg.alpha)
        hi = ems_vec * (1.0 + cfg.alpha)
        half2 = _half_count(cfg.refine_radius, cfg.refine_step)
        grid2 = _grid_array(win_vec, cfg.refine_step, half2, clip=(lo, hi))
        if grid2.shape[0] > cfg.max_candidates:
            raise GridTooLarge(
                f"refine lattice of {grid2.shape[0]} candidates exceeds "
                f"max_candidates={cfg.max_candidates}", count=grid2.shape[0])
        sizes2, tights2 = _fast_stats(fact.G, computed, grid2, cfg)
        best2 = _rank(grid2, sizes2, tights2, ems_vec)
        # the coarse winner sits on this lattice (k = 0), so the refined
        # score can never be worse
        win_vec = grid2[best2]
        win_size, win_tight = int(sizes2[best2]), float(tights2[best2])
        stages.append(StageSummary("refine", grid2.shape[0], tuple(win_vec),
                                   win_size, win_tight))

    selected = LineParams(r=float(win_vec[0]), x=float(win_vec[1]),
                          bc=float(win_vec[2]))
    # canonical per-candidate path for the reported diagnostics
    e = np.tile(np.array(selected.as_tuple()), len(snaps)) - computed
    f = fact.solve(e)
    outcome = zero_seeded_cluster(f, cfg.cluster)
    biases = BiasVector.from_sequence(f)

    for name in outcome.outlier_channels:
        ceiling = MAG_CEILING_DEFAULT if name.startswith("dV") or name.startswith("dI") \
            else ANG_CEILING_DEFAULT
        if abs(biases[name]) > ceiling:
            warnings.append(
                f"identified bias {name}={biases[name]:.4g} exceeds the "
                f"plausibility ceiling {ceiling}")

    unbiased = tuple(n for n in CHANNELS if n not in outcome.outlier_channels)
    ems_error = {a: float(100.0 * (win_vec[i] - ems_vec[i]) / ems_vec[i])
                 for i, a in enumerate(AXES)}

    return CalibrationReport(
        selected=selected,
        ems=ems,
        ems_error_pct=ems_error,
        biases=biases,
        unbiased_channels=unbiased,
        outlier_channels=tuple(outcome.outlier_channels),
        cluster_size=outcome.cluster_size,
        tightness=outcome.tightness,
        reference_note=REFERENCE_CHANNEL_NOTE,
        stages=tuple(stages),
        condition_number=float(H.cond),
        snapshot_count=len(snaps),
        decimation=decimation,
        warnings=tuple(warnings),
        config_echo=dict(config_echo or {}),
        input_digests=dict(input_digests or {}),
        timing_seconds=time.perf_counter() - t0,
    )


def apply_report(snaps: Sequence[MeasurementSnapshot],
                 report: CalibrationReport) -> list:
    """Debias each snapshot with the report's identified biases.

    Channels the report flags as unbiased are left untouched; the reference
    angle channel has no bias slot and is never altered.
    """
    from .phasor import Phasor

    d = {name: (report.biases[name] if name in report.outlier_channels else 0.0)
         for name in CHANNELS}

    def corrected(p, mag_key, ang_key, label, idx):
        try:
            return Phasor(p.magnitude + d[mag_key],
                          p.angle + (d[ang_key] if ang_key else 0.0))
        except DomainError as exc:
            raise DomainError(
                f"correcting channel {label} of snapshot {idx}: {exc}") from exc

    out = []
    for i, s in enumerate(snaps):
        out.append(MeasurementSnapshot(
            vs=corrected(s.vs, "dVs", "dThVs", "Vs", i),
            vr=corrected(s.vr, "dVr", "dThVr", "Vr", i),
            is_=corrected(s.is_, "dIs", "dThIs", "Is", i),
            ir=corrected(s.ir, "dIr", None, "Ir", i),
            timestamp=s.timestamp))
    return out
