"""Pipeline-level tests: lattice construction, scanning, ranking, the
two-stage calibration report, and applying corrections."""

import json

import numpy as np
import pytest

import pmucal as pc
from pmucal import kernels
from pmucal.calibrator import (Candidate, ScanConfig, StageSummary, build_grid,
                               scan)
from pmucal.cluster import ClusterConfig
from pmucal.estimator import LseFactorization, computed_params_stack
from pmucal.sensitivity import assemble_H


def small_cfg(**kw):
    kw.setdefault("alpha", 0.02)
    kw.setdefault("coarse_step", 0.01)
    kw.setdefault("refine_radius", 0.005)
    return ScanConfig(**kw)


def test_scan_config_invariants():
    ScanConfig()
    with pytest.raises(pc.DomainError):
        ScanConfig(alpha=0.0)
    with pytest.raises(pc.DomainError):
        ScanConfig(alpha=0.6)
    with pytest.raises(pc.DomainError):
        ScanConfig(refine_step=0.02, coarse_step=0.01)
    with pytest.raises(pc.DomainError):
        ScanConfig(coarse_step=0.3, alpha=0.2)
    with pytest.raises(pc.DomainError):
        ScanConfig(refine_radius=0.0)
    with pytest.raises(pc.DomainError):
        ScanConfig(max_candidates=0)
    with pytest.raises(pc.DomainError):
        ScanConfig(worker_count=0)


def test_build_grid_default_count_and_center(default_dataset):
    ems = default_dataset.ems
    cands = build_grid(ems, ScanConfig())
    assert len(cands) == 41 ** 3
    assert [c.index for c in cands[:3]] == [0, 1, 2]
    # center of the r-major lattice is the reference point itself
    center = cands[20 * 41 * 41 + 20 * 41 + 20]
    assert center.params.r == ems.r
    assert center.params.x == ems.x
    assert center.params.bc == ems.bc


def test_build_grid_cube_containment(default_dataset):
    ems = default_dataset.ems
    cfg = ScanConfig(alpha=0.2, coarse_step=0.04)
    cands = build_grid(ems, cfg)
    assert len(cands) == 11 ** 3
    for c in cands:
        for got, ref in zip(c.params.as_tuple()[:3], ems.as_tuple()[:3]):
            assert ref * (1 - 0.2) - 1e-12 <= got <= ref * (1 + 0.2) + 1e-12


def test_build_grid_step_equal_alpha(default_dataset):
    cands = build_grid(default_dataset.ems, ScanConfig(alpha=0.2, coarse_step=0.2))
    assert len(cands) == 27


def test_build_grid_too_large(default_dataset):
    with pytest.raises(pc.GridTooLarge) as exc:
        build_grid(default_dataset.ems, ScanConfig(max_candidates=100))
    assert exc.value.count == 41 ** 3


def test_build_grid_needs_positive_references():
    with pytest.raises(pc.DomainError):
        build_grid(pc.LineParams(r=0.008, x=0.168, bc=0.0), ScanConfig())


def test_scan_reference_path(default_dataset):
    snaps = list(default_dataset.snapshots)
    cands = build_grid(default_dataset.ems, small_cfg())
    assert len(cands) == 125
    rows = scan(snaps, cands, small_cfg())
    assert len(rows) == 125
    assert [r[0].index for r in rows] == list(range(125))
    # the true point sits at the lattice center: residual solution is dust
    cand, bv, outcome = rows[2 * 25 + 2 * 5 + 2]
    assert max(abs(v) for v in bv.as_tuple()) < 1e-9
    assert outcome.cluster_size == 8
    assert not outcome.degenerate


def test_scan_worker_count_is_a_hint(default_dataset):
    snaps = list(default_dataset.snapshots)
    cands = build_grid(default_dataset.ems, small_cfg())
    one = scan(snaps, cands, small_cfg(worker_count=1))
    four = scan(snaps, cands, small_cfg(worker_count=4))
    for (_, b1, o1), (_, b4, o4) in zip(one, four):
        assert b1.as_tuple() == b4.as_tuple()
        assert o1 == o4


def test_scan_rejects_empty_candidates(default_dataset):
    with pytest.raises(pc.DomainError):
        scan(list(default_dataset.snapshots), [], small_cfg())


def test_scan_agrees_with_kernel_stats(default_dataset):
    snaps = list(default_dataset.snapshots)
    cfg = small_cfg()
    cands = build_grid(default_dataset.ems, cfg)
    rows = scan(snaps, cands, cfg)

    fact = LseFactorization(assemble_H(snaps))
    computed = computed_params_stack(snaps)
    grid = np.array([c.params.as_tuple()[:3] for c in cands])
    sizes, tights = kernels.scan_stats(fact.G, computed, grid,
                                       cfg.cluster.membership_bound,
                                       cfg.cluster.min_pts)
    for j, (_, _, outcome) in enumerate(rows):
        assert sizes[j] == outcome.cluster_size
        if outcome.degenerate:
            assert np.isinf(tights[j])
        else:
            assert abs(tights[j] - outcome.tightness) <= 1e-12


def test_calibrate_unbiased_exact_references(default_dataset):
    report = pc.calibrate(list(default_dataset.snapshots), default_dataset.ems)
    assert report.outlier_channels == ()
    assert report.unbiased_channels == pc.CHANNELS
    assert report.cluster_size == 8
    for axis in ("r", "x", "bc"):
        assert abs(report.ems_error_pct[axis]) < 1e-9
    assert max(abs(v) for v in report.biases.as_tuple()) < 1e-9
    assert [s.name for s in report.stages] == ["coarse", "refine"]
    assert report.stages[0].candidate_count == 41 ** 3
    assert report.snapshot_count == 10
    assert report.reference_note.startswith("dThIr")
    assert report.condition_number == pytest.approx(318.54, rel=1e-3)


def test_calibrate_refinement_never_worse():
    ds = pc.generate(pc.preset("case2"))
    report = pc.calibrate(list(ds.snapshots), ds.ems)
    coarse, refine = report.stages
    assert refine.winner_cluster_size >= coarse.winner_cluster_size
    if refine.winner_cluster_size == coarse.winner_cluster_size:
        # the coarse winner sits on the refine lattice, so tightness is
        # directly comparable
        assert refine.winner_tightness <= coarse.winner_tightness


def test_calibrate_case2_identifies_sending_current_bias():
    ds = pc.generate(pc.preset("case2"))
    report = pc.calibrate(list(ds.snapshots), ds.ems)
    assert report.outlier_channels == ("dIs",)
    assert report.biases["dIs"] == pytest.approx(0.01, abs=1e-3)
    assert report.ems_error_pct["r"] == pytest.approx(-2.0, abs=0.5)


def test_calibrate_flat_scan_single_stage():
    ds = pc.generate(pc.preset("case2"))
    cfg = ScanConfig(alpha=0.04, coarse_step=0.01)
    report = pc.calibrate(list(ds.snapshots), ds.ems, cfg, flat_scan=True)
    assert [s.name for s in report.stages] == ["flat"]
    assert report.stages[0].candidate_count == 9 ** 3
    assert report.outlier_channels == ("dIs",)


def test_calibrate_fills_missing_reference_axes(default_dataset):
    snaps = list(default_dataset.snapshots)
    ems = default_dataset.ems
    report = pc.calibrate(snaps, {"r": ems.r, "x": ems.x},
                          small_cfg(alpha=0.05, refine_radius=0.003))
    assert any("bc" in w and "alpha" in w for w in report.warnings)
    # exact data: the per-snapshot mean recovers the true susceptance
    assert report.ems.bc == pytest.approx(ems.bc, rel=1e-9)
    assert report.outlier_channels == ()


def test_calibrate_rejects_unknown_reference_axis(default_dataset):
    with pytest.raises(pc.DomainError):
        pc.calibrate(list(default_dataset.snapshots), {"q": 1.0}, small_cfg())


def test_calibrate_grid_too_large(default_dataset):
    with pytest.raises(pc.GridTooLarge):
        pc.calibrate(list(default_dataset.snapshots), default_dataset.ems,
                     ScanConfig(max_candidates=1000))


def test_calibrate_infeasible_when_min_pts_unreachable(default_dataset):
    # 8 points can never seat 9 members, so every candidate is degenerate
    cfg = small_cfg(cluster=ClusterConfig(min_pts=9))
    with pytest.raises(pc.NoFeasibleHypothesis):
        pc.calibrate(list(default_dataset.snapshots), default_dataset.ems, cfg)


def test_calibrate_decimates_long_inputs():
    spec = pc.ScenarioSpec(line=pc.table8_line(), n_snapshots=300)
    ds = pc.generate(spec)
    report = pc.calibrate(list(ds.snapshots), ds.ems, small_cfg(),
                          snapshot_cap=50)
    assert report.decimation == {"applied": True, "kept": 50, "total": 300}
    assert report.snapshot_count == 50
    assert any("decimated" in w for w in report.warnings)


def test_report_dict_is_json_ready_and_untimed(default_dataset):
    report = pc.calibrate(list(default_dataset.snapshots), default_dataset.ems,
                          small_cfg(), input_digests={"input": "ab" * 32},
                          config_echo={"seed": 1729})
    d = report.to_dict()
    assert "timing_seconds" not in json.dumps(d)
    assert d["schema"] == "pmucal-report/1"
    assert d["input_digests"] == {"input": "ab" * 32}
    assert d["config_echo"] == {"seed": 1729}
    assert report.timing_seconds > 0.0
    json.loads(json.dumps(d, sort_keys=True))


def test_apply_report_zero_bias_is_identity(default_dataset):
    snaps = list(default_dataset.snapshots)
    report = pc.calibrate(snaps, default_dataset.ems, small_cfg())
    assert report.outlier_channels == ()
    corrected = pc.apply_report(snaps, report)
    for a, b in zip(snaps, corrected):
        for ch in ("vs", "vr", "is_", "ir"):
            pa, pb = getattr(a, ch), getattr(b, ch)
            assert pa.magnitude == pb.magnitude
            assert pa.angle == pb.angle
        assert a.timestamp == b.timestamp


def test_apply_report_corrects_case2():
    ds = pc.generate(pc.preset("case2"))
    snaps = list(ds.snapshots)
    report = pc.calibrate(snaps, ds.ems)
    corrected = pc.apply_report(snaps, report)
    truth = ds.truth_line
    for s in corrected:
        got = pc.compute_line_params(s)
        assert got.r == pytest.approx(truth.r, rel=1e-3)
        assert got.x == pytest.approx(truth.x, rel=1e-3)
        assert got.bc == pytest.approx(truth.bc, rel=1e-3)
    # flagged magnitude channel shifts by exactly the identified bias
    for raw, fix in zip(snaps, corrected):
        assert fix.is_.magnitude == raw.is_.magnitude + report.biases["dIs"]
        assert fix.ir.magnitude == raw.ir.magnitude
        assert fix.ir.angle == raw.ir.angle


def _stub_report(biases, outliers):
    return pc.CalibrationReport(
        selected=pc.LineParams(r=0.008, x=0.168, bc=0.141),
        ems=pc.LineParams(r=0.008, x=0.168, bc=0.141),
        ems_error_pct={"r": 0.0, "x": 0.0, "bc": 0.0},
        biases=biases, unbiased_channels=(), outlier_channels=outliers,
        cluster_size=8 - len(outliers), tightness=0.0,
        reference_note="", stages=(), condition_number=300.0,
        snapshot_count=1, decimation={}, warnings=(), config_echo={},
        input_digests={}, timing_seconds=0.0)


def test_apply_report_names_failing_channel(default_dataset):
    s = default_dataset.snapshots[0]
    tiny_ir = pc.MeasurementSnapshot(vs=s.vs, vr=s.vr, is_=s.is_,
                                     ir=pc.Phasor(0.01, 0.3), timestamp=0.0)
    report = _stub_report(pc.BiasVector(dIr=-0.02), ("dIr",))
    with pytest.raises(pc.DomainError, match="channel Ir of snapshot 0"):
        pc.apply_report([tiny_ir], report)


def test_apply_report_ignores_unflagged_biases(default_dataset):
    # estimates for channels inside the zero cluster are noise, not corrections
    snaps = [default_dataset.snapshots[0]]
    report = _stub_report(pc.BiasVector(dVs=0.04), ())
    out = pc.apply_report(snaps, report)
    assert out[0].vs.magnitude == snaps[0].vs.magnitude
