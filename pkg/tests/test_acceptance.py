"""Acceptance gate: one test per shipping criterion, each recording a single
PASS/FAIL/SKIP line with its measured numbers.

Criteria the method cannot structurally satisfy (a uniform voltage-angle
bias produces the same measurements as an impedance rotation, so the scan
absorbs one into the other) run faithfully and stay red; the README's
limitations section explains each one. Bands are never loosened to force a
pass.
"""

import dataclasses
import json
import math
import os
import time

import numpy as np
import pytest

import pmucal as pc
from pmucal import kernels
from pmucal.calibrator import ScanConfig
from pmucal.cli import main
from pmucal.cluster import zero_seeded_cluster
from pmucal.estimator import LseFactorization, computed_params_stack
from pmucal.sensitivity import assemble_H

from conftest import random_snapshot
from test_cluster import TEN_POINTS, TEN_ROLES, brute_dbscan


def _sha(path):
    import hashlib
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_criterion_01_roundtrip(criterion, rng):
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        p = pc.Phasor(rng.uniform(0.1, 2.0), rng.uniform(-math.pi, math.pi))
        e = pc.BiasError(d_mag=rng.uniform(-0.04, 0.04),
                         d_ang=rng.uniform(-0.05, 0.05))
        back = pc.debias(pc.bias(p, e), e)
        worst = max(worst, pc.tve(back, p))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-10 and elapsed < 1.0
    criterion(1, "bias/debias exact inverse",
              ok, f"worst TVE {worst:.2e} over 1000 draws (tol 1e-10), "
                  f"{elapsed:.2f}s (limit 1s)")


def test_criterion_02_derivatives(criterion, rng):
    worst = 0.0
    for _ in range(1000):
        _, snap = random_snapshot(rng)
        worst = max(worst, pc.fd_check(snap)["max_relative_error"])
    criterion(2, "analytic sensitivities match finite differences",
              worst < 1e-6,
              f"worst of 21 coefficients over 1000 operating points "
              f"{worst:.2e} (tol 1e-6)")


def test_criterion_03_known_reference_recovery(criterion):
    details = []
    all_ok = True
    for name in ("case1_a", "case1_b", "case1_c", "case1_d", "case1_e",
                 "case1_f"):
        ds = pc.generate(pc.preset(name))
        bv = pc.estimate_biases(list(ds.snapshots), ds.ems)
        inj = ds.injected
        errs = {ch: bv[ch] - inj[ch] for ch in pc.CHANNELS}
        worst_ch = max(errs, key=lambda c: abs(errs[c]))
        worst = abs(errs[worst_ch])
        ok = worst <= 1e-3
        all_ok = all_ok and ok
        tag = name.split("_")[1]
        details.append(f"{tag}:{worst:.1e}" + ("" if ok else f"({worst_ch})"))
    criterion(3, "bias recovery at exact references, six patterns",
              all_ok, "worst channel error per pattern "
              + " ".join(details) + "; band 1e-3")


def test_criterion_04_single_axis_reference_error(criterion):
    ds = pc.generate(pc.preset("case2"))
    t0 = time.perf_counter()
    report = pc.calibrate(list(ds.snapshots), ds.ems)
    elapsed = time.perf_counter() - t0
    r_err = report.ems_error_pct["r"]
    dis = report.biases["dIs"]
    ok = (abs(r_err - (-2.0)) <= 0.5
          and report.outlier_channels == ("dIs",)
          and abs(dis - 0.01) <= 1e-3
          and elapsed < 10.0)
    criterion(4, "r-axis reference error and sending-current bias",
              ok, f"r error {r_err:+.2f}% (target -2+/-0.5), dIs {dis:.4e} "
                  f"(target 0.01+/-1e-3), flags {report.outlier_channels}, "
                  f"{elapsed:.2f}s (limit 10s)")


def test_criterion_05_two_axis_reference_error(criterion):
    ds = pc.generate(pc.preset("case3"))
    report = pc.calibrate(list(ds.snapshots), ds.ems)
    r_err, x_err = report.ems_error_pct["r"], report.ems_error_pct["x"]
    dvs = report.biases["dVs"]
    dthvr = report.biases["dThVr"]
    r_ok = abs(r_err - (-4.0)) <= 0.5
    x_ok = abs(x_err - (-6.0)) <= 0.5
    dvs_ok = "dVs" in report.outlier_channels and abs(dvs - 0.01) <= 1e-3
    dthvr_ok = ("dThVr" in report.outlier_channels
                and abs(dthvr - 0.00175) <= 5e-4)
    criterion(5, "two-axis reference error with voltage bias",
              r_ok and x_ok and dvs_ok and dthvr_ok,
              f"r {r_err:+.2f}% (target -4+/-0.5{'' if r_ok else ', MISS'}), "
              f"x {x_err:+.2f}% (target -6+/-0.5), dVs {dvs:.4e}, "
              f"dThVr {dthvr:.1e} flagged={'dThVr' in report.outlier_channels}"
              "; angle bias is absorbed into the r-axis shift "
              "(rotation equivalence)")


def test_criterion_06_three_axis_reference_error(criterion):
    ds = pc.generate(pc.preset("case4"))
    report = pc.calibrate(list(ds.snapshots), ds.ems)
    e = report.ems_error_pct
    targets = {"r": -2.0, "x": -5.0, "bc": 2.0}
    misses = {a: e[a] for a in targets if abs(e[a] - targets[a]) > 0.5}
    criterion(6, "three-axis reference error recovery",
              not misses,
              f"r {e['r']:+.2f} x {e['x']:+.2f} bc {e['bc']:+.2f} vs targets "
              f"-2/-5/+2 within 0.5pp; misses {sorted(misses) or 'none'}"
              "; rotation equivalence drags r toward zero")


def test_criterion_07_linearity_of_estimates(criterion, default_dataset):
    snaps = list(default_dataset.snapshots)
    H = assemble_H(snaps)
    truth = default_dataset.truth_line
    worst = 0.0
    for axis in ("r", "x", "bc"):
        refs10 = dataclasses.replace(truth, **{axis: getattr(truth, axis) * 0.90})
        refs05 = dataclasses.replace(truth, **{axis: getattr(truth, axis) * 0.95})
        b10 = pc.estimate_biases(snaps, refs10, H=H).as_tuple()
        b05 = pc.estimate_biases(snaps, refs05, H=H).as_tuple()
        for v10, v05 in zip(b10, b05):
            if abs(v10) < 1e-12 and abs(v05) < 1e-12:
                continue
            worst = max(worst, abs(v10 / v05 - 2.0))
    criterion(7, "estimates double when reference error doubles",
              worst <= 0.05,
              f"worst |ratio - 2| {worst:.2e} across 3 axes x 7 channels "
              "(band 0.05)")


def test_criterion_08_clustering_vs_brute_force(criterion, rng):
    mismatches = 0
    for _ in range(500):
        n = int(rng.integers(1, 51))
        d = int(rng.integers(1, 5))
        pts = rng.normal(0.0, 1.0, size=(n, d))
        eps = float(rng.uniform(0.2, 1.5))
        min_pts = int(rng.integers(1, 7))
        if pc.dbscan(pts, eps, min_pts) != brute_dbscan(pts, eps, min_pts):
            mismatches += 1
    fixture_ok = all(pc.dbscan(TEN_POINTS, 1.0, mp)[0] == TEN_ROLES
                     for mp in (4, 3))
    criterion(8, "density clustering matches brute force",
              mismatches == 0 and fixture_ok,
              f"{mismatches} label mismatches in 500 random instances "
              f"(n<=50, d<=4); ten-point fixture identical for min_pts 4 "
              f"and 3: {fixture_ok}")


def test_criterion_09_membership_fixture(criterion):
    f = (0.0334e-3, 0.0335e-3, 10.0591e-3, 0.1480e-3,
         0.0067e-3, 1.7601e-3, -0.0001e-3)
    out = zero_seeded_cluster(f)
    ok = out.cluster_size == 6 and set(out.outlier_channels) == {"dIs", "dThVr"}
    criterion(9, "zero-seeded membership splits biased channels",
              ok, f"cluster size {out.cluster_size} (want 6), outliers "
                  f"{out.outlier_channels} (want dIs, dThVr) at bound 1e-3")


def test_criterion_10_flat_scan_throughput(criterion):
    ds = pc.generate(pc.preset("case2"))
    snaps = list(ds.snapshots)
    cfg = ScanConfig(alpha=0.2, coarse_step=0.004, refine_step=0.004,
                     worker_count=1)
    t0 = time.perf_counter()
    report1 = pc.calibrate(snaps, ds.ems, cfg, flat_scan=True)
    elapsed = time.perf_counter() - t0
    count = report1.stages[0].candidate_count
    report4 = pc.calibrate(snaps, ds.ems,
                           dataclasses.replace(cfg, worker_count=4),
                           flat_scan=True)
    bitwise = report1.to_dict() == report4.to_dict()
    ok = count == 1_030_301 and elapsed <= 29.0 and bitwise
    criterion(10, "flat lattice scan throughput and worker invariance",
              ok, f"{count} candidates in {elapsed:.2f}s single-worker "
                  f"(limit 29s, backend {kernels.active_backend()}); "
                  f"4-worker report bitwise identical: {bitwise}")

    cpus = os.cpu_count() or 1
    if cpus < 4:
        criterion(10, "flat lattice scan throughput and worker invariance",
                  None, f"4-worker >=3x speedup SKIPPED: host has {cpus} CPU")
    else:
        fact = LseFactorization(assemble_H(snaps))
        computed = computed_params_stack(snaps)
        from pmucal.calibrator import _grid_array
        grid = _grid_array(np.array(ds.ems.as_tuple()[:3]), 0.004, 50)
        t1 = time.perf_counter()
        kernels.scan_stats(fact.G, computed, grid, 1e-3, 3, workers=1)
        t1 = time.perf_counter() - t1
        t4 = time.perf_counter()
        kernels.scan_stats(fact.G, computed, grid, 1e-3, 3, workers=4)
        t4 = time.perf_counter() - t4
        criterion(10, "flat lattice scan throughput and worker invariance",
                  t1 / t4 >= 3.0,
                  f"speedup at 4 workers {t1 / t4:.2f}x (need >=3x)")


def test_criterion_11_byte_identical_cli(criterion, tmp_path):
    sim = [tmp_path / f"sim{i}.csv" for i in range(2)]
    for p in sim:
        assert main(["simulate", "--preset", "case2", "-o", str(p)]) == 0
    sim_ok = _sha(sim[0]) == _sha(sim[1])

    ems = pc.preset("case2").ems_references()
    cfg = tmp_path / "c.cfg"
    cfg.write_text(f"ems.r = {ems.r!r}\nems.x = {ems.x!r}\nems.bc = {ems.bc!r}\n")
    reps = [tmp_path / f"rep{i}.json" for i in range(3)]
    workers = ["1", "1", "4"]
    for p, w in zip(reps, workers):
        assert main(["calibrate", str(sim[0]), "--config", str(cfg),
                     "--workers", w, "-o", str(p)]) == 0
    digests = {_sha(p) for p in reps}
    criterion(11, "deterministic CLI artifacts",
              sim_ok and len(digests) == 1,
              f"simulate twice identical: {sim_ok}; calibrate x2 plus "
              f"4-worker run produced {len(digests)} distinct digest(s) "
              "(want 1)")


def test_criterion_12_false_flag_rate(criterion):
    line = pc.table8_line()
    clean = 0
    trials = 100
    for seed in range(trials):
        spec = pc.ScenarioSpec(line=line, noise_sigma=1e-4, seed=seed)
        ds = pc.generate(spec)
        report = pc.calibrate(list(ds.snapshots), line)
        if report.outlier_channels == ():
            clean += 1
    criterion(12, "noise does not trigger false bias flags",
              clean >= 95,
              f"{clean}/{trials} trials flag nothing at sigma 1e-4 "
              "(need >=95); lattice shifts absorb noise as phantom "
              "reference error, flagging channels")
