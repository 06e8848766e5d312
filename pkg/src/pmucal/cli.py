"""Command-line interface.

Exit codes are a stable contract: 0 success, 2 usage or validation problem,
3 I/O failure, 4 no feasible bias hypothesis (diagnostic report still
written), 5 self-check failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import os
import sys
from types import SimpleNamespace

from .calibrator import apply_report, calibrate
from .datagen import DEFAULT_SEED, ScenarioSpec, generate, preset, table8_line
from .errors import (DomainError, GridTooLarge, InsufficientSnapshots,
                     NoFeasibleHypothesis, PmucalError, RankDeficient,
                     SingularOperatingPoint, UsageError)
from .estimator import estimate_biases
from .fileio import (Config, read_config, read_csv, read_report,
                     render_report_text, write_csv, write_infeasible_report,
                     write_report, write_truth)
from .line import compute_line_params
from .phasor import CHANNELS, BiasVector
from .sensitivity import assemble_H, fd_check

DERIV_TOLERANCE = 1e-5

# set to force the derivative self-check down its failure path in tests
CORRUPT_DERIVATIVE_ENV = "PMUCAL_CORRUPT_DERIVATIVE"


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(65536), b""):
            h.update(block)
    return h.hexdigest()


def _load_config(args) -> Config:
    if getattr(args, "config", None):
        return read_config(args.config)
    return Config()


def _units_base(cfg: Config, args):
    if not getattr(args, "engineering_units", False):
        return None
    base = cfg.base()
    if base is None:
        raise UsageError(
            "--engineering-units needs base.voltage_kv and base.power_mva in the config")
    return base


def _read_input(path, cfg: Config, args):
    flip = getattr(args, "flip_receiving_current", False) or \
        cfg.get("flip_receiving_current", False)
    return read_csv(path, degrees=getattr(args, "degrees", False),
                    base=_units_base(cfg, args), flip_receiving_current=flip)


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    seed = args.seed if args.seed is not None else cfg.get("seed", DEFAULT_SEED)
    sigma = args.noise_sigma if args.noise_sigma is not None \
        else cfg.get("noise.sigma", 0.0)
    spec = preset(args.preset, seed=seed, noise_sigma=sigma,
                  n_snapshots=args.snapshots)
    ds = generate(spec)
    write_csv(args.output, ds.snapshots, degrees=args.degrees,
              base=_units_base(cfg, args))
    if args.with_truth:
        write_truth(str(args.output) + ".truth.json", ds)
    print(f"wrote {len(ds.snapshots)} snapshots to {args.output} "
          f"(preset {args.preset}, seed {seed})")
    return 0


def cmd_calibrate(args) -> int:
    cfg = _load_config(args)
    snaps = _read_input(args.input, cfg, args)
    if len(snaps) < 3:
        raise UsageError(
            f"insufficient snapshots: calibration needs at least 3, got {len(snaps)}")

    singular = []
    for i, snap in enumerate(snaps):
        try:
            compute_line_params(snap, snapshot_index=i)
        except SingularOperatingPoint:
            singular.append((i, snap.timestamp))
    if singular:
        rows = ", ".join(f"data row {i + 1} (timestamp {t})" for i, t in singular)
        raise UsageError(f"singular operating points: {rows}")

    digests = {str(args.input): _sha256(args.input)}
    if args.config:
        digests[str(args.config)] = _sha256(args.config)
    echo = cfg.echo()
    scan_cfg = cfg.scan_config(worker_count=args.workers)
    ems = cfg.ems_mapping()

    try:
        report = calibrate(snaps, ems or None, scan_cfg,
                           flat_scan=args.flat_scan,
                           input_digests=digests, config_echo=echo)
    except NoFeasibleHypothesis as exc:
        write_infeasible_report(args.output, str(exc), echo, digests)
        print(f"no feasible hypothesis: {exc}", file=sys.stderr)
        print(f"diagnostic report written to {args.output}", file=sys.stderr)
        return 4

    write_report(args.output, report)
    print(render_report_text(report), end="")
    for w in report.warnings:
        print(f"warning: {w}")
    # timing is console-only; the report file stays byte-stable across runs
    print(f"scan of {sum(s.candidate_count for s in report.stages)} candidates "
          f"in {report.timing_seconds:.2f} s; report written to {args.output}")
    return 0


def cmd_sensitivity(args) -> int:
    cfg = _load_config(args)
    try:
        levels = [float(tok) for tok in args.levels.split(",") if tok.strip()]
    except ValueError as exc:
        raise UsageError(f"--levels: {exc}") from exc
    if not levels:
        raise UsageError("--levels must name at least one reference-error level")
    spec = ScenarioSpec(line=table8_line(), n_snapshots=args.snapshots,
                        noise_sigma=cfg.get("noise.sigma", 0.0),
                        seed=cfg.get("seed", DEFAULT_SEED))
    ds = generate(spec)
    snaps = list(ds.snapshots)
    H = assemble_H(snaps)

    rows = []
    for level in levels:
        refs = dataclasses.replace(
            spec.line, **{args.axis: getattr(spec.line, args.axis) * (1.0 + level)})
        bv = estimate_biases(snaps, refs, H=H)
        rows.append((level, bv))

    header = f"{'level':>8} " + " ".join(f"{n:>12}" for n in CHANNELS)
    print(f"estimated biases vs {args.axis} reference error "
          "(magnitudes p.u., angles rad)")
    print(header)
    for level, bv in rows:
        print(f"{level:>8.3f} " + " ".join(f"{v:>12.4e}" for v in bv.as_tuple()))
    if args.output:
        lines = ["level," + ",".join(CHANNELS)]
        for level, bv in rows:
            lines.append(",".join(repr(float(v)) for v in (level, *bv.as_tuple())))
        with open(args.output, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
        print(f"sweep table written to {args.output}")
    return 0


def cmd_check_derivatives(args) -> int:
    cfg = _load_config(args)
    if args.input:
        snaps = _read_input(args.input, cfg, args)
    else:
        spec = ScenarioSpec(line=table8_line(), n_snapshots=args.snapshots,
                            noise_sigma=cfg.get("noise.sigma", 0.0),
                            seed=cfg.get("seed", DEFAULT_SEED))
        snaps = list(generate(spec).snapshots)

    worst = 0.0
    for i, snap in enumerate(snaps):
        try:
            res = fd_check(snap)
        except SingularOperatingPoint as exc:
            print(f"error: snapshot {i} is a singular operating point: {exc}",
                  file=sys.stderr)
            return 2
        worst = max(worst, res["max_relative_error"])
        print(f"snapshot {i}: max relative error {res['max_relative_error']:.3e}")

    if os.environ.get(CORRUPT_DERIVATIVE_ENV):
        # fault-injection hook: prove the failure path end to end
        print("fault injection active: corrupting one analytic coefficient")
        worst = max(worst, 1.0)

    print(f"overall max relative error {worst:.3e} (tolerance {DERIV_TOLERANCE:.0e})")
    if worst < DERIV_TOLERANCE:
        print("derivative self-check passed")
        return 0
    print("derivative self-check FAILED", file=sys.stderr)
    return 5


def cmd_apply(args) -> int:
    cfg = _load_config(args)
    doc = read_report(args.report)
    if not doc.get("feasible", True):
        raise UsageError(
            "report records no feasible hypothesis; nothing to apply")
    biases = doc.get("biases", {})
    missing = [n for n in CHANNELS if n not in biases]
    if missing:
        raise UsageError(f"report is missing bias channels: {missing}")
    snaps = _read_input(args.input, cfg, args)
    shim = SimpleNamespace(
        biases=BiasVector(**{n: float(biases[n]) for n in CHANNELS}),
        outlier_channels=tuple(doc.get("outlier_channels", ())))
    corrected = apply_report(snaps, shim)
    provenance = (f"corrected by pmucal apply; report {args.report} "
                  f"(sha256 {_sha256(args.report)[:16]}); source {args.input}")
    write_csv(args.output, corrected, degrees=args.degrees,
              base=_units_base(cfg, args), header_comments=[provenance])
    print(f"wrote {len(corrected)} corrected snapshots to {args.output}")
    return 0


def _add_common(p, config=True, units=True):
    if config:
        p.add_argument("--config", help="key=value configuration file")
    if units:
        p.add_argument("--degrees", action="store_true",
                       help="angles in files are degrees, not radians")
        p.add_argument("--engineering-units", action="store_true",
                       help="file magnitudes are volts/amperes (needs base.* config)")
        p.add_argument("--flip-receiving-current", action="store_true",
                       help="input records load current; negate it on ingestion")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="pmucal",
        description="Detect and correct systematic bias in paired PMU channels "
                    "and recover corrected line impedance parameters.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic measurement CSV")
    p.add_argument("--preset", required=True,
                   help="scenario name, e.g. case1_a..case1_f, case2, case3, "
                        "case4, table1_realistic")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--snapshots", type=int, default=10)
    p.add_argument("--noise-sigma", type=float, default=None)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--with-truth", action="store_true",
                   help="also write <output>.truth.json")
    _add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("calibrate", help="estimate biases and corrected parameters")
    p.add_argument("input", help="measurement CSV")
    p.add_argument("-o", "--output", required=True, help="report JSON path")
    p.add_argument("--flat-scan", action="store_true",
                   help="single-stage lattice at scan.coarse_step (no refine)")
    p.add_argument("--workers", type=int, default=1,
                   help="parallelism hint; never changes results")
    _add_common(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("sensitivity",
                       help="estimated biases vs reference error on one axis")
    p.add_argument("--axis", required=True, choices=("r", "x", "bc"))
    p.add_argument("--levels", default="-0.10,-0.05,0",
                   help="comma-separated fractional reference errors")
    p.add_argument("--snapshots", type=int, default=10)
    p.add_argument("-o", "--output", default=None, help="optional sweep CSV")
    _add_common(p, units=False)
    p.set_defaults(func=cmd_sensitivity)

    p = sub.add_parser("check-derivatives",
                       help="analytic sensitivities vs finite differences")
    p.add_argument("--input", default=None,
                   help="check at measured operating points from this CSV")
    p.add_argument("--snapshots", type=int, default=10)
    _add_common(p)
    p.set_defaults(func=cmd_check_derivatives)

    p = sub.add_parser("apply", help="debias a measurement CSV using a report")
    p.add_argument("input", help="measurement CSV")
    p.add_argument("--report", required=True, help="calibration report JSON")
    p.add_argument("-o", "--output", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_apply)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SingularOperatingPoint as exc:
        where = f" (snapshot {exc.snapshot_index})" \
            if exc.snapshot_index is not None else ""
        print(f"error: {exc}{where}", file=sys.stderr)
        return 2
    except (DomainError, InsufficientSnapshots, GridTooLarge,
            RankDeficient) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NoFeasibleHypothesis as exc:
        print(f"no feasible hypothesis: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    except PmucalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
