"""File formats: measurement CSV, key=value config, JSON report, truth sidecar.

Canonical measurement files are per-unit magnitudes and radian angles; the
degree and engineering-unit variants convert at this boundary only. Floats
are written with shortest round-trip repr so write -> read -> write is a
byte identity on canonical files.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .calibrator import CalibrationReport, ScanConfig
from .cluster import ClusterConfig
from .errors import UsageError
from .line import LineParams, MeasurementSnapshot
from .phasor import CHANNELS, PerUnitBase, Phasor

CSV_HEADER = "timestamp,vs_mag,vs_ang,vr_mag,vr_ang,is_mag,is_ang,ir_mag,ir_ang"

CONFIG_KEYS = (
    "ems.r", "ems.x", "ems.bc",
    "base.voltage_kv", "base.power_mva",
    "scan.alpha", "scan.coarse_step", "scan.refine_step",
    "cluster.min_pts", "cluster.eps_mode", "cluster.membership_bound",
    "noise.sigma", "seed", "flip_receiving_current",
)

REPORT_SCHEMA = "pmucal-report/1"
TRUTH_SCHEMA = "pmucal-truth/1"

_FLOAT_KEYS = {"ems.r", "ems.x", "ems.bc", "base.voltage_kv", "base.power_mva",
               "scan.alpha", "scan.coarse_step", "scan.refine_step",
               "cluster.membership_bound", "noise.sigma"}
_INT_KEYS = {"cluster.min_pts", "seed"}
_BOOL_KEYS = {"flip_receiving_current"}


def _fmt(v: float) -> str:
    return repr(float(v))


# ---------------------------------------------------------------- measurement CSV

def _angle_out(a: float, degrees: bool) -> float:
    return math.degrees(a) if degrees else a


def _angle_in(a: float, degrees: bool) -> float:
    return math.radians(a) if degrees else a


def write_csv(path, snaps: Sequence[MeasurementSnapshot], degrees: bool = False,
              base: PerUnitBase | None = None,
              header_comments: Sequence[str] = ()) -> None:
    vscale = base.voltage_base if base is not None else 1.0
    iscale = base.current_base if base is not None else 1.0
    lines = [f"# {c}" for c in header_comments]
    lines.append(CSV_HEADER)
    for s in snaps:
        row = (s.timestamp,
               s.vs.magnitude * vscale, _angle_out(s.vs.angle, degrees),
               s.vr.magnitude * vscale, _angle_out(s.vr.angle, degrees),
               s.is_.magnitude * iscale, _angle_out(s.is_.angle, degrees),
               s.ir.magnitude * iscale, _angle_out(s.ir.angle, degrees))
        lines.append(",".join(_fmt(v) for v in row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_csv(path, degrees: bool = False, base: PerUnitBase | None = None,
             flip_receiving_current: bool = False) -> list:
    """Parse a measurement file; failures carry 1-based file line numbers."""
    vscale = base.voltage_base if base is not None else 1.0
    iscale = base.current_base if base is not None else 1.0
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = fh.read()
    except OSError:
        raise
    snaps = []
    header_seen = False
    last_t = None
    for lineno, line in enumerate(raw.splitlines(), start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        if not header_seen:
            if text != CSV_HEADER:
                raise UsageError(
                    f"{path}: line {lineno}: expected header {CSV_HEADER!r}, "
                    f"got {text!r}")
            header_seen = True
            continue
        parts = text.split(",")
        if len(parts) != 9:
            raise UsageError(
                f"{path}: line {lineno}: expected 9 columns, got {len(parts)}")
        try:
            vals = [float(p) for p in parts]
        except ValueError as exc:
            raise UsageError(f"{path}: line {lineno}: {exc}") from exc
        t = vals[0]
        if last_t is not None and t <= last_t:
            raise UsageError(
                f"{path}: line {lineno}: timestamps must be strictly "
                f"increasing ({t} after {last_t})")
        last_t = t
        try:
            ir_ang = _angle_in(vals[8], degrees)
            if flip_receiving_current:
                ir_ang += math.pi
            snap = MeasurementSnapshot(
                vs=Phasor(vals[1] / vscale, _angle_in(vals[2], degrees)),
                vr=Phasor(vals[3] / vscale, _angle_in(vals[4], degrees)),
                is_=Phasor(vals[5] / iscale, _angle_in(vals[6], degrees)),
                ir=Phasor(vals[7] / iscale, ir_ang),
                timestamp=t)
        except Exception as exc:
            raise UsageError(f"{path}: line {lineno}: {exc}") from exc
        snaps.append(snap)
    if not header_seen:
        raise UsageError(f"{path}: empty file, header row missing")
    return snaps


# ---------------------------------------------------------------- config

@dataclass(frozen=True)
class Config:
    """Parsed key=value configuration with typed accessors."""

    values: Mapping = field(default_factory=dict)

    def get(self, key, default=None):
        return self.values.get(key, default)

    def ems_mapping(self) -> dict:
        out = {}
        for axis in ("r", "x", "bc"):
            v = self.values.get(f"ems.{axis}")
            if v is not None:
                out[axis] = v
        return out

    def base(self) -> PerUnitBase | None:
        kv = self.values.get("base.voltage_kv")
        mva = self.values.get("base.power_mva")
        if kv is None and mva is None:
            return None
        if kv is None or mva is None:
            raise UsageError(
                "engineering-unit base needs both base.voltage_kv and base.power_mva")
        return PerUnitBase(voltage_base=kv * 1e3, power_base=mva * 1e6)

    def scan_config(self, worker_count: int = 1) -> ScanConfig:
        cluster = ClusterConfig(
            min_pts=self.values.get("cluster.min_pts", 3),
            eps_mode=self.values.get("cluster.eps_mode", "fixed"),
            membership_bound=self.values.get("cluster.membership_bound", 1e-3))
        kwargs = {}
        for key, name in (("scan.alpha", "alpha"),
                          ("scan.coarse_step", "coarse_step"),
                          ("scan.refine_step", "refine_step")):
            if key in self.values:
                kwargs[name] = self.values[key]
        return ScanConfig(cluster=cluster, worker_count=worker_count, **kwargs)

    def echo(self) -> dict:
        return dict(sorted(self.values.items()))


def parse_config_text(text: str, source: str = "<config>") -> Config:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise UsageError(
                f"{source}: line {lineno}: expected key=value, got {stripped!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key not in CONFIG_KEYS:
            raise UsageError(f"{source}: line {lineno}: unknown key {key!r}")
        if key in values:
            raise UsageError(f"{source}: line {lineno}: duplicate key {key!r}")
        try:
            if key in _FLOAT_KEYS:
                values[key] = float(raw)
            elif key in _INT_KEYS:
                values[key] = int(raw)
            elif key in _BOOL_KEYS:
                if raw.lower() not in ("true", "false"):
                    raise ValueError(f"expected true or false, got {raw!r}")
                values[key] = raw.lower() == "true"
            else:
                values[key] = raw
        except ValueError as exc:
            raise UsageError(f"{source}: line {lineno}: {key}: {exc}") from exc
    return Config(values=values)


def read_config(path) -> Config:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read(), source=str(path))


# ---------------------------------------------------------------- report JSON

def write_report(path, report: CalibrationReport) -> None:
    doc = report.to_dict()
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_infeasible_report(path, message: str, config_echo: Mapping,
                            input_digests: Mapping) -> None:
    doc = {
        "schema": REPORT_SCHEMA,
        "feasible": False,
        "error": message,
        "config_echo": dict(config_echo),
        "input_digests": dict(input_digests),
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_report(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    schema = doc.get("schema")
    if schema != REPORT_SCHEMA:
        raise UsageError(
            f"{path}: unsupported report schema {schema!r}, expected {REPORT_SCHEMA!r}")
    return doc


def render_report_text(doc: Mapping) -> str:
    """Human-readable summary: reference errors in percent, biases x 1e-3."""
    if isinstance(doc, CalibrationReport):
        doc = doc.to_dict()
    if not doc.get("feasible", True):
        return ("Calibration found no feasible hypothesis\n"
                f"  {doc.get('error', '')}\n")
    lines = []
    lines.append("Calculated error in impedance references (%)")
    e = doc["ems_error_pct"]
    lines.append(f"  R: {e['r']:+8.3f}   X: {e['x']:+8.3f}   Bc: {e['bc']:+8.3f}")
    lines.append("")
    lines.append("Identified bias errors (x 1e-3; magnitudes p.u., angles rad)")
    outliers = set(doc["outlier_channels"])
    for name in CHANNELS:
        val = doc["biases"][name] * 1e3
        flag = "bias identified" if name in outliers else "no significant bias"
        lines.append(f"  {name:<6} {val:+10.4f}   {flag}")
    lines.append(f"  {'dThIr':<6} {'':>10}   reference, assumed unbiased")
    lines.append("")
    lines.append(f"Cluster size {doc['cluster_size']} of 8, tightness "
                 f"{doc['tightness']:.3e}")
    sel = doc["selected"]
    lines.append(f"Selected parameters: r={sel['r']:.6g} x={sel['x']:.6g} "
                 f"bc={sel['bc']:.6g} (p.u.)")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- truth sidecar

def write_truth(path, dataset) -> None:
    spec = dataset.spec
    doc = {
        "schema": TRUTH_SCHEMA,
        "line": {"r": spec.line.r, "x": spec.line.x, "bc": spec.line.bc},
        "ems": {"r": dataset.ems.r, "x": dataset.ems.x, "bc": dataset.ems.bc},
        "injected_biases": {k: spec.injected_biases[k]
                            for k in sorted(spec.injected_biases)},
        "ems_error": {k: spec.ems_error[k] for k in sorted(spec.ems_error)},
        "noise_sigma": spec.noise_sigma,
        "seed": spec.seed,
        "n_snapshots": spec.n_snapshots,
    }
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_truth(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("schema") != TRUTH_SCHEMA:
        raise UsageError(f"{path}: not a truth sidecar")
    return doc
