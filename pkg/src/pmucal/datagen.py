"""Synthetic scenario generation: reference line, load sweeps, bias injection.

Generation runs the exact two-port model forward from a fixed receiving-end
voltage and a swept load, then converts truth to measurements by subtracting
each channel's bias (the debias step adds it back), and finally adds seeded
Gaussian noise. Per-snapshot draw order is fixed (vs mag, vs ang, vr mag,
vr ang, is mag, is ang, ir mag, ir ang) so datasets are reproducible
bit-for-bit from the seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import DomainError, UsageError
from .line import (LineParams, MeasurementSnapshot, TerminalConditions,
                   forward_simulate)
from .phasor import CHANNELS, BiasError, BiasVector, PerUnitBase, Phasor, bias

# reference transmission line: 500 kV, 150 km, 60 Hz
R_PER_KM_OHM = 0.013333
L_PER_KM_H = 7.4342e-4
C_PER_KM_F = 1.0001e-8
LINE_LENGTH_KM = 150.0
SOURCE_FREQ_HZ = 60.0

DEFAULT_BASE = PerUnitBase(voltage_base=500e3, power_base=1000e6)
DEFAULT_SEED = 1729

PRESET_NAMES = ("case1_a", "case1_b", "case1_c", "case1_d", "case1_e",
                "case1_f", "case2", "case3", "case4", "table1_realistic")

# snapshot noise draw order: raw channel scalars
_DRAW_ORDER = ("vs_mag", "vs_ang", "vr_mag", "vr_ang",
               "is_mag", "is_ang", "ir_mag", "ir_ang")


def table8_line(base: PerUnitBase = DEFAULT_BASE) -> LineParams:
    """Per-unit totals of the reference line on the given base."""
    w = 2.0 * math.pi * SOURCE_FREQ_HZ
    r_ohm = R_PER_KM_OHM * LINE_LENGTH_KM
    x_ohm = w * L_PER_KM_H * LINE_LENGTH_KM
    bc_s = w * C_PER_KM_F * LINE_LENGTH_KM
    zb = base.impedance_base
    return LineParams(r=r_ohm / zb, x=x_ohm / zb, bc=bc_s * zb)


def default_load_profile(n: int) -> tuple:
    """Receiving-end load sweep: magnitudes 0.2 to 1.0 p.u. at -0.1 rad."""
    mags = np.linspace(0.2, 1.0, n)
    return tuple((float(m), -0.1) for m in mags)


@dataclass(frozen=True)
class ScenarioSpec:
    line: LineParams
    n_snapshots: int = 10
    load_profile: tuple | None = None
    injected_biases: Mapping[str, float] = field(default_factory=dict)
    ems_error: Mapping[str, float] = field(default_factory=dict)
    noise_sigma: float = 0.0
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        if self.n_snapshots < 3:
            raise DomainError(
                f"need at least 3 snapshots, got {self.n_snapshots}")
        if self.noise_sigma < 0:
            raise DomainError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        unknown = set(self.injected_biases) - set(CHANNELS)
        if unknown:
            raise DomainError(f"unknown bias channels: {sorted(unknown)}")
        unknown = set(self.ems_error) - {"r", "x", "bc"}
        if unknown:
            raise DomainError(f"unknown reference-error axes: {sorted(unknown)}")
        profile = self.load_profile
        if profile is None:
            profile = default_load_profile(self.n_snapshots)
            object.__setattr__(self, "load_profile", profile)
        else:
            profile = tuple((float(m), float(a)) for m, a in profile)
            object.__setattr__(self, "load_profile", profile)
            if len(profile) != self.n_snapshots:
                raise DomainError(
                    f"load_profile has {len(profile)} points but n_snapshots="
                    f"{self.n_snapshots}")
        mags = [m for m, _ in profile]
        if len(set(mags)) != len(mags):
            raise DomainError("load magnitudes must be distinct for conditioning")

    def bias_vector(self) -> BiasVector:
        return BiasVector(**{name: float(self.injected_biases.get(name, 0.0))
                             for name in CHANNELS})

    def ems_references(self) -> LineParams:
        """References the calibration starts from: truth = ems * (1 + e)."""
        e = self.ems_error
        return LineParams(
            r=self.line.r / (1.0 + e.get("r", 0.0)),
            x=self.line.x / (1.0 + e.get("x", 0.0)),
            bc=self.line.bc / (1.0 + e.get("bc", 0.0)))


@dataclass(frozen=True)
class Dataset:
    snapshots: tuple
    spec: ScenarioSpec

    @property
    def truth_line(self) -> LineParams:
        return self.spec.line

    @property
    def injected(self) -> BiasVector:
        return self.spec.bias_vector()

    @property
    def ems(self) -> LineParams:
        return self.spec.ems_references()


def _measured(truth: Phasor, d_mag: float, d_ang: float, label: str) -> Phasor:
    try:
        return bias(truth, BiasError(d_mag=d_mag, d_ang=d_ang))
    except DomainError as exc:
        raise DomainError(f"bias on channel {label}: {exc}") from exc


def generate(spec: ScenarioSpec) -> Dataset:
    """Forward-simulate the load sweep, inject biases, add seeded noise."""
    b = spec.bias_vector()
    rng = np.random.default_rng(spec.seed)
    vr_true = Phasor(1.0, 0.0)
    snaps = []
    for i, (mag, ang) in enumerate(spec.load_profile):
        # load draws current out of the receiving bus; line convention wants
        # the current into the line
        ir_c = -mag * complex(math.cos(ang), math.sin(ang))
        ir_true = Phasor(abs(ir_c), math.atan2(ir_c.imag, ir_c.real))
        true_snap = forward_simulate(spec.line,
                                     TerminalConditions(vr=vr_true, ir=ir_true),
                                     timestamp=float(i))
        vs = _measured(true_snap.vs, b["dVs"], b["dThVs"], "Vs")
        vr = _measured(true_snap.vr, b["dVr"], b["dThVr"], "Vr")
        is_ = _measured(true_snap.is_, b["dIs"], b["dThIs"], "Is")
        ir = _measured(true_snap.ir, b["dIr"], 0.0, "Ir")
        raw = {"vs_mag": vs.magnitude, "vs_ang": vs.angle,
               "vr_mag": vr.magnitude, "vr_ang": vr.angle,
               "is_mag": is_.magnitude, "is_ang": is_.angle,
               "ir_mag": ir.magnitude, "ir_ang": ir.angle}
        for key in _DRAW_ORDER:
            raw[key] += rng.normal(0.0, spec.noise_sigma)
        try:
            snap = MeasurementSnapshot(
                vs=Phasor(raw["vs_mag"], raw["vs_ang"]),
                vr=Phasor(raw["vr_mag"], raw["vr_ang"]),
                is_=Phasor(raw["is_mag"], raw["is_ang"]),
                ir=Phasor(raw["ir_mag"], raw["ir_ang"]),
                timestamp=float(i))
        except DomainError as exc:
            raise DomainError(f"snapshot {i}: {exc}") from exc
        snaps.append(snap)
    return Dataset(snapshots=tuple(snaps), spec=spec)


def preset(name: str, seed: int = DEFAULT_SEED, noise_sigma: float = 0.0,
           n_snapshots: int = 10, base: PerUnitBase = DEFAULT_BASE) -> ScenarioSpec:
    """Named scenario: bias pattern plus reference errors."""
    line = table8_line(base)
    case1 = {
        "case1_a": {"dIs": 0.01, "dThVr": 0.00175},
        "case1_b": {"dVs": 0.01, "dVr": 0.01, "dThVs": 0.00175},
        "case1_c": {"dVs": 0.01, "dVr": 0.01, "dIs": 0.01, "dThVr": 0.0017},
        "case1_d": {"dVs": 0.01, "dVr": 0.01, "dIs": 0.01,
                    "dThVr": 0.00175, "dThIs": 0.00175},
        "case1_e": {"dVs": 0.01, "dVr": 0.01, "dIs": 0.01, "dIr": 0.01,
                    "dThVr": 0.00175, "dThIs": 0.00175},
        "case1_f": {"dVs": 0.01, "dVr": 0.01, "dIs": 0.01, "dIr": 0.01,
                    "dThVs": 0.0017, "dThVr": 0.0017, "dThIs": 0.0017},
    }
    if name in case1:
        biases, ems_error = case1[name], {}
    elif name == "case2":
        biases, ems_error = {"dIs": 0.01}, {"r": -0.02}
    elif name == "case3":
        biases = {"dVs": 0.01, "dThVr": 0.00175}
        ems_error = {"r": -0.04, "x": -0.06}
    elif name == "case4":
        biases = {"dVs": 0.01, "dThVr": 0.00175}
        ems_error = {"r": -0.02, "x": -0.05, "bc": 0.02}
    elif name == "table1_realistic":
        biases = {"dVs": 0.01366, "dVr": 0.01366, "dIs": 0.01366,
                  "dIr": 0.01366, "dThVs": 0.02568, "dThVr": 0.02568,
                  "dThIs": 0.02568}
        ems_error = {}
    else:
        raise UsageError(
            f"unknown preset {name!r}; choose one of {', '.join(PRESET_NAMES)}")
    return ScenarioSpec(line=line, n_snapshots=n_snapshots,
                        injected_biases=biases, ems_error=ems_error,
                        noise_sigma=noise_sigma, seed=seed)
