"""PI-model transmission line: forward simulation and closed-form inversion.

Sign convention: both terminal currents flow into the line, so the load
current at the receiving bus is the negative of Ir. Field data recorded the
other way round must be flipped on ingestion (the CLI has a switch).

Line parameter recovery from one snapshot:

    Z = (Vs^2 - Vr^2) / (Is*Vr - Ir*Vs)        r = Re Z, x = Im Z
    Y = 2*(Is + Ir) / (Vs + Vr)                bc = Im Y

Re Y is a diagnostic only; shunt conductance is fixed zero in the model.
All angle-dependent quantities are invariant under a common rotation of the
four phasors, which is why angles are rebased to the receiving-end current.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .errors import DomainError, SingularOperatingPoint
from .phasor import Phasor, from_complex, normalize_angle, to_complex

DENOM_TOL = 1e-9  # p.u.^2, far below any energized operating point


@dataclass(frozen=True)
class LineParams:
    r: float
    x: float
    bc: float
    g: float = 0.0

    @property
    def z(self) -> complex:
        return complex(self.r, self.x)

    @property
    def y(self) -> complex:
        return complex(self.g, self.bc)

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.r, self.x, self.bc)


def validate_line_params(lp: LineParams) -> LineParams:
    """Physical-range check used at configuration boundaries, not in math paths."""
    if lp.r < 0.0:
        raise DomainError(f"series resistance must be >= 0, got {lp.r}")
    if lp.x == 0.0:
        raise DomainError("series reactance must be nonzero")
    if lp.bc < 0.0:
        raise DomainError(f"shunt susceptance must be >= 0, got {lp.bc}")
    if lp.g != 0.0:
        raise DomainError("shunt conductance is fixed at zero in this model")
    return lp


@dataclass(frozen=True)
class MeasurementSnapshot:
    """One synchronized four-phasor measurement. Angles are stored raw;
    rebased angles (relative to the Ir angle) are derived on demand."""

    vs: Phasor
    vr: Phasor
    is_: Phasor
    ir: Phasor
    timestamp: float = 0.0

    def __post_init__(self):
        for name in ("vs", "vr", "is_", "ir"):
            if getattr(self, name).magnitude <= 0.0:
                raise DomainError(f"snapshot channel {name} has non-positive magnitude")

    @property
    def th_vs(self) -> float:
        return normalize_angle(self.vs.angle - self.ir.angle)

    @property
    def th_vr(self) -> float:
        return normalize_angle(self.vr.angle - self.ir.angle)

    @property
    def th_is(self) -> float:
        return normalize_angle(self.is_.angle - self.ir.angle)


@dataclass(frozen=True)
class TerminalConditions:
    """Receiving-end boundary values; ir uses the into-the-line convention."""

    vr: Phasor
    ir: Phasor

    def __post_init__(self):
        if self.vr.magnitude <= 0.0:
            raise DomainError("receiving-end voltage magnitude must be positive")


def compute_line_params(snap: MeasurementSnapshot, snapshot_index=None) -> LineParams:
    vs = to_complex(snap.vs)
    vr = to_complex(snap.vr)
    is_ = to_complex(snap.is_)
    ir = to_complex(snap.ir)

    denom = is_ * vr - ir * vs
    if abs(denom) < DENOM_TOL:
        raise SingularOperatingPoint(
            f"impedance denominator |Is*Vr - Ir*Vs| = {abs(denom):.3e} below tolerance",
            snapshot_index=snapshot_index)
    vsum = vs + vr
    if abs(vsum) < DENOM_TOL:
        raise SingularOperatingPoint(
            f"voltage sum |Vs + Vr| = {abs(vsum):.3e} below tolerance",
            snapshot_index=snapshot_index)

    z = (vs * vs - vr * vr) / denom
    y = 2.0 * (is_ + ir) / vsum
    return LineParams(r=z.real, x=z.imag, bc=y.imag, g=0.0)


def shunt_conductance_residual(snap: MeasurementSnapshot) -> float:
    """Re Y diagnostic; zero on noiseless model-consistent data."""
    vs = to_complex(snap.vs)
    vr = to_complex(snap.vr)
    y = 2.0 * (to_complex(snap.is_) + to_complex(snap.ir)) / (vs + vr)
    return y.real


def forward_simulate(lp: LineParams, tc: TerminalConditions,
                     timestamp: float = 0.0) -> MeasurementSnapshot:
    z = lp.z
    y = lp.y
    vr = to_complex(tc.vr)
    ir = to_complex(tc.ir)
    vs = vr * (1.0 + z * y / 2.0) - z * ir
    is_ = (y / 2.0) * (vs + vr) - ir
    return MeasurementSnapshot(vs=from_complex(vs), vr=tc.vr,
                               is_=from_complex(is_), ir=tc.ir,
                               timestamp=timestamp)


def rebase_angles(snap: MeasurementSnapshot) -> MeasurementSnapshot:
    """Shift every angle by -angle(Ir) so the reference channel reads zero."""
    shift = snap.ir.angle
    if shift == 0.0:
        return snap
    return replace(
        snap,
        vs=Phasor(snap.vs.magnitude, snap.vs.angle - shift),
        vr=Phasor(snap.vr.magnitude, snap.vr.angle - shift),
        is_=Phasor(snap.is_.magnitude, snap.is_.angle - shift),
        ir=Phasor(snap.ir.magnitude, 0.0),
    )


def nodal_residuals(lp: LineParams, snap: MeasurementSnapshot) -> tuple[float, float]:
    """Magnitudes of the two nodal balance residuals; both ~0 when the
    snapshot is consistent with the parameters."""
    z = lp.z
    y = lp.y
    vs = to_complex(snap.vs)
    vr = to_complex(snap.vr)
    is_ = to_complex(snap.is_)
    ir = to_complex(snap.ir)
    shunt = abs(is_ - vs * y / 2.0 + ir - vr * y / 2.0)
    series = abs(vs - vr - z * (is_ - vs * y / 2.0))
    return (shunt, series)
