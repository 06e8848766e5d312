"""Phasor values, per-unit bases, and the additive bias-error model.

A measurement channel reports magnitude and angle. A systematic bias shifts
both: true = measured + bias, applied additively in per-unit on the magnitude
and in radians on the angle. ``debias`` recovers the true phasor from a
measured one; ``bias`` is its exact inverse.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

from .errors import DomainError

# channel order is fixed everywhere: four magnitudes then three relative angles
CHANNELS = ("dVs", "dVr", "dIs", "dIr", "dThVs", "dThVr", "dThIs")

MAG_CEILING_DEFAULT = 0.05   # p.u.
ANG_CEILING_DEFAULT = 0.05   # rad


def normalize_angle(a: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    a = math.fmod(a, 2.0 * math.pi)
    if a > math.pi:
        a -= 2.0 * math.pi
    elif a <= -math.pi:
        a += 2.0 * math.pi
    return a


@dataclass(frozen=True)
class Phasor:
    magnitude: float
    angle: float

    def __post_init__(self):
        if not math.isfinite(self.magnitude) or self.magnitude < 0.0:
            raise DomainError(f"phasor magnitude must be finite and >= 0, got {self.magnitude}")
        object.__setattr__(self, "angle", normalize_angle(self.angle))


def to_rectangular(p: Phasor) -> tuple[float, float]:
    return (p.magnitude * math.cos(p.angle), p.magnitude * math.sin(p.angle))


def to_complex(p: Phasor) -> complex:
    return complex(p.magnitude * math.cos(p.angle), p.magnitude * math.sin(p.angle))


def from_complex(c: complex) -> Phasor:
    return Phasor(abs(c), cmath.phase(c))


@dataclass(frozen=True)
class PerUnitBase:
    """Line-to-line voltage base (V) and three-phase power base (VA)."""

    voltage_base: float
    power_base: float

    def __post_init__(self):
        if self.voltage_base <= 0.0 or self.power_base <= 0.0:
            raise DomainError("per-unit bases must be strictly positive")

    @property
    def impedance_base(self) -> float:
        return self.voltage_base ** 2 / self.power_base

    @property
    def current_base(self) -> float:
        return self.power_base / (math.sqrt(3.0) * self.voltage_base)


@dataclass(frozen=True)
class BiasError:
    """Additive channel bias: d_mag in p.u., d_ang in radians."""

    d_mag: float = 0.0
    d_ang: float = 0.0
    mag_ceiling: float = MAG_CEILING_DEFAULT
    ang_ceiling: float = ANG_CEILING_DEFAULT

    def __post_init__(self):
        if abs(self.d_mag) > self.mag_ceiling:
            raise DomainError(
                f"magnitude bias {self.d_mag} exceeds plausibility ceiling {self.mag_ceiling}")
        if abs(self.d_ang) > self.ang_ceiling:
            raise DomainError(
                f"angle bias {self.d_ang} exceeds plausibility ceiling {self.ang_ceiling}")


@dataclass(frozen=True)
class BiasVector:
    """The seven estimable channel biases; the receiving-end current angle is
    the phase reference and has no entry."""

    dVs: float = 0.0
    dVr: float = 0.0
    dIs: float = 0.0
    dIr: float = 0.0
    dThVs: float = 0.0
    dThVr: float = 0.0
    dThIs: float = 0.0

    def as_tuple(self) -> tuple[float, ...]:
        return (self.dVs, self.dVr, self.dIs, self.dIr,
                self.dThVs, self.dThVr, self.dThIs)

    @classmethod
    def from_sequence(cls, seq) -> "BiasVector":
        vals = list(seq)
        if len(vals) != 7:
            raise DomainError(f"bias vector needs exactly 7 components, got {len(vals)}")
        return cls(*(float(v) for v in vals))

    def __getitem__(self, name: str) -> float:
        if name not in CHANNELS:
            raise KeyError(name)
        return getattr(self, name)


def debias(measured: Phasor, e: BiasError) -> Phasor:
    """True phasor from a measured one: add the bias back."""
    mag = measured.magnitude + e.d_mag
    if mag < 0.0:
        raise DomainError(
            f"bias magnitude {e.d_mag} exceeds measurement {measured.magnitude}")
    return Phasor(mag, measured.angle + e.d_ang)


def bias(truth: Phasor, e: BiasError) -> Phasor:
    """Measured phasor from a true one; exact inverse of debias."""
    mag = truth.magnitude - e.d_mag
    if mag < 0.0:
        raise DomainError(
            f"bias magnitude {e.d_mag} exceeds true magnitude {truth.magnitude}")
    return Phasor(mag, truth.angle - e.d_ang)


def tve(measured: Phasor, truth: Phasor) -> float:
    """Total vector error, relative to the true phasor."""
    if truth.magnitude == 0.0:
        raise DomainError("TVE undefined for a zero truth phasor")
    return abs(to_complex(measured) - to_complex(truth)) / truth.magnitude
