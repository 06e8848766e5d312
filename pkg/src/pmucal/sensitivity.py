"""Analytic sensitivities of (R, X, Bc) to the seven measurement channels.

With rebased phasors a = Vs*e^{i th'Vs}, b = Vr*e^{i th'Vr}, c = Is*e^{i th'Is},
d = Ir (reference angle zero), the computed parameters are

    Z = N / D,   N = a^2 - b^2,   D = c*b - d*a
    Y = 2*S / T, S = c + d,       T = a + b

and the columns below are the plain additive partials with respect to the
four magnitudes and three rebased angles, in the fixed channel order. The
design matrix H stacks one 3x7 block per snapshot: rows Re dZ, Im dZ, Im dY.

Derivatives are evaluated at the measured (possibly biased) operating point;
there is no iterative re-linearization. A central finite-difference validator
guards the closed forms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InsufficientSnapshots, SingularOperatingPoint
from .line import DENOM_TOL, MeasurementSnapshot, compute_line_params
from .phasor import CHANNELS


def _operating_point(snap: MeasurementSnapshot):
    """Rebased complex phasors and the raw polar coordinates."""
    mags = (snap.vs.magnitude, snap.vr.magnitude, snap.is_.magnitude, snap.ir.magnitude)
    angs = (snap.th_vs, snap.th_vr, snap.th_is)
    a = mags[0] * np.exp(1j * angs[0])
    b = mags[1] * np.exp(1j * angs[1])
    c = mags[2] * np.exp(1j * angs[2])
    d = complex(mags[3])
    return a, b, c, d, mags, angs


def partials_z(snap: MeasurementSnapshot) -> np.ndarray:
    """Seven complex values dZ/d(Vs, Vr, Is, Ir, th'Vs, th'Vr, th'Is)."""
    a, b, c, d, mags, angs = _operating_point(snap)
    N = a * a - b * b
    D = c * b - d * a
    if abs(D) < DENOM_TOL:
        raise SingularOperatingPoint(
            f"partials undefined: |Is*Vr - Ir*Vs| = {abs(D):.3e}")
    ea = np.exp(1j * angs[0])
    eb = np.exp(1j * angs[1])
    ec = np.exp(1j * angs[2])
    D2 = D * D
    return np.array([
        2.0 * a * ea / D + d * ea * N / D2,           # dZ/dVs
        -2.0 * b * eb / D - c * eb * N / D2,          # dZ/dVr
        -b * ec * N / D2,                             # dZ/dIs
        a * N / D2,                                   # dZ/dIr
        2j * a * a / D + 1j * d * a * N / D2,         # dZ/dth'Vs
        -2j * b * b / D - 1j * c * b * N / D2,        # dZ/dth'Vr
        -1j * c * b * N / D2,                         # dZ/dth'Is
    ])


def partials_y(snap: MeasurementSnapshot) -> np.ndarray:
    """Seven complex values dY/d(channel), same ordering as partials_z."""
    a, b, c, d, mags, angs = _operating_point(snap)
    T = a + b
    if abs(T) < DENOM_TOL:
        raise SingularOperatingPoint(f"partials undefined: |Vs + Vr| = {abs(T):.3e}")
    S = c + d
    ea = np.exp(1j * angs[0])
    eb = np.exp(1j * angs[1])
    ec = np.exp(1j * angs[2])
    T2 = T * T
    return np.array([
        -2.0 * S * ea / T2,          # dY/dVs
        -2.0 * S * eb / T2,          # dY/dVr
        2.0 * ec / T,                # dY/dIs
        2.0 / T + 0j,                # dY/dIr
        -2j * a * S / T2,            # dY/dth'Vs
        -2j * b * S / T2,            # dY/dth'Vr
        2j * c / T,                  # dY/dth'Is
    ])


@dataclass(frozen=True)
class SensitivityBlock:
    """3x7 real coefficient block for one snapshot: rows (R, X, Bc)."""

    matrix: np.ndarray
    timestamp: float

    def __post_init__(self):
        if self.matrix.shape != (3, 7):
            raise ValueError(f"sensitivity block must be 3x7, got {self.matrix.shape}")
        if not np.all(np.isfinite(self.matrix)):
            raise ValueError("sensitivity block contains non-finite entries")


def sensitivity_block(snap: MeasurementSnapshot) -> SensitivityBlock:
    pz = partials_z(snap)
    py = partials_y(snap)
    m = np.vstack([pz.real, pz.imag, py.imag])
    return SensitivityBlock(matrix=m, timestamp=snap.timestamp)


@dataclass(frozen=True)
class DesignMatrix:
    """(3N)x7 stack of per-snapshot sensitivity blocks."""

    matrix: np.ndarray
    n_snapshots: int

    @property
    def cond(self) -> float:
        return float(np.linalg.cond(self.matrix))


COND_WARN_THRESHOLD = 1e10


def assemble_H(snaps: list[MeasurementSnapshot]) -> DesignMatrix:
    if len(snaps) < 3:
        raise InsufficientSnapshots(
            f"need at least 3 snapshots for rank 7 (3*N >= 7), got {len(snaps)}")
    blocks = []
    for i, snap in enumerate(snaps):
        try:
            blocks.append(sensitivity_block(snap).matrix)
        except SingularOperatingPoint as exc:
            raise SingularOperatingPoint(str(exc), snapshot_index=i) from exc
    H = np.vstack(blocks)
    return DesignMatrix(matrix=H, n_snapshots=len(snaps))


def _params_vector(snap: MeasurementSnapshot) -> np.ndarray:
    lp = compute_line_params(snap)
    return np.array([lp.r, lp.x, lp.bc])


def fd_check(snap: MeasurementSnapshot, step: float = 1e-6) -> dict:
    """Central-difference validation of all 21 analytic coefficients.

    Returns per-channel relative errors and the max, keyed for reporting."""
    if not (1e-8 <= step <= 1e-3):
        raise DomainError(f"fd step {step} outside [1e-8, 1e-3]")

    from .phasor import Phasor  # local import to keep module deps one-way

    analytic = sensitivity_block(snap).matrix

    rebased = snap
    if snap.ir.angle != 0.0:
        from .line import rebase_angles
        rebased = rebase_angles(snap)
    mags = [rebased.vs.magnitude, rebased.vr.magnitude,
            rebased.is_.magnitude, rebased.ir.magnitude]
    angs = [rebased.vs.angle, rebased.vr.angle, rebased.is_.angle]

    def make(ms, as_):
        return MeasurementSnapshot(
            vs=Phasor(ms[0], as_[0]), vr=Phasor(ms[1], as_[1]),
            is_=Phasor(ms[2], as_[2]), ir=Phasor(ms[3], 0.0),
            timestamp=rebased.timestamp)

    fd = np.zeros((3, 7))
    for j in range(7):
        if j < 4:
            hi_m = mags.copy(); hi_m[j] += step
            lo_m = mags.copy(); lo_m[j] -= step
            hi = _params_vector(make(hi_m, angs))
            lo = _params_vector(make(lo_m, angs))
        else:
            k = j - 4
            hi_a = angs.copy(); hi_a[k] += step
            lo_a = angs.copy(); lo_a[k] -= step
            hi = _params_vector(make(mags, hi_a))
            lo = _params_vector(make(mags, lo_a))
        fd[:, j] = (hi - lo) / (2.0 * step)

    scale = np.maximum(np.abs(analytic), np.abs(fd))
    scale[scale < 1e-12] = 1.0  # both effectively zero: count as exact
    rel = np.abs(analytic - fd) / scale
    per_channel = {CHANNELS[j]: float(rel[:, j].max()) for j in range(7)}
    return {
        "max_relative_error": float(rel.max()),
        "per_channel": per_channel,
        "step": step,
    }
