"""Exception hierarchy shared across the package."""


class PmucalError(Exception):
    """Base class for all package-specific errors."""


class DomainError(PmucalError):
    """A value left its physical domain (negative magnitude, zero truth phasor)."""


class SingularOperatingPoint(PmucalError):
    """The impedance inversion denominator collapsed for a snapshot."""

    def __init__(self, message, snapshot_index=None):
        super().__init__(message)
        self.snapshot_index = snapshot_index


class InsufficientSnapshots(PmucalError):
    """Fewer snapshots than the rank requirement 3*N >= 7 allows."""


class RankDeficient(PmucalError):
    """Design matrix numerically rank-deficient."""

    def __init__(self, message, rank=None, cond=None):
        super().__init__(message)
        self.rank = rank
        self.cond = cond


class GridTooLarge(PmucalError):
    """Candidate lattice exceeds the configured guard."""

    def __init__(self, message, count=None):
        super().__init__(message)
        self.count = count


class NoFeasibleHypothesis(PmucalError):
    """Every scanned candidate produced a degenerate cluster."""


class UsageError(PmucalError):
    """Bad user input: unknown preset, malformed config, invalid CSV."""
