"""Bias detection and correction for paired PMU channels across a
transmission line, with corrected line impedance recovery."""

from .calibrator import (CalibrationReport, Candidate, ScanConfig,
                         apply_report, build_grid, calibrate, scan)
from .cluster import (ClusterConfig, ClusterOutcome, dbscan, score_candidates,
                      zero_seeded_cluster)
from .datagen import (Dataset, ScenarioSpec, default_load_profile, generate,
                      preset, table8_line)
from .errors import (DomainError, GridTooLarge, InsufficientSnapshots,
                     NoFeasibleHypothesis, PmucalError, RankDeficient,
                     SingularOperatingPoint, UsageError)
from .estimator import (LseFactorization, build_residuals,
                        computed_params_stack, estimate_biases, solve_lse,
                        solve_lse_multi)
from .line import (LineParams, MeasurementSnapshot, TerminalConditions,
                   compute_line_params, forward_simulate, nodal_residuals,
                   rebase_angles, shunt_conductance_residual,
                   validate_line_params)
from .phasor import (CHANNELS, BiasError, BiasVector, PerUnitBase, Phasor,
                     bias, debias, from_complex, normalize_angle, to_complex,
                     to_rectangular, tve)
from .sensitivity import (DesignMatrix, SensitivityBlock, assemble_H,
                          fd_check, partials_y, partials_z, sensitivity_block)

__version__ = "0.1.0"

__all__ = [
    "CHANNELS", "BiasError", "BiasVector", "CalibrationReport",
    "Candidate", "ClusterConfig", "ClusterOutcome", "Dataset",
    "DesignMatrix", "DomainError", "GridTooLarge", "InsufficientSnapshots",
    "LineParams", "LseFactorization", "MeasurementSnapshot",
    "NoFeasibleHypothesis", "PerUnitBase", "Phasor", "PmucalError",
    "RankDeficient", "ScanConfig", "ScenarioSpec", "SensitivityBlock",
    "SingularOperatingPoint", "TerminalConditions", "UsageError",
    "apply_report", "assemble_H", "bias", "build_grid", "build_residuals",
    "calibrate", "compute_line_params", "computed_params_stack", "dbscan",
    "debias", "default_load_profile", "estimate_biases", "fd_check",
    "forward_simulate", "from_complex", "generate", "nodal_residuals",
    "normalize_angle", "partials_y", "partials_z", "preset", "rebase_angles",
    "scan", "score_candidates", "sensitivity_block",
    "shunt_conductance_residual", "solve_lse", "solve_lse_multi",
    "table8_line", "to_complex", "to_rectangular", "tve",
    "validate_line_params", "zero_seeded_cluster",
]
