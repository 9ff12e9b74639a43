"""Floquet-Liapunov reduction on finite truncations of the C^infinity tower."""

from .errors import (
    AccuracyError,
    ConditioningError,
    FloquetError,
    LevelRangeError,
    NumericError,
    ShapeError,
    UsageError,
    ValidationError,
    VerificationError,
)
from .floquet import (
    FloquetResult,
    MonodromyTower,
    check_constant_reduction,
    check_extension,
    check_monodromy_hom,
    check_Q_periodicity,
    connection_residual,
    floquet_reduce,
    monodromy,
    monodromy_hom,
)
from .linalg import LogBranch, PhiMatrix, compatible_log, exp_tower, matrix_exp, phi_series
from .ode import (
    CoefficientTower,
    SolutionTower,
    TrigPolynomial,
    check_coefficient_periodicity,
    check_projective_consistency,
    eval_coefficient,
    solve_fundamental,
)
from .tower import InvertibleNestedMatrix, NestedMatrix, Tower, is_projective_map, seminorm, truncate

__version__ = "0.1.0"
