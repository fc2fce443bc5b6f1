"""Exception hierarchy.

ManifestError covers I/O and schema problems (CLI exit code 1); everything
derived from SolverError signals a degenerate or unsolvable problem
(CLI exit code 2).
"""


class CalibrationError(Exception):
    """Base class for all package-specific errors."""


class ManifestError(CalibrationError):
    """Capture manifest is missing, malformed, or violates the schema."""


class SolverError(CalibrationError):
    """Base class for solver degeneracies."""


class DegenerateMotionError(SolverError):
    """Capture trajectory lacks the rotational diversity the solver needs."""


class RankDeficientSystemError(SolverError):
    """The stacked scale/translation system is rank-deficient."""


class NonPositiveScaleError(SolverError):
    """Recovered scale factor is zero or negative."""


class NonFiniteCostError(SolverError):
    """Refinement produced a non-finite cost or gradient."""


class DiversityError(SolverError):
    """Synthetic trajectory sampling could not satisfy the diversity bound."""
