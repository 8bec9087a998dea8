"""
Exception hierarchy.

Every error carries the exit code the command line reports for it:
2 for bad input, 3 for requests outside the mathematical domain or
numerical failures. Verification failures are verdicts, not exceptions.
"""


class PerplabError(Exception):
    exit_code: int = 1


# ============== Input ==============

class InputError(PerplabError):
    """Malformed law file or command-line value."""
    exit_code = 2


class BudgetExceededError(PerplabError):
    """Exact enumeration would exceed its path budget."""
    exit_code = 2


# ============== Domain ==============

class DomainError(PerplabError):
    exit_code = 3


class DomainViolationError(DomainError):
    """Negative entry where a nonnegative vector or matrix is required."""


class DegenerateActionError(DomainError):
    """Projective action undefined because Mx = 0."""


class OutsideRegimeError(DomainError):
    """Parameters outside the hypotheses of the asymptotic being evaluated."""


class NoPositiveRootError(DomainError):
    """Lambda has no sign change on the searched bracket."""


class MomentRangeError(DomainError):
    """s beyond the moment range the law declares finite."""


# ============== Numerical ==============

class NumericalError(PerplabError):
    exit_code = 3


class SpectralConvergenceError(NumericalError):
    """Power iteration did not converge within max_iter."""


class SpectralMismatchError(NumericalError):
    """Primal and conjugate eigenvalues disagree."""


class NonConvexityError(NumericalError):
    """Negative second derivative of Lambda beyond tolerance."""


class InterpolationError(NumericalError):
    """A direction could not be located on the simplex grid."""
