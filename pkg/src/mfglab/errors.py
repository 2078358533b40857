"""Exception taxonomy shared across the package.

Numerical failures (singular operators, stalled iterations) are kept apart
from caller mistakes (bad parameters, violated preconditions) so the CLI can
map them to distinct exit codes.
"""


class MfgLabError(Exception):
    """Base class for all package errors."""


class ParameterError(MfgLabError, ValueError):
    """A precondition on user-supplied parameters is violated."""


class SingularOperator(MfgLabError):
    """Sparse factorization detected (near-)rank deficiency.

    Numerically this is the situation where 0 is a Dirichlet eigenvalue of
    the screened operator; the offending pivot ratio is in the message.
    """


class NonConvergence(MfgLabError):
    """An iteration exhausted its budget without meeting its tolerance."""


class SupportViolation(ParameterError):
    """Boundary data is nonzero outside the admissible input region."""


class PositivityViolation(MfgLabError):
    """An evaluation point has a boundary datum that is not positive."""


class PositivityFloor(MfgLabError):
    """A pointwise division is unsafe: the denominator dips below the floor."""


class FrequencyUnresolved(ParameterError):
    """Requested extraction frequency would alias on the current grid."""


class RankDeficient(MfgLabError):
    """Regularized normal equations are numerically singular."""


class AmplitudeInvalid(ParameterError):
    """CGO amplitude does not satisfy the transport condition."""
