"""Exception types shared across the package."""


class KolmoError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(KolmoError, ValueError):
    """Coefficient matrix violates the required block-subdiagonal pattern."""


class RankError(KolmoError, ValueError):
    """Some coupling block has rank below its row count."""


class OrderError(KolmoError, ValueError):
    """A time pair (tau, t) was passed with t <= tau where t > tau is required."""


class InconsistencyError(KolmoError, RuntimeError):
    """The four hypoellipticity checks disagree; signals an implementation bug."""


class SingularGramian(KolmoError, ArithmeticError):
    """Covariance factorization failed for t > tau."""


class StartOutsideDomain(KolmoError, ValueError):
    """Walk started at a point not inside the domain."""


class CFLViolation(KolmoError, ValueError):
    """Explicit time step too large for the grid spacing."""


class NotBoundaryPoint(KolmoError, ValueError):
    """Regularity diagnostics require a point on the boundary of the domain."""


class VertexTimeNotZero(KolmoError, ValueError):
    """Cone constructions require the vertex time to be exactly zero."""


class EpsilonSearchFailed(KolmoError, RuntimeError):
    """Pole-sequence search could not reach the required kernel level."""
