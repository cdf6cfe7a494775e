"""Computational potential theory for degenerate Kolmogorov operators.

The operator family is

    L u = t^(2 theta) Lap_{x'} u + <B x, grad u> - du/dt

with a nilpotent block-subdiagonal drift matrix B.  The package certifies
hypoellipticity (four equivalent conditions), evaluates the Gaussian
fundamental solution exactly, solves Dirichlet problems by exact-transition
Monte Carlo with a finite-difference cross-oracle, and runs
boundary-regularity diagnostics (Wiener-type shell sums, shrinking-ball
limits, exterior cones, and polar-point witnesses).
"""

__version__ = "0.1.0"

from .errors import (
    CFLViolation,
    EpsilonSearchFailed,
    InconsistencyError,
    KolmoError,
    NotBoundaryPoint,
    OrderError,
    RankError,
    ShapeError,
    SingularGramian,
    StartOutsideDomain,
    VertexTimeNotZero,
)
from .geometry import (
    Ball,
    Box,
    Complement,
    Domain,
    HalfSpace,
    Intersection,
    KolmogorovCylinder,
    LCone,
    PointSet,
    ShellFamily,
    SpatialBall,
    SpatialBox,
    Union,
    domain_from_dict,
    domain_to_dict,
)
from .gridsolver import Grid, fd_solve, reduit_relaxation
from .kernel import (
    DilationGroup,
    KernelEngine,
    SpaceTimePoint,
    apply_operator_fd,
    homogeneity_residual,
)
from .operator import (
    HypoellipticityCertificate,
    OperatorSpec,
    VectorField,
    bracket_rank_at,
    certify,
    gramian_min_eig,
    invariant_subspace_dim,
    kalman_rank,
    validate_structure,
)
from .regularity import (
    PolarWitness,
    RegularityReport,
    ball_limit_test,
    classify,
    cone_test,
    polar_witness,
    wiener_diagnostic,
)
from .walk import WalkConfig, WalkEstimate, hitting_probability, pwb_estimate, step_backward

__all__ = [name for name in dir() if not name.startswith("_")]
