"""Block-structured degenerate Kolmogorov operators and hypoellipticity checks.

The operator acts on functions of ``(x, t)`` in R^(N+1) as

    L u = t^(2*theta) * sum_{i<=m} d^2u/dx_i^2  +  <B x, grad_x u>  -  du/dt

where ``B`` is a nilpotent block-subdiagonal matrix.  Hypoellipticity of L
is equivalent to each of four computable conditions (Hormander bracket
condition, absence of invariant subspaces in Ker A, positivity of a
controllability Gramian, Kalman rank condition); this module certifies a
given operator by running all four.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import InconsistencyError, OrderError, RankError, ShapeError

__all__ = [
    "OperatorSpec",
    "VectorField",
    "HypoellipticityCertificate",
    "validate_structure",
    "kalman_rank",
    "invariant_subspace_dim",
    "gramian_min_eig",
    "bracket_rank_at",
    "certify",
]

#: Relative singular-value threshold for numerical rank decisions.
RANK_TOL = 1e-10


@dataclass(frozen=True)
class OperatorSpec:
    """Validated description of one operator.

    Attributes
    ----------
    theta : int
        Exponent of the time weight ``t^(2*theta)``; non-negative.
    block_dims : tuple of int
        Sizes ``m_0 >= m_1 >= ... >= m_kappa >= 1`` of the coordinate blocks.
    B : ndarray
        N x N drift matrix with the block-subdiagonal pattern.
    rank_marginal : bool
        True when some block's numerical rank decision fell within a factor
        10 of the threshold (float inputs only); carried into certificates.
    """

    theta: int
    block_dims: tuple[int, ...]
    B: np.ndarray
    rank_marginal: bool = field(default=False, compare=False)

    @property
    def N(self) -> int:
        return int(sum(self.block_dims))

    @property
    def kappa(self) -> int:
        return len(self.block_dims) - 1

    @property
    def m(self) -> int:
        return int(self.block_dims[0])

    @property
    def A(self) -> np.ndarray:
        """Projection onto the first m coordinates, diag(I_m, 0)."""
        a = np.zeros((self.N, self.N))
        a[: self.m, : self.m] = np.eye(self.m)
        return a

    def block_slices(self) -> list[slice]:
        """Index ranges of the coordinate blocks, in order."""
        out, start = [], 0
        for d in self.block_dims:
            out.append(slice(start, start + d))
            start += d
        return out


def _is_integer_matrix(M: np.ndarray) -> bool:
    return bool(np.all(M == np.round(M)) and np.all(np.abs(M) < 2**52))


def _exact_rank(rows) -> int:
    """Rank of a matrix with Fraction entries by Gaussian elimination."""
    mat = [list(r) for r in rows]
    nrow = len(mat)
    ncol = len(mat[0]) if nrow else 0
    rank, prow = 0, 0
    for col in range(ncol):
        piv = next((r for r in range(prow, nrow) if mat[r][col] != 0), None)
        if piv is None:
            continue
        mat[prow], mat[piv] = mat[piv], mat[prow]
        inv = mat[prow][col]
        for r in range(prow + 1, nrow):
            if mat[r][col] != 0:
                f = mat[r][col] / inv
                for c in range(col, ncol):
                    mat[r][c] -= f * mat[prow][c]
        rank += 1
        prow += 1
        if prow == nrow:
            break
    return rank


def _matrix_rank(M: np.ndarray, rank_tol: float = RANK_TOL) -> tuple[int, bool]:
    """Rank of a float matrix; returns (rank, near_threshold_flag).

    Integer-valued inputs are decided exactly; otherwise the rank is the
    number of singular values above ``rank_tol * sigma_max``, flagged when
    any singular value lies within a factor 10 of that threshold.
    """
    if M.size == 0:
        return 0, False
    if _is_integer_matrix(M):
        rows = [[Fraction(int(v)) for v in row] for row in np.round(M).astype(object)]
        return _exact_rank(rows), False
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] == 0.0:
        return 0, False
    thresh = rank_tol * s[0]
    marginal = bool(np.any((s > thresh / 10) & (s < thresh * 10)))
    return int(np.sum(s > thresh)), marginal


def validate_structure(theta, block_dims, B, rank_tol: float = RANK_TOL,
                       enforce_block_ranks: bool = True) -> OperatorSpec:
    """Validate block data and return an :class:`OperatorSpec`.

    Parameters
    ----------
    theta : int
        Non-negative time-weight exponent.
    block_dims : sequence of int
        Block sizes, non-increasing, all positive.
    B : array_like
        N x N drift matrix; every entry outside the sub-diagonal blocks
        must be exactly zero.
    rank_tol : float
        Relative singular-value threshold for float-valued blocks.
    enforce_block_ranks : bool
        When False, skip the full-rank requirement on the blocks.  Used to
        build diagnostic specs for matrices of valid shape that violate the
        rank hypothesis; `certify` then reports a negative verdict.

    Raises
    ------
    ShapeError
        Dimensions invalid or a nonzero entry off the block pattern.
    RankError
        Some block ``B_j`` has rank below ``m_j``.
    """
    theta = int(theta)
    if theta < 0:
        raise ShapeError("theta must be a non-negative integer")
    dims = tuple(int(d) for d in block_dims)
    if not dims or any(d <= 0 for d in dims):
        raise ShapeError("block_dims must be non-empty and positive")
    if any(dims[j] > dims[j - 1] for j in range(1, len(dims))):
        raise ShapeError("block_dims must be non-increasing: %s" % (dims,))
    N = sum(dims)
    B = np.asarray(B, dtype=float)
    if B.shape != (N, N):
        raise ShapeError("B must be %dx%d, got %s" % (N, N, B.shape))

    spec = OperatorSpec(theta, dims, B)
    sl = spec.block_slices()
    pattern = np.zeros((N, N), dtype=bool)
    for j in range(1, len(dims)):
        pattern[sl[j], sl[j - 1]] = True
    if np.any(B[~pattern] != 0.0):
        bad = np.argwhere((B != 0.0) & ~pattern)[0]
        raise ShapeError("nonzero entry B[%d,%d] off the block pattern" % tuple(bad))

    marginal = False
    for j in range(1, len(dims)):
        blk = B[sl[j], sl[j - 1]]
        rank, near = _matrix_rank(blk, rank_tol)
        marginal = marginal or near
        if enforce_block_ranks and rank < dims[j]:
            raise RankError("block %d has rank %d < %d" % (j, rank, dims[j]))

    B = B.copy()
    B.setflags(write=False)
    return OperatorSpec(theta, dims, B, rank_marginal=marginal)


def kalman_rank(spec: OperatorSpec) -> int:
    """Rank of the controllability matrix [A, BA, ..., B^(N-1) A]."""
    A, B = spec.A, spec.B
    blocks, cur = [], A
    for _ in range(spec.N):
        blocks.append(cur)
        cur = B @ cur
    K = np.hstack(blocks)
    return _matrix_rank(K, RANK_TOL)[0]


def invariant_subspace_dim(spec: OperatorSpec) -> int:
    """Dimension of the largest B^T-invariant subspace of Ker(A).

    Computed as dim of the intersection of Ker(A (B^T)^k) over
    k = 0 .. N-1; the operator is hypoelliptic iff this is zero.
    """
    A, Bt = spec.A, spec.B.T
    rows, cur = [], np.eye(spec.N)
    for _ in range(spec.N):
        rows.append(A @ cur)
        cur = Bt @ cur
    S = np.vstack(rows)
    return spec.N - _matrix_rank(S, RANK_TOL)[0]


def gramian_min_eig(spec: OperatorSpec, tau: float, t: float) -> float:
    """Smallest eigenvalue of the controllability Gramian C(tau, t).

    Positive for every t > tau exactly when the operator is hypoelliptic,
    including intervals straddling t = 0 where the diffusion coefficient
    vanishes.
    """
    if not t > tau:
        raise OrderError("need t > tau, got tau=%g t=%g" % (tau, t))
    from .kernel import KernelEngine

    C = KernelEngine(spec).gramian(tau, t)
    return float(np.linalg.eigvalsh(C)[0])


# ---------------------------------------------------------------------------
# Exact Lie-bracket calculus
# ---------------------------------------------------------------------------
#
# Coefficients are stored as 2-D object arrays of Fractions with shape
# (degree+1, N+1): entry [d, 0] is the coefficient of t^d and entry
# [d, 1+l] the coefficient of t^d * x_l.  This covers every field arising
# from the generators and their iterated brackets; products that would
# leave the class (affine x affine) raise.


def _pa_zero(N: int):
    return np.zeros((1, N + 1), dtype=object)


def _pa_trim(c):
    deg = c.shape[0] - 1
    while deg > 0 and not np.any(c[deg] != 0):
        deg -= 1
    return c[: deg + 1]


def _pa_add(a, b):
    D = max(a.shape[0], b.shape[0])
    out = np.zeros((D, a.shape[1]), dtype=object)
    out[: a.shape[0]] += a
    out[: b.shape[0]] += b
    return _pa_trim(out)


def _pa_scale(a, s: Fraction):
    return a * s


def _pa_dt(a):
    """d/dt of a coefficient array."""
    if a.shape[0] == 1:
        return _pa_zero(a.shape[1] - 1)
    D = a.shape[0]
    out = np.zeros((D - 1, a.shape[1]), dtype=object)
    for d in range(1, D):
        out[d - 1] = a[d] * d
    return _pa_trim(out)


def _pa_dx(a, l: int):
    """d/dx_l of a coefficient array (a t-polynomial, x-free result)."""
    out = np.zeros((a.shape[0], a.shape[1]), dtype=object)
    out[:, 0] = a[:, 1 + l]
    return _pa_trim(out)


def _pa_mul(a, b):
    """Product; at most one factor may depend on x."""
    a_aff = np.any(a[:, 1:] != 0)
    b_aff = np.any(b[:, 1:] != 0)
    if a_aff and b_aff:
        raise NotImplementedError("product of two x-dependent coefficients")
    if a_aff:
        a, b = b, a
    Da, Db = a.shape[0], b.shape[0]
    out = np.zeros((Da + Db - 1, a.shape[1]), dtype=object)
    for d in range(Da):
        if a[d, 0] != 0:
            out[d : d + Db] += b * a[d, 0]
    return _pa_trim(out)


def _pa_eval(a, x, t: Fraction) -> Fraction:
    val = Fraction(0)
    tp = Fraction(1)
    for d in range(a.shape[0]):
        row = a[d, 0] + sum(a[d, 1 + l] * x[l] for l in range(len(x)) if a[d, 1 + l] != 0)
        val += tp * row
        tp *= t
    return val


@dataclass(frozen=True)
class VectorField:
    """First-order differential operator with polynomial-in-t, affine-in-x
    coefficients.

    ``coefficients[i]`` multiplies d/dx_i for i < N and d/dt for i = N.
    """

    N: int
    coefficients: tuple

    @classmethod
    def zero(cls, N: int) -> "VectorField":
        return cls(N, tuple(_pa_zero(N) for _ in range(N + 1)))

    def bracket(self, other: "VectorField") -> "VectorField":
        """Commutator [self, other] = self other - other self."""
        W, Z = self.coefficients, other.coefficients
        N = self.N
        out = []
        for i in range(N + 1):
            acc = _pa_zero(N)
            for j in range(N):
                acc = _pa_add(acc, _pa_mul(W[j], _pa_dx(Z[i], j)))
                acc = _pa_add(acc, _pa_scale(_pa_mul(Z[j], _pa_dx(W[i], j)), Fraction(-1)))
            acc = _pa_add(acc, _pa_mul(W[N], _pa_dt(Z[i])))
            acc = _pa_add(acc, _pa_scale(_pa_mul(Z[N], _pa_dt(W[i])), Fraction(-1)))
            out.append(acc)
        return VectorField(N, tuple(out))

    def evaluate(self, x, t) -> list:
        """Coefficient vector at (x, t) as exact Fractions."""
        xf = [Fraction(v) for v in x]
        tf = Fraction(t)
        return [_pa_eval(c, xf, tf) for c in self.coefficients]

    def max_poly_degree(self) -> int:
        return max(c.shape[0] - 1 for c in self.coefficients)


def _generators(spec: OperatorSpec) -> tuple[list[VectorField], VectorField]:
    """The fields X_j = t^theta d/dx_j (j <= m) and Y = <Bx, grad> - d/dt."""
    N, theta = spec.N, spec.theta
    BF = [[Fraction(v) for v in row] for row in spec.B.tolist()]
    xs = []
    for j in range(spec.m):
        coeffs = []
        for i in range(N + 1):
            c = np.zeros((theta + 1, N + 1), dtype=object)
            if i == j:
                c[theta, 0] = Fraction(1)
            coeffs.append(_pa_trim(c))
        xs.append(VectorField(N, tuple(coeffs)))
    ycoeffs = []
    for i in range(N):
        c = np.zeros((1, N + 1), dtype=object)
        for l in range(N):
            c[0, 1 + l] = BF[i][l]
        ycoeffs.append(c)
    ct = np.zeros((1, N + 1), dtype=object)
    ct[0, 0] = Fraction(-1)
    ycoeffs.append(ct)
    return xs, VectorField(N, tuple(ycoeffs))


def bracket_fields(spec: OperatorSpec) -> list[VectorField]:
    """Generators plus iterated brackets X_j^k = [X_j^(k-1), Y], k <= kappa+theta."""
    xs, Y = _generators(spec)
    fields = [Y]
    level = xs
    fields.extend(level)
    for _ in range(spec.kappa + spec.theta):
        level = [f.bracket(Y) for f in level]
        fields.extend(level)
    return fields


def bracket_rank_at(spec: OperatorSpec, z) -> int:
    """Rank at z = (x, t) of the generators and their iterated brackets.

    The bracket calculus is exact (Fraction arithmetic), so the returned
    rank carries no floating-point tolerance.  Equals N+1 everywhere,
    including the totally degenerate slice t = 0, iff the operator is
    hypoelliptic.
    """
    x, t = z
    rows = [f.evaluate(x, t) for f in bracket_fields(spec)]
    return _exact_rank(rows)


@dataclass(frozen=True)
class HypoellipticityCertificate:
    """Outcome of the four equivalent hypoellipticity checks."""

    verdict: bool
    kalman_rank: int
    invariant_subspace_dim: int
    gramian_min_eigenvalues: tuple  # of (tau, t, lambda_min)
    bracket_ranks: tuple  # of (z, rank)
    conditions: dict  # name -> bool
    rank_marginal: bool = False

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "kalman_rank": self.kalman_rank,
            "invariant_subspace_dim": self.invariant_subspace_dim,
            "gramian_min_eigenvalues": [
                {"tau": a, "t": b, "lambda_min": c}
                for a, b, c in self.gramian_min_eigenvalues
            ],
            "bracket_ranks": [
                {"x": list(map(float, x)), "t": float(t), "rank": r}
                for (x, t), r in self.bracket_ranks
            ],
            "conditions": dict(self.conditions),
            "rank_marginal": self.rank_marginal,
        }


DEFAULT_INTERVALS = ((-1.0, 1.0), (0.0, 1.0), (-1.0, -0.5), (0.5, 1.0))
DEFAULT_TIMES = (-1.0, 0.0, 1.0)


def _default_points(spec: OperatorSpec, radius: float):
    pts = []
    for i, t in enumerate(DEFAULT_TIMES):
        x = np.zeros(spec.N)
        if spec.N:
            x[i % spec.N] = 0.5 * radius * (i + 1)
        pts.append((tuple(x), t * radius))
    return pts


def certify(spec: OperatorSpec, sample_points=None, sample_intervals=None,
            radius: float = 1.0) -> HypoellipticityCertificate:
    """Run all four hypoellipticity checks and cross-validate them.

    Conditions ii) (invariant subspaces) and iv) (Kalman rank) are exact
    algebra and act as ground truth; the bracket condition i) and Gramian
    positivity iii) are sampled at finitely many points / time intervals
    as consistency probes.

    Raises
    ------
    InconsistencyError
        If the exact checks disagree with each other or a sampled check
        contradicts them beyond tolerance.  Never a valid outcome.
    """
    if sample_intervals is None:
        sample_intervals = [(a * radius, b * radius) for a, b in DEFAULT_INTERVALS]
    if sample_points is None:
        sample_points = _default_points(spec, radius)
    if not sample_points or not sample_intervals:
        raise ValueError("sample sets must be non-empty")
    times = [t for _, t in sample_points]
    if not any(t == 0 for t in times) or not any(t != 0 for t in times):
        raise ValueError("sample_points must include t = 0 and t != 0")

    kr = kalman_rank(spec)
    vdim = invariant_subspace_dim(spec)
    cond_iv = kr == spec.N
    cond_ii = vdim == 0
    if cond_ii != cond_iv:
        raise InconsistencyError(
            "exact checks disagree: kalman_rank=%d, invariant dim=%d" % (kr, vdim)
        )

    gram = []
    for tau, t in sample_intervals:
        if not t > tau:
            raise OrderError("interval (%g, %g) needs t > tau" % (tau, t))
        gram.append((tau, t, gramian_min_eig(spec, tau, t)))
    scale = max(abs(lam) for _, _, lam in gram) or 1.0
    cond_iii = all(lam > 1e-10 * max(1.0, scale) for _, _, lam in gram)

    branks = [(z, bracket_rank_at(spec, z)) for z in sample_points]
    cond_i = all(r == spec.N + 1 for _, r in branks)

    if cond_i != cond_ii:
        raise InconsistencyError("bracket check contradicts exact algebra")
    if cond_iii != cond_ii:
        raise InconsistencyError("Gramian check contradicts exact algebra")

    verdict = cond_i and cond_ii and cond_iii and cond_iv
    return HypoellipticityCertificate(
        verdict=verdict,
        kalman_rank=kr,
        invariant_subspace_dim=vdim,
        gramian_min_eigenvalues=tuple(gram),
        bracket_ranks=tuple(branks),
        conditions={
            "hormander_brackets": cond_i,
            "no_invariant_subspace": cond_ii,
            "gramian_positive": cond_iii,
            "kalman_rank": cond_iv,
        },
        rank_marginal=spec.rank_marginal,
    )
