"""Fundamental solution machinery: exp(-sB), Gramians, Gamma, group law,
intrinsic dilations.

Everything is evaluated from exact polynomial forms.  B is nilpotent of
order kappa+1, so exp(-sB) is a matrix polynomial in s and both Gramian
families have closed-form entries:

* the controllability Gramian  C(tau, t) = int_tau^t s^(2 theta)
  E(s) A E(s)^T ds, whose positivity for t > tau certifies
  hypoellipticity and which is non-decreasing in t as a quadratic form;

* the transition Gramian Ct(tau, t) = int_tau^t s^(2 theta)
  E(t-s) A E(t-s)^T ds, which is the (half) covariance of the Gaussian
  fundamental solution.  It satisfies the flow composition law
  Ct(tau, t) = Ct(s, t) + E(t-s) Ct(tau, s) E(t-s)^T, which makes the
  Chapman-Kolmogorov identity exact.

For B = 0 the two families coincide; they also coincide with the
translation-invariant classical form when theta = 0 and tau = 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.linalg import solve_triangular

from .errors import SingularGramian
from .operator import OperatorSpec

__all__ = [
    "SpaceTimePoint",
    "KernelEngine",
    "DilationGroup",
    "apply_operator_fd",
    "homogeneity_residual",
]

LOG_4PI = math.log(4.0 * math.pi)


class SpaceTimePoint(NamedTuple):
    """A point z = (x, t) in R^(N+1)."""

    x: np.ndarray
    t: float


def _as_point(z, N: int) -> SpaceTimePoint:
    if isinstance(z, SpaceTimePoint):
        x, t = z
    else:
        x, t = z
    x = np.asarray(x, dtype=float).reshape(N)
    return SpaceTimePoint(x, float(t))


class KernelEngine:
    """Precomputed evaluation engine for one operator.

    Immutable after construction except for an internal factorization
    cache with atomic-insert (dict) semantics; all evaluation methods are
    safe for concurrent callers.
    """

    def __init__(self, spec: OperatorSpec):
        self.spec = spec
        N, kappa = spec.N, spec.kappa
        # B^k / k! for the exact exponential series (nilpotent: k <= kappa)
        powers = [np.eye(N)]
        for k in range(1, kappa + 1):
            powers.append(powers[-1] @ spec.B / k)
        self._B_over_fact = np.array(powers)  # (kappa+1, N, N)
        # M_q = sum_{k+l=q} (-1)^q B^k/k! A (B^T)^l/l!, the coefficient of
        # s^(2 theta + q) in the Gramian integrand
        A = spec.A
        M = np.zeros((2 * kappa + 1, N, N))
        for k in range(kappa + 1):
            for l in range(kappa + 1):
                M[k + l] += (-1.0) ** (k + l) * powers[k] @ A @ powers[l].T
        self._M = M
        self._chol_cache: dict = {}

    # -- matrix exponential -------------------------------------------------

    def matrix_E(self, s: float) -> np.ndarray:
        """E(s) = exp(-sB) as the exact finite sum over B^k/k!."""
        kappa = self.spec.kappa
        sp = (-float(s)) ** np.arange(kappa + 1)
        return np.einsum("k,kij->ij", sp, self._B_over_fact)

    def matrix_E_many(self, s) -> np.ndarray:
        """E(s) for an array of s values; shape (len(s), N, N)."""
        s = np.asarray(s, dtype=float)
        kappa = self.spec.kappa
        sp = (-s[:, None]) ** np.arange(kappa + 1)[None, :]
        return np.einsum("wk,kij->wij", sp, self._B_over_fact)

    # -- Gramians ------------------------------------------------------------

    def gramian(self, tau: float, t: float) -> np.ndarray:
        """Controllability Gramian C(tau, t), exact antiderivative form.

        Entries are P(t) - P(tau) for the matrix antiderivative P of
        s^(2 theta) E(s) A E(s)^T; symmetric by construction and positive
        definite for t > tau iff the operator is hypoelliptic.
        """
        th2 = 2 * self.spec.theta
        q = np.arange(self._M.shape[0])
        p = th2 + q + 1
        coeff = (float(t) ** p - float(tau) ** p) / p
        C = np.einsum("q,qij->ij", coeff, self._M)
        return 0.5 * (C + C.T)

    def transition_gramian(self, tau: float, t: float) -> np.ndarray:
        """Transition Gramian Ct(tau, t); half the covariance of Gamma."""
        return self.transition_gramian_many(np.array([tau]), t)[0]

    def transition_gramian_many(self, tau, t: float) -> np.ndarray:
        """Ct(tau_w, t) for an array of tau values; shape (len(tau), N, N).

        Uses the exact moment integrals
        I_q(tau, t) = int_tau^t s^(2 theta) (t-s)^q ds.
        """
        tau = np.asarray(tau, dtype=float)
        th2 = 2 * self.spec.theta
        nq = self._M.shape[0]
        t = float(t)
        # I_q = sum_j binom(q, j) t^(q-j) (-1)^j (t^(th2+j+1) - tau^(th2+j+1)) / (th2+j+1)
        jj = np.arange(nq)
        mom = (t ** (th2 + jj + 1) - tau[:, None] ** (th2 + jj + 1)) / (th2 + jj + 1)
        I = np.zeros((nq, tau.size))
        for q in range(nq):
            for j in range(q + 1):
                I[q] += math.comb(q, j) * t ** (q - j) * (-1.0) ** j * mom[:, j]
        C = np.einsum("qw,qij->wij", I, self._M)
        return 0.5 * (C + np.swapaxes(C, 1, 2))

    def _factor(self, tau: float, t: float):
        """Cached Cholesky factor and log-determinant of Ct(tau, t)."""
        key = (float(tau), float(t))
        hit = self._chol_cache.get(key)
        if hit is not None:
            return hit
        C = self.transition_gramian(tau, t)
        try:
            L = np.linalg.cholesky(C)
        except np.linalg.LinAlgError:
            raise SingularGramian(
                "transition Gramian not positive definite for tau=%g t=%g" % (tau, t)
            ) from None
        logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
        self._chol_cache[key] = (L, logdet)
        return L, logdet

    # -- fundamental solution -------------------------------------------------

    def log_gamma(self, z, zeta) -> float:
        """log Gamma(z; zeta); -inf whenever t <= tau (and at z = zeta)."""
        N = self.spec.N
        x, t = _as_point(z, N)
        xi, tau = _as_point(zeta, N)
        if t <= tau:
            return -math.inf
        L, logdet = self._factor(tau, t)
        v = x - self.matrix_E(t - tau) @ xi
        w = solve_triangular(L, v, lower=True)
        return -0.5 * N * LOG_4PI - 0.5 * logdet - 0.25 * float(w @ w)

    def gamma(self, z, zeta) -> float:
        """Gamma(z; zeta) = exp(log_gamma), underflow-safe (0.0 below range)."""
        lg = self.log_gamma(z, zeta)
        if lg == -math.inf:
            return 0.0
        try:
            return math.exp(lg)
        except OverflowError:
            return math.inf

    def log_gamma_sources_at(self, x0, t0: float, XI: np.ndarray, tau: float) -> np.ndarray:
        """log Gamma((x0, t0); (xi_w, tau)) for a batch of source points.

        All sources share the time tau, so one factorization serves the
        whole batch.  Returns -inf entries when t0 <= tau.
        """
        N = self.spec.N
        XI = np.asarray(XI, dtype=float).reshape(-1, N)
        if t0 <= tau:
            return np.full(XI.shape[0], -math.inf)
        L, logdet = self._factor(tau, t0)
        V = np.asarray(x0, dtype=float)[None, :] - XI @ self.matrix_E(t0 - tau).T
        W = solve_triangular(L, V.T, lower=True).T
        return -0.5 * N * LOG_4PI - 0.5 * logdet - 0.25 * np.einsum("wi,wi->w", W, W)

    def log_gamma_fields_at(self, X: np.ndarray, t: float, xi, tau: float) -> np.ndarray:
        """log Gamma((x_w, t); (xi, tau)) for a batch of field points."""
        N = self.spec.N
        X = np.asarray(X, dtype=float).reshape(-1, N)
        if t <= tau:
            return np.full(X.shape[0], -math.inf)
        L, logdet = self._factor(tau, t)
        V = X - (self.matrix_E(t - tau) @ np.asarray(xi, dtype=float))[None, :]
        W = solve_triangular(L, V.T, lower=True).T
        return -0.5 * N * LOG_4PI - 0.5 * logdet - 0.25 * np.einsum("wi,wi->w", W, W)

    # -- group structure -------------------------------------------------------

    def group_compose(self, z, zeta) -> SpaceTimePoint:
        """(x,t) o (xi,tau) = (xi + E(tau) x, t + tau)."""
        N = self.spec.N
        x, t = _as_point(z, N)
        xi, tau = _as_point(zeta, N)
        return SpaceTimePoint(xi + self.matrix_E(tau) @ x, t + tau)

    def group_inverse(self, z) -> SpaceTimePoint:
        """(x,t)^(-1) = (-E(-t) x, -t)."""
        N = self.spec.N
        x, t = _as_point(z, N)
        return SpaceTimePoint(-(self.matrix_E(-t) @ x), -t)


@dataclass(frozen=True)
class DilationGroup:
    """Intrinsic dilations delta(r) = (delta_0(r), r^2 t).

    delta_0(r) scales block j by r^(2 theta + 2 j + 1); the homogeneous
    dimension Q satisfies det delta_0(r) = r^Q.
    """

    spec: OperatorSpec

    @property
    def exponents(self) -> np.ndarray:
        """Per-coordinate spatial dilation exponents."""
        e = np.concatenate(
            [
                np.full(mj, 2 * self.spec.theta + 2 * j + 1)
                for j, mj in enumerate(self.spec.block_dims)
            ]
        )
        return e.astype(int)

    @property
    def Q(self) -> int:
        """Homogeneous dimension of R^N: 2 theta N + sum_j (2j+1) m_j."""
        return int(self.exponents.sum())

    def dilate(self, r: float, z) -> SpaceTimePoint:
        if not r > 0:
            raise ValueError("dilation parameter must be positive")
        x, t = _as_point(z, self.spec.N)
        return SpaceTimePoint(r ** self.exponents.astype(float) * x, r * r * t)

    def spatial_dilate_many(self, r: float, X: np.ndarray) -> np.ndarray:
        if not r > 0:
            raise ValueError("dilation parameter must be positive")
        return np.asarray(X, dtype=float) * r ** self.exponents.astype(float)


def apply_operator_fd(spec: OperatorSpec, u, z, h_x=1e-3, h_t=None) -> float:
    """Apply L to a callable u(x, t) at z by central finite differences.

    h_x may be a scalar or per-coordinate array; h_t defaults to the
    parabolic scaling h_x^2 of the smallest spatial step.
    """
    x, t = _as_point(z, spec.N)
    hx = np.broadcast_to(np.asarray(h_x, dtype=float), (spec.N,))
    if h_t is None:
        h_t = float(np.min(hx)) ** 2
    u0 = u(x, t)
    val = 0.0
    coef = t ** (2 * spec.theta)
    for i in range(spec.m):
        e = np.zeros(spec.N)
        e[i] = hx[i]
        val += coef * (u(x + e, t) - 2.0 * u0 + u(x - e, t)) / hx[i] ** 2
    drift = spec.B @ x
    for i in range(spec.N):
        if drift[i] != 0.0:
            e = np.zeros(spec.N)
            e[i] = hx[i]
            val += drift[i] * (u(x + e, t) - u(x - e, t)) / (2.0 * hx[i])
    val -= (u(x, t + h_t) - u(x, t - h_t)) / (2.0 * h_t)
    return float(val)


def homogeneity_residual(engine: KernelEngine, r: float, test_function, sample_points,
                         h_fd: float = 1e-3) -> float:
    """Max over samples of |L(u o delta(r))(z) - r^2 (L u)(delta(r) z)|.

    The dilated side uses coordinate steps shrunk by the dilation factors
    r^(e_i) (and r^2 in time) so both sides differentiate at matched
    resolution.
    """
    group = DilationGroup(engine.spec)
    expo = group.exponents.astype(float)

    def dilated(x, t):
        return test_function(r**expo * x, r * r * t)

    worst = 0.0
    for z in sample_points:
        x, t = _as_point(z, engine.spec.N)
        lhs = apply_operator_fd(
            engine.spec, dilated, (x, t), h_x=h_fd / r**expo, h_t=(h_fd**2) / r**2
        )
        zi = group.dilate(r, (x, t))
        rhs = r * r * apply_operator_fd(engine.spec, test_function, zi, h_x=h_fd)
        worst = max(worst, abs(lhs - rhs))
    return worst
