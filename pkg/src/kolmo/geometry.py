"""Space-time domains as constructive solid geometry, plus the operator's
intrinsic cylinders, cones, and kernel level-set shells.

Membership is decided exactly from the CSG tree; every predicate has a
vectorized form ``contains_many(X, t)`` over batches of points sharing the
same layout, which the Monte Carlo walker relies on.  Primitives are open
sets unless stated otherwise, complements are therefore closed; boundaries
carry no mass for the walk estimators.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import VertexTimeNotZero
from .kernel import DilationGroup, KernelEngine, SpaceTimePoint

__all__ = [
    "Domain",
    "Box",
    "Ball",
    "HalfSpace",
    "PointSet",
    "KolmogorovCylinder",
    "LCone",
    "Complement",
    "Union",
    "Intersection",
    "ShellFamily",
    "domain_from_dict",
    "domain_to_dict",
]

#: Default relative tolerance for boundary-part classification.
BDRY_TOL = 1e-9


class Domain:
    """Base class: a subset of R^(N+1) with exact membership tests."""

    def contains(self, z) -> bool:
        x, t = z
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return bool(self.contains_many(x, np.full(x.shape[0], float(t)))[0])

    def contains_many(self, X: np.ndarray, t: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def bounding_box(self, N: int) -> tuple[np.ndarray, np.ndarray]:
        """(lo, hi) arrays over the N+1 coordinates (time last); may be inf."""
        raise NotImplementedError

    def bounding_box_empty(self, N: int) -> bool:
        lo, hi = self.bounding_box(N)
        return bool(np.any(lo > hi))

    def __and__(self, other):
        return Intersection((self, other))

    def __or__(self, other):
        return Union((self, other))

    def __invert__(self):
        return Complement(self)


@dataclass(frozen=True)
class Box(Domain):
    """Open axis-aligned box over space-time; use +-inf for slabs."""

    lo: tuple
    hi: tuple

    def contains_many(self, X, t):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        ok = np.ones(X.shape[0], dtype=bool)
        for i in range(X.shape[1]):
            ok &= (X[:, i] > lo[i]) & (X[:, i] < hi[i])
        ok &= (t > lo[-1]) & (t < hi[-1])
        return ok

    def bounding_box(self, N: int):
        return np.asarray(self.lo, dtype=float), np.asarray(self.hi, dtype=float)


@dataclass(frozen=True)
class Ball(Domain):
    """Euclidean ball in R^(N+1); open by default, closed when requested.

    A closed ball of radius zero is the singleton {center}.
    """

    center: tuple  # (x_1 .. x_N, t)
    radius: float
    closed: bool = False

    def contains_many(self, X, t):
        c = np.asarray(self.center, dtype=float)
        d2 = np.sum((X - c[:-1]) ** 2, axis=1) + (t - c[-1]) ** 2
        r2 = self.radius * self.radius
        return d2 <= r2 if self.closed else d2 < r2

    def bounding_box(self, N: int):
        c = np.asarray(self.center, dtype=float)
        return c - self.radius, c + self.radius


def PointSet(z) -> Ball:
    """The singleton {z} as a degenerate closed ball."""
    x, t = z
    return Ball(tuple(np.atleast_1d(np.asarray(x, dtype=float))) + (float(t),), 0.0, closed=True)


@dataclass(frozen=True)
class HalfSpace(Domain):
    """Open time half-space {t < c} ("past") or {t > c} ("future")."""

    time: float
    side: str = "past"

    def contains_many(self, X, t):
        if self.side == "past":
            return t < self.time
        if self.side == "future":
            return t > self.time
        raise ValueError("side must be 'past' or 'future'")

    def bounding_box(self, N: int):
        lo = np.full(N + 1, -np.inf)
        hi = np.full(N + 1, np.inf)
        if self.side == "past":
            hi[-1] = self.time
        else:
            lo[-1] = self.time
        return lo, hi


@dataclass(frozen=True)
class Complement(Domain):
    arg: Domain

    def contains_many(self, X, t):
        return ~self.arg.contains_many(X, t)

    def bounding_box(self, N: int):
        # conservative: complements are unbounded in general
        return np.full(N + 1, -np.inf), np.full(N + 1, np.inf)


@dataclass(frozen=True)
class Union(Domain):
    parts: tuple

    def contains_many(self, X, t):
        out = np.zeros(X.shape[0], dtype=bool)
        for p in self.parts:
            out |= p.contains_many(X, t)
        return out

    def bounding_box(self, N: int):
        los, his = zip(*(p.bounding_box(N) for p in self.parts))
        return np.minimum.reduce(los), np.maximum.reduce(his)


@dataclass(frozen=True)
class Intersection(Domain):
    parts: tuple

    def contains_many(self, X, t):
        out = np.ones(X.shape[0], dtype=bool)
        for p in self.parts:
            out &= p.contains_many(X, t)
        return out

    def bounding_box(self, N: int):
        los, his = zip(*(p.bounding_box(N) for p in self.parts))
        return np.maximum.reduce(los), np.minimum.reduce(his)


class KolmogorovCylinder(Domain):
    """Intrinsic cylinder Q_{r,T}(z0) of the operator.

    Membership: t0 < t < T and |delta_0(1/sqrt(r)) (E(-t) x - E(-t0) x0)| < 1.
    For the heat operator this degenerates to the Euclidean cylinder
    B_sqrt(r)(x0) x (t0, T).
    """

    def __init__(self, engine: KernelEngine, z0, r: float, T: float):
        x0, t0 = z0
        self.engine = engine
        self.x0 = np.asarray(x0, dtype=float).reshape(engine.spec.N)
        self.t0 = float(t0)
        self.r = float(r)
        self.T = float(T)
        if not self.r > 0:
            raise ValueError("cylinder radius must be positive")
        if not self.T > self.t0:
            raise ValueError("top time must exceed the base time")
        group = DilationGroup(engine.spec)
        self._scale = (1.0 / math.sqrt(self.r)) ** group.exponents.astype(float)
        self._w0 = self._scale * (engine.matrix_E(-self.t0) @ self.x0)

    def _profile(self, X, t):
        """|delta_0(1/sqrt r)(E(-t)x - E(-t0)x0)| for batches sharing layout."""
        E = self.engine.matrix_E_many(-np.asarray(t, dtype=float))
        W = np.einsum("wij,wj->wi", E, np.asarray(X, dtype=float)) * self._scale
        return np.linalg.norm(W - self._w0, axis=1)

    def contains_many(self, X, t):
        t = np.asarray(t, dtype=float)
        rho = self._profile(X, t)
        return (t > self.t0) & (t < self.T) & (rho < 1.0)

    def bounding_box(self, N: int = None):
        N = self.engine.spec.N
        ts = np.linspace(self.t0, self.T, 33)
        E = self.engine.matrix_E_many(ts)
        # x = E(t) (w0 + u) / scale with |u| < 1: bound rows by L1 norms
        centers = np.einsum("wij,j->wi", E, self._w0 / self._scale)
        radii = np.sum(np.abs(E) / self._scale[None, None, :], axis=2)
        lo = np.concatenate([np.min(centers - radii, axis=0), [self.t0]])
        hi = np.concatenate([np.max(centers + radii, axis=0), [self.T]])
        return lo, hi

    def parabolic_boundary_part(self, z, tol: float = None) -> str:
        """Classify z as 'bottom', 'lateral', 'top', or 'not_on_boundary'.

        The parabolic boundary consists of the bottom and lateral parts;
        the open top face is excluded.  The top rim (t = T, profile = 1)
        counts as lateral.
        """
        x, t = z
        x = np.atleast_2d(np.asarray(x, dtype=float))
        t = float(t)
        if tol is None:
            scale = max(1.0, abs(self.t0), abs(self.T), float(np.max(np.abs(self.x0))))
            tol = BDRY_TOL * scale
        rho = float(self._profile(x, np.array([t]))[0])
        if abs(t - self.t0) <= tol and rho <= 1.0 + tol:
            return "bottom"
        if self.t0 - tol <= t <= self.T + tol and abs(rho - 1.0) <= tol:
            return "lateral"
        if abs(t - self.T) <= tol and rho < 1.0 - tol:
            return "top"
        return "not_on_boundary"


class LCone(Domain):
    """Dilation cone {(delta_0(r) x + x0, -r^2 T) : x in K, 0 <= r <= 1}.

    The vertex time must be exactly zero; K is a spatial box or ball with
    positive volume.  The cone is a closed set.
    """

    def __init__(self, group: DilationGroup, x0, T: float, base):
        self.group = group
        self.x0 = np.asarray(x0, dtype=float).reshape(group.spec.N)
        self.T = float(T)
        self.base = base  # SpatialBox or SpatialBall
        if not self.T > 0:
            raise ValueError("cone height must be positive")

    @property
    def vertex(self) -> SpaceTimePoint:
        return SpaceTimePoint(self.x0, 0.0)

    def contains_many(self, X, t):
        t = np.asarray(t, dtype=float)
        X = np.asarray(X, dtype=float)
        out = np.zeros(X.shape[0], dtype=bool)
        ok = (t <= 0.0) & (t >= -self.T)
        if not np.any(ok):
            return out
        r = np.sqrt(np.maximum(-t, 0.0) / self.T)
        at_vertex = ok & (r == 0.0)
        out[at_vertex] = np.all(X[at_vertex] == self.x0, axis=1)
        body = ok & (r > 0.0)
        if np.any(body):
            U = (X[body] - self.x0) / r[body, None] ** self.group.exponents.astype(float)
            out[body] = self.base.contains_many(U)
        return out

    def sample_points(self, n_r: int = 12, n_base: int = 100):
        """Deterministic point cloud covering the cone, >= n_r * n_base points."""
        rs = np.linspace(0.0, 1.0, n_r + 1)[1:]
        base_pts = self.base.sample_points(n_base)
        pts, times = [], []
        for r in rs:
            Xr = self.group.spatial_dilate_many(r, base_pts) + self.x0
            pts.append(Xr)
            times.append(np.full(Xr.shape[0], -r * r * self.T))
        return np.vstack(pts), np.concatenate(times)

    def bounding_box(self, N: int = None):
        pts, times = self.sample_points(24, 200)
        lo = np.concatenate([pts.min(axis=0), [-self.T]])
        hi = np.concatenate([pts.max(axis=0), [0.0]])
        return lo, hi


@dataclass(frozen=True)
class SpatialBox:
    """Closed axis box in R^N used as a cone base."""

    lo: tuple
    hi: tuple

    def contains_many(self, X):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        return np.all((X >= lo) & (X <= hi), axis=1)

    def volume(self) -> float:
        return float(np.prod(np.asarray(self.hi) - np.asarray(self.lo)))

    def sample_points(self, n: int):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        N = lo.size
        per = max(2, int(round(n ** (1.0 / N))))
        grids = np.meshgrid(*[np.linspace(lo[i], hi[i], per) for i in range(N)])
        pts = np.stack([g.ravel() for g in grids], axis=1)
        # pull marginally inward so dilation round-trips stay inside
        mid = 0.5 * (lo + hi)
        return mid + (pts - mid) * (1.0 - 1e-9)


@dataclass(frozen=True)
class SpatialBall:
    """Closed Euclidean ball in R^N used as a cone base."""

    center: tuple
    radius: float

    def contains_many(self, X):
        c = np.asarray(self.center, dtype=float)
        return np.sum((X - c) ** 2, axis=1) <= self.radius**2

    def volume(self) -> float:
        N = len(self.center)
        return float(
            math.pi ** (N / 2.0) / math.gamma(N / 2.0 + 1.0) * self.radius**N
        )

    def sample_points(self, n: int):
        c = np.asarray(self.center, dtype=float)
        N = c.size
        per = max(3, int(round((2 * n) ** (1.0 / N))))
        axes = [np.linspace(-self.radius, self.radius, per)] * N
        grid = np.stack([g.ravel() for g in np.meshgrid(*axes)], axis=1)
        grid = grid[np.sum(grid**2, axis=1) <= self.radius**2]
        # pull marginally inward so dilation round-trips stay inside
        return grid * (1.0 - 1e-9) + c


class ShellFamily:
    """Kernel level-band shells around a pole z0.

    Shell n is the set of points outside U whose oriented kernel value
    lies in [ (1/lambda)^(n ln n), (1/lambda)^((n+1) ln(n+1)) ], together
    with z0 itself.  Natural logarithms throughout; membership is decided
    in log space so no threshold ever overflows.

    orientation:
      * "pole_at_field": compare Gamma(z0; z) -- shells live in the past
        of z0, which is the side a backward walk explores (default used by
        the regularity diagnostics);
      * "pole_at_center": compare Gamma(z; z0) -- the literal reading of
        the level-set definition, shells in the future of z0.
    """

    def __init__(self, engine: KernelEngine, z0, lam: float,
                 orientation: str = "pole_at_field", complement_of: Domain = None):
        if not 0.0 < lam < 1.0:
            raise ValueError("lambda must lie in (0, 1)")
        if orientation not in ("pole_at_field", "pole_at_center"):
            raise ValueError("unknown orientation %r" % orientation)
        x0, t0 = z0
        self.engine = engine
        self.x0 = np.asarray(x0, dtype=float).reshape(engine.spec.N)
        self.t0 = float(t0)
        self.lam = float(lam)
        self.orientation = orientation
        self.domain = complement_of

    def log_threshold(self, n: int) -> float:
        """log of (1/lambda)^(n ln n); threshold 1 is kept literally at n=1."""
        if n < 1:
            raise ValueError("shell index starts at 1")
        return n * math.log(n) * math.log(1.0 / self.lam)

    def log_kernel_many(self, X, t: float) -> np.ndarray:
        if self.orientation == "pole_at_field":
            return self.engine.log_gamma_sources_at(self.x0, self.t0, X, t)
        return self.engine.log_gamma_fields_at(X, t, self.x0, self.t0)

    def shell_membership_many(self, n: int, X, t: float) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        tvec = np.full(X.shape[0], float(t))
        at_pole = (tvec == self.t0) & np.all(X == self.x0, axis=1)
        lo, hi = self.log_threshold(n), self.log_threshold(n + 1)
        lg = self.log_kernel_many(X, t)
        inside = (lg >= lo) & (lg <= hi)
        if self.domain is not None:
            inside &= ~self.domain.contains_many(X, tvec)
        return inside | at_pole

    def shell_membership(self, n: int, z) -> bool:
        x, t = z
        X = np.atleast_2d(np.asarray(x, dtype=float))
        return bool(self.shell_membership_many(n, X, float(t))[0])

    def max_depth(self, n: int, hint: float = 1.0) -> float:
        """Largest time offset s such that shell n can still be reached.

        Beyond s the kernel peak (4 pi)^(-N/2) det Ct^(-1/2) falls below
        the lower threshold of shell n, so no point of the shell exists
        at offsets larger than s.  Determined by bisection on the exact
        determinant; only meaningful for the pole_at_field orientation.
        """
        N = self.engine.spec.N
        target = -0.5 * N * math.log(4 * math.pi) - self.log_threshold(n)

        def log_half_det(s):
            if self.orientation == "pole_at_field":
                C = self.engine.transition_gramian(self.t0 - s, self.t0)
            else:
                C = self.engine.transition_gramian(self.t0, self.t0 + s)
            sign, logdet = np.linalg.slogdet(C)
            return 0.5 * logdet if sign > 0 else -math.inf

        hi = hint
        for _ in range(200):
            if log_half_det(hi) >= target:
                break
            hi *= 2.0
        else:
            return math.inf
        lo = 0.0
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if mid == lo or mid == hi:
                break
            if log_half_det(mid) >= target:
                hi = mid
            else:
                lo = mid
        return hi

    def as_domain(self, n: int) -> "ShellDomain":
        return ShellDomain(self, n)


@dataclass(frozen=True)
class ShellDomain(Domain):
    """Adapter exposing one shell as a hitting target."""

    family: ShellFamily
    n: int

    def contains_many(self, X, t):
        t = np.asarray(t, dtype=float)
        if t.size and np.all(t == t[0]):
            return self.family.shell_membership_many(self.n, X, float(t[0]))
        out = np.zeros(X.shape[0], dtype=bool)
        for tv in np.unique(t):
            sel = t == tv
            out[sel] = self.family.shell_membership_many(self.n, X[sel], float(tv))
        return out

    def bounding_box(self, N: int = None):
        N = self.family.engine.spec.N
        s = self.family.max_depth(self.n)
        lo = np.full(N + 1, -np.inf)
        hi = np.full(N + 1, np.inf)
        if self.family.orientation == "pole_at_field":
            lo[-1], hi[-1] = self.family.t0 - s, self.family.t0
        else:
            lo[-1], hi[-1] = self.family.t0, self.family.t0 + s
        return lo, hi


# ---------------------------------------------------------------------------
# JSON CSG schema
# ---------------------------------------------------------------------------


def domain_from_dict(node: dict, engine: KernelEngine = None) -> Domain:
    """Build a domain from the JSON CSG tree representation."""
    op = node["op"]
    if op == "box":
        return Box(tuple(node["lo"]), tuple(node["hi"]))
    if op == "ball":
        return Ball(tuple(node["center"]), float(node["radius"]),
                    bool(node.get("closed", False)))
    if op == "point":
        c = list(node["z"])
        return Ball(tuple(c), 0.0, closed=True)
    if op == "halfspace":
        return HalfSpace(float(node["time"]), node.get("side", "past"))
    if op == "cylinder":
        if engine is None:
            raise ValueError("cylinder primitives require an operator")
        return KolmogorovCylinder(
            engine, (node["x0"], node["t0"]), float(node["r"]), float(node["T"])
        )
    if op == "complement":
        return Complement(domain_from_dict(node["arg"], engine))
    if op in ("union", "intersection"):
        parts = tuple(domain_from_dict(p, engine) for p in node["parts"])
        return Union(parts) if op == "union" else Intersection(parts)
    raise ValueError("unknown CSG op %r" % op)


def domain_to_dict(dom: Domain) -> dict:
    if isinstance(dom, Box):
        return {"op": "box", "lo": list(dom.lo), "hi": list(dom.hi)}
    if isinstance(dom, Ball):
        return {"op": "ball", "center": list(dom.center), "radius": dom.radius,
                "closed": dom.closed}
    if isinstance(dom, HalfSpace):
        return {"op": "halfspace", "time": dom.time, "side": dom.side}
    if isinstance(dom, KolmogorovCylinder):
        return {"op": "cylinder", "x0": dom.x0.tolist(), "t0": dom.t0,
                "r": dom.r, "T": dom.T}
    if isinstance(dom, Complement):
        return {"op": "complement", "arg": domain_to_dict(dom.arg)}
    if isinstance(dom, Union):
        return {"op": "union", "parts": [domain_to_dict(p) for p in dom.parts]}
    if isinstance(dom, Intersection):
        return {"op": "intersection", "parts": [domain_to_dict(p) for p in dom.parts]}
    raise ValueError("cannot serialize %r" % type(dom).__name__)
