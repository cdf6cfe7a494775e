"""Boundary-regularity diagnostics.

Four sources of evidence about a boundary point z0 of a domain U:

* a truncated Wiener-type series: hitting estimates of kernel level-band
  shells in the complement, summed over the band index.  A truncated sum
  can never certify divergence, so this path reports Regular only when
  the partial sum clears a threshold and otherwise stays inconclusive;

* a shrinking-ball limit test on hitting estimates of ball-complement
  pieces around z0;

* an exterior-cone search at vertices with time exactly zero, which is a
  proof-grade sufficient condition up to the Monte Carlo point cloud;

* a direct attainment probe: generalized Dirichlet values against a bump
  datum centered at z0, evaluated along interior sequences approaching z0.

`classify` combines them with precedence cone > attainment > ball-limit >
Wiener partial sums.  Every report carries its full parameter provenance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import EpsilonSearchFailed, NotBoundaryPoint, VertexTimeNotZero
from .geometry import (
    Ball,
    Complement,
    Domain,
    Intersection,
    LCone,
    PointSet,
    ShellFamily,
    SpatialBall,
)
from .kernel import DilationGroup, KernelEngine, SpaceTimePoint
from .walk import WalkConfig, WalkEstimate, hitting_probability, pwb_estimate

__all__ = [
    "RegularityReport",
    "PolarWitness",
    "wiener_diagnostic",
    "ball_limit_test",
    "cone_test",
    "polar_witness",
    "classify",
]

#: Partial Wiener sums above this value count as Regular evidence; the
#: threshold mirrors the sufficiency argument that a tail sum above 2
#: forces hitting probability >= 1/2 at every radius.
DIVERGENCE_THRESHOLD = 2.0

#: Ball-limit estimates below this value at the three smallest radii
#: (with stderr below 0.01) count as Irregular evidence.
IRREGULAR_THRESHOLD = 0.05

#: Attainment-probe levels: above the first, the bump datum is considered
#: attained; below the second, missed.
ATTAIN_HIGH = 0.5
ATTAIN_LOW = 0.15


@dataclass(frozen=True)
class RegularityReport:
    """Evidence bundle with a three-valued verdict and full provenance."""

    point: tuple
    verdict: str  # "Regular" | "Irregular" | "Inconclusive"
    wiener_partial_sums: tuple  # of (n, estimate, cumulative, stderr)
    ball_limit_series: tuple  # of (radius, WalkEstimate)
    cone_found: LCone | None
    attainment: tuple  # of (delta, value, stderr) along the probe
    parameters: dict
    notes: tuple = ()

    @property
    def wiener_sum(self) -> float:
        return self.wiener_partial_sums[-1][2] if self.wiener_partial_sums else 0.0

    def to_dict(self) -> dict:
        x0, t0 = self.point
        return {
            "point": {"x": list(map(float, np.atleast_1d(x0))), "t": float(t0)},
            "verdict": self.verdict,
            "wiener_partial_sums": [
                {"n": n, "estimate": e, "cumulative": c, "stderr": s}
                for n, e, c, s in self.wiener_partial_sums
            ],
            "ball_limit_series": [
                {"radius": r, "value": est.value, "stderr": est.stderr,
                 "n_truncated": est.n_truncated}
                for r, est in self.ball_limit_series
            ],
            "cone_found": None if self.cone_found is None else {
                "height": self.cone_found.T,
                "base_center": list(map(float, self.cone_found.base.center)),
                "base_radius": self.cone_found.base.radius,
                "lambda_admissible": self.parameters.get("lambda_admissible"),
            },
            "attainment": [
                {"delta": d, "value": v, "stderr": s} for d, v, s in self.attainment
            ],
            "parameters": self.parameters,
            "notes": list(self.notes),
        }


def _domain_scale(domain: Domain, N: int) -> float:
    lo, hi = domain.bounding_box(N)
    ext = (hi - lo)[np.isfinite(hi - lo)]
    if ext.size == 0:
        return 1.0
    return float(np.min(ext[ext > 0]))


def _sphere_directions(N: int, count: int = 48) -> np.ndarray:
    """Deterministic direction set on the unit sphere of R^(N+1)."""
    g = np.random.Generator(np.random.Philox(key=[0xD1CE, 0]))
    D = g.standard_normal((count, N + 1))
    return D / np.linalg.norm(D, axis=1, keepdims=True)


def _require_boundary(domain: Domain, z0, N: int, scale: float):
    x0 = np.asarray(z0[0], dtype=float).reshape(N)
    t0 = float(z0[1])
    if domain.contains((x0, t0)):
        raise NotBoundaryPoint("point lies inside the domain")
    dirs = _sphere_directions(N)
    for k in range(3, 11):
        r = scale * 0.5**k
        pts = x0[None, :] + r * dirs[:, :N]
        ts = t0 + r * dirs[:, N]
        if not np.any(domain.contains_many(pts, ts)):
            raise NotBoundaryPoint(
                "no interior points within radius %g of the point" % r
            )
    return SpaceTimePoint(x0, t0)


def wiener_diagnostic(engine: KernelEngine, domain: Domain, z0, lam: float = 0.5,
                      n_range=range(2, 41), config: WalkConfig = None,
                      orientation: str = "pole_at_field",
                      divergence_threshold: float = DIVERGENCE_THRESHOLD,
                      check_boundary: bool = True) -> RegularityReport:
    """Truncated Wiener-type series of shell hitting estimates at z0.

    Each shell in the complement of the domain is estimated by backward
    walks from z0 over exactly the time window where the shell can exist
    (determined from the kernel determinant), with geometric first-step
    refinement so bands far below the step size remain visible.  The
    verdict is Regular when the cumulative sum clears the threshold and
    otherwise Inconclusive: a truncated sum cannot certify divergence.
    """
    if config is None:
        config = WalkConfig()
    N = engine.spec.N
    z0 = SpaceTimePoint(np.asarray(z0[0], dtype=float).reshape(N), float(z0[1]))
    if check_boundary:
        _require_boundary(domain, z0, N, _domain_scale(domain, N))
    shells = ShellFamily(engine, z0, lam, orientation, complement_of=domain)
    rows = []
    total = 0.0
    for n in n_range:
        s_max = shells.max_depth(n)
        cfg = replace(
            config,
            seed=config.seed + n,
            horizon=z0.t - s_max,
            max_steps=min(config.max_steps, int(s_max / config.dt) + 2),
            first_step_depth=max(config.first_step_depth, 30),
        )
        est = hitting_probability(engine, shells.as_domain(n), z0, cfg)
        total += est.value
        rows.append((n, est.value, total, est.stderr))
    verdict = "Regular" if total > divergence_threshold else "Inconclusive"
    notes = (
        "truncated Wiener sums cannot certify divergence; verdicts other "
        "than Regular from this diagnostic alone remain inconclusive",
    )
    return RegularityReport(
        point=tuple(z0),
        verdict=verdict,
        wiener_partial_sums=tuple(rows),
        ball_limit_series=(),
        cone_found=None,
        attainment=(),
        parameters={
            "lambda": lam,
            "orientation": orientation,
            "n_range": [n_range[0], n_range[-1]],
            "divergence_threshold": divergence_threshold,
            "seed": config.seed,
            "dt": config.dt,
            "n_samples": config.n_samples,
        },
        notes=notes,
    )


def ball_limit_test(engine: KernelEngine, domain: Domain, z0, radii,
                    config: WalkConfig = None) -> list:
    """Hitting estimates of closed-ball complement pieces around z0.

    radii must be positive and decreasing.  Estimates decaying to zero are
    Irregular evidence; estimates bounded below are Regular evidence.  A
    common seed across radii keeps the series exactly non-increasing.
    """
    if config is None:
        config = WalkConfig()
    radii = list(radii)
    if any(r <= 0 for r in radii) or any(
        radii[i] <= radii[i + 1] for i in range(len(radii) - 1)
    ):
        raise ValueError("radii must be positive and strictly decreasing")
    N = engine.spec.N
    x0 = np.asarray(z0[0], dtype=float).reshape(N)
    t0 = float(z0[1])
    out = []
    for r in radii:
        ball = Ball(tuple(x0) + (t0,), float(r), closed=True)
        target = Intersection((ball, Complement(domain)))
        cfg = replace(config, horizon=t0 - 2.0 * r * r - config.dt,
                      first_step_depth=max(config.first_step_depth, 20),
                      refine_substeps=max(config.refine_substeps, 2))
        out.append((float(r), hitting_probability(engine, target, (x0, t0), cfg)))
    return out


def _default_cone_grid(scale: float):
    grid = []
    for T in (0.2 * scale, 0.05 * scale, 0.5 * scale):
        for rho in (0.4, 0.2, 0.1):
            for off in (0.0, 0.5, -0.5):
                grid.append((T, off, rho))
    return grid


def cone_test(engine: KernelEngine, domain: Domain, z0, search_grid=None,
              n_cloud: int = 1200, config: WalkConfig = None) -> LCone | None:
    """Search for an exterior cone with vertex z0 = (x0, 0).

    Candidates from the grid of (height T, base offset, base radius) are
    accepted when their entire sample cloud (>= n_cloud points) avoids the
    domain.  Returns the first cone found, with the admissible-lambda
    bound vol(K) / (1 + R(z0)) recorded on the instance, or None.
    """
    N = engine.spec.N
    x0 = np.asarray(z0[0], dtype=float).reshape(N)
    t0 = float(z0[1])
    if t0 != 0.0:
        raise VertexTimeNotZero("cone vertices require t0 = 0, got %g" % t0)
    group = DilationGroup(engine.spec)
    scale = _domain_scale(domain, N)
    if search_grid is None:
        search_grid = _default_cone_grid(scale)
    n_r = max(8, int(math.sqrt(n_cloud / 4)))
    n_base = max(16, n_cloud // n_r + 1)
    for T, off, rho in search_grid:
        center = x0 + off * rho * scale * np.eye(N)[0] if N else x0
        base = SpatialBall(tuple(center), rho * scale)
        cone = LCone(group, x0, T, base)
        X, ts = cone.sample_points(n_r, n_base)
        if X.shape[0] < n_cloud:
            X2, ts2 = cone.sample_points(n_r, 4 * n_base)
            X, ts = np.vstack([X, X2]), np.concatenate([ts, ts2])
        if not np.any(domain.contains_many(X, ts)):
            if config is None:
                config = WalkConfig(n_samples=500)
            probe = replace(config, n_samples=min(config.n_samples, 2000),
                            horizon=-2.0 * T, max_steps=min(config.max_steps, 4000))
            r_self = hitting_probability(engine, PointSet((x0, 0.0)), (x0, 0.0), probe)
            cone.lambda_admissible = base.volume() / (1.0 + r_self.value)
            return cone
    return None


@dataclass(frozen=True)
class PolarWitness:
    """Pole sequence and truncated series witnessing that {z0} is polar.

    Poles zeta_n = (E(-eps_n) x0, t0 - eps_n) are chosen so the kernel at
    z0 exceeds 4^n; the associated series p(z) = sum Gamma(z; zeta_n)/2^n
    stays finite away from z0 while p(z0) grows without bound in the
    number of retained terms.
    """

    engine: KernelEngine = field(repr=False)
    z0: tuple
    epsilons: tuple
    log_gamma_at_z0: tuple  # log Gamma(z0; zeta_n), guaranteed >= n log 4

    @property
    def n_terms(self) -> int:
        return len(self.epsilons)

    def poles(self) -> list:
        x0, t0 = self.z0
        return [
            SpaceTimePoint(self.engine.matrix_E(-e) @ np.asarray(x0, float), t0 - e)
            for e in self.epsilons
        ]

    def evaluate(self, z) -> float:
        """Truncated series p(z); inf when a term overflows (at z0)."""
        total = 0.0
        for n, pole in enumerate(self.poles(), start=1):
            lg = self.engine.log_gamma(z, pole)
            if lg == -math.inf:
                continue
            arg = lg - n * math.log(2.0)
            total += math.exp(arg) if arg < 700 else math.inf
        return total

    def lower_bound_at_z0(self) -> float:
        """Sum of the guaranteed term bounds 4^n / 2^n = 2^n."""
        return float(sum(2.0**n for n in range(1, self.n_terms + 1)))


def polar_witness(engine: KernelEngine, z0, n_terms: int) -> PolarWitness:
    """Select the pole sequence for the polarity witness at z0.

    eps_n is found by bisection on the closed-form peak value
    (4 pi)^(-N/2) det Ct(t0-eps, t0)^(-1/2), which is exact for poles of
    the form (E(-eps) x0, t0 - eps) because the Gaussian exponent vanishes
    there identically.

    Raises
    ------
    EpsilonSearchFailed
        When no eps within floating-point range reaches the level 4^n;
        the witness is then truncated to the attainable terms (reported
        on the exception).
    """
    if n_terms < 1:
        raise ValueError("n_terms must be at least 1")
    N = engine.spec.N
    x0 = np.asarray(z0[0], dtype=float).reshape(N)
    t0 = float(z0[1])

    def log_peak(eps: float) -> float:
        C = engine.transition_gramian(t0 - eps, t0)
        sign, logdet = np.linalg.slogdet(C)
        if sign <= 0:
            return math.inf  # degenerate limit: treated as unbounded peak
        return -0.5 * N * math.log(4 * math.pi) - 0.5 * logdet

    eps_list, lg_list = [], []
    hi = 1.0
    for n in range(1, n_terms + 1):
        target = n * math.log(4.0)
        lo = 1e-280
        if log_peak(lo) < target:
            exc = EpsilonSearchFailed(
                "cannot reach level 4^%d within float range; retained %d terms"
                % (n, len(eps_list))
            )
            exc.witness = PolarWitness(engine, (tuple(x0), t0), tuple(eps_list),
                                       tuple(lg_list))
            raise exc
        # largest eps with log_peak(eps) >= target; keep the lo side so the
        # inequality holds by construction
        a, b = lo, hi
        if log_peak(b) >= target:
            a = b
        else:
            for _ in range(200):
                mid = math.sqrt(a * b)
                if mid in (a, b):
                    break
                if log_peak(mid) >= target:
                    a = mid
                else:
                    b = mid
        eps = a
        if eps_list and eps >= eps_list[-1]:
            eps = eps_list[-1] * 0.5
        eps_list.append(eps)
        lg_list.append(log_peak(eps))
        hi = eps
    return PolarWitness(engine, (tuple(x0), t0), tuple(eps_list), tuple(lg_list))


def _interior_directions(domain: Domain, z0, N: int, s0: float, depth: int):
    """Up to three unit directions whose probe rays stay inside the domain."""
    x0, t0 = z0
    lo, hi = domain.bounding_box(N)
    center = np.where(np.isfinite(lo) & np.isfinite(hi), 0.5 * (lo + hi), 0.0)
    cands = []
    d0 = center - np.concatenate([x0, [t0]])
    if np.linalg.norm(d0) > 1e-12 * max(1.0, s0):
        cands.append(d0 / np.linalg.norm(d0))
    for i in range(N + 1):
        e = np.zeros(N + 1)
        e[i] = 1.0
        cands.extend([e, -e])
    chosen = []
    for d in cands:
        deltas = [s0 * 0.5**k for k in range(1, depth + 1)]
        pts = np.array([x0 + dl * d[:N] for dl in deltas])
        ts = np.array([t0 + dl * d[N] for dl in deltas])
        if np.all(domain.contains_many(pts, ts)):
            chosen.append(d)
        if len(chosen) == 3:
            break
    return chosen


def _attainment_probe(engine: KernelEngine, domain: Domain, z0, s0: float,
                      config: WalkConfig, depth: int = 5):
    """Dirichlet values against a bump at z0 along approaching sequences."""
    N = engine.spec.N
    x0 = np.asarray(z0[0], dtype=float).reshape(N)
    t0 = float(z0[1])
    width = 0.75 * s0

    def bump(X, ts):
        d2 = np.sum((X - x0) ** 2, axis=1) + (ts - t0) ** 2
        return np.clip(1.0 - np.sqrt(d2) / width, 0.0, None) ** 2

    # the bump varies on the scale of s0, so coarse steps and few
    # bisection rounds lose nothing measurable
    config = replace(config, dt=2.0 * config.dt, bisection_iters=8)
    dirs = _interior_directions(domain, (x0, t0), N, s0, depth)[:2]
    rows = []
    for k in range(1, depth + 1):
        delta = s0 * 0.5**k
        vals, errs = [], []
        for d in dirs:
            z = (x0 + delta * d[:N], t0 + delta * d[N])
            est = pwb_estimate(engine, domain, bump, z, config)
            vals.append(est.value)
            errs.append(est.stderr)
        if vals:
            rows.append((delta, float(np.mean(vals)), float(np.mean(errs))))
    return rows


def classify(engine: KernelEngine, domain: Domain, z0, config: WalkConfig = None,
             lam: float = 0.5, n_range=range(2, 41), radii=None,
             orientation: str = "pole_at_field") -> RegularityReport:
    """Combine all regularity diagnostics at a boundary point.

    Precedence: an exterior cone certifies Regular outright; next the
    attainment probe, then the ball-limit decay, then the Wiener partial
    sums.  A Regular verdict always rests on the cone or on the Wiener sum
    clearing its threshold; an Irregular verdict always rests on decayed
    ball-limit estimates.  Deterministic given (inputs, seed).
    """
    if config is None:
        config = WalkConfig(n_samples=2000)
    N = engine.spec.N
    x0 = np.asarray(z0[0], dtype=float).reshape(N)
    t0 = float(z0[1])
    scale = _domain_scale(domain, N)
    z0p = _require_boundary(domain, (x0, t0), N, scale)
    notes = []

    cone = None
    if t0 == 0.0:
        cone = cone_test(engine, domain, (x0, t0),
                         config=replace(config, seed=config.seed + 101))
    else:
        notes.append("cone test skipped: vertex time is not zero")

    s0 = 0.3 * scale
    att = _attainment_probe(engine, domain, (x0, t0), s0,
                            replace(config, seed=config.seed + 211))
    att_val = att[-1][1] if att else None
    if not att:
        notes.append("attainment probe skipped: no interior approach ray found")

    if radii is None:
        radii = [s0 * 0.8, s0 * 0.4, s0 * 0.2, s0 * 0.1, s0 * 0.05]
    balls = ball_limit_test(engine, domain, (x0, t0), radii,
                            replace(config, seed=config.seed + 307))
    tail = balls[-3:]
    ball_decayed = len(tail) == 3 and all(
        est.value < IRREGULAR_THRESHOLD and est.stderr < 0.01 for _, est in tail
    )

    wiener = wiener_diagnostic(engine, domain, (x0, t0), lam=lam, n_range=n_range,
                               config=replace(config, seed=config.seed + 401),
                               orientation=orientation, check_boundary=False)
    wiener_regular = wiener.wiener_sum > DIVERGENCE_THRESHOLD

    if cone is not None:
        verdict = "Regular"
    elif att_val is not None and att_val < ATTAIN_LOW:
        verdict = "Irregular" if ball_decayed else "Inconclusive"
    elif att_val is not None and att_val >= ATTAIN_HIGH:
        verdict = "Regular" if wiener_regular else "Inconclusive"
    elif ball_decayed:
        verdict = "Irregular"
    elif wiener_regular:
        verdict = "Regular"
    else:
        verdict = "Inconclusive"

    params = {
        "lambda": lam,
        "orientation": orientation,
        "n_range": [n_range[0], n_range[-1]],
        "divergence_threshold": DIVERGENCE_THRESHOLD,
        "irregular_threshold": IRREGULAR_THRESHOLD,
        "attain_high": ATTAIN_HIGH,
        "attain_low": ATTAIN_LOW,
        "seed": config.seed,
        "dt": config.dt,
        "n_samples": config.n_samples,
        "scale": scale,
    }
    if cone is not None:
        params["lambda_admissible"] = getattr(cone, "lambda_admissible", None)
    return RegularityReport(
        point=tuple(z0p),
        verdict=verdict,
        wiener_partial_sums=wiener.wiener_partial_sums,
        ball_limit_series=tuple(balls),
        cone_found=cone,
        attainment=tuple(att),
        parameters=params,
        notes=tuple(notes) + wiener.notes,
    )
