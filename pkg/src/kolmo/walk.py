"""Exact-transition Monte Carlo for the process attached to the operator.

One backward step from (x, t) over a lag s draws the next position from
the exact Gaussian density xi -> Gamma(x, t; xi, t-s), whose parameters

    mean       E(-s) x
    covariance 2 E(-s) Ct(t-s, t) E(-s)^T

follow from completing the square in the fundamental solution (the tests
cross-check them against direct quadrature of Gamma).  Walks are advanced
in vectorized batches; every walk owns a counter-based Philox slice derived
from (seed, walk index), so results are bit-identical regardless of batch
size or thread count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import SingularGramian, StartOutsideDomain
from .geometry import Domain
from .kernel import KernelEngine, SpaceTimePoint

__all__ = ["WalkConfig", "WalkEstimate", "step_backward", "pwb_estimate",
           "hitting_probability"]

_NOISE_BLOCK = 32  # steps of noise fetched per walk at a time


@dataclass(frozen=True)
class WalkConfig:
    """Sampling parameters for the backward walk estimators.

    horizon is the minimal time: a walk is stopped once the next step
    would land below it.  For boundary-value estimates that stop counts
    as a truncation; for hitting estimates it is the normal end of the
    observation window.  first_step_depth adds geometrically refined
    check points 2^-s * dt inside the first step, which hitting targets
    hugging the start point (kernel level shells) need.
    """

    dt: float = 1e-3
    max_steps: int = 10_000
    n_samples: int = 10_000
    seed: int = 0
    bisection_iters: int = 20
    horizon: float = -math.inf
    refine_substeps: int = 0
    first_step_depth: int = 0
    batch_size: int = 16_384
    threads: int = 1

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.n_samples < 1:
            raise ValueError("n_samples must be at least 1")


@dataclass(frozen=True)
class WalkEstimate:
    """Monte Carlo estimate with provenance."""

    value: float
    stderr: float
    n_samples: int
    n_truncated: int
    seed: int

    @property
    def inconclusive(self) -> bool:
        return self.n_truncated > 0.01 * self.n_samples

    def __str__(self):
        flag = " [inconclusive]" if self.inconclusive else ""
        return "%.6g +- %.2g (n=%d, truncated=%d)%s" % (
            self.value, self.stderr, self.n_samples, self.n_truncated, flag)


def step_backward(engine: KernelEngine, z, dt: float, rng: np.random.Generator) -> SpaceTimePoint:
    """Draw one exact backward transition of length dt from z."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    x, t = z
    x = np.asarray(x, dtype=float)
    Em = engine.matrix_E(-dt)
    cov = 2.0 * Em @ engine.transition_gramian(t - dt, t) @ Em.T
    L = _chol_psd(cov[None])[0]
    g = rng.standard_normal(engine.spec.N)
    return SpaceTimePoint(Em @ x + L @ g, t - dt)


# ---------------------------------------------------------------------------
# batched machinery
# ---------------------------------------------------------------------------


def _chol_psd(C: np.ndarray) -> np.ndarray:
    """Batched Cholesky with a symmetric eigenvalue fallback."""
    try:
        return np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        pass
    w, V = np.linalg.eigh(C)
    if np.any(w < -1e-8 * np.max(np.abs(w))):
        raise SingularGramian("transition covariance has negative eigenvalues")
    w = np.clip(w, 0.0, None)
    return V * np.sqrt(w)[:, None, :]


def _noise_slice(seed: int, block: int, w0: int, nw: int, dim: int) -> np.ndarray:
    """Standard normals (nw, _NOISE_BLOCK, dim) for walks w0..w0+nw-1.

    Each walk's slice is a deterministic function of (seed, walk index,
    block): uniforms consume exactly one 64-bit Philox draw per value, so
    walk streams are fixed counter ranges (advance moves whole 4-draw
    blocks, hence the alignment), and Box-Muller maps pairs to normals.
    """
    per_walk = _NOISE_BLOCK * dim  # multiple of 4 since _NOISE_BLOCK is
    bg = np.random.Philox(key=[seed & (2**64 - 1), block])
    bg.advance((w0 * per_walk) // 4)
    u = np.random.Generator(bg).random((nw, per_walk))
    r = np.sqrt(-2.0 * np.log(np.maximum(u[:, 0::2], 5e-324)))
    ang = (2.0 * np.pi) * u[:, 1::2]
    out = np.empty((nw, per_walk))
    out[:, 0::2] = r * np.cos(ang)
    out[:, 1::2] = r * np.sin(ang)
    return out.reshape(nw, _NOISE_BLOCK, dim)


class _Stepper:
    """Per-step transition operators at a common clock t_k = t0 - k dt."""

    def __init__(self, engine: KernelEngine, t0: float, dt: float):
        self.engine = engine
        self.t0 = t0
        self.dt = dt
        self.Em = engine.matrix_E(-dt)
        self._full = {}

    def full_chol(self, k: int) -> np.ndarray:
        L = self._full.get(k)
        if L is None:
            tk = self.t0 - k * self.dt
            cov = 2.0 * self.Em @ self.engine.transition_gramian(tk - self.dt, tk) @ self.Em.T
            L = _chol_psd(cov[None])[0]
            self._full[k] = L
        return L

    def propose(self, X: np.ndarray, k: int, G: np.ndarray) -> np.ndarray:
        return X @ self.Em.T + G @ self.full_chol(k).T

    def partial_shared(self, X: np.ndarray, k: int, G: np.ndarray, theta: float) -> np.ndarray:
        """Positions after the fraction theta of step k, frozen noise G."""
        s = theta * self.dt
        tk = self.t0 - k * self.dt
        Em = self.engine.matrix_E(-s)
        cov = 2.0 * Em @ self.engine.transition_gramian(tk - s, tk) @ Em.T
        L = _chol_psd(cov[None])[0]
        return X @ Em.T + G @ L.T

    def partial_per_walk(self, X: np.ndarray, k: int, G: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """Same, with one theta per walk (used by exit bisection)."""
        s = theta * self.dt
        tk = self.t0 - k * self.dt
        Em = self.engine.matrix_E_many(-s)
        Ct = self.engine.transition_gramian_many(tk - s, tk)
        cov = 2.0 * np.einsum("wij,wjk,wlk->wil", Em, Ct, Em)
        L = _chol_psd(cov)
        return np.einsum("wij,wj->wi", Em, X) + np.einsum("wij,wj->wi", L, G)


def _batches(n: int, size: int):
    for w0 in range(0, n, size):
        yield w0, min(n, w0 + size)


def _run_batches(n_samples: int, batch_size: int, threads: int, work):
    if threads <= 1:
        for w0, w1 in _batches(n_samples, batch_size):
            work(w0, w1)
        return
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=threads) as pool:
        list(pool.map(lambda b: work(*b), list(_batches(n_samples, batch_size))))


def _finish(values: np.ndarray, truncated: np.ndarray, config: WalkConfig) -> WalkEstimate:
    n = values.size
    value = float(np.sum(values) / n)
    stderr = float(np.std(values, ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    return WalkEstimate(value, stderr, n, int(np.sum(truncated)), config.seed)


def pwb_estimate(engine: KernelEngine, domain: Domain, boundary_data, z,
                 config: WalkConfig) -> WalkEstimate:
    """Monte Carlo generalized Dirichlet solution at z.

    Averages boundary_data at the first exit of backward walks from the
    domain; the exit is localized within a step by bisection in the step's
    time fraction with the Gaussian increment frozen.  boundary_data must
    be vectorized: phi(X, t) -> values for X of shape (W, N), t (W,).

    Walks that exhaust max_steps or would cross the horizon contribute the
    datum at their truncation point and are counted in n_truncated.
    """
    N = engine.spec.N
    x0 = np.asarray(z[0], dtype=float).reshape(N)
    t0 = float(z[1])
    if not domain.contains((x0, t0)):
        raise StartOutsideDomain("walk start %s not inside the domain" % (z,))
    stepper = _Stepper(engine, t0, config.dt)
    values = np.zeros(config.n_samples)
    truncated = np.zeros(config.n_samples, dtype=bool)

    def work(w0, w1):
        nw = w1 - w0
        X = np.tile(x0, (nw, 1))
        idx = np.arange(nw)
        noise = None
        noise_base = 0
        k = 0
        while idx.size:
            tk = t0 - k * config.dt
            tk1 = tk - config.dt
            if k >= config.max_steps or tk1 < config.horizon:
                values[w0 + idx] = boundary_data(X, np.full(idx.size, tk))
                truncated[w0 + idx] = True
                break
            if k % _NOISE_BLOCK == 0:
                noise_base = int(idx[0])
                noise = _noise_slice(config.seed, k // _NOISE_BLOCK,
                                     w0 + noise_base, int(idx[-1]) - noise_base + 1, N)
            G = noise[idx - noise_base, k % _NOISE_BLOCK]
            prop = stepper.propose(X, k, G)
            inside = domain.contains_many(prop, np.full(idx.size, tk1))
            out = np.nonzero(~inside)[0]
            if out.size:
                lo = np.zeros(out.size)
                hi = np.ones(out.size)
                Xo, Go = X[out], G[out]
                for _ in range(config.bisection_iters):
                    mid = 0.5 * (lo + hi)
                    pts = stepper.partial_per_walk(Xo, k, Go, mid)
                    ins = domain.contains_many(pts, tk - mid * config.dt)
                    lo = np.where(ins, mid, lo)
                    hi = np.where(ins, hi, mid)
                exit_pts = stepper.partial_per_walk(Xo, k, Go, hi)
                values[w0 + idx[out]] = boundary_data(exit_pts, tk - hi * config.dt)
            X = prop[inside]
            idx = idx[inside]
            k += 1

    _run_batches(config.n_samples, config.batch_size, config.threads, work)
    return _finish(values, truncated, config)


def _check_grid(config: WalkConfig, first: bool):
    thetas = []
    if first and config.first_step_depth > 0:
        thetas.extend(0.5**s for s in range(config.first_step_depth, 0, -1))
    m = 2**config.refine_substeps
    thetas.extend(j / m for j in range(1, m))
    return thetas


def hitting_probability(engine: KernelEngine, target: Domain, z,
                        config: WalkConfig) -> WalkEstimate:
    """Fraction of backward walks from z that enter the target set.

    The discrete trajectory is checked at every proposal and at frozen-noise
    interpolation points within each step: a uniform dyadic grid of depth
    refine_substeps, plus a geometric grid on the first step (see
    WalkConfig).  The check points do not depend on the target, so
    estimates are exactly monotone in the target set under a common seed.
    The start point itself is never counted.

    Walks end without a hit once the next step would cross the horizon;
    only max_steps exhaustion counts as truncation.
    """
    N = engine.spec.N
    x0 = np.asarray(z[0], dtype=float).reshape(N)
    t0 = float(z[1])
    stepper = _Stepper(engine, t0, config.dt)
    hits = np.zeros(config.n_samples)
    truncated = np.zeros(config.n_samples, dtype=bool)

    def work(w0, w1):
        nw = w1 - w0
        X = np.tile(x0, (nw, 1))
        idx = np.arange(nw)
        noise = None
        noise_base = 0
        k = 0
        while idx.size:
            tk = t0 - k * config.dt
            tk1 = tk - config.dt
            if tk < config.horizon:
                break
            if k >= config.max_steps:
                truncated[w0 + idx] = True
                break
            if k % _NOISE_BLOCK == 0:
                noise_base = int(idx[0])
                noise = _noise_slice(config.seed, k // _NOISE_BLOCK,
                                     w0 + noise_base, int(idx[-1]) - noise_base + 1, N)
            G = noise[idx - noise_base, k % _NOISE_BLOCK]
            prop = stepper.propose(X, k, G)
            hit_now = np.zeros(idx.size, dtype=bool)
            # check points below the horizon never count as hits
            for theta in _check_grid(config, k == 0):
                tc = tk - theta * config.dt
                if tc < config.horizon:
                    continue
                pts = stepper.partial_shared(X, k, G, theta)
                hit_now |= target.contains_many(pts, np.full(idx.size, tc))
            if tk1 >= config.horizon:
                hit_now |= target.contains_many(prop, np.full(idx.size, tk1))
            if np.any(hit_now):
                hits[w0 + idx[hit_now]] = 1.0
                X = prop[~hit_now]
                idx = idx[~hit_now]
            else:
                X = prop
            if tk1 < config.horizon:
                break
            k += 1

    _run_batches(config.n_samples, config.batch_size, config.threads, work)
    return _finish(hits, truncated, config)


def with_seed(config: WalkConfig, seed: int) -> WalkConfig:
    """Copy of config with a different stream seed."""
    return replace(config, seed=seed)
