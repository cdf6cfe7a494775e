"""Explicit finite-difference oracle for the operator on boxes.

Marches du/dt = t^(2 theta) Lap_x' u + <Bx, grad u> forward in time with
central second differences on the diffusing coordinates and first-order
upwinding on the drift.  The scheme is monotone under the CFL condition,
which is what the comparison-based cross checks against the Monte Carlo
estimators rely on.  The degenerate slice t = 0 needs no special casing:
the diffusion coefficient simply vanishes there.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import CFLViolation
from .geometry import Domain
from .operator import OperatorSpec

__all__ = ["Grid", "fd_solve", "reduit_relaxation", "cfl_limit"]


@dataclass
class Grid:
    """Solution values on a tensor grid: values[level, node...]."""

    axes: list  # per-axis node arrays
    times: np.ndarray
    values: np.ndarray

    def value_at(self, x, t: float) -> float:
        """Multilinear interpolation in space, linear in time."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        kt = np.searchsorted(self.times, t)
        kt = min(max(kt, 1), self.times.size - 1)
        t0, t1 = self.times[kt - 1], self.times[kt]
        w = 0.0 if t1 == t0 else (t - t0) / (t1 - t0)
        v0 = self._interp_space(self.values[kt - 1], x)
        v1 = self._interp_space(self.values[kt], x)
        return float((1.0 - w) * v0 + w * v1)

    def _interp_space(self, level: np.ndarray, x) -> float:
        idx = []
        wts = []
        for i, ax in enumerate(self.axes):
            j = np.searchsorted(ax, x[i])
            j = min(max(j, 1), ax.size - 1)
            lo, hi = ax[j - 1], ax[j]
            w = 0.0 if hi == lo else (x[i] - lo) / (hi - lo)
            idx.append((j - 1, j))
            wts.append((1.0 - w, w))
        out = 0.0
        for corner in itertools.product(*[(0, 1)] * len(self.axes)):
            weight = math.prod(wts[i][c] for i, c in enumerate(corner))
            out += weight * level[tuple(idx[i][c] for i, c in enumerate(corner))]
        return out

    def mesh(self) -> np.ndarray:
        """Node coordinates, shape (*spatial_shape, N)."""
        grids = np.meshgrid(*self.axes, indexing="ij")
        return np.stack(grids, axis=-1)


def cfl_limit(spec: OperatorSpec, box, dxs, t_range) -> float:
    """Largest stable dt for the explicit scheme on this grid."""
    lo, hi = (np.asarray(b, dtype=float) for b in box)
    tmax = max(abs(t_range[0]), abs(t_range[1]))
    diff = 2.0 * tmax ** (2 * spec.theta) * sum(
        1.0 / dxs[i] ** 2 for i in range(spec.m)
    )
    corner = np.maximum(np.abs(lo), np.abs(hi))
    drift = sum(
        float(np.abs(spec.B[i]) @ corner) / dxs[i] for i in range(spec.N)
    )
    total = diff + drift
    return math.inf if total == 0.0 else 1.0 / total


def _evolve_level(spec, axes, dxs, VEL, u, t: float) -> np.ndarray:
    """One explicit step of length 1 (the caller scales by dt): returns rhs."""
    rhs = np.zeros_like(u)
    coef = t ** (2 * spec.theta)
    ndim = len(axes)

    def sl(axis, lo, hi):
        s = [slice(None)] * ndim
        s[axis] = slice(lo, hi)
        return tuple(s)

    for i in range(spec.m):
        mid = sl(i, 1, -1)
        plus = sl(i, 2, None)
        minus = sl(i, 0, -2)
        rhs[mid] += coef * (u[plus] - 2.0 * u[mid] + u[minus]) / dxs[i] ** 2
    for i in range(spec.N):
        vel = VEL[i]
        if vel is None:
            continue
        mid = sl(i, 1, -1)
        plus = sl(i, 2, None)
        minus = sl(i, 0, -2)
        vpos = np.maximum(vel[mid], 0.0)
        vneg = np.minimum(vel[mid], 0.0)
        rhs[mid] += vpos * (u[plus] - u[mid]) / dxs[i] + vneg * (u[mid] - u[minus]) / dxs[i]
    return rhs


def _prepare(spec, box, t_range, n_nodes, n_levels):
    lo, hi = (np.asarray(b, dtype=float) for b in box)
    if lo.size != spec.N:
        raise ValueError("box dimension %d does not match N=%d" % (lo.size, spec.N))
    n_nodes = [int(n) for n in np.broadcast_to(n_nodes, (spec.N,))]
    axes = [np.linspace(lo[i], hi[i], n_nodes[i]) for i in range(spec.N)]
    dxs = [ax[1] - ax[0] for ax in axes]
    times = np.linspace(t_range[0], t_range[1], int(n_levels) + 1)
    dt = times[1] - times[0]
    limit = cfl_limit(spec, box, dxs, t_range)
    if dt > limit:
        raise CFLViolation("dt=%g exceeds the CFL limit %g" % (dt, limit))
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    VEL = []
    for i in range(spec.N):
        if np.any(spec.B[i] != 0.0):
            VEL.append(mesh @ spec.B[i])
        else:
            VEL.append(None)
    lateral = np.zeros(mesh.shape[:-1], dtype=bool)
    for i in range(spec.N):
        s = [slice(None)] * spec.N
        s[i] = 0
        lateral[tuple(s)] = True
        s[i] = -1
        lateral[tuple(s)] = True
    return axes, dxs, times, dt, mesh, VEL, lateral


def fd_solve(spec: OperatorSpec, box, t_range, boundary_data, n_nodes=101,
             n_levels=None) -> Grid:
    """Solve the Dirichlet problem on box x t_range with data on the
    parabolic boundary (bottom and lateral faces; the top is free).

    boundary_data is vectorized: phi(X, t) -> values, X of shape (..., N).

    Raises
    ------
    CFLViolation
        When the requested step count violates the stability bound.
    """
    if n_levels is None:
        lo, hi = (np.asarray(b, dtype=float) for b in box)
        nn = [int(n) for n in np.broadcast_to(n_nodes, (spec.N,))]
        dxs = [(hi[i] - lo[i]) / (nn[i] - 1) for i in range(spec.N)]
        limit = cfl_limit(spec, box, dxs, t_range)
        n_levels = int(math.ceil((t_range[1] - t_range[0]) / (0.9 * limit))) + 1
    axes, dxs, times, dt, mesh, VEL, lateral = _prepare(
        spec, box, t_range, n_nodes, n_levels
    )
    flat = mesh.reshape(-1, spec.N)
    shape = mesh.shape[:-1]
    values = np.empty((times.size,) + shape)
    values[0] = np.asarray(boundary_data(flat, np.full(flat.shape[0], times[0]))).reshape(shape)
    for k in range(1, times.size):
        u = values[k - 1]
        unew = u + dt * _evolve_level(spec, axes, dxs, VEL, u, times[k - 1])
        bc = np.asarray(
            boundary_data(flat[lateral.ravel()], np.full(int(lateral.sum()), times[k]))
        )
        unew[lateral] = bc
        values[k] = unew
    return Grid(axes, times, values)


def reduit_relaxation(spec: OperatorSpec, box, t_range, target: Domain,
                      n_nodes=101, n_levels=None, iters: int = 50,
                      tol: float = 1e-8) -> Grid:
    """Grid approximation of the balayage of 1 on the target set.

    Starts from v = 1 and sweeps: outside the target, v is replaced by the
    one-level discrete-evolution value clamped at 0 (zero data on the
    grid's own boundary), while v = 1 is kept on target nodes.  Sweeps are
    pointwise non-increasing; the forward-only coupling makes them
    converge after the first pass, later passes verify the fixed point.
    """
    if n_levels is None:
        lo, hi = (np.asarray(b, dtype=float) for b in box)
        nn = [int(n) for n in np.broadcast_to(n_nodes, (spec.N,))]
        dxs = [(hi[i] - lo[i]) / (nn[i] - 1) for i in range(spec.N)]
        limit = cfl_limit(spec, box, dxs, t_range)
        n_levels = int(math.ceil((t_range[1] - t_range[0]) / (0.9 * limit))) + 1
    axes, dxs, times, dt, mesh, VEL, lateral = _prepare(
        spec, box, t_range, n_nodes, n_levels
    )
    flat = mesh.reshape(-1, spec.N)
    shape = mesh.shape[:-1]
    mask = np.empty((times.size,) + shape, dtype=bool)
    for k, t in enumerate(times):
        mask[k] = target.contains_many(flat, np.full(flat.shape[0], t)).reshape(shape)
    v = np.ones((times.size,) + shape)
    for _ in range(max(1, iters)):
        prev = v.copy()
        lvl = np.zeros(shape)
        lvl[mask[0]] = 1.0
        v[0] = lvl
        for k in range(1, times.size):
            ev = v[k - 1] + dt * _evolve_level(spec, axes, dxs, VEL, v[k - 1], times[k - 1])
            ev = np.maximum(ev, 0.0)
            ev[lateral] = 0.0
            ev[mask[k]] = 1.0
            v[k] = ev
        change = float(np.max(np.abs(v - prev)))
        if change < tol:
            break
    return Grid(axes, times, v)
