"""Noisy plant: multiplicative velocity noise integrated with Milstein.

Each evader carries one scalar Brownian path ``B^i``; the velocity obeys

    dv_i = F_i dt + sigma v_i dB^i

with ``F_i`` the deterministic all-to-all acceleration. Because the noise is
diagonal in the evader index and linear in ``v_i``, the Milstein update is

    v_i += F_i dt + sigma v_i dB + 0.5 sigma^2 v_i (dB^2 - dt)

with the same scalar ``dB`` for every component of ``v_i``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numba import njit

from .dynamics import (Grid, ModelParams, State, Trajectory, _accel, _check_control,
                       _full_layout)
from .errors import DegenerateInputError, InvalidParameterError, ScheduleMismatchError


@dataclass(frozen=True)
class SdeParams:
    sigma: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise InvalidParameterError("sigma must be nonnegative")


def brownian_increments(seed: int, n_steps: int, N: int, dt: float) -> np.ndarray:
    """``(n_steps, N)`` array of independent Normal(0, dt) increments."""
    rng = np.random.Generator(np.random.PCG64(seed))
    return rng.standard_normal((n_steps, N)) * np.sqrt(dt)


@njit(cache=True, nogil=True)
def _milstein(X, V, Y, u, dB, dt, sigma, members, offsets, a, famp, fdec, gs, gc):
    n_steps = u.shape[0]
    N, d = X.shape[1], X.shape[2]
    acc = np.empty((N, d))
    scratch = np.empty(d)
    half_s2 = 0.5 * sigma * sigma
    for n in range(n_steps):
        if _accel(X[n], V[n], Y[n], members[0], offsets, a, famp, fdec, gs, gc, acc, scratch):
            return n
        for i in range(N):
            for c in range(d):
                X[n + 1, i, c] = X[n, i, c] + dt * V[n, i, c]
                V[n + 1, i, c] = V[n, i, c] + dt * acc[i, c]
            if sigma != 0.0:
                db = dB[n, i]
                mult = sigma * db + half_s2 * (db * db - dt)
                for c in range(d):
                    V[n + 1, i, c] += mult * V[n, i, c]
        for j in range(Y.shape[1]):
            for c in range(d):
                Y[n + 1, j, c] = Y[n, j, c] + dt * u[n, j, c]
    return -1


def integrate_sde(s0: State, u, grid: Grid, mp: ModelParams, sp: SdeParams,
                  increments: Optional[np.ndarray] = None) -> Trajectory:
    """Milstein path of the noisy full system.

    ``increments`` overrides the Brownian increments drawn from ``sp.seed``;
    it must have shape ``(n_steps, N)``.
    """
    n = grid.n_steps
    u = _check_control(u, n, s0.M, s0.x.shape[1])
    if increments is None:
        increments = brownian_increments(sp.seed, n, s0.N, grid.dt)
    increments = np.ascontiguousarray(increments, dtype=float)
    if increments.shape != (n, s0.N):
        raise ScheduleMismatchError(
            f"increments have shape {increments.shape}, expected {(n, s0.N)}")
    members, offsets = _full_layout(s0.N)
    X = np.empty((n + 1,) + s0.x.shape)
    V = np.empty_like(X)
    Y = np.empty((n + 1,) + s0.y.shape)
    X[0], V[0], Y[0] = s0.x, s0.v, s0.y
    failed = _milstein(X, V, Y, u, increments, grid.dt, float(sp.sigma), members, offsets,
                       *mp.kernel.as_tuple())
    if failed >= 0:
        raise DegenerateInputError(f"coincident evaders at step {failed}", step=int(failed))
    return Trajectory(X, V, Y, grid)
