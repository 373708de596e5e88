"""Running cost, discrete adjoint sweep and control gradient.

The cost is the left-endpoint rectangle rule

    J = sum_n dt * [ a1/N sum_k |x_k^n - x_f|^2
                     + a2/M sum_j |u_j^n|^2 + a3/M sum_j |y_j^n - x_f|^2 ]

over ``n = 0..n_steps-1``. The costate ``(p, q, r)`` is the transpose-Jacobian
recursion of the Euler update, started from zero at the final time, so the
assembled gradient is the exact derivative of this discrete ``J``:

    p^n = p^{n+1} + dt (dL/dx + (dF/dx)^T q^{n+1})
    q^n = q^{n+1} + dt (p^{n+1} + (dF/dv)^T q^{n+1})
    r^n = r^{n+1} + dt (dL/dy + (dF/dy)^T q^{n+1})
    dJ/du^n = dt (r^{n+1} + 2 a2/M u^n)

where ``F`` is the evader acceleration for the partition used at step ``n``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numba import njit

from .dynamics import (BatchSchedule, CostParams, Grid, ModelParams, State, Trajectory,
                       integrate_forward, schedule_layout)
from .errors import DegenerateInputError, ScheduleMismatchError
from .kernels import COLLISION_R2, _f_of_r2, _f_radial_slope, _g_of_r2, _g_radial_slope


@dataclass
class CostBreakdown:
    tracking: float
    control_effort: float
    driver_tracking: float

    @property
    def total(self) -> float:
        return self.tracking + self.control_effort + self.driver_tracking

    def as_dict(self) -> dict:
        return {"tracking": self.tracking, "control_effort": self.control_effort,
                "driver_tracking": self.driver_tracking, "total": self.total}


@dataclass
class CostateTrajectory:
    p: np.ndarray  # (n_steps + 1, N, d)
    q: np.ndarray
    r: np.ndarray  # (n_steps + 1, M, d)


def running_cost(s: State, u_now, cp: CostParams, N: Optional[int] = None,
                 M: Optional[int] = None) -> float:
    N = s.N if N is None else N
    M = s.M if M is None else M
    xf = np.asarray(cp.x_f)
    u_now = np.asarray(u_now, dtype=float)
    return float(cp.alpha1 / N * np.sum((s.x - xf) ** 2)
                 + cp.alpha2 / M * np.sum(u_now ** 2)
                 + cp.alpha3 / M * np.sum((s.y - xf) ** 2))


def total_cost(traj: Trajectory, u, cp: CostParams) -> CostBreakdown:
    n = traj.n_steps
    u = np.asarray(u, dtype=float)
    if u.shape[0] != n:
        raise ScheduleMismatchError(f"control has {u.shape[0]} steps, trajectory {n}")
    dt = traj.grid.dt
    N, M = traj.x.shape[1], traj.y.shape[1]
    xf = np.asarray(cp.x_f)
    return CostBreakdown(
        tracking=float(dt * cp.alpha1 / N * np.sum((traj.x[:n] - xf) ** 2)),
        control_effort=float(dt * cp.alpha2 / M * np.sum(u ** 2)),
        driver_tracking=float(dt * cp.alpha3 / M * np.sum((traj.y[:n] - xf) ** 2)),
    )


@njit(cache=True, nogil=True)
def _adjoint_step(x, v, y, q, members, offsets, a, famp, fdec, gs, gc, gx, gv, gy):
    """Transpose-Jacobian products (dF/dx)^T q, (dF/dv)^T q, (dF/dy)^T q.

    Kernel Jacobians are symmetric and even in the displacement, and all
    members of a batch share one weight, which collapses the sums to
    ``c * sum_k J(x_k - x_i) (q_k - q_i)``.
    """
    N, d = x.shape
    M = y.shape[0]
    for b in range(offsets.shape[0] - 1):
        lo = offsets[b]
        hi = offsets[b + 1]
        size = hi - lo
        for ii in range(lo, hi):
            i = members[ii]
            for c in range(d):
                gx[i, c] = 0.0
                gv[i, c] = 0.0
            if size < 2:
                continue
            w = 1.0 / (size - 1)
            for kk in range(lo, hi):
                k = members[kk]
                if k == i:
                    continue
                r2 = 0.0
                rq = 0.0
                for c in range(d):
                    dc = x[k, c] - x[i, c]
                    r2 += dc * dc
                    rq += dc * (q[k, c] - q[i, c])
                if r2 < COLLISION_R2:
                    return 1
                gval = _g_of_r2(r2, gs, gc)
                slope = _g_radial_slope(r2, gs, gc)
                for c in range(d):
                    dq = q[k, c] - q[i, c]
                    gx[i, c] += w * (gval * dq + slope * (x[k, c] - x[i, c]) * rq)
                    gv[i, c] += w * a * dq
    inv_m = 1.0 / M
    for j in range(M):
        for c in range(d):
            gy[j, c] = 0.0
    for i in range(N):
        for j in range(M):
            r2 = 0.0
            rq = 0.0
            for c in range(d):
                dc = y[j, c] - x[i, c]
                r2 += dc * dc
                rq += dc * q[i, c]
            fval = _f_of_r2(r2, famp, fdec)
            slope = _f_radial_slope(r2, fval, fdec)
            for c in range(d):
                jq = fval * q[i, c] + slope * (y[j, c] - x[i, c]) * rq
                gx[i, c] += inv_m * jq
                gy[j, c] -= inv_m * jq
    return 0


@njit(cache=True, nogil=True)
def _backward(X, V, Y, P, Q, R, dt, members, offsets, rbm, a, famp, fdec, gs, gc,
              w_track, w_driver, xf):
    n_steps = X.shape[0] - 1
    N, d = X.shape[1], X.shape[2]
    M = Y.shape[1]
    gx = np.empty((N, d))
    gv = np.empty((N, d))
    gy = np.empty((M, d))
    P[n_steps] = 0.0
    Q[n_steps] = 0.0
    R[n_steps] = 0.0
    for n in range(n_steps - 1, -1, -1):
        row = members[n] if rbm else members[0]
        if _adjoint_step(X[n], V[n], Y[n], Q[n + 1], row, offsets, a, famp, fdec, gs, gc,
                         gx, gv, gy):
            return n
        for i in range(N):
            for c in range(d):
                P[n, i, c] = P[n + 1, i, c] + dt * (w_track * (X[n, i, c] - xf[c]) + gx[i, c])
                Q[n, i, c] = Q[n + 1, i, c] + dt * (P[n + 1, i, c] + gv[i, c])
        for j in range(M):
            for c in range(d):
                R[n, j, c] = R[n + 1, j, c] + dt * (w_driver * (Y[n, j, c] - xf[c]) + gy[j, c])
    return -1


def integrate_costate(traj: Trajectory, u, mp: ModelParams,
                      schedule: Optional[BatchSchedule] = None) -> CostateTrajectory:
    """Backward sweep for the trajectory produced with the same ``schedule``.

    Step ``n+1 -> n`` reuses partition ``n`` of the forward pass, so the
    partitions are traversed in reverse order. ``u`` is accepted for
    signature symmetry; the costate itself does not depend on it.
    """
    n = traj.n_steps
    if np.shape(u)[0] != n:
        raise ScheduleMismatchError(f"control has {np.shape(u)[0]} steps, trajectory {n}")
    if schedule is not None and schedule.n_steps != n:
        raise ScheduleMismatchError(
            f"schedule has {schedule.n_steps} steps but the trajectory has {n}")
    members, offsets, rbm = schedule_layout(schedule, traj.x.shape[1], n)
    cp = mp.cost
    P = np.empty_like(traj.x)
    Q = np.empty_like(traj.x)
    R = np.empty_like(traj.y)
    failed = _backward(traj.x, traj.v, traj.y, P, Q, R, traj.grid.dt, members, offsets, rbm,
                       *mp.kernel.as_tuple(), 2.0 * cp.alpha1 / mp.N, 2.0 * cp.alpha3 / mp.M,
                       np.asarray(cp.x_f, dtype=float))
    if failed >= 0:
        raise DegenerateInputError(f"coincident evaders at step {failed}", step=int(failed))
    return CostateTrajectory(P, Q, R)


def control_gradient(costate: CostateTrajectory, u, cp: CostParams, grid: Grid) -> np.ndarray:
    """Exact derivative of the discrete cost with respect to every ``u[n, j, c]``."""
    u = np.asarray(u, dtype=float)
    M = u.shape[1]
    return grid.dt * (costate.r[1:] + (2.0 * cp.alpha2 / M) * u)


def cost_and_gradient(s0: State, u, grid: Grid, mp: ModelParams,
                      schedule: Optional[BatchSchedule] = None):
    """Forward sweep, cost, backward sweep and gradient in one call."""
    traj = integrate_forward(s0, u, grid, mp, schedule)
    cost = total_cost(traj, u, mp.cost)
    lam = integrate_costate(traj, u, mp, schedule)
    return cost, control_gradient(lam, u, mp.cost, grid), traj
