"""Gradient descent with a halving/doubling step size for the fixed-horizon OCP."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .adjoint import control_gradient, integrate_costate, total_cost
from .dynamics import BatchSchedule, Grid, ModelParams, State, integrate_forward
from .errors import DegenerateInputError, InvalidParameterError, OptimizationError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GdConfig:
    alpha0: float = 0.1
    decrease_ratio: float = 1e-6
    alpha_min: float = 1e-15
    max_iters: int = 20000
    cost_tol: float = 1e-6

    def __post_init__(self):
        if not self.alpha0 > self.alpha_min > 0:
            raise InvalidParameterError("need alpha0 > alpha_min > 0")
        if not (0 < self.decrease_ratio < 1 and 0 <= self.cost_tol < 1):
            raise InvalidParameterError("decrease_ratio and cost_tol must lie in (0, 1)")
        if self.max_iters < 0:
            raise InvalidParameterError("max_iters must be nonnegative")


@dataclass
class OcpResult:
    u_opt: np.ndarray
    cost_history: list
    gd_iterations: int
    ev_calculations: int
    wall_time: float
    stop_reason: str
    # rows of (iteration, cost, step size, evaluations so far)
    log: list = field(default_factory=list)

    @property
    def cost(self) -> float:
        return self.cost_history[-1]

    @property
    def converged(self) -> bool:
        return self.stop_reason != "max_iters"


def solve_ocp(s0: State, u_guess, grid: Grid, mp: ModelParams,
              schedule: Optional[BatchSchedule] = None,
              cfg: GdConfig = GdConfig()) -> OcpResult:
    """Minimize the discrete cost over the control schedule.

    The descent direction is the gradient divided by ``dt``, i.e. the L2
    gradient of the piecewise-constant control, so ``alpha0`` has the same
    meaning for every time step. A trial ``u - alpha * direction`` is
    accepted when ``J_trial <= J * (1 - decrease_ratio)``; otherwise alpha
    is halved and the trial repeated. After an accepted step the next
    iteration starts from ``2 * alpha``. A trial whose forward sweep hits
    colliding evaders or a non-finite cost counts as rejected.

    With a ``schedule`` the reduced model is optimized with those batches
    held fixed for the whole run.
    """
    t0 = time.perf_counter()
    u = np.array(u_guess, dtype=float, copy=True)

    def evaluate(uu):
        traj = integrate_forward(s0, uu, grid, mp, schedule)
        return total_cost(traj, uu, mp.cost).total, traj

    try:
        J, traj = evaluate(u)
    except DegenerateInputError as exc:
        raise OptimizationError(f"initial guess is infeasible: {exc}", iterate=0) from exc
    if not math.isfinite(J):
        raise OptimizationError("non-finite cost at the initial guess", iterate=0)
    ev = 1
    history = [J]
    alpha = cfg.alpha0
    rows = [(0, J, alpha, ev)]
    iters = 0
    reason = "max_iters"
    while iters < cfg.max_iters:
        lam = integrate_costate(traj, u, mp, schedule)
        direction = control_gradient(lam, u, mp.cost, grid) / grid.dt
        if not np.any(direction):
            reason = "stationary"
            break
        accepted = False
        while alpha >= cfg.alpha_min:
            trial = u - alpha * direction
            try:
                J_trial, traj_trial = evaluate(trial)
            except DegenerateInputError:
                J_trial = math.inf
            ev += 1
            if math.isfinite(J_trial) and J_trial <= J * (1.0 - cfg.decrease_ratio):
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            reason = "alpha_min"
            break
        iters += 1
        rel = (J - J_trial) / J if J > 0 else 0.0
        u, J, traj = trial, J_trial, traj_trial
        history.append(J)
        rows.append((iters, J, alpha, ev))
        if rel < cfg.cost_tol:
            reason = "cost_tol"
            break
        alpha *= 2.0
    wall = time.perf_counter() - t0
    log.debug("ocp stopped (%s) after %d iterations, %d evaluations, J=%.6g",
              reason, iters, ev, J)
    return OcpResult(u_opt=u, cost_history=history, gd_iterations=iters, ev_calculations=ev,
                     wall_time=wall, stop_reason=reason, log=rows)
