"""Receding-horizon control: optimize on a long window, apply a short prefix.

At each window start ``tau_m = m * tau`` the plant state is read exactly,
an OCP over ``[tau_m, tau_m + t_hat]`` is solved against the predictor model
(shifted to ``[0, t_hat]``, the dynamics being autonomous), and the first
``tau`` of the solution drives the plant. The next window is warm-started
with the remaining tail of the solution, zero-filled at the end.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .adjoint import CostBreakdown, total_cost
from .dynamics import (Grid, ModelParams, State, Trajectory, integrate_forward,
                       sample_batch_schedule)
from .errors import InvalidParameterError, OptimizationError
from .optimizer import GdConfig, OcpResult, solve_ocp
from .stochastic import SdeParams, brownian_increments, integrate_sde

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MpcConfig:
    tau: float = 1.5
    t_hat: float = 3.0
    # None predicts with the full model, an int with random batches of that size
    batch_size: Optional[int] = 2
    seed: int = 0
    reseed: str = "fresh"  # "fresh": new batches per window, "fixed": same seed each window
    gd: GdConfig = field(default_factory=GdConfig)

    def __post_init__(self):
        if not 0 < self.tau <= self.t_hat:
            raise InvalidParameterError("need 0 < tau <= t_hat")
        if self.reseed not in ("fresh", "fixed"):
            raise InvalidParameterError(f"unknown reseed policy {self.reseed!r}")

    def window_seed(self, m: int) -> int:
        if self.reseed == "fixed":
            return self.seed
        return int(np.random.SeedSequence([self.seed, m]).generate_state(1)[0])


@dataclass
class WindowReport:
    window: int
    t_start: float
    t_predict_end: float
    t_apply_end: float
    gd_iters: int
    ev_calculations: int
    window_cost: float
    wall_time: float
    stop_reason: str
    schedule_seed: Optional[int] = None


@dataclass
class ClosedLoopResult:
    plant_trajectory: Trajectory
    applied_control: np.ndarray
    window_reports: list
    realized_cost: CostBreakdown
    window_solutions: list = field(default_factory=list)


def _steps(length: float, dt: float, name: str) -> int:
    k = int(round(length / dt))
    if k < 1 or abs(k * dt - length) > 1e-9 * max(1.0, length):
        raise InvalidParameterError(f"{name}={length} is not a positive multiple of dt={dt}")
    return k


def run_mpc(s0: State, u0, mp: ModelParams, grid: Grid, cfg: MpcConfig,
            plant: Optional[SdeParams] = None) -> ClosedLoopResult:
    """Closed loop over ``grid``; ``plant=None`` is the deterministic full system.

    ``u0`` is the initial guess over one predictive horizon ``t_hat``. With a
    noisy plant the Brownian path for all of ``[0, T]`` is drawn once from
    ``plant.seed``, so runs with equal seeds see the same noise.
    """
    dt = grid.dt
    tau_k = _steps(cfg.tau, dt, "tau")
    hat_k = _steps(cfg.t_hat, dt, "t_hat")
    total = grid.n_steps
    if total < 1:
        raise InvalidParameterError("closed loop needs a positive horizon")
    guess = np.array(u0, dtype=float, copy=True)
    if guess.shape != (hat_k, mp.M, mp.d):
        raise InvalidParameterError(
            f"initial guess has shape {guess.shape}, expected {(hat_k, mp.M, mp.d)}")
    window_grid = Grid.from_steps(dt, hat_k)
    noise = None
    if plant is not None:
        noise = brownian_increments(plant.seed, total, mp.N, dt)

    X = np.empty((total + 1, mp.N, mp.d))
    V = np.empty_like(X)
    Y = np.empty((total + 1, mp.M, mp.d))
    X[0], V[0], Y[0] = s0.x, s0.v, s0.y
    applied = np.empty((total, mp.M, mp.d))
    reports, solutions = [], []
    start, m = 0, 0
    while start < total:
        state = State(X[start].copy(), V[start].copy(), Y[start].copy())
        schedule, seed = None, None
        if cfg.batch_size is not None:
            seed = cfg.window_seed(m)
            schedule = sample_batch_schedule(seed, mp.N, cfg.batch_size, hat_k)
        t0 = time.perf_counter()
        try:
            res: OcpResult = solve_ocp(state, guess, window_grid, mp, schedule, cfg.gd)
        except OptimizationError as exc:
            raise OptimizationError(f"window {m}: {exc}", iterate=exc.iterate) from exc
        end = min(start + tau_k, total)
        seg = res.u_opt[:end - start]
        seg_grid = Grid.from_steps(dt, end - start)
        if noise is None:
            traj = integrate_forward(state, seg, seg_grid, mp)
        else:
            traj = integrate_sde(state, seg, seg_grid, mp, plant, increments=noise[start:end])
        X[start:end + 1], V[start:end + 1], Y[start:end + 1] = traj.x, traj.v, traj.y
        applied[start:end] = seg
        reports.append(WindowReport(
            window=m, t_start=start * dt, t_predict_end=(start + hat_k) * dt,
            t_apply_end=end * dt, gd_iters=res.gd_iterations,
            ev_calculations=res.ev_calculations, window_cost=res.cost,
            wall_time=time.perf_counter() - t0, stop_reason=res.stop_reason,
            schedule_seed=seed))
        solutions.append(res.u_opt)
        log.info("window %d [%.3g, %.3g): %d GD iterations, J=%.6g",
                 m, start * dt, end * dt, res.gd_iterations, res.cost)
        guess = np.zeros_like(res.u_opt)
        guess[:hat_k - tau_k] = res.u_opt[tau_k:]
        start, m = end, m + 1

    plant_traj = Trajectory(X, V, Y, grid)
    return ClosedLoopResult(plant_trajectory=plant_traj, applied_control=applied,
                            window_reports=reports,
                            realized_cost=total_cost(plant_traj, applied, mp.cost),
                            window_solutions=solutions)
