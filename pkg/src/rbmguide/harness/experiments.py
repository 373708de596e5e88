"""Experiment drivers behind the CLI subcommands.

Each ``run_*`` function computes its result in memory; ``write_*`` persists
it. Replica loops use a bounded thread pool: the compiled kernels release
the GIL, and every replica owns its seed and buffers.
"""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..adjoint import total_cost
from ..dynamics import (RNG_NAME, Trajectory, integrate_forward, interaction_count,
                        sample_batch_schedule, write_trajectory_csv)
from ..mpc import ClosedLoopResult, run_mpc
from ..optimizer import OcpResult, solve_ocp
from ..stochastic import integrate_sde
from .config import ExperimentConfig, config_to_dict
from .io import append_summary, provenance_lines, write_control_csv, write_rows

BAND_LEVELS = (2.5, 25.0, 75.0, 97.5)


def replica_seed(base: int, *keys: int) -> int:
    """Independent 32-bit seed for one replica, stable across platforms."""
    return int(np.random.SeedSequence([base, *keys]).generate_state(1)[0])


def _map(fn, items, workers):
    if workers <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _seeds(cfg: ExperimentConfig) -> dict:
    seeds = {"generator": RNG_NAME}
    if cfg.rbm is not None:
        seeds["rbm"] = cfg.rbm.seed
    if cfg.sde is not None:
        seeds["sde"] = cfg.sde.seed
    if cfg.mpc is not None:
        seeds["mpc"] = cfg.mpc.seed
    if cfg.initial.layout == "uniform":
        seeds["initial"] = cfg.initial.seed
    return seeds


def _header(cfg, **extra_seeds):
    seeds = _seeds(cfg)
    seeds.update(extra_seeds)
    return provenance_lines(config_to_dict(cfg), seeds)


# --------------------------------------------------------------------------
# simulate


@dataclass
class SimulationResult:
    trajectory: Trajectory
    control: np.ndarray
    wall_time: float
    cost: Optional[dict] = None
    schedule_seed: Optional[int] = None


def run_simulation(cfg: ExperimentConfig) -> SimulationResult:
    s0 = cfg.initial_state()
    u = cfg.control_schedule()
    n = cfg.grid.n_steps
    t0 = time.perf_counter()
    seed = None
    if cfg.sde is not None:
        traj = integrate_sde(s0, u, cfg.grid, cfg.model, cfg.sde)
    else:
        schedule = None
        if cfg.rbm is not None:
            seed = cfg.rbm.seed
            schedule = sample_batch_schedule(seed, cfg.model.N, cfg.rbm.P, n)
        traj = integrate_forward(s0, u, cfg.grid, cfg.model, schedule)
    wall = time.perf_counter() - t0
    cost = total_cost(traj, u, cfg.model.cost).as_dict()
    return SimulationResult(traj, u, wall, cost, seed)


def write_simulation(cfg: ExperimentConfig, res: SimulationResult, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_trajectory_csv(out / "trajectory.csv", res.trajectory, cfg.save_stride, _header(cfg))
    record = {"command": "simulate", "config": config_to_dict(cfg), "seeds": _seeds(cfg),
              "final_cost": res.cost, "wall_time": res.wall_time,
              "saved_steps": len(range(0, res.trajectory.n_steps + 1, cfg.save_stride))}
    append_summary(out, record)
    return record


# --------------------------------------------------------------------------
# random batch error study


@dataclass
class ErrorStudyReport:
    """Per batch size and time: median and percentile bands over replicas."""

    times: np.ndarray
    P_list: tuple
    # err[P] has shape (replicas, len(times), 2): last axis is (position, velocity)
    errors: dict = field(repr=False)

    def stats(self, P: int, which: str = "x") -> dict:
        k = 0 if which == "x" else 1
        e = self.errors[P][:, :, k]
        out = {"median": np.median(e, axis=0)}
        for q, val in zip(BAND_LEVELS, np.percentile(e, BAND_LEVELS, axis=0)):
            out[q] = val
        return out

    def median_at(self, P: int, t: float, which: str = "x") -> float:
        n = int(np.argmin(np.abs(self.times - t)))
        return float(self.stats(P, which)["median"][n])

    def rows(self):
        for P in self.P_list:
            sx, sv = self.stats(P, "x"), self.stats(P, "v")
            for n, t in enumerate(self.times):
                yield ([P, round(float(t), 12), sx["median"][n]] + [sx[q][n] for q in BAND_LEVELS]
                       + [sv["median"][n]] + [sv[q][n] for q in BAND_LEVELS])

    header = (["P", "t", "x_median", "x_p2.5", "x_p25", "x_p75", "x_p97.5",
               "v_median", "v_p2.5", "v_p25", "v_p75", "v_p97.5"])


def trajectory_errors(a: Trajectory, b: Trajectory, metric: str = "rms") -> np.ndarray:
    """Per-time position/velocity error, shape ``(n_steps + 1, 2)``."""
    dx = np.linalg.norm(a.x - b.x, axis=2)
    dv = np.linalg.norm(a.v - b.v, axis=2)
    if metric == "rms":
        return np.stack([np.sqrt(np.mean(dx ** 2, axis=1)), np.sqrt(np.mean(dv ** 2, axis=1))],
                        axis=1)
    return np.stack([dx.mean(axis=1), dv.mean(axis=1)], axis=1)


def run_error_study(cfg: ExperimentConfig, P_list=None, replicas=None,
                    base_seed: Optional[int] = None) -> ErrorStudyReport:
    P_list = tuple(P_list or cfg.study.P_list)
    replicas = replicas or cfg.study.replicas
    if replicas < 2:
        raise ValueError("the error study needs at least 2 replicas")
    base = base_seed if base_seed is not None else (cfg.rbm.seed if cfg.rbm else 0)
    s0, u, grid, mp = cfg.initial_state(), cfg.control_schedule(), cfg.grid, cfg.model
    ref = integrate_forward(s0, u, grid, mp)
    keep = np.arange(0, grid.n_steps + 1, cfg.save_stride)
    if keep[-1] != grid.n_steps:
        keep = np.append(keep, grid.n_steps)

    errors = {}
    for P in P_list:
        def one(r, P=P):
            sched = sample_batch_schedule(replica_seed(base, P, r), mp.N, P, grid.n_steps)
            approx = integrate_forward(s0, u, grid, mp, sched)
            return trajectory_errors(approx, ref, cfg.study.metric)[keep]

        errors[P] = np.stack(_map(one, range(replicas), cfg.study.workers))
    return ErrorStudyReport(times=keep * grid.dt, P_list=P_list, errors=errors)


def write_error_study(cfg, report: ErrorStudyReport, out_dir, replicas) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_rows(out / "error_study.csv", report.header, report.rows(),
               _header(cfg, replicas=replicas))
    record = {"command": "rbm-error-study", "config": config_to_dict(cfg),
              "seeds": _seeds(cfg), "replicas": replicas, "P_list": list(report.P_list),
              "final_median_x": {str(P): report.median_at(P, report.times[-1])
                                 for P in report.P_list}}
    append_summary(out, record)
    return record


# --------------------------------------------------------------------------
# benchmark


@dataclass
class BenchmarkRow:
    label: str
    P: int
    mean_ms: float
    time_ratio: float
    interactions: int
    count_ratio: float
    sampling_ms: float


def run_benchmark(cfg: ExperimentConfig, P_list=None, repetitions=None, warmup=3) -> list:
    """Mean wall time of one forward sweep per mode, relative to the P=2 row.

    Batch schedules are sampled outside the timed region; their cost is
    reported separately in ``sampling_ms``. Without a P=2 entry the
    smallest batch size is the baseline.
    """
    P_list = tuple(P_list or cfg.study.P_list)
    repetitions = repetitions or cfg.study.repetitions
    if repetitions < 10:
        raise ValueError("benchmark needs at least 10 repetitions")
    s0, u, grid, mp = cfg.initial_state(), cfg.control_schedule(), cfg.grid, cfg.model
    base_seed = cfg.rbm.seed if cfg.rbm else 0
    modes = [("Full", mp.N)] + [(f"RBM (P={P})", P) for P in P_list]
    schedules, sampling = [], []
    for label, P in modes:
        sched, ms = None, 0.0
        if label != "Full":
            t0 = time.perf_counter()
            sched = sample_batch_schedule(replica_seed(base_seed, P), mp.N, P, grid.n_steps)
            ms = (time.perf_counter() - t0) * 1e3
        schedules.append(sched)
        sampling.append(ms)
        for _ in range(warmup):
            integrate_forward(s0, u, grid, mp, sched)
    # round-robin over modes so drifting machine load hits every mode alike
    totals = [0.0] * len(modes)
    for _ in range(repetitions):
        for k, sched in enumerate(schedules):
            t0 = time.perf_counter()
            integrate_forward(s0, u, grid, mp, sched)
            totals[k] += time.perf_counter() - t0
    measured = [(label, P, totals[k] / repetitions * 1e3,
                 interaction_count(mp.N, mp.M, mp.d, P), sampling[k])
                for k, (label, P) in enumerate(modes)]
    rbm_rows = [m for m in measured if m[0] != "Full"]
    base = next((m for m in rbm_rows if m[1] == 2), min(rbm_rows, key=lambda m: m[1]))
    return [BenchmarkRow(label, P, ms, ms / base[2], cnt, cnt / base[3], smp)
            for label, P, ms, cnt, smp in measured]


def write_benchmark(cfg, rows: list, out_dir, repetitions) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_rows(out / "benchmark.csv",
               ["mode", "P", "mean_ms", "time_ratio", "interactions", "count_ratio",
                "sampling_ms"],
               ([r.label, r.P, r.mean_ms, r.time_ratio, r.interactions, r.count_ratio,
                 r.sampling_ms] for r in rows),
               _header(cfg, repetitions=repetitions))
    record = {"command": "benchmark", "config": config_to_dict(cfg), "seeds": _seeds(cfg),
              "rows": [vars(r) for r in rows]}
    append_summary(out, record)
    return record


# --------------------------------------------------------------------------
# open-loop optimization


@dataclass
class OptimizeOutcome:
    result: OcpResult
    replay_cost: dict
    mode: str
    schedule_seed: Optional[int] = None


def run_optimize(cfg: ExperimentConfig) -> OptimizeOutcome:
    """Solve the OCP (full or frozen random batches) and replay on the full plant."""
    s0, u0, grid, mp = cfg.initial_state(), cfg.control_schedule(), cfg.grid, cfg.model
    sched, seed = None, None
    if cfg.rbm is not None:
        seed = cfg.rbm.seed
        sched = sample_batch_schedule(seed, mp.N, cfg.rbm.P, grid.n_steps)
    res = solve_ocp(s0, u0, grid, mp, sched, cfg.gd)
    replay = total_cost(integrate_forward(s0, res.u_opt, grid, mp), res.u_opt, mp.cost)
    mode = "full" if sched is None else f"rbm(P={cfg.rbm.P})"
    return OptimizeOutcome(res, replay.as_dict(), mode, seed)


def write_optimize(cfg, outcome: OptimizeOutcome, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    head = _header(cfg)
    res = outcome.result
    write_rows(out / "iterations.csv", ["iter", "cost", "alpha", "ev_count"], res.log, head)
    write_control_csv(out / "control.csv", res.u_opt, cfg.grid.dt, head)
    record = {"command": "optimize", "config": config_to_dict(cfg), "seeds": _seeds(cfg),
              "mode": outcome.mode, "gd_iterations": res.gd_iterations,
              "ev_calculations": res.ev_calculations, "cost": res.cost,
              "replay_cost_full": outcome.replay_cost["total"],
              "replay_breakdown": outcome.replay_cost, "wall_time": res.wall_time,
              "stop_reason": res.stop_reason}
    append_summary(out, record)
    return record


# --------------------------------------------------------------------------
# closed loop


def run_closed_loop(cfg: ExperimentConfig) -> ClosedLoopResult:
    if cfg.mpc is None:
        raise ValueError("config has no 'mpc' section")
    hat_k = int(round(cfg.mpc.t_hat / cfg.grid.dt))
    return run_mpc(cfg.initial_state(), cfg.control_schedule(hat_k), cfg.model, cfg.grid,
                   cfg.mpc, plant=cfg.sde)


def replay_open_loop(cfg: ExperimentConfig, u) -> dict:
    """Cost of a fixed control on the configured plant (noisy if ``sde`` is set)."""
    s0 = cfg.initial_state()
    if cfg.sde is not None:
        traj = integrate_sde(s0, u, cfg.grid, cfg.model, cfg.sde)
    else:
        traj = integrate_forward(s0, u, cfg.grid, cfg.model)
    return total_cost(traj, u, cfg.model.cost).as_dict()


def write_closed_loop(cfg, res: ClosedLoopResult, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    head = _header(cfg)
    write_control_csv(out / "applied_control.csv", res.applied_control, cfg.grid.dt, head)
    write_trajectory_csv(out / "plant_trajectory.csv", res.plant_trajectory, cfg.save_stride,
                         head)
    write_rows(out / "windows.csv",
               ["window", "t_start", "gd_iters", "window_cost", "wall_time",
                "t_predict_end", "t_apply_end", "ev_calculations", "stop_reason",
                "schedule_seed"],
               ([w.window, w.t_start, w.gd_iters, w.window_cost, w.wall_time, w.t_predict_end,
                 w.t_apply_end, w.ev_calculations, w.stop_reason, w.schedule_seed]
                for w in res.window_reports), head)
    record = {"command": "mpc", "config": config_to_dict(cfg), "seeds": _seeds(cfg),
              "realized_cost": res.realized_cost.total,
              "realized_breakdown": res.realized_cost.as_dict(),
              "windows": [vars(w) for w in res.window_reports],
              "wall_time": sum(w.wall_time for w in res.window_reports)}
    append_summary(out, record)
    return record
