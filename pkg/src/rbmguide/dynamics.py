"""Forward dynamics of the evader/driver system and its random-batch reduction.

The full system couples every pair of evaders; the random batch method (RBM)
splits the evaders into random batches at every time step and only keeps
intra-batch interactions. Both are advanced with explicit Euler.

A partition is stored as a flat ``members`` array (a permutation of
``0..N-1`` whose consecutive blocks are the batches, each block sorted) plus
block ``offsets``. The full system is the single-block partition
``members = arange(N)``, so the two modes share one compiled kernel and a
batch of size N reproduces the full system bit for bit.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numba import njit

from .errors import DegenerateInputError, InvalidParameterError, ScheduleMismatchError
from .kernels import COLLISION_R2, KernelParams, _f_of_r2, _g_of_r2

RNG_NAME = "numpy.random.PCG64"


@dataclass(frozen=True)
class CostParams:
    alpha1: float = 1.0
    alpha2: float = 1e-4
    alpha3: float = 1e-4
    x_f: tuple = (0.5, 0.5)

    def __post_init__(self):
        if min(self.alpha1, self.alpha2, self.alpha3) < 0:
            raise InvalidParameterError("cost weights must be nonnegative")
        object.__setattr__(self, "x_f", tuple(float(c) for c in self.x_f))


@dataclass(frozen=True)
class ModelParams:
    N: int
    M: int
    d: int = 2
    kernel: KernelParams = field(default_factory=KernelParams)
    cost: CostParams = field(default_factory=CostParams)

    def __post_init__(self):
        if self.N < 1 or self.M < 1 or self.d < 1:
            raise InvalidParameterError("N, M and d must be positive")
        if len(self.cost.x_f) != self.d:
            raise InvalidParameterError(
                f"target x_f has {len(self.cost.x_f)} coordinates, expected d={self.d}")

    @classmethod
    def standard(cls, N=36, M=2, d=2, cost: Optional[CostParams] = None) -> "ModelParams":
        """Kernel constants of the reference experiments, core scaled with ``N``."""
        if cost is None:
            cost = CostParams(x_f=(0.5,) * d)
        return cls(N=N, M=M, d=d, kernel=KernelParams.for_population(N), cost=cost)


@dataclass(frozen=True)
class Grid:
    dt: float
    horizon: float

    def __post_init__(self):
        if not self.dt > 0:
            raise InvalidParameterError("dt must be positive")
        if self.horizon < 0:
            raise InvalidParameterError("horizon must be nonnegative")

    @classmethod
    def from_steps(cls, dt: float, n_steps: int) -> "Grid":
        return cls(dt=dt, horizon=n_steps * dt)

    @property
    def n_steps(self) -> int:
        # tolerate round-off such as 0.3/0.1 = 2.9999999999999996
        return int(math.floor(self.horizon / self.dt + 1e-9))

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt


@dataclass
class State:
    x: np.ndarray
    v: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.x = np.array(self.x, dtype=float, ndmin=2)
        self.v = np.array(self.v, dtype=float, ndmin=2)
        self.y = np.array(self.y, dtype=float, ndmin=2)
        if self.x.shape != self.v.shape:
            raise InvalidParameterError("x and v must have the same shape")
        if self.y.shape[1] != self.x.shape[1]:
            raise InvalidParameterError("drivers and evaders must share the dimension")

    @property
    def N(self):
        return self.x.shape[0]

    @property
    def M(self):
        return self.y.shape[0]

    def copy(self) -> "State":
        return State(self.x.copy(), self.v.copy(), self.y.copy())


@dataclass
class BatchSchedule:
    """Materialized random partitions, one per time step.

    ``members[n]`` is a permutation of the evader indices; the batches of
    step ``n`` are ``members[n, offsets[b]:offsets[b + 1]]``.
    """

    members: np.ndarray
    offsets: np.ndarray
    batch_size: int
    seed: Optional[int] = None
    generator: str = RNG_NAME

    @property
    def n_steps(self) -> int:
        return self.members.shape[0]

    @property
    def N(self) -> int:
        return self.members.shape[1]

    def partition(self, n: int) -> list:
        row = self.members[n]
        return [row[self.offsets[b]:self.offsets[b + 1]] for b in range(len(self.offsets) - 1)]

    @property
    def partitions(self) -> list:
        return [self.partition(n) for n in range(self.n_steps)]

    def __eq__(self, other):
        if not isinstance(other, BatchSchedule):
            return NotImplemented
        return (self.batch_size == other.batch_size
                and np.array_equal(self.members, other.members)
                and np.array_equal(self.offsets, other.offsets))


@dataclass
class Trajectory:
    x: np.ndarray  # (n_steps + 1, N, d)
    v: np.ndarray
    y: np.ndarray  # (n_steps + 1, M, d)
    grid: Grid

    @property
    def n_steps(self) -> int:
        return self.x.shape[0] - 1

    def state(self, n: int) -> State:
        return State(self.x[n].copy(), self.v[n].copy(), self.y[n].copy())

    @property
    def states(self) -> list:
        return [self.state(n) for n in range(self.n_steps + 1)]

    @property
    def final(self) -> State:
        return self.state(self.n_steps)


def block_offsets(N: int, P: int) -> np.ndarray:
    offs = list(range(0, N, P)) + [N]
    return np.asarray(offs, dtype=np.int64)


def _full_layout(N):
    return np.arange(N, dtype=np.int64)[None, :], np.array([0, N], dtype=np.int64)


def _layout_from_partition(partition: Sequence, N: int):
    """Flatten index sets into (members, offsets), validating coverage."""
    blocks = [np.sort(np.asarray(b, dtype=np.int64).reshape(-1)) for b in partition]
    if any(b.size == 0 for b in blocks):
        raise InvalidParameterError("partition contains an empty batch")
    members = np.concatenate(blocks) if blocks else np.empty(0, dtype=np.int64)
    if members.size != N or not np.array_equal(np.sort(members), np.arange(N)):
        raise InvalidParameterError("partition must cover 0..N-1 with disjoint sets")
    offsets = np.cumsum([0] + [b.size for b in blocks]).astype(np.int64)
    return members[None, :], offsets


def sample_batch_schedule(rng_seed: int, N: int, P: int, n_steps: int) -> BatchSchedule:
    """Draw an independent uniform random partition of ``range(N)`` per step.

    Each step shuffles the indices and cuts them into consecutive blocks of
    ``P`` (the last block is shorter when ``P`` does not divide ``N``).
    """
    if P < 2 or P > N:
        raise InvalidParameterError(f"batch size P={P} must satisfy 2 <= P <= N={N}")
    rng = np.random.Generator(np.random.PCG64(rng_seed))
    base = np.broadcast_to(np.arange(N, dtype=np.int64), (n_steps, N))
    members = rng.permuted(base, axis=1)
    # sort inside each block so summation order does not depend on the shuffle
    n_full = N // P
    if n_full:
        head = members[:, :n_full * P].reshape(n_steps, n_full, P)
        members[:, :n_full * P] = np.sort(head, axis=2).reshape(n_steps, n_full * P)
    if N % P:
        members[:, n_full * P:] = np.sort(members[:, n_full * P:], axis=1)
    return BatchSchedule(members=np.ascontiguousarray(members), offsets=block_offsets(N, P),
                         batch_size=P, seed=rng_seed)


def adjacency(partition: Sequence, N: int) -> np.ndarray:
    A = np.zeros((N, N), dtype=np.int8)
    members, offsets = _layout_from_partition(partition, N)
    row = members[0]
    for b in range(len(offsets) - 1):
        idx = row[offsets[b]:offsets[b + 1]]
        A[np.ix_(idx, idx)] = 1
    np.fill_diagonal(A, 0)
    return A


def interaction_count(N: int, M: int, d: int, P: int) -> int:
    """Interactions evaluated per time step; pass ``P=N`` for the full system."""
    return N * d * (1 + M * d + P * (d + 1))


# --------------------------------------------------------------------------
# compiled kernels


@njit(cache=True, nogil=True)
def _accel(x, v, y, members, offsets, a, famp, fdec, gs, gc, out, acc):
    """Evader accelerations into ``out``; returns 1 on a collision, else 0.

    ``acc`` is a length-d scratch buffer.
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
                out[i, c] = 0.0
            if size < 2:
                continue
            for c in range(d):
                acc[c] = 0.0
            for kk in range(lo, hi):
                k = members[kk]
                if k == i:
                    continue
                r2 = 0.0
                for c in range(d):
                    dc = x[k, c] - x[i, c]
                    r2 += dc * dc
                if r2 < COLLISION_R2:
                    return 1
                gval = _g_of_r2(r2, gs, gc)
                for c in range(d):
                    acc[c] += a * (v[k, c] - v[i, c]) + gval * (x[k, c] - x[i, c])
            scale = 1.0 / (size - 1)
            for c in range(d):
                out[i, c] = scale * acc[c]
    inv_m = 1.0 / M
    for i in range(N):
        for j in range(M):
            r2 = 0.0
            for c in range(d):
                dc = y[j, c] - x[i, c]
                r2 += dc * dc
            fval = _f_of_r2(r2, famp, fdec)
            for c in range(d):
                out[i, c] -= inv_m * fval * (y[j, c] - x[i, c])
    return 0


@njit(cache=True, nogil=True)
def _forward(X, V, Y, u, dt, members, offsets, rbm, a, famp, fdec, gs, gc):
    """Euler sweep filling X, V, Y from their first slice; returns failing step or -1."""
    n_steps = u.shape[0]
    N, d = X.shape[1], X.shape[2]
    acc = np.empty((N, d))
    scratch = np.empty(d)
    for n in range(n_steps):
        row = members[n] if rbm else members[0]
        if _accel(X[n], V[n], Y[n], row, offsets, a, famp, fdec, gs, gc, acc, scratch):
            return n
        for i in range(N):
            for c in range(d):
                X[n + 1, i, c] = X[n, i, c] + dt * V[n, i, c]
                V[n + 1, i, c] = V[n, i, c] + dt * acc[i, c]
        for j in range(Y.shape[1]):
            for c in range(d):
                Y[n + 1, j, c] = Y[n, j, c] + dt * u[n, j, c]
    return -1


# --------------------------------------------------------------------------
# public surface


def _rhs(s: State, u_now, members, offsets, mp: ModelParams):
    acc = np.empty_like(s.x)
    status = _accel(s.x, s.v, s.y, members[0], offsets, *mp.kernel.as_tuple(), acc,
                    np.empty(s.x.shape[1]))
    if status:
        raise DegenerateInputError("coincident evaders in force evaluation")
    dy = np.array(u_now, dtype=float).reshape(s.y.shape)
    return s.v.copy(), acc, dy


def full_rhs(s: State, u_now, mp: ModelParams):
    """Time derivatives ``(dx, dv, dy)`` of the all-to-all system."""
    members, offsets = _full_layout(s.N)
    return _rhs(s, u_now, members, offsets, mp)


def rbm_rhs(s: State, u_now, partition: Sequence, mp: ModelParams):
    """Time derivatives of the reduced system for one partition of the evaders.

    Each evader averages over the other members of its own batch with weight
    ``1/(|batch| - 1)``; a singleton batch feels only the drivers.
    """
    members, offsets = _layout_from_partition(partition, s.N)
    return _rhs(s, u_now, members, offsets, mp)


def schedule_layout(schedule: Optional[BatchSchedule], N: int, n_steps: int):
    """Kernel arguments ``(members, offsets, rbm)`` for a mode."""
    if schedule is None:
        members, offsets = _full_layout(N)
        return members, offsets, False
    if schedule.N != N:
        raise ScheduleMismatchError(f"schedule is for N={schedule.N}, state has N={N}")
    if schedule.n_steps < n_steps:
        raise ScheduleMismatchError(
            f"schedule covers {schedule.n_steps} steps, grid needs {n_steps}")
    return schedule.members, schedule.offsets, True


def _check_control(u, n_steps, M, d):
    u = np.ascontiguousarray(u, dtype=float)
    if u.shape != (n_steps, M, d):
        raise ScheduleMismatchError(f"control has shape {u.shape}, expected {(n_steps, M, d)}")
    return u


def integrate_forward(s0: State, u, grid: Grid, mp: ModelParams,
                      schedule: Optional[BatchSchedule] = None) -> Trajectory:
    """Explicit Euler over ``grid``; ``schedule=None`` runs the full system.

    ``u[n]`` is held constant on ``[t_n, t_{n+1})``.
    """
    n = grid.n_steps
    u = _check_control(u, n, s0.M, s0.x.shape[1])
    members, offsets, rbm = schedule_layout(schedule, s0.N, n)
    X = np.empty((n + 1,) + s0.x.shape)
    V = np.empty_like(X)
    Y = np.empty((n + 1,) + s0.y.shape)
    X[0], V[0], Y[0] = s0.x, s0.v, s0.y
    failed = _forward(X, V, Y, u, grid.dt, members, offsets, rbm, *mp.kernel.as_tuple())
    if failed >= 0:
        raise DegenerateInputError(f"coincident evaders at step {failed}", step=int(failed))
    return Trajectory(X, V, Y, grid)


def constant_control(values, n_steps: int) -> np.ndarray:
    """Repeat one ``(M, d)`` control slice over ``n_steps`` steps."""
    values = np.asarray(values, dtype=float)
    return np.repeat(values[None, :, :], n_steps, axis=0)


def lattice_positions(side_counts, extent=(-0.2, 0.2)) -> np.ndarray:
    """Evenly spaced lattice covering ``[lo, hi]^d``; first coordinate varies slowest."""
    lo, hi = extent
    axes = [np.linspace(lo, hi, k) if k > 1 else np.array([(lo + hi) / 2]) for k in side_counts]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=1)


def write_trajectory_csv(path, traj: Trajectory, stride: int = 1, header_lines=()) -> None:
    """Write ``t, kind, index, coord0..`` rows for every ``stride``-th step.

    ``header_lines`` are emitted first, each prefixed with ``#``.
    """
    d = traj.x.shape[2]
    steps = list(range(0, traj.n_steps + 1, stride))
    if steps[-1] != traj.n_steps:
        steps.append(traj.n_steps)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "kind", "index"] + [f"coord{c}" for c in range(d)])
        for n in steps:
            t = repr(round(n * traj.grid.dt, 12))
            for kind, arr in (("x", traj.x), ("v", traj.v), ("y", traj.y)):
                for idx, row in enumerate(arr[n]):
                    w.writerow([t, kind, idx] + [repr(float(c)) for c in row])


def read_trajectory_csv(path, grid: Grid) -> Trajectory:
    rows = {}
    with open(path, encoding="utf-8") as fh:
        body = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(body)
    header = next(reader)
    d = len(header) - 3
    for t, kind, idx, *coords in reader:
        rows.setdefault(float(t), {}).setdefault(kind, {})[int(idx)] = [float(c) for c in coords]
    times = sorted(rows)

    def stack(kind):
        return np.array([[rows[t][kind][i] for i in sorted(rows[t][kind])] for t in times]
                        ).reshape(len(times), -1, d)

    return Trajectory(stack("x"), stack("v"), stack("y"), grid)
