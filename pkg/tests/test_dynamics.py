import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rbmguide import (DegenerateInputError, Grid, InvalidParameterError, ModelParams, State,
                      adjacency, constant_control, full_rhs, integrate_forward,
                      interaction_count, lattice_positions, rbm_rhs, sample_batch_schedule)
from rbmguide.dynamics import read_trajectory_csv, write_trajectory_csv
from rbmguide.errors import ScheduleMismatchError

from .oracles import accel_bruteforce

FAR = [[1e3, 1e3]]


def random_state(rng, N, M, d=2, spread=0.5):
    x = rng.uniform(-spread, spread, (N, d))
    return State(x, rng.normal(0, 0.2, (N, d)), rng.uniform(-1, 1, (M, d)))


def reference_setup(horizon):
    mp = ModelParams.standard()
    x = lattice_positions((6, 6))
    s0 = State(x, np.zeros_like(x), [[-1, 0], [0, -1]])
    grid = Grid(0.01, horizon)
    return mp, s0, grid, constant_control([[0.2, 0.02], [0.02, 0.2]], grid.n_steps)


# ---------------------------------------------------------------- right-hand side

def test_far_driver_exerts_no_force():
    mp = ModelParams.standard(N=1, M=1)
    s = State([[0.0, 0.0]], [[0.0, 0.0]], [[10.0, 10.0]])
    dx, dv, dy = full_rhs(s, [[0.0, 0.0]], mp)
    np.testing.assert_allclose(dv, 0.0, atol=1e-300)
    np.testing.assert_array_equal(dy, [[0.0, 0.0]])


def test_coincident_evaders_are_rejected():
    mp = ModelParams.standard(N=2, M=1)
    s = State(np.zeros((2, 2)), np.zeros((2, 2)), [[10.0, 10.0]])
    with pytest.raises(DegenerateInputError):
        full_rhs(s, [[0.0, 0.0]], mp)


def test_pair_cohesion_force():
    mp = ModelParams.standard(N=2, M=1)
    s = State([[0, 0], [1, 0]], np.zeros((2, 2)), FAR)
    _, dv, _ = full_rhs(s, [[0, 0]], mp)
    # 2 (1 - 1/(3 sqrt 2)) along +x
    np.testing.assert_allclose(dv[0], [1.5285954792089684, 0.0], rtol=1e-12)
    np.testing.assert_allclose(dv[1], -dv[0], rtol=1e-12)


def test_equal_velocities_give_no_alignment():
    rng = np.random.default_rng(1)
    mp = ModelParams.standard(N=5, M=1)
    x = rng.uniform(-1, 1, (5, 2))
    v_same = np.tile([0.3, -0.7], (5, 1))
    a = full_rhs(State(x, v_same, FAR), [[0, 0]], mp)[1]
    b = full_rhs(State(x, np.zeros((5, 2)), FAR), [[0, 0]], mp)[1]
    np.testing.assert_allclose(a, b, atol=1e-15)


def test_rhs_passes_through_velocity_and_control():
    rng = np.random.default_rng(2)
    mp = ModelParams.standard(N=4, M=2)
    s = random_state(rng, 4, 2)
    u = rng.normal(size=(2, 2))
    dx, _, dy = full_rhs(s, u, mp)
    np.testing.assert_array_equal(dx, s.v)
    np.testing.assert_array_equal(dy, u)


@pytest.mark.parametrize("N, P", [(6, 2), (7, 3), (5, 5), (9, 4), (3, 2)])
def test_rhs_matches_bruteforce(N, P):
    rng = np.random.default_rng(N * 10 + P)
    mp = ModelParams.standard(N=N, M=2)
    s = random_state(rng, N, 2)
    u = np.zeros((2, 2))
    np.testing.assert_allclose(full_rhs(s, u, mp)[1], accel_bruteforce(s.x, s.v, s.y, mp.kernel),
                               rtol=1e-12, atol=1e-13)
    part = sample_batch_schedule(3, N, P, 1).partition(0)
    np.testing.assert_allclose(rbm_rhs(s, u, part, mp)[1],
                               accel_bruteforce(s.x, s.v, s.y, mp.kernel, part),
                               rtol=1e-12, atol=1e-13)


def test_single_batch_reduces_to_full_exactly():
    rng = np.random.default_rng(3)
    mp = ModelParams.standard(N=6, M=2)
    s = random_state(rng, 6, 2)
    u = rng.normal(size=(2, 2))
    full = full_rhs(s, u, mp)
    red = rbm_rhs(s, u, [[5, 3, 1, 0, 2, 4]], mp)
    for a, b in zip(full, red):
        np.testing.assert_array_equal(a, b)


def test_batch_locality():
    rng = np.random.default_rng(4)
    mp = ModelParams.standard(N=4, M=1)
    s = random_state(rng, 4, 1)
    part = [[0, 1], [2, 3]]
    base = rbm_rhs(s, [[0, 0]], part, mp)[1]
    moved = s.copy()
    moved.x[2:] += 0.37
    moved.v[2:] -= 1.0
    after = rbm_rhs(moved, [[0, 0]], part, mp)[1]
    np.testing.assert_array_equal(base[:2], after[:2])


def test_singleton_batch_feels_only_drivers():
    rng = np.random.default_rng(5)
    mp = ModelParams.standard(N=5, M=1)
    s = random_state(rng, 5, 1)
    dv = rbm_rhs(s, [[0, 0]], [[0, 1], [2, 3], [4]], mp)[1]
    alone = full_rhs(State(s.x[4:], s.v[4:], s.y), [[0, 0]], ModelParams.standard(N=1, M=1))[1]
    np.testing.assert_allclose(dv[4], alone[0], rtol=1e-14)


def test_invalid_partition_rejected():
    mp = ModelParams.standard(N=4, M=1)
    s = State(lattice_positions((2, 2)), np.zeros((4, 2)), FAR)
    with pytest.raises(InvalidParameterError):
        rbm_rhs(s, [[0, 1], [1, 2, 3]], [[0, 0]], mp)
    with pytest.raises(InvalidParameterError):
        rbm_rhs(s, [[0, 1], [2]], [[0, 0]], mp)


# ---------------------------------------------------------------- batch schedules

def test_full_size_batch_is_one_set():
    sched = sample_batch_schedule(11, 4, 4, 5)
    for part in sched.partitions:
        assert len(part) == 1
        assert sorted(part[0].tolist()) == [0, 1, 2, 3]


def test_pairs_for_36_evaders():
    sched = sample_batch_schedule(0, 36, 2, 20)
    for part in sched.partitions:
        assert len(part) == 18
        assert all(len(b) == 2 for b in part)
        assert sorted(np.concatenate(part).tolist()) == list(range(36))


def test_schedule_is_deterministic_in_seed():
    a = sample_batch_schedule(123, 36, 4, 50)
    b = sample_batch_schedule(123, 36, 4, 50)
    c = sample_batch_schedule(124, 36, 4, 50)
    assert a == b
    assert a != c
    assert a.seed == 123 and a.generator


@pytest.mark.parametrize("P", [0, 1, 7])
def test_batch_size_bounds(P):
    with pytest.raises(InvalidParameterError):
        sample_batch_schedule(0, 6, P, 3)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 40).flatmap(lambda N: st.tuples(st.just(N), st.integers(2, N))),
       st.integers(0, 2**32 - 1))
def test_partition_validity(NP, seed):
    N, P = NP
    sched = sample_batch_schedule(seed, N, P, 4)
    for part in sched.partitions:
        sizes = sorted(len(b) for b in part)
        assert sorted(np.concatenate(part).tolist()) == list(range(N))
        assert len(part) == -(-N // P)
        assert all(s == P for s in sizes[1:]) or N % P == 0
        assert sizes[0] == (N % P or P)
        A = adjacency(part, N)
        assert np.array_equal(A, A.T)
        assert not A.diagonal().any()
        for b in part:
            assert np.all(A[b].sum(axis=1) == len(b) - 1)


def test_pair_sharing_frequency():
    N, P, S = 36, 2, 10_000
    sched = sample_batch_schedule(2024, N, P, S)
    m = sched.members.reshape(S, N // P, P)
    shared = np.any((m == 3).any(axis=2) & (m == 17).any(axis=2), axis=1)
    p = (P - 1) / (N - 1)
    se = np.sqrt(p * (1 - p) / S)
    assert abs(shared.mean() - p) <= 4 * se


# ---------------------------------------------------------------- adjacency

def test_adjacency_of_two_pairs():
    A = adjacency([[0, 1], [2, 3]], 4)
    assert A.sum() == 4
    assert {tuple(ix) for ix in np.argwhere(A)} == {(0, 1), (1, 0), (2, 3), (3, 2)}


def test_adjacency_of_single_batch():
    np.testing.assert_array_equal(adjacency([range(5)], 5), np.ones((5, 5)) - np.eye(5))


def test_adjacency_row_sums_for_pairs():
    part = sample_batch_schedule(9, 36, 2, 1).partition(0)
    assert np.all(adjacency(part, 36).sum(axis=1) == 1)


# ---------------------------------------------------------------- integration

def test_resting_evader_stays_put():
    mp = ModelParams.standard(N=1, M=1)
    s0 = State([[0.1, -0.2]], [[0, 0]], FAR)
    grid = Grid(0.01, 1.0)
    traj = integrate_forward(s0, np.zeros((grid.n_steps, 1, 2)), grid, mp)
    assert traj.n_steps == 100
    np.testing.assert_array_equal(traj.x, np.broadcast_to(s0.x, traj.x.shape))
    np.testing.assert_array_equal(traj.v, 0)


def test_initial_slice_is_initial_condition():
    mp, s0, grid, u = reference_setup(0.5)
    traj = integrate_forward(s0, u, grid, mp)
    st0 = traj.states[0]
    np.testing.assert_array_equal(st0.x, s0.x)
    np.testing.assert_array_equal(st0.y, s0.y)
    assert len(traj.states) == grid.n_steps + 1


def test_euler_update_matches_rhs():
    mp, s0, grid, u = reference_setup(0.05)
    traj = integrate_forward(s0, u, grid, mp)
    dx, dv, dy = full_rhs(traj.state(2), u[2], mp)
    np.testing.assert_allclose(traj.x[3], traj.x[2] + grid.dt * dx, rtol=1e-15, atol=1e-15)
    np.testing.assert_allclose(traj.v[3], traj.v[2] + grid.dt * dv, rtol=1e-15, atol=1e-15)
    np.testing.assert_allclose(traj.y[3], traj.y[2] + grid.dt * dy, rtol=1e-15, atol=1e-15)


def test_full_size_batches_reproduce_full_trajectory_bitwise():
    mp, s0, grid, u = reference_setup(2.0)
    full = integrate_forward(s0, u, grid, mp)
    red = integrate_forward(s0, u, grid, mp, sample_batch_schedule(5, 36, 36, grid.n_steps))
    np.testing.assert_array_equal(full.x, red.x)
    np.testing.assert_array_equal(full.v, red.v)
    np.testing.assert_array_equal(full.y, red.y)


def test_collision_reports_step():
    mp = ModelParams.standard(N=2, M=1)
    # two evaders flying head-on meet exactly at the origin after 10 steps
    s0 = State([[-0.1, 0.0], [0.1, 0.0]], [[1.0, 0.0], [-1.0, 0.0]], FAR)
    mp = ModelParams(N=2, M=1, kernel=mp.kernel.__class__(g_scale=0.0, a_const=0.0,
                                                          g_core=mp.kernel.g_core))
    grid = Grid.from_steps(0.01, 20)
    with pytest.raises(DegenerateInputError) as info:
        integrate_forward(s0, np.zeros((20, 1, 2)), grid, mp)
    assert info.value.step == 10


def test_schedule_and_control_shape_checks():
    mp, s0, grid, u = reference_setup(0.1)
    with pytest.raises(ScheduleMismatchError):
        integrate_forward(s0, u[:-1], grid, mp)
    with pytest.raises(ScheduleMismatchError):
        integrate_forward(s0, u, grid, mp, sample_batch_schedule(0, 36, 2, grid.n_steps - 1))


def test_rbm_error_small_at_t4():
    mp, s0, grid, u = reference_setup(4.0)
    full = integrate_forward(s0, u, grid, mp)
    errs = []
    for seed in range(20):
        red = integrate_forward(s0, u, grid, mp, sample_batch_schedule(seed, 36, 2, grid.n_steps))
        errs.append(np.sqrt(np.mean(np.sum((red.x[-1] - full.x[-1]) ** 2, axis=1))))
    # same order of magnitude as the ~0.1 spread reported for P=2 at t=4
    assert 0.01 < np.median(errs) < 0.2


def test_error_decreases_under_step_refinement():
    mp = ModelParams.standard()
    x = lattice_positions((6, 6))
    s0 = State(x, np.zeros_like(x), [[-1, 0], [0, -1]])
    medians = []
    for dt in (0.04, 0.02, 0.01):
        grid = Grid(dt, 4.0)
        u = constant_control([[0.2, 0.02], [0.02, 0.2]], grid.n_steps)
        full = integrate_forward(s0, u, grid, mp)
        errs = []
        for seed in range(50):
            red = integrate_forward(s0, u, grid, mp,
                                    sample_batch_schedule(seed, 36, 2, grid.n_steps))
            errs.append(np.sqrt(np.mean(np.sum((red.x[-1] - full.x[-1]) ** 2, axis=1))))
        medians.append(np.median(errs))
    assert medians[0] > medians[1] > medians[2]


# ---------------------------------------------------------------- interaction count

@pytest.mark.parametrize("P, expected", [(36, 8136), (2, 792), (4, 1224), (6, 1656),
                                         (9, 2304), (18, 4248)])
def test_interaction_count_table(P, expected):
    assert interaction_count(36, 2, 2, P) == expected


def test_interaction_count_monotone():
    counts = [interaction_count(36, 2, 2, P) for P in range(2, 37)]
    assert all(a < b for a, b in zip(counts, counts[1:]))
    assert counts[-1] == interaction_count(36, 2, 2, 36)


# ---------------------------------------------------------------- misc

def test_grid_step_count_tolerates_roundoff():
    assert Grid(0.1, 0.3).n_steps == 3
    assert Grid(0.01, 10).n_steps == 1000
    assert len(Grid(0.01, 10).times) == 1001


def test_lattice_spans_extent():
    x = lattice_positions((6, 6))
    assert x.shape == (36, 2)
    assert x.min() == -0.2 and x.max() == 0.2
    assert [-0.2, 0.2] in x.tolist()


def test_trajectory_csv_round_trip(tmp_path):
    mp, s0, grid, u = reference_setup(0.1)
    traj = integrate_forward(s0, u, grid, mp)
    path = tmp_path / "traj.csv"
    write_trajectory_csv(path, traj, stride=1, header_lines=["note: test"])
    text = path.read_text().splitlines()
    assert text[0] == "# note: test"
    assert text[1] == "t,kind,index,coord0,coord1"
    back = read_trajectory_csv(path, grid)
    np.testing.assert_array_equal(back.x, traj.x)
    np.testing.assert_array_equal(back.y, traj.y)


def test_trajectory_csv_stride_keeps_final_step(tmp_path):
    mp, s0, grid, u = reference_setup(0.1)
    traj = integrate_forward(s0, u, grid, mp)
    write_trajectory_csv(tmp_path / "t.csv", traj, stride=3)
    back = read_trajectory_csv(tmp_path / "t.csv", grid)
    assert back.x.shape[0] == 5  # steps 0, 3, 6, 9, 10
    np.testing.assert_array_equal(back.x[-1], traj.x[-1])
