import numpy as np
import pytest

from rbmguide import CostParams, Grid, ModelParams, State, sample_batch_schedule
from rbmguide.adjoint import cost_and_gradient
from rbmguide.errors import InvalidParameterError, OptimizationError
from rbmguide.optimizer import GdConfig, solve_ocp


def herd_problem(n_steps=40):
    mp = ModelParams.standard(N=6, M=2, cost=CostParams(alpha1=1.0, alpha2=1e-3, alpha3=1e-3))
    rng = np.random.default_rng(7)
    s0 = State(rng.uniform(-0.2, 0.2, (6, 2)), np.zeros((6, 2)), [[-0.5, 0.0], [0.0, -0.5]])
    grid = Grid.from_steps(0.05, n_steps)
    return mp, s0, grid, np.zeros((n_steps, 2, 2))


def driver_only_optimum(s0, grid, cp, M):
    """Closed-form minimizer when the evader is out of reach: a linear least-squares problem."""
    n, dt = grid.n_steps, grid.dt
    L = np.tril(np.ones((n, n)), -1) * dt  # y_n - y_0 = L @ u
    xf = np.asarray(cp.x_f)
    A = np.vstack([np.sqrt(cp.alpha3 * dt / M) * L, np.sqrt(cp.alpha2 * dt / M) * np.eye(n)])
    u = np.empty((n, M, 2))
    for j in range(M):
        for c in range(2):
            b = np.concatenate([-np.sqrt(cp.alpha3 * dt / M) * (s0.y[j, c] - xf[c]) * np.ones(n),
                                np.zeros(n)])
            u[:, j, c] = np.linalg.lstsq(A, b, rcond=None)[0]
    return u


def test_zero_gradient_stops_immediately():
    mp = ModelParams.standard(N=3, M=1, cost=CostParams(alpha2=0.0, alpha3=0.0))
    s0 = State([[0, 0], [0.3, 0], [0, 0.3]], np.zeros((3, 2)), [[50.0, 50.0]])
    grid = Grid.from_steps(0.1, 5)
    u0 = np.zeros((5, 1, 2))
    res = solve_ocp(s0, u0, grid, mp)
    assert res.stop_reason == "stationary"
    assert res.gd_iterations == 0 and res.ev_calculations == 1
    np.testing.assert_array_equal(res.u_opt, u0)


def test_quadratic_problem_reaches_closed_form_minimum():
    cp = CostParams(alpha1=0.0, alpha2=0.05, alpha3=1.0)
    mp = ModelParams.standard(N=1, M=2, cost=cp)
    s0 = State([[100.0, 100.0]], [[0.0, 0.0]], [[-1.0, 0.0], [0.0, -1.0]])
    grid = Grid.from_steps(0.05, 30)
    # the default sufficient-decrease ratio stops GD about 1e-6 short of the optimum
    cfg = GdConfig(cost_tol=1e-14, decrease_ratio=1e-13)
    res = solve_ocp(s0, np.zeros((30, 2, 2)), grid, mp, cfg=cfg)
    u_star = driver_only_optimum(s0, grid, cp, 2)
    J_star = cost_and_gradient(s0, u_star, grid, mp)[0].total
    assert res.cost == pytest.approx(J_star, rel=1e-9)
    assert res.cost >= J_star * (1 - 1e-12)


def test_cost_history_strictly_decreases():
    mp, s0, grid, u0 = herd_problem()
    res = solve_ocp(s0, u0, grid, mp, cfg=GdConfig(max_iters=200))
    h = np.array(res.cost_history)
    assert len(h) == res.gd_iterations + 1
    assert np.all(h[1:] <= h[:-1] * (1 - 1e-6))
    assert res.cost < h[0]


def test_runs_are_deterministic():
    mp, s0, grid, u0 = herd_problem(20)
    sched = sample_batch_schedule(4, 6, 2, grid.n_steps)
    a = solve_ocp(s0, u0, grid, mp, sched, GdConfig(max_iters=50))
    b = solve_ocp(s0, u0, grid, mp, sched, GdConfig(max_iters=50))
    np.testing.assert_array_equal(a.u_opt, b.u_opt)
    assert a.cost_history == b.cost_history
    assert a.ev_calculations == b.ev_calculations


def test_iteration_cap_and_bookkeeping():
    mp, s0, grid, u0 = herd_problem(20)
    res = solve_ocp(s0, u0, grid, mp, cfg=GdConfig(max_iters=5, cost_tol=0.0))
    assert res.stop_reason == "max_iters" and not res.converged
    assert res.gd_iterations == 5
    assert res.ev_calculations >= 6
    assert [row[0] for row in res.log] == list(range(6))
    assert res.log[-1][3] == res.ev_calculations


def test_line_search_exhaustion_ends_run():
    mp, s0, grid, u0 = herd_problem(20)
    res = solve_ocp(s0, u0, grid, mp, cfg=GdConfig(alpha0=1e-14, alpha_min=1e-15,
                                                   decrease_ratio=0.5))
    assert res.stop_reason == "alpha_min"
    assert res.gd_iterations == 0
    assert res.ev_calculations == 1 + 4  # 1e-14 halved down past 1e-15


def test_infeasible_initial_guess_reports_iterate():
    mp = ModelParams.standard(N=2, M=1)
    s0 = State(np.zeros((2, 2)), np.zeros((2, 2)), [[1.0, 1.0]])
    with pytest.raises(OptimizationError) as info:
        solve_ocp(s0, np.zeros((4, 1, 2)), Grid.from_steps(0.1, 4), mp)
    assert info.value.iterate == 0


def test_non_finite_initial_cost_rejected():
    mp, s0, grid, u0 = herd_problem(5)
    u0[2, 0, 0] = np.inf
    with pytest.raises(OptimizationError):
        solve_ocp(s0, u0, grid, mp)


@pytest.mark.parametrize("kw", [dict(alpha0=0), dict(decrease_ratio=1.0), dict(max_iters=-1),
                                dict(alpha_min=-1.0)])
def test_config_validation(kw):
    with pytest.raises(InvalidParameterError):
        GdConfig(**kw)


def test_effort_only_cost_drives_control_to_zero():
    mp = ModelParams.standard(N=4, M=2, cost=CostParams(alpha1=0.0, alpha2=1e-2, alpha3=0.0))
    rng = np.random.default_rng(3)
    s0 = State(rng.uniform(-0.2, 0.2, (4, 2)), np.zeros((4, 2)), [[-1.0, 0.0], [0.0, -1.0]])
    grid = Grid.from_steps(0.05, 20)
    u0 = rng.normal(0, 0.5, (20, 2, 2))
    res = solve_ocp(s0, u0, grid, mp)
    assert res.cost < 1e-6 * res.cost_history[0]
    assert np.abs(res.u_opt).max() < 1e-3 * np.abs(u0).max()
