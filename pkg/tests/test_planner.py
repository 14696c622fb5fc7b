import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from safe_horizon.dynamics import disc_positions
from safe_horizon.geometry import Box, Polytope
from safe_horizon.risk import RiskConfig
from safe_horizon.solver import SpProblem, TrajectoryPlan, solve_sp
from safe_horizon.planner import (
    Obstacle,
    PlannerConfig,
    ReferencePath,
    RobotState,
    clear_of_samples,
    initial_guess,
    mpc_step,
    mpcc_cost,
    mpcc_gradient,
    prepare_step,
    project_point,
    project_previous_plan,
    usable,
    warm_starts,
)
from safe_horizon.uncertainty import constant_velocity, gaussian_random_walk

SMALL_RISK = RiskConfig(0.2, 0.05, 4, 1)
RISK = RiskConfig(0.05, 0.01, 9, 1)


def straight(**kw):
    return PlannerConfig(ReferencePath([(0, 0), (30, 0)]), SMALL_RISK, **kw)


def test_path_arc_length_and_projection():
    path = ReferencePath([(0, 0), (3, 0), (3, 4)])
    assert path.length == 7.0
    p, t = path.evaluate(5.0)
    assert np.allclose(p, [3, 2]) and np.allclose(t, [0, 1])
    assert path.project([3.5, 1.0]) == pytest.approx(4.0)
    assert path.project([1.0, 1.0], s_min=2.0) == 2.0
    with pytest.raises(ValueError):
        ReferencePath([(0, 0), (0, 0)])


def test_cost_on_path_at_reference_speed_is_zero():
    cfg = straight(N=5)
    U = np.tile([cfg.v_ref, 0.0], (5, 1))
    X = cfg.dynamics.rollout(np.zeros(4), U)
    assert mpcc_cost(TrajectoryPlan(X, U, cfg.dt), cfg) == pytest.approx(0.0, abs=1e-20)


def test_lateral_offset_costs_contour_weight():
    cfg = straight(N=5)
    U = np.tile([cfg.v_ref, 0.0], (5, 1))
    X = cfg.dynamics.rollout(np.array([0.0, 0.5, 0.0, 0.0]), U)
    assert mpcc_cost(TrajectoryPlan(X, U, cfg.dt), cfg) == pytest.approx(5 * 0.02 * 0.25)


def fd_gradient(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_cost_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    cfg = PlannerConfig(ReferencePath([(0, 0), (10, 0), (10, 10)]), SMALL_RISK, N=6)
    X = np.zeros((7, 4))
    X[1:, :2] = rng.uniform(-2, 8, (6, 2))
    X[1:, 2] = rng.uniform(-3, 3, 6)
    X[1:, 3] = rng.uniform(0.5, 9.5, 6)  # away from the corner at s = 10
    U = rng.uniform([0, -2], [3, 2], (6, 2))
    gx, gu = mpcc_gradient(TrajectoryPlan(X, U, cfg.dt), cfg)

    def cost_x(Z):
        return mpcc_cost(TrajectoryPlan(np.vstack([X[:1], Z]), U, cfg.dt), cfg)

    fx = fd_gradient(cost_x, X[1:].copy())
    fu = fd_gradient(lambda V: mpcc_cost(TrajectoryPlan(X, V, cfg.dt), cfg), U.copy())
    assert np.allclose(gx, fx, rtol=1e-5, atol=1e-7)
    assert np.allclose(gu, fu, rtol=1e-5, atol=1e-7)


def test_projection_leaves_feasible_points_alone():
    p = np.array([0.2, 0.3])
    q, ok = project_point(p, np.array([[1.0, 0.0]]), np.array([1.0]), 0.0)
    assert ok and q is p


def test_projection_onto_single_halfspace():
    q, ok = project_point(np.array([1.2, 0.0]), np.array([[1.0, 0.0]]), np.array([1.0]), 0.0, margin=1e-4)
    assert ok and np.allclose(q, [1.0 - 1e-4, 0.0])


def test_projection_into_wedge():
    # heading along x: the sideways move alone cannot fix x <= 1, so alternating projections run
    A = np.array([[1.0, 0.0], [1.0, 1.0]])
    b = np.array([1.0, 1.0])
    q, ok = project_point(np.array([2.0, 2.0]), A, b, 0.0, margin=1e-3)
    assert ok and np.all(A @ q <= b - 1e-3 + 1e-12)


def test_project_previous_plan_reports_and_fixes_stages():
    box = Box(np.array([-10.0, -10.0]), np.array([10.0, 10.0]))
    poly = Polytope(np.array([[0.0, 1.0]]), np.array([-1.0]), np.array([[1, 0, 1, 0]]), box, 1)
    X = np.zeros((2, 4))
    plan = TrajectoryPlan(X, np.zeros((1, 2)), 0.2)
    out, failed = project_previous_plan(plan, {(1, 0): poly})
    assert failed == [] and out.states[1, 1] <= -1.0
    assert np.allclose(plan.states, 0.0)


def test_clear_of_samples_moves_out_of_every_disc():
    rng = np.random.default_rng(0)
    deltas = rng.normal([0.0, 0.1], 0.2, (300, 2))
    r = np.full(300, 0.6)
    p = clear_of_samples(np.zeros(2), 0.0, deltas, r, np.zeros((1, 2)))
    assert p[0] == 0.0
    assert np.all(np.hypot(*(deltas - p).T) >= 0.6)
    assert np.array_equal(clear_of_samples(np.array([0.0, 5.0]), 0.0, deltas, r, np.zeros((1, 2))), [0.0, 5.0])


def test_no_obstacles_has_empty_support():
    cfg = straight()
    out = mpc_step(RobotState(0, 0, 0), [], cfg, None, seed=0)
    assert out.result.status == "optimal"
    assert out.result.support_set == set() and out.certified_plan is not None
    assert out.command.v > 0


def scene(offsets=None, risk=RISK):
    cfg = PlannerConfig(ReferencePath([(0, 0), (30, 0)]), risk,
                        discs=offsets if offsets is not None else np.zeros((1, 2)))
    obs = [
        Obstacle(constant_velocity((3.0, -1.5), (0.0, 0.8), 0.3)),
        Obstacle(constant_velocity((5.0, 1.0), (-0.3, -0.4), 0.3)),
    ]
    return cfg, obs


@pytest.mark.parametrize("offsets", [np.zeros((1, 2)), np.array([[-0.3, 0.0], [0.0, 0.0], [0.3, 0.0]])])
def test_plan_clears_every_kept_sample(offsets):
    cfg, obs = scene(offsets)
    state, prev = RobotState(0, 0, 0), None
    for step in range(3):
        problem, scenarios, warm, _ = prepare_step(state, obs, cfg, prev, step)
        res = solve_sp(problem, scenarios, cfg.risk, warm, cfg.max_iters)
        assert res.status in ("optimal", "early_terminated") and res.certificate.certified
        pos = disc_positions(res.plan.states, cfg.discs)[1:]  # (N, n_d, 2)
        keep = ~np.isin(scenarios.ids, list(res.removed))
        d = pos[None, None] - scenarios.samples[keep][:, :, :, None, :]  # (S, M, N, n_d, 2)
        assert np.linalg.norm(d, axis=-1).min() >= cfg.robot_radius + 0.3 - 1e-6
        state, prev = RobotState.from_array(res.plan.states[1]), res.plan


def test_support_re_solve_reproduces_plan():
    cfg, obs = scene(risk=RiskConfig(0.2, 0.05, 12, 1))
    problem, scenarios, warm, _ = prepare_step(RobotState(0, 0, 0), obs, cfg, None, 3)
    res = solve_sp(problem, scenarios, cfg.risk, warm, cfg.max_iters)
    assert res.status == "optimal" and res.support_size > 0
    keep = res.support_set - res.removed
    sub = SpProblem(**{**problem.__dict__, "constraints": problem.constraints.only(keep)})
    # removed scenarios are already gone, so the re-solve removes nothing more
    again = solve_sp(sub, None, RiskConfig(0.2, 0.05, 12, 0, cfg.risk.sample_size), warm, cfg.max_iters)
    # both runs stop at the iteration cap; QP round-off compounds over the iterations
    assert np.abs(again.plan.states - res.plan.states).max() <= 1e-5


def test_unavoidable_obstacle_falls_back_to_braking():
    cfg = straight()
    obs = [Obstacle(gaussian_random_walk((0.3, 0.0), 0.05))]
    out = mpc_step(RobotState(0, 0, 0), obs, cfg, None, seed=0, v_current=1.0)
    assert out.result.status == "fallback"
    assert out.certified_plan is None
    assert out.command.v == pytest.approx(1.0 - cfg.deceleration * cfg.dt) and out.command.omega == 0.0


def test_fallback_follows_last_certified_plan_slowing_down():
    cfg = straight()
    U = np.tile([1.5, 0.1], (cfg.N, 1))
    last = TrajectoryPlan(cfg.dynamics.rollout(np.zeros(4), U), U, cfg.dt)
    obs = [Obstacle(gaussian_random_walk((0.3, 0.0), 0.05))]
    out = mpc_step(RobotState(0, 0, 0), obs, cfg, None, seed=0, last_certified=last, v_current=1.5)
    assert out.result.status == "fallback"
    assert out.command.v == pytest.approx(1.1) and out.command.omega == pytest.approx(0.1)
    assert np.allclose(out.certified_plan.states[0], last.states[1])


def test_warm_starts_order():
    cfg = straight()
    x0 = np.array([1.0, 0.0, 0.0, 0.0])
    cands = warm_starts(x0, cfg, None)
    assert [c.inputs[0, 0] for c in cands] == [0.0, 0.5 * cfg.v_ref, cfg.v_ref]
    U = np.tile([1.0, 0.2], (cfg.N, 1))
    prev = TrajectoryPlan(cfg.dynamics.rollout(np.zeros(4), U), U, cfg.dt)
    first = warm_starts(x0, cfg, prev)[0]
    assert np.allclose(first.states[0], x0) and np.allclose(first.inputs[0], [1.0, 0.2])


def test_moving_guess_rescues_a_standing_start():
    # from rest the linearization cannot turn, so only a moving guess swerves past the walker
    cfg = PlannerConfig(ReferencePath([(0, 0), (30, 0)]), RISK)
    obs = [Obstacle(constant_velocity((0.3, 1.5), (0.0, -1.0), 0.2))]
    state = RobotState(0, 0, 0)
    problem, scenarios, warm, _ = prepare_step(state, obs, cfg, None, 0)
    assert not usable(solve_sp(problem, scenarios, cfg.risk, warm, cfg.max_iters))
    out = mpc_step(state, obs, cfg, None, seed=0)
    assert out.attempts == 2 and usable(out.result) and out.command.v > 0


def test_step_is_deterministic_in_the_seed():
    cfg, obs = scene()
    a = mpc_step(RobotState(0, 0, 0), obs, cfg, None, seed=5)
    b = mpc_step(RobotState(0, 0, 0), obs, cfg, None, seed=5)
    assert np.array_equal(a.result.plan.states, b.result.plan.states)
    assert a.result.support_set == b.result.support_set


def test_initial_guess_stands_still():
    cfg = straight()
    g = initial_guess(np.array([1.0, 2.0, 0.3, 0.0]), cfg)
    assert np.allclose(g.states, [1.0, 2.0, 0.3, 0.0])
    assert math.isclose(g.dt, cfg.dt)
