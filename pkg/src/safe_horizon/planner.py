"""Receding-horizon planner: contouring objective, warm starts and the per-step loop."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dynamics import Unicycle, disc_positions, wrap_angle
from .geometry import Box, InfeasiblePolytope, linearize_many
from .risk import RiskConfig, certify
from .solver import ConstraintSet, SolveResult, SolverError, SpProblem, TrajectoryPlan, solve_sp
from .uncertainty import ObstacleModel, ScenarioSet, sample_trajectories

PROJECTION_MARGIN = 1e-4
WARM_SPEEDS = (0.0, 0.5, 1.0)  # fractions of v_ref for the straight-ahead guesses


@dataclass(frozen=True)
class RobotState:
    x: float
    y: float
    heading: float
    progress: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.heading, self.progress])

    @classmethod
    def from_array(cls, x) -> "RobotState":
        return cls(float(x[0]), float(x[1]), wrap_angle(float(x[2])), float(x[3]) if len(x) > 3 else 0.0)


@dataclass(frozen=True)
class RobotInput:
    v: float
    omega: float

    def as_array(self) -> np.ndarray:
        return np.array([self.v, self.omega])


class ReferencePath:
    """Piecewise-linear path with an arc-length table.

    Queries past either end extrapolate along the first or last segment.
    """

    def __init__(self, points: Sequence[Sequence[float]]):
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
            raise ValueError("a path needs at least two 2-D points")
        seg = np.diff(pts, axis=0)
        length = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(length <= 0):
            raise ValueError("repeated path points")
        self.points = pts
        self.tangents = seg / length[:, None]
        self.arc = np.concatenate([[0.0], np.cumsum(length)])

    @property
    def length(self) -> float:
        return float(self.arc[-1])

    def segment(self, s) -> np.ndarray:
        idx = np.searchsorted(self.arc, s, side="right") - 1
        return np.clip(idx, 0, len(self.tangents) - 1)

    def evaluate(self, s):
        """Path point and unit tangent at arc length ``s`` (scalar or array)."""
        s = np.asarray(s, dtype=float)
        i = self.segment(s)
        t = self.tangents[i]
        return self.points[i] + (s - self.arc[i])[..., None] * t, t

    def project(self, p, s_min: float = 0.0) -> float:
        """Arc length of the closest path point at or after ``s_min``."""
        p = np.asarray(p, dtype=float)
        a, ab = self.points[:-1], np.diff(self.points, axis=0)
        lam = np.clip(np.einsum("ij,ij->i", p - a, ab) / np.einsum("ij,ij->i", ab, ab), 0.0, 1.0)
        dist = np.hypot(*(a + lam[:, None] * ab - p).T)
        i = int(np.argmin(dist))
        return max(float(self.arc[i] + lam[i] * (self.arc[i + 1] - self.arc[i])), s_min)


@dataclass
class PlannerConfig:
    path: ReferencePath
    risk: RiskConfig
    N: int = 20
    dt: float = 0.2
    control_period: float = 0.05
    w_velocity: float = 0.05
    w_angular: float = 0.05
    w_contour: float = 0.02
    w_lag: float = 0.1
    v_ref: float = 2.0
    v_max: float = 3.0
    omega_max: float = 2.0
    deceleration: float = 2.0
    discs: np.ndarray = field(default_factory=lambda: np.zeros((1, 2)))
    robot_radius: float = 0.325
    obstacle_radius: float = 0.3
    max_iters: int = 15
    n_H: int = 20
    box_half_width: float = 10.0

    def __post_init__(self) -> None:
        self.discs = np.atleast_2d(np.asarray(self.discs, dtype=float))
        if min(self.w_velocity, self.w_angular, self.w_contour, self.w_lag) < 0:
            raise ValueError("weights must be non-negative")
        if self.N < 1 or self.dt <= 0:
            raise ValueError("need N >= 1 and dt > 0")

    @property
    def dynamics(self) -> Unicycle:
        return Unicycle(self.dt, progress=True)

    @property
    def u_lb(self) -> np.ndarray:
        return np.array([0.0, -self.omega_max])

    @property
    def u_ub(self) -> np.ndarray:
        return np.array([self.v_max, self.omega_max])


# --- objective ---------------------------------------------------------------


def path_errors(path: ReferencePath, X: np.ndarray):
    """Contour and lag errors of states ``(px, py, eta, s)`` and their gradients."""
    ref, t = path.evaluate(X[:, 3])
    d = X[:, :2] - ref
    lag = np.einsum("ij,ij->i", d, t)
    contour = t[:, 0] * d[:, 1] - t[:, 1] * d[:, 0]
    # within a segment the reference moves along t, so d(lag)/ds = -1 and d(contour)/ds = 0
    g_lag = np.zeros((len(X), 4))
    g_lag[:, 0], g_lag[:, 1], g_lag[:, 3] = t[:, 0], t[:, 1], -1.0
    g_con = np.zeros((len(X), 4))
    g_con[:, 0], g_con[:, 1] = -t[:, 1], t[:, 0]
    return contour, lag, g_con, g_lag


def mpcc_residuals(config: PlannerConfig, X: np.ndarray, U: np.ndarray):
    """Stacked residuals with Jacobians w.r.t. ``X[1:]`` and ``U``."""
    N, nx = len(U), X.shape[1]
    wc, wl = math.sqrt(config.w_contour), math.sqrt(config.w_lag)
    wv, ww = math.sqrt(config.w_velocity), math.sqrt(config.w_angular)
    contour, lag, g_con, g_lag = path_errors(config.path, X[1:])
    r = np.concatenate([wc * contour, wl * lag, wv * (U[:, 0] - config.v_ref), ww * U[:, 1]])
    Jx = np.zeros((4 * N, N * nx))
    Ju = np.zeros((4 * N, 2 * N))
    k = np.arange(N)
    for j in range(4):
        Jx[k, k * nx + j] = wc * g_con[:, j]
        Jx[N + k, k * nx + j] = wl * g_lag[:, j]
    Ju[2 * N + k, 2 * k] = wv
    Ju[3 * N + k, 2 * k + 1] = ww
    return r, Jx, Ju


def mpcc_cost(plan: TrajectoryPlan, config: PlannerConfig) -> float:
    r = mpcc_residuals(config, plan.states, plan.inputs)[0]
    return float(r @ r)


def mpcc_gradient(plan: TrajectoryPlan, config: PlannerConfig) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of :func:`mpcc_cost` w.r.t. ``states[1:]`` and ``inputs``."""
    r, Jx, Ju = mpcc_residuals(config, plan.states, plan.inputs)
    N = len(plan.inputs)
    return (2.0 * Jx.T @ r).reshape(N, -1), (2.0 * Ju.T @ r).reshape(N, 2)


# --- warm start ----------------------------------------------------------------


def _stage_rows(polytopes: dict, k: int, heading: float, discs: np.ndarray):
    """Constraints of stage ``k`` on the robot position, all discs combined."""
    A_parts, b_parts = [], []
    c, s = math.cos(heading), math.sin(heading)
    for (stage, d), poly in polytopes.items():
        if stage != k:
            continue
        A, b, _ = poly.all_constraints()
        off = np.array([c * discs[d, 0] - s * discs[d, 1], s * discs[d, 0] + c * discs[d, 1]])
        A_parts.append(A)
        b_parts.append(b - A @ off)
    if not A_parts:
        return np.zeros((0, 2)), np.zeros(0)
    return np.vstack(A_parts), np.concatenate(b_parts)


def project_point(p: np.ndarray, A: np.ndarray, b: np.ndarray, heading: float,
                  margin: float = PROJECTION_MARGIN, max_sweeps: int = 100) -> tuple[np.ndarray, bool]:
    """Move ``p`` into ``{A p <= b - margin}``; sideways first, then alternating projections."""
    target = b - margin
    if np.all(A @ p <= target):
        return p, True
    n = np.array([-math.sin(heading), math.cos(heading)])
    an, slack = A @ n, target - A @ p
    lo, hi = -np.inf, np.inf
    for a_i, s_i in zip(an, slack):
        if abs(a_i) < 1e-12:
            if s_i < 0:
                lo, hi = np.inf, -np.inf
        elif a_i > 0:
            hi = min(hi, s_i / a_i)
        else:
            lo = max(lo, s_i / a_i)
    if lo <= hi:
        t = min(max(0.0, lo), hi)
        return p + t * n, True
    q = p.copy()
    norms = np.einsum("ij,ij->i", A, A)
    for _ in range(max_sweeps):
        moved = False
        for a_i, t_i, nn in zip(A, target, norms):
            viol = a_i @ q - t_i
            if viol > 0:
                q = q - (viol / nn) * a_i
                moved = True
        if not moved:
            return q, True
    return q, bool(np.all(A @ q <= target + 1e-12))


def project_previous_plan(prev: TrajectoryPlan, polytopes: dict, discs=None,
                          margin: float = PROJECTION_MARGIN, max_sweeps: int = 100) -> tuple[TrajectoryPlan, list[int]]:
    """Positions moved into the stage polytopes; returns the plan and unrestored stages.

    ``polytopes`` maps ``(stage, disc)`` to a polytope on that disc's centre.
    Feasible stages are left untouched.
    """
    discs = np.zeros((1, 2)) if discs is None else np.atleast_2d(discs)
    X = prev.states.copy()
    failed = []
    for k in sorted({key[0] for key in polytopes}):
        A, b = _stage_rows(polytopes, k, X[k, 2], discs)
        p, ok = project_point(X[k, :2], A, b, X[k, 2], margin, max_sweeps)
        X[k, :2] = p
        if not ok:
            failed.append(k)
    return TrajectoryPlan(X, prev.inputs.copy(), prev.dt), failed


def clear_of_samples(p: np.ndarray, heading: float, deltas: np.ndarray, radii: np.ndarray,
                     offsets: np.ndarray, margin: float = 1e-3) -> np.ndarray:
    """Smallest sideways shift of ``p`` putting every disc outside every sampled obstacle.

    A linearization point outside all sampled discs satisfies all of its own
    halfspaces strictly, so the stage polytope is non-empty.
    """
    n = np.array([-math.sin(heading), math.cos(heading)])
    c, s = math.cos(heading), math.sin(heading)
    lo, hi = [], []
    for o in offsets:
        centre = p + np.array([c * o[0] - s * o[1], s * o[0] + c * o[1]])
        d = centre - deltas
        dn = d @ n
        disc = dn * dn - (np.einsum("ij,ij->i", d, d) - (radii + margin) ** 2)
        hit = disc > 0
        root = np.sqrt(disc[hit])
        lo.append(-dn[hit] - root)
        hi.append(-dn[hit] + root)
    lo, hi = np.concatenate(lo), np.concatenate(hi)
    if not np.any((lo < 0) & (hi > 0)):
        return p
    order = np.argsort(lo)
    lo, hi = lo[order], hi[order]
    # merge overlapping forbidden intervals and find the one covering t = 0
    start, end = lo[0], hi[0]
    for a, b in zip(lo[1:], hi[1:]):
        if a <= end:
            end = max(end, b)
            continue
        if start < 0 < end:
            break
        start, end = a, b
    t = end if abs(end) <= abs(start) else start
    return p + t * n


def linearization_points(X: np.ndarray, scenarios: ScenarioSet, radii: np.ndarray, config: PlannerConfig) -> np.ndarray:
    """Plan states with each stage moved sideways clear of all sampled obstacles."""
    X = X.copy()
    r = np.broadcast_to(config.robot_radius + radii, (scenarios.S, scenarios.M)).ravel()
    for k in range(1, config.N + 1):
        deltas = scenarios.samples[:, :, k - 1].reshape(-1, 2)
        X[k, :2] = clear_of_samples(X[k, :2], X[k, 2], deltas, r, config.discs)
    return X


def initial_guess(state: np.ndarray, config: PlannerConfig, speed: float = 0.0) -> TrajectoryPlan:
    """Straight ahead at constant ``speed``; standing still by default."""
    U = np.tile([speed, 0.0], (config.N, 1))
    return TrajectoryPlan(config.dynamics.rollout(state, U), U, config.dt)


def warm_starts(state: np.ndarray, config: PlannerConfig, prev_plan: TrajectoryPlan | None) -> list[TrajectoryPlan]:
    """Candidates tried in order until one solve is certified.

    At zero speed the linearized position ignores the turn rate, so a standing
    guess cannot swerve; a cruising guess can overshoot. Both are tried.
    """
    out = []
    if prev_plan is not None:
        shifted = prev_plan.shifted()
        out.append(TrajectoryPlan(config.dynamics.rollout(state, shifted.inputs), shifted.inputs, config.dt))
    out.extend(initial_guess(state, config, f * config.v_ref) for f in WARM_SPEEDS)
    return out


# --- the step -----------------------------------------------------------------


@dataclass
class Obstacle:
    model: ObstacleModel  # anchored at the current position
    radius: float = 0.3


def build_constraints(X: np.ndarray, scenarios: ScenarioSet, radii: np.ndarray, config: PlannerConfig,
                      interiors: dict | None = None) -> ConstraintSet:
    """Linearized halfspaces for every (stage, disc) about the positions of ``X``."""
    S, M, N = scenarios.S, scenarios.M, config.N
    pos = disc_positions(X, config.discs, (0, 1), 2)
    rows, boxes = {}, {}
    r = (config.robot_radius + radii)[None, :, None]
    ids = np.broadcast_to(scenarios.ids[:, None], (S, M)).ravel()
    obs = np.broadcast_to(np.arange(M)[None, :], (S, M)).ravel()
    for d in range(len(config.discs)):
        p_hat = pos[1:, d]  # (N, 2)
        A, b = linearize_many(p_hat[None, None], scenarios.samples, r)  # (S, M, N, 2)
        for k in range(1, N + 1):
            prov = np.stack([ids, obs, np.full(S * M, k), np.full(S * M, d)], axis=1)
            rows[(k, d)] = (A[:, :, k - 1].reshape(-1, 2), b[:, :, k - 1].ravel(), prov)
            boxes[(k, d)] = Box.around(p_hat[k - 1], config.box_half_width)
    return ConstraintSet(rows, boxes, interiors or {}, config.n_H)


@dataclass
class StepOutput:
    command: RobotInput
    result: SolveResult
    certified_plan: TrajectoryPlan | None
    timings: dict
    attempts: int = 1


def brake_input(v_current: float, config: PlannerConfig) -> RobotInput:
    return RobotInput(max(0.0, v_current - config.deceleration * config.dt), 0.0)


def prepare_step(
    state: RobotState,
    obstacles: Sequence[Obstacle],
    config: PlannerConfig,
    prev_plan: TrajectoryPlan | None,
    seed: int,
    warm: TrajectoryPlan | None = None,
    scenarios: ScenarioSet | None = None,
) -> tuple[SpProblem, ScenarioSet | None, TrajectoryPlan, dict]:
    """Warm start, scenario draw and linearized constraints for one step.

    ``warm`` overrides the first candidate of :func:`warm_starts`; passing
    ``scenarios`` reuses a draw instead of sampling again.
    """
    x0 = state.as_array()
    if warm is None:
        warm = warm_starts(x0, config, prev_plan)[0]
    residuals = lambda X, U: mpcc_residuals(config, X, U)  # noqa: E731
    if not obstacles:
        problem = SpProblem(config.dynamics, residuals, x0, config.N, config.u_lb, config.u_ub,
                            ConstraintSet({}, {}, {}), config.discs)
        return problem, None, warm, {"sampling_us": 0.0, "linearize_us": 0.0}
    timings = {}
    t = time.perf_counter()
    models = [o.model for o in obstacles]
    radii = np.array([o.radius for o in obstacles])
    if scenarios is None:
        scenarios = sample_trajectories(models, config.N, config.risk.sample_size, config.dt, seed)
    timings["sampling_us"] = (time.perf_counter() - t) * 1e6
    t = time.perf_counter()
    X_lin = linearization_points(warm.states, scenarios, radii, config)
    constraints = build_constraints(X_lin, scenarios, radii, config)
    pos = disc_positions(X_lin, config.discs, (0, 1), 2)
    constraints.interiors = {key: pos[key[0], key[1]] for key in constraints.keys}
    timings["linearize_us"] = (time.perf_counter() - t) * 1e6
    problem = SpProblem(config.dynamics, residuals, x0, config.N, config.u_lb, config.u_ub,
                        constraints, config.discs)
    return problem, scenarios, warm, timings


def mpc_step(
    state: RobotState,
    obstacles: Sequence[Obstacle],
    config: PlannerConfig,
    prev_plan: TrajectoryPlan | None,
    seed: int,
    last_certified: TrajectoryPlan | None = None,
    v_current: float = 0.0,
) -> StepOutput:
    """Sample, linearize, reduce, solve and certify one receding-horizon step."""
    t0 = time.perf_counter()
    timings: dict[str, float] = {}
    drawn = None
    for attempt, warm in enumerate(warm_starts(state.as_array(), config, prev_plan), 1):
        problem, scenarios, warm, t = prepare_step(state, obstacles, config, prev_plan, seed, warm,
                                                   drawn.fresh() if drawn is not None else None)
        drawn = scenarios
        result = _safe_solve(problem, scenarios, config, warm)
        for key, value in {**t, **result.timings}.items():
            timings[key] = timings.get(key, 0.0) + value
        if usable(result):
            break

    command, certified = select_command(result, last_certified, v_current, config)
    timings["step_us"] = (time.perf_counter() - t0) * 1e6
    return StepOutput(command, result, certified, timings, attempt)


def usable(result: SolveResult) -> bool:
    return result.status in ("optimal", "early_terminated") and result.certificate.certified


def select_command(result: SolveResult, last_certified: TrajectoryPlan | None, v_current: float,
                   config: PlannerConfig) -> tuple[RobotInput, TrajectoryPlan | None]:
    """First input of a certified plan, else follow the last certified plan while slowing, else brake."""
    if usable(result):
        return RobotInput(*result.plan.inputs[0]), result.plan
    result.status = "fallback"
    if last_certified is not None and len(last_certified.inputs) > 1:
        follow = last_certified.shifted()
        v = max(0.0, min(follow.inputs[0, 0], v_current - config.deceleration * config.dt))
        return RobotInput(v, follow.inputs[0, 1]), follow
    return brake_input(v_current, config), None


def _safe_solve(problem: SpProblem, scenarios, config: PlannerConfig, warm: TrajectoryPlan) -> SolveResult:
    try:
        return solve_sp(problem, scenarios, config.risk, warm, config.max_iters)
    except (SolverError, InfeasiblePolytope, np.linalg.LinAlgError, ValueError) as exc:
        cert = certify(config.risk.support_limit + 1, config.risk)
        return SolveResult(warm, set(), set(), cert, 0, [], "infeasible", {}, diagnostics=[{"error": str(exc)}])
