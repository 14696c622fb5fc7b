"""One-dimensional avoidance toy problem.

A unicycle starts at ``y = 0.7`` and is pulled towards ``y = 0`` by the cost,
while a disc obstacle below it at height ``delta_k`` must be cleared at every
stage: ``y_k >= delta_k + r``.  The offsets are i.i.d. Gaussian per stage.
Small enough to run the greedy support oracle and the removal study quickly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import Unicycle
from .geometry import Box
from .risk import RiskConfig, epsilon_of_n
from .solver import ConstraintSet, SolveResult, SpProblem, TrajectoryPlan, solve_sp
from .uncertainty import ScenarioSet

MEAN = -1.3
VARIANCE = 0.07
RADIUS = 1.0
DT = 0.2
N = 5
Y_INIT = 0.7
U_LB = np.array([0.0, -2.0])
U_UB = np.array([2.0, 2.0])
V_REF = 2.0


@dataclass(frozen=True)
class ToyInstance:
    deltas: np.ndarray  # (S, N), obstacle height per scenario and stage
    seed: int
    mean: float = MEAN
    variance: float = VARIANCE
    radius: float = RADIUS

    @property
    def S(self) -> int:
        return len(self.deltas)


def sample_toy(S: int, seed: int, mean: float = MEAN, variance: float = VARIANCE) -> ToyInstance:
    rng = np.random.default_rng(seed)
    deltas = mean + np.sqrt(variance) * rng.standard_normal((S, N))
    return ToyInstance(deltas, seed, mean, variance)


def toy_samples(instance: ToyInstance) -> np.ndarray:
    """Obstacle positions ``(S, 1, N, 2)`` with the offsets on the y axis."""
    out = np.zeros((instance.S, 1, N, 2))
    out[:, 0, :, 1] = instance.deltas
    return out


def toy_residuals(X: np.ndarray, U: np.ndarray):
    """``sum_k y_k^2 + omega_k^2 + (v_k - 2)^2`` as stacked residuals."""
    n, nx = len(U), X.shape[1]
    r = np.concatenate([X[1:, 1], U[:, 1], U[:, 0] - V_REF])
    Jx = np.zeros((3 * n, n * nx))
    Ju = np.zeros((3 * n, 2 * n))
    for k in range(n):
        Jx[k, k * nx + 1] = 1.0
        Ju[n + k, 2 * k + 1] = 1.0
        Ju[2 * n + k, 2 * k] = 1.0
    return r, Jx, Ju


def warm_start(y0: float = Y_INIT) -> TrajectoryPlan:
    dyn = Unicycle(DT)
    U = np.tile([V_REF, 0.0], (N, 1))
    return TrajectoryPlan(dyn.rollout(np.array([0.0, y0, 0.0]), U), U, DT)


def toy_constraints(instance: ToyInstance, plan: TrajectoryPlan, ids: np.ndarray | None = None) -> ConstraintSet:
    S = instance.S
    ids = np.arange(1, S + 1) if ids is None else np.asarray(ids)
    rows, boxes, interiors = {}, {}, {}
    for k in range(1, N + 1):
        A = np.tile([0.0, -1.0], (S, 1))
        b = -(instance.deltas[:, k - 1] + instance.radius)
        prov = np.stack([ids, np.zeros(S, int), np.full(S, k), np.zeros(S, int)], axis=1)
        rows[(k, 0)] = (A, b, prov)
        boxes[(k, 0)] = Box.around(plan.states[k, :2])
    return ConstraintSet(rows, boxes, interiors)


def toy_problem(instance: ToyInstance, y0: float = Y_INIT) -> tuple[SpProblem, TrajectoryPlan]:
    plan = warm_start(y0)
    problem = SpProblem(
        dynamics=Unicycle(DT),
        residuals=toy_residuals,
        x_init=np.array([0.0, y0, 0.0]),
        N=N,
        u_lb=U_LB,
        u_ub=U_UB,
        constraints=toy_constraints(instance, plan),
    )
    return problem, plan


def toy_config(S: int, support_limit: int | None = None, removal_budget: int = 0, epsilon=0.1, beta=1e-6) -> RiskConfig:
    """Risk settings for a fixed sample; the limit defaults to no early termination."""
    limit = S - 1 if support_limit is None else support_limit
    return RiskConfig(epsilon, beta, limit, removal_budget, S)


def solve_toy(instance: ToyInstance, config: RiskConfig | None = None, max_iters: int = 15) -> SolveResult:
    problem, plan = toy_problem(instance)
    config = config or toy_config(instance.S)
    scenarios = ScenarioSet(toy_samples(instance), instance.seed)
    return solve_sp(problem, scenarios, config, plan, max_iters)


def toy_cost(result: SolveResult) -> float:
    r = toy_residuals(result.plan.states, result.plan.inputs)[0]
    return float(r @ r)


def empirical_risk(plan: TrajectoryPlan, n_mc: int, seed: int, mean=MEAN, variance=VARIANCE, radius=RADIUS) -> float:
    """Monte-Carlo probability that a fresh scenario violates the plan at any stage."""
    fresh = sample_toy(n_mc, seed, mean, variance).deltas
    y = plan.states[1:, 1]
    return float(np.mean(np.any(y[None] < fresh + radius - 1e-9, axis=1)))


def exact_risk(plan: TrajectoryPlan, mean=MEAN, variance=VARIANCE, radius=RADIUS) -> float:
    from scipy.stats import norm

    y = plan.states[1:, 1]
    return float(1.0 - np.prod(norm.cdf((y - radius - mean) / np.sqrt(variance))))


def certificate_bound(n_hat: int, S: int, beta: float) -> float:
    """Risk bound for an observed support size, valid without a precommitted limit."""
    return epsilon_of_n(n_hat, S, beta)
