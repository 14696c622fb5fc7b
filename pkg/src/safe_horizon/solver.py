"""Scenario program solver with online support estimation.

The scenario program is solved by sequential quadratic programming in
single-shooting form: the dynamics are rolled out exactly and each iteration
solves one convex QP in the input sequence, with the per-stage free-space
polytopes as inequality constraints.  The scenarios owning active facets of
each QP are collected into the support estimate.  A scenario whose facet
rejects a trial step of the line search also changed the outcome of that
iteration, so it is counted as active too.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .dynamics import disc_jacobian, disc_positions
from .geometry import Box, InfeasiblePolytope, Polytope, reduce_polytope
from .qp import kkt_residual, solve_qp
from .risk import RiskCertificate, RiskConfig, certify
from .uncertainty import ScenarioSet

ACTIVE_TOL = 1e-6
FEASIBILITY_TOL = 1e-6
HESSIAN_REG = 1e-8
MAX_HALVINGS = 8


class SolverError(RuntimeError):
    def __init__(self, message: str, iteration: int):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration


@dataclass
class TrajectoryPlan:
    states: np.ndarray  # (N + 1, nx)
    inputs: np.ndarray  # (N, nu)
    dt: float

    @property
    def N(self) -> int:
        return len(self.inputs)

    def shifted(self) -> "TrajectoryPlan":
        """Advance by one stage and duplicate the last one."""
        states = np.vstack([self.states[1:], self.states[-1:]])
        inputs = np.vstack([self.inputs[1:], self.inputs[-1:]])
        return TrajectoryPlan(states, inputs, self.dt)

    def copy(self) -> "TrajectoryPlan":
        return TrajectoryPlan(self.states.copy(), self.inputs.copy(), self.dt)


class ConstraintSet:
    """Scenario halfspaces of one solve, grouped per (stage, disc).

    ``rows[(k, d)] = (A, b, provenance)`` holds every sampled halfspace for
    stage ``k`` (1..N) and disc ``d``.  Polytopes are reduced lazily and
    rebuilt only for the stages whose facets belong to newly removed
    scenarios, since removing a redundant halfspace cannot change the set.
    """

    def __init__(self, rows: dict, boxes: dict, interiors: dict, n_H: int = 20):
        self.rows = rows
        self.boxes = boxes
        self.interiors = interiors
        self.n_H = n_H
        self._cache: dict = {}
        self._excluded: set[int] = set()
        self.reduce_time = 0.0

    @property
    def keys(self) -> list:
        return sorted(self.rows)

    def without(self, ids: Iterable[int]) -> "ConstraintSet":
        """Copy with all halfspaces of ``ids`` dropped (exclusion, not removal)."""
        ids = np.fromiter(ids, dtype=np.int64)
        rows = {}
        for key, (A, b, prov) in self.rows.items():
            keep = ~np.isin(prov[:, 0], ids)
            rows[key] = (A[keep], b[keep], prov[keep])
        return ConstraintSet(rows, self.boxes, self.interiors, self.n_H)

    def only(self, ids: Iterable[int]) -> "ConstraintSet":
        ids = np.fromiter(ids, dtype=np.int64)
        rows = {}
        for key, (A, b, prov) in self.rows.items():
            keep = np.isin(prov[:, 0], ids)
            rows[key] = (A[keep], b[keep], prov[keep])
        return ConstraintSet(rows, self.boxes, self.interiors, self.n_H)

    def polytopes(self, excluded: set[int]) -> dict:
        """Reduced polytope per key; raises :class:`InfeasiblePolytope`."""
        new = set(excluded) - self._excluded
        if not excluded >= self._excluded:
            self._cache.clear()
            new = set(excluded)
        self._excluded = set(excluded)
        new_arr = np.fromiter(new, dtype=np.int64)
        t0 = time.perf_counter()
        try:
            for key in self.keys:
                poly = self._cache.get(key)
                if poly is not None and (len(new_arr) == 0 or not np.isin(poly.scenario_ids, new_arr).any()):
                    continue
                A, b, prov = self.rows[key]
                if excluded:
                    keep = ~np.isin(prov[:, 0], np.fromiter(excluded, dtype=np.int64))
                    A, b, prov = A[keep], b[keep], prov[keep]
                self._cache[key] = reduce_polytope(
                    (A, b, prov), self.boxes[key], self.n_H, self.interiors.get(key), stage=key[0], disc=key[1]
                )
        finally:
            self.reduce_time += time.perf_counter() - t0
        return dict(self._cache)


@dataclass
class SpProblem:
    """Scenario program: dynamics, least-squares objective, bounds and constraints.

    ``residuals(X, U)`` returns ``(r, Jx, Ju)`` with the cost ``||r||^2`` and
    Jacobians with respect to the flattened states ``X[1:]`` and inputs.
    """

    dynamics: object
    residuals: Callable
    x_init: np.ndarray
    N: int
    u_lb: np.ndarray
    u_ub: np.ndarray
    constraints: ConstraintSet
    discs: np.ndarray = field(default_factory=lambda: np.zeros((1, 2)))
    x_lb: np.ndarray | None = None
    x_ub: np.ndarray | None = None

    def rollout(self, U: np.ndarray) -> np.ndarray:
        return self.dynamics.rollout(self.x_init, U)

    def cost(self, X: np.ndarray, U: np.ndarray) -> float:
        r = self.residuals(X, U)[0]
        return float(r @ r)


@dataclass
class SolveResult:
    plan: TrajectoryPlan
    support_set: set[int]
    removed: set[int]
    certificate: RiskCertificate
    iterations_used: int
    per_iteration_active: list[set[int]]
    status: str  # optimal, early_terminated, fallback, infeasible
    timings: dict[str, float]
    cost: float = float("nan")
    converged: bool = False
    feasible: bool = False
    diagnostics: list[dict] = field(default_factory=list)
    polytopes: dict = field(default_factory=dict)
    facet_ids: set[int] = field(default_factory=set)  # scenarios owning a facet of any polytope used

    @property
    def support_size(self) -> int:
        return len(self.support_set)


def aggregate_support(per_iteration_active: Iterable[Iterable[int]], removed: Iterable[int]) -> tuple[set[int], int]:
    support: set[int] = set(int(i) for i in removed)
    for active in per_iteration_active:
        support |= {int(i) for i in active}
    return support, len(support)


def remove_scenarios(
    scenarios: ScenarioSet | None,
    active: dict[int, float],
    infeasible: Iterable[int],
    R: int,
    already_removed: Iterable[int] = (),
) -> set[int]:
    """Infeasible scenarios plus up to ``R`` active ones with the largest duals.

    ``active`` maps scenario id to its dual value.  Ties go to the smaller id.
    ``R`` is the remaining budget of active removals.
    """
    if R < 0:
        raise ValueError("removal budget must be non-negative")
    skip = set(already_removed)
    chosen = {int(i) for i in infeasible}
    ranked = sorted(((-dual, int(i)) for i, dual in active.items() if int(i) not in skip | chosen))
    chosen |= {i for _, i in ranked[:R]}
    if scenarios is not None and chosen:
        scenarios.remove(chosen)
    return chosen


def _sensitivities(problem: SpProblem, X: np.ndarray, U: np.ndarray) -> np.ndarray:
    """``S[k] = d x_k / d U`` for k = 0..N, shape ``(N + 1, nx, N * nu)``."""
    dyn = problem.dynamics
    nx, nu, N = dyn.nx, dyn.nu, problem.N
    S = np.zeros((N + 1, nx, N * nu))
    for k in range(N):
        A, B = dyn.jacobians(X[k], U[k])
        S[k + 1] = A @ S[k]
        S[k + 1][:, k * nu:(k + 1) * nu] += B
    return S


def _constraint_rows(problem: SpProblem, X, S, polys):
    """Linearized polytope rows ``G d <= h`` with their scenario ids."""
    dyn = problem.dynamics
    pos = disc_positions(X, problem.discs, dyn.pos_index, dyn.heading_index)
    G_parts, h_parts, ids = [], [], []
    for (k, d), poly in sorted(polys.items()):
        A, b, prov = poly.all_constraints()
        P = disc_jacobian(X[k], problem.discs[d], dyn.nx, dyn.pos_index, dyn.heading_index) @ S[k]
        G_parts.append(A @ P)
        h_parts.append(b - A @ pos[k, d])
        ids.append(prov[:, 0])
    if not G_parts:
        n = S.shape[2]
        return np.zeros((0, n)), np.zeros(0), np.zeros(0, dtype=np.int64)
    return np.vstack(G_parts), np.concatenate(h_parts), np.concatenate(ids)


def polytope_violation(problem: SpProblem, X: np.ndarray, polys: dict) -> tuple[float, set[int]]:
    """Largest polytope violation of a trajectory and the scenarios violated."""
    dyn = problem.dynamics
    pos = disc_positions(X, problem.discs, dyn.pos_index, dyn.heading_index)
    worst, violators = 0.0, set()
    for (k, d), poly in polys.items():
        A, b, prov = poly.all_constraints()
        slack = A @ pos[k, d] - b
        if len(slack):
            worst = max(worst, float(slack.max()))
            bad = slack > FEASIBILITY_TOL
            violators |= {int(i) for i in prov[bad, 0] if i >= 0}
    return worst, violators


def solve_sp(
    problem: SpProblem,
    scenarios: ScenarioSet | None,
    config: RiskConfig,
    warm_start: TrajectoryPlan,
    max_iters: int = 15,
    step_tol: float = 1e-6,
    remove_on_infeasible: bool = True,
) -> SolveResult:
    """Sequential convex iterations with support tracking, removal and early termination.

    With ``remove_on_infeasible`` off, an infeasible subproblem ends the solve
    instead of discarding a blocking scenario.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be at least 1")
    t_start = time.perf_counter()
    N, nu = problem.N, problem.dynamics.nu
    removed: set[int] = set(scenarios.removed_ids) if scenarios is not None else set()
    removed_active = 0
    per_iter: list[set[int]] = []
    diagnostics: list[dict] = []
    qp_time = 0.0
    facet_ids: set[int] = set()
    problem.constraints.reduce_time = 0.0

    def remove(ids: set[int]) -> None:
        removed.update(ids)
        if scenarios is not None:
            scenarios.remove(ids)

    def polys_for_removed() -> dict:
        while True:
            try:
                polys = problem.constraints.polytopes(removed)
                for poly in polys.values():
                    facet_ids.update(int(i) for i in poly.scenario_ids)
                return polys
            except InfeasiblePolytope as exc:
                if not remove_on_infeasible or not exc.scenario_ids or len(removed) >= config.support_limit:
                    raise
                # an empty stage set: drop one blocking scenario and rebuild
                remove({min(exc.scenario_ids)})

    def finish(status, X, U, support, iters, converged, feasible, polys, removed_at=None) -> SolveResult:
        cert = certify(len(support), config)
        if status in ("optimal", "early_terminated") and not cert.certified:
            status = "infeasible"
        timings = {
            "total_us": (time.perf_counter() - t_start) * 1e6,
            "qp_us": qp_time * 1e6,
            "polytope_us": problem.constraints.reduce_time * 1e6,
        }
        plan = TrajectoryPlan(X, U, getattr(problem.dynamics, "dt", 0.0))
        return SolveResult(
            plan, set(support), set(removed if removed_at is None else removed_at), cert, iters, [set(a) for a in per_iter], status, timings,
            problem.cost(X, U), converged, feasible, diagnostics, polys, set(facet_ids),
        )

    U = np.clip(np.asarray(warm_start.inputs, dtype=float), problem.u_lb, problem.u_ub)
    X = problem.rollout(U)
    try:
        polys = polys_for_removed()
    except InfeasiblePolytope:
        return finish("infeasible", X, U, set(removed), 0, False, False, {})

    last_feasible = None  # (X, U, support, iteration, polys, removed)
    converged = False
    l = 0
    while l < max_iters:
        l += 1
        S = _sensitivities(problem, X, U)
        r, Jx, Ju = problem.residuals(X, U)
        J = Jx @ S[1:].reshape(-1, S.shape[2]) + Ju
        H = 2.0 * J.T @ J + HESSIAN_REG * np.eye(J.shape[1])
        g = 2.0 * J.T @ r
        Gc, hc, ids = _constraint_rows(problem, X, S, polys)
        u_flat = U.ravel()
        lb = np.tile(problem.u_lb, N) - u_flat
        ub = np.tile(problem.u_ub, N) - u_flat
        n = len(u_flat)
        C_in = np.vstack([Gc, np.eye(n), -np.eye(n)])
        d_in = np.concatenate([hc, ub, -lb])
        row_ids = np.concatenate([ids, np.full(2 * n, -1)])
        if problem.x_lb is not None or problem.x_ub is not None:
            Sx = S[1:].reshape(-1, n)
            xf = X[1:].ravel()
            if problem.x_ub is not None:
                C_in = np.vstack([C_in, Sx])
                d_in = np.concatenate([d_in, np.tile(problem.x_ub, N) - xf])
                row_ids = np.concatenate([row_ids, np.full(len(xf), -1)])
            if problem.x_lb is not None:
                C_in = np.vstack([C_in, -Sx])
                d_in = np.concatenate([d_in, xf - np.tile(problem.x_lb, N)])
                row_ids = np.concatenate([row_ids, np.full(len(xf), -1)])

        t0 = time.perf_counter()
        res = solve_qp(H, g, C_in=C_in, d_in=d_in)
        qp_time += time.perf_counter() - t0
        if res.status == "infeasible":
            culprits = {int(row_ids[i]) for i in res.infeasible_rows if row_ids[i] >= 0}
            if not culprits or not remove_on_infeasible:
                return finish("infeasible", X, U, aggregate_support(per_iter, removed)[0], l, False, False, polys)
            remove({min(culprits)})
            per_iter.append(set())
            if len(aggregate_support(per_iter, removed)[0]) > config.support_limit:
                return finish("infeasible", X, U, aggregate_support(per_iter, removed)[0], l, False, False, polys)
            try:
                polys = polys_for_removed()
            except InfeasiblePolytope:
                return finish("infeasible", X, U, set(removed), l, False, False, {})
            continue
        if res.status != "optimal":
            raise SolverError(f"QP subproblem failed ({res.status})", l)

        step = res.x
        slack = d_in - C_in @ step
        act_rows = np.flatnonzero((slack <= ACTIVE_TOL) & (row_ids >= 0))
        duals: dict[int, float] = {}
        for i in act_rows:
            duals[int(row_ids[i])] = duals.get(int(row_ids[i]), 0.0) + float(res.multipliers_in[i])
        active = set(duals)

        # halving line search: a trial step must be feasible, or reduce the violation of an
        # infeasible iterate; every scenario violated at a trial point shaped the outcome
        cur_viol, cur_violators = polytope_violation(problem, X, polys)
        active |= cur_violators
        alpha, accepted = 1.0, False
        for _ in range(MAX_HALVINGS + 1):
            U_try = np.clip(U + alpha * step.reshape(N, nu), problem.u_lb, problem.u_ub)
            X_try = problem.rollout(U_try)
            viol, violators = polytope_violation(problem, X_try, polys)
            active |= violators
            if viol <= FEASIBILITY_TOL or (cur_viol > FEASIBILITY_TOL and viol < (1.0 - 1e-4) * cur_viol):
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            U_try, X_try, viol, alpha = U, X, cur_viol, 0.0
        feasible = viol <= FEASIBILITY_TOL
        moved = float(np.abs(U_try - U).max())
        X, U = X_try, U_try
        per_iter.append(active)
        support, n_hat = aggregate_support(per_iter, removed)
        diagnostics.append({
            "iteration": l,
            "n_hat": n_hat,
            "step": moved,
            "alpha": alpha,
            "violation": viol,
            "kkt": kkt_residual(H, g, step, None, None, C_in, d_in, res.multipliers_in, np.zeros(0)),
            "qp_iterations": res.iterations,
        })

        if n_hat > config.support_limit:
            if last_feasible is not None:
                Xm, Um, sup_m, m, polys_m, rem_m = last_feasible
                per_iter[:] = per_iter[:m]
                return finish("early_terminated", Xm, Um, sup_m, m, False, True, polys_m, rem_m)
            return finish("infeasible", X, U, support, l, False, feasible, polys)

        if feasible:
            last_feasible = (X.copy(), U.copy(), set(support), l, polys, set(removed))

        budget = config.removal_budget - removed_active
        new = set()
        if budget > 0 and active:
            new = remove_scenarios(None, {i: duals.get(i, 0.0) for i in active}, (), budget, removed)
            if new:
                removed_active += len(new)
                remove(new)
                try:
                    polys = polys_for_removed()
                except InfeasiblePolytope:
                    return finish("infeasible", X, U, aggregate_support(per_iter, removed)[0], l, False, False, {})
                diagnostics[-1]["removed"] = sorted(new)
        if moved <= step_tol and not new and feasible:
            converged = True
            break
        if not accepted and not new:
            break

    support, _ = aggregate_support(per_iter, removed)
    if polytope_violation(problem, X, polys)[0] <= FEASIBILITY_TOL:
        return finish("optimal", X, U, support, l, converged, True, polys)
    if last_feasible is not None:
        Xm, Um, sup_m, m, polys_m, rem_m = last_feasible
        per_iter[:] = per_iter[:m]
        return finish("early_terminated", Xm, Um, sup_m, m, False, True, polys_m, rem_m)
    return finish("infeasible", X, U, support, l, False, False, polys)


def plans_close(a: TrajectoryPlan, b: TrajectoryPlan, tol: float = 1e-6) -> bool:
    return bool(
        np.abs(a.inputs - b.inputs).max(initial=0.0) <= tol and np.abs(a.states - b.states).max(initial=0.0) <= tol
    )


def greedy_support(
    problem: SpProblem,
    config: RiskConfig,
    warm_start: TrajectoryPlan,
    ids: Iterable[int] | None = None,
    max_iters: int = 15,
    tol: float = 1e-6,
    skip_redundant: bool = False,
) -> set[int]:
    """Scenarios whose individual exclusion changes the solution (up to S + 1 solves).

    With ``skip_redundant``, scenarios that never own a facet of a polytope used
    by the full solve are not re-solved: excluding them leaves every polytope,
    and therefore the whole deterministic solve, unchanged.
    """
    cfg = RiskConfig(config.epsilon, config.beta, config.sample_size - 1, 0, config.sample_size)
    base = solve_sp(problem, None, cfg, warm_start, max_iters)
    if ids is None:
        ids = sorted({int(i) for _, _, prov in problem.constraints.rows.values() for i in prov[:, 0]})
    support = set()
    for i in ids:
        if skip_redundant and i not in base.facet_ids:
            continue
        sub = SpProblem(**{**problem.__dict__, "constraints": problem.constraints.without([i])})
        res = solve_sp(sub, None, cfg, warm_start, max_iters)
        if res.status != base.status or not plans_close(res.plan, base.plan, tol):
            support.add(int(i))
    return support
