"""Closed-loop experiments, Monte-Carlo collision checks and the Gaussian CDF baseline."""
from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from scipy.special import erfinv

from .dynamics import Unicycle, disc_positions
from .geometry import Box, DegenerateDirection, Halfspace
from .planner import (
    Obstacle,
    PlannerConfig,
    RobotState,
    StepOutput,
    clear_of_samples,
    mpc_step,
    mpcc_residuals,
    select_command,
    usable,
    warm_starts,
)
from .risk import RiskConfig, certify, compute_sample_size, epsilon_of_n
from .solver import ConstraintSet, SolveResult, SpProblem, TrajectoryPlan, greedy_support, solve_sp
from .toy import certificate_bound, empirical_risk, sample_toy, solve_toy, toy_config, toy_cost, toy_problem
from .uncertainty import ObstacleModel, Variant, markov_chain_modes, sample_obstacle

MC_CHUNK = 20_000

SUMMARY_COLUMNS = [
    "Method", "Scene", "Runs", "Incomplete",
    "Max CP_k", "Spec CP_k", "Max CP", "Spec CP",
    "Dur. [s]", "Dur. std", "Trav. [m]", "Trav. std",
    "Min Dist. [m]", "Min Dist. std", "Collisions",
    "Runtime [ms]", "Runtime (Max) [ms]",
]


# --- Monte-Carlo collision probability ---------------------------------------


@dataclass(frozen=True)
class CPEstimate:
    joint: float
    marginal: np.ndarray  # (N,)
    n_mc: int

    @property
    def joint_se(self) -> float:
        return binomial_se(self.joint, self.n_mc)

    @property
    def marginal_se(self) -> np.ndarray:
        return np.sqrt(self.marginal * (1.0 - self.marginal) / self.n_mc)

    @property
    def max_marginal(self) -> float:
        return float(self.marginal.max()) if len(self.marginal) else 0.0


def binomial_se(p: float, n: int) -> float:
    return math.sqrt(max(p * (1.0 - p), 0.0) / n)


def _chunk_seed(seed: int, chunk: int) -> int:
    return (int(seed) << 16) + chunk


def _offset_chunks(keys: Sequence[tuple[int, ObstacleModel]], N: int, n_mc: int, dt: float,
                   seed: int) -> Iterator[tuple[int, dict]]:
    """Per chunk, sampled displacements of every (index, origin-anchored model)."""
    for c, start in enumerate(range(0, n_mc, MC_CHUNK)):
        S = min(MC_CHUNK, n_mc - start)
        cs = _chunk_seed(seed, c)
        yield S, {key: sample_obstacle(key[1], N, S, dt, cs, key[0]) for key in keys}


def _origin_key(j: int, model: ObstacleModel) -> tuple[int, ObstacleModel]:
    return j, model.at((0.0, 0.0))


def _collisions(robot: np.ndarray, radii: np.ndarray, robot_radius: float, models, keys, offsets: dict) -> np.ndarray:
    """``(S, N)`` overlap flags; ``robot`` is ``(N, n_d, 2)``."""
    hit = None
    for j, model in enumerate(models):
        rel = robot - np.asarray(model.initial_position)  # obstacle displacement at which discs touch
        off = offsets[keys[j]]
        lim = (robot_radius + radii[j]) ** 2
        for d in range(robot.shape[1]):
            dx = off[:, :, 0] - rel[None, :, d, 0]
            dy = off[:, :, 1] - rel[None, :, d, 1]
            h = dx * dx + dy * dy < lim
            hit = h if hit is None else hit | h
    return hit


def monte_carlo_cp(plan: TrajectoryPlan, models: Sequence[ObstacleModel], discs, radii, n_mc: int, seed: int,
                   robot_radius: float = 0.325) -> CPEstimate:
    """Joint and per-stage collision probability of a fixed plan against fresh obstacle futures."""
    return validate_plans([(plan, list(models), np.asarray(radii, dtype=float))], discs, n_mc, seed, robot_radius)[0]


def validate_plans(items, discs, n_mc: int, seed: int, robot_radius: float = 0.325) -> list[CPEstimate]:
    """Batch version of :func:`monte_carlo_cp` sharing one set of sampled displacements.

    ``items`` holds ``(plan, models, radii)``.  Each estimate equals the one a
    separate :func:`monte_carlo_cp` call with the same seed returns.
    """
    if n_mc < 1:
        raise ValueError("need at least one Monte-Carlo sample")
    if not items:
        return []
    discs = np.atleast_2d(np.asarray(discs, dtype=float))
    N, dt = items[0][0].N, items[0][0].dt
    keys = sorted({_origin_key(j, m) for _, models, _ in items for j, m in enumerate(models)},
                  key=lambda k: (k[0], repr(k[1])))
    robots = [disc_positions(plan.states, discs)[1:] for plan, _, _ in items]
    item_keys = [[_origin_key(j, m) for j, m in enumerate(models)] for _, models, _ in items]
    joint = np.zeros(len(items))
    marginal = np.zeros((len(items), N))
    for S, offsets in _offset_chunks(keys, N, n_mc, dt, seed):
        for i, (plan, models, radii) in enumerate(items):
            hit = _collisions(robots[i], np.asarray(radii, dtype=float), robot_radius, models, item_keys[i], offsets)
            joint[i] += np.count_nonzero(hit.any(axis=1))
            marginal[i] += np.count_nonzero(hit, axis=0)
    return [CPEstimate(joint[i] / n_mc, marginal[i] / n_mc, n_mc) for i in range(len(items))]


# --- Gaussian CDF baseline -------------------------------------------------------


def chance_tightening(a: np.ndarray, sigma: np.ndarray, epsilon_k: float) -> float:
    """``erfinv(1 - 2 eps) * sqrt(2 a' Sigma a)``."""
    if not 0.0 < epsilon_k <= 0.5:
        raise ValueError("per-stage risk must lie in (0, 0.5]")
    return float(erfinv(1.0 - 2.0 * epsilon_k) * math.sqrt(2.0 * a @ sigma @ a))


def gaussian_baseline_halfspace(p, mean, sigma, r: float, epsilon_k: float, provenance=(-1, -1, -1, -1)) -> Halfspace:
    """Linearized collision constraint tightened for a Gaussian obstacle position."""
    p, mean = np.asarray(p, dtype=float), np.asarray(mean, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if np.min(np.linalg.eigvalsh(sigma)) < -1e-12:
        raise ValueError("covariance must be positive semidefinite")
    diff = p - mean
    dist = float(np.hypot(*diff))
    if dist == 0.0:
        raise DegenerateDirection("linearization point coincides with the obstacle mean")
    a = diff / dist
    t = chance_tightening(a, sigma, epsilon_k)
    # a'(p - mean) - r >= t   <=>   (-a)'p <= -(a'mean + r + t)
    return Halfspace((float(-a[0]), float(-a[1])), float(-(a @ mean + r + t)), tuple(provenance))


def gaussian_modes(model: ObstacleModel, N: int, dt: float) -> list[tuple[np.ndarray, np.ndarray]]:
    """Mean ``(N, 2)`` and variance ``(N, 2)`` of every mode of the prediction."""
    if model.variant is Variant.MARKOV_CHAIN_GMM and not model.crossed:
        steps = [j for j, p in markov_chain_modes(model.crossing_probability, N) if p > 0.0]
    else:
        steps = [None]
    return [model.mean_and_variance(N, dt, step) for step in steps]


def baseline_constraints(X: np.ndarray, obstacles: Sequence[Obstacle], config: PlannerConfig, epsilon_k: float):
    """Tightened halfspaces per (stage, disc) for every obstacle mode, and the linearization points."""
    N = config.N
    modes = [gaussian_modes(o.model, N, config.dt) for o in obstacles]
    z = float(erfinv(1.0 - 2.0 * epsilon_k) * math.sqrt(2.0))
    X = X.copy()
    for k in range(1, N + 1):
        means = np.array([m[k - 1] for ms in modes for m, _ in ms])
        reach = np.array([config.robot_radius + o.radius + z * math.sqrt(v[k - 1].max())
                          for o, ms in zip(obstacles, modes) for _, v in ms])
        X[k, :2] = clear_of_samples(X[k, :2], X[k, 2], means, reach, config.discs)
    pos = disc_positions(X, config.discs)
    rows, boxes, interiors = {}, {}, {}
    for d in range(len(config.discs)):
        for k in range(1, N + 1):
            A, b, prov = [], [], []
            uid = 0
            for j, (o, ms) in enumerate(zip(obstacles, modes)):
                for mean, var in ms:
                    uid += 1
                    h = gaussian_baseline_halfspace(pos[k, d], mean[k - 1], np.diag(var[k - 1]),
                                                    config.robot_radius + o.radius, epsilon_k, (uid, j, k, d))
                    A.append(h.normal)
                    b.append(h.offset)
                    prov.append(h.provenance)
            rows[(k, d)] = (np.array(A), np.array(b), np.array(prov, dtype=np.int64))
            boxes[(k, d)] = Box.around(pos[k, d], config.box_half_width)
            interiors[(k, d)] = pos[k, d]
    return ConstraintSet(rows, boxes, interiors, config.n_H), X


def baseline_step(state: RobotState, obstacles: Sequence[Obstacle], config: PlannerConfig, epsilon_k: float,
                  prev_plan: TrajectoryPlan | None, last_feasible: TrajectoryPlan | None = None,
                  v_current: float = 0.0) -> StepOutput:
    """One step of the per-stage, per-obstacle Gaussian chance-constrained planner."""
    t0 = time.perf_counter()
    x0 = state.as_array()
    timings: dict[str, float] = {"sampling_us": 0.0}
    residuals = lambda X, U: mpcc_residuals(config, X, U)  # noqa: E731
    for attempt, warm in enumerate(warm_starts(x0, config, prev_plan), 1):
        t = time.perf_counter()
        if obstacles:
            constraints, _ = baseline_constraints(warm.states, obstacles, config, epsilon_k)
        else:
            constraints = ConstraintSet({}, {}, {})
        timings["linearize_us"] = timings.get("linearize_us", 0.0) + (time.perf_counter() - t) * 1e6
        n_rows = max(1, sum(len(b) for _, b, _ in constraints.rows.values()))
        # no scenario certificate here: a limit above the row count never terminates early
        risk = RiskConfig(1.0, 0.5, n_rows, 0, n_rows + 1)
        problem = SpProblem(config.dynamics, residuals, x0, config.N, config.u_lb, config.u_ub, constraints,
                            config.discs)
        try:
            result = solve_sp(problem, None, risk, warm, config.max_iters, remove_on_infeasible=False)
        except Exception as exc:  # noqa: BLE001 - any solver failure becomes a fallback
            result = SolveResult(warm, set(), set(), certify(n_rows + 1, risk), 0, [], "infeasible", {},
                                 diagnostics=[{"error": str(exc)}])
        for key, value in result.timings.items():
            timings[key] = timings.get(key, 0.0) + value
        if usable(result):
            break
    command, plan = select_command(result, last_feasible, v_current, config)
    timings["step_us"] = (time.perf_counter() - t0) * 1e6
    return StepOutput(command, result, plan, timings, attempt)


# --- closed loop -----------------------------------------------------------------


@dataclass
class ExperimentConfig:
    scene: str
    planner: PlannerConfig
    obstacles: list[Obstacle]
    repetitions: int = 20
    seed: int = 0
    n_mc: int = 10_000
    out_dir: str | None = None
    method: str = "sh-mpc"  # or "gaussian"
    epsilon_k: float = 0.0025
    max_time: float = 30.0
    goal_tolerance: float = 0.5
    workers: int = 1

    def __post_init__(self) -> None:
        if self.repetitions < 1:
            raise ValueError("need at least one repetition")
        if self.n_mc < 1000:
            raise ValueError("Monte-Carlo validation needs at least 1000 samples")
        if self.method not in ("sh-mpc", "gaussian"):
            raise ValueError(f"unknown method {self.method!r}")
        if not self.obstacles:
            raise ValueError("a scene needs at least one obstacle")

    @property
    def method_label(self) -> str:
        if self.method == "gaussian":
            return f"Gaussian (eps_k={self.epsilon_k:g})"
        return f"SH-MPC (eps={self.planner.risk.epsilon:g})"


@dataclass
class RunRecord:
    repetition: int
    seed: int
    steps: list[dict] = field(default_factory=list)
    duration: float = 0.0
    traveled: float = 0.0
    min_distance: float = math.inf
    collisions: int = 0
    completed: bool = False
    error: str | None = None
    max_joint_cp: float = 0.0
    max_marginal_cp: float = 0.0
    certificate_violations: int = 0
    validated_plans: int = 0
    plans: list[dict] = field(default_factory=list, repr=False)


def _run_seed(master: int, rep: int) -> int:
    return int(np.random.SeedSequence([master, rep]).generate_state(1, np.uint64)[0] >> 1)


def _true_positions(models: list[ObstacleModel], crossed: list[bool], rng: np.random.Generator, dt: float):
    """Advance the ground-truth obstacles by one planning step."""
    new_pos, new_crossed = [], []
    for m, c in zip(models, crossed):
        if m.variant is Variant.MARKOV_CHAIN_GMM and not c:
            c = bool(rng.random() < m.crossing_probability)
        w = rng.standard_normal(2) * m.noise_std
        new_pos.append(np.asarray(m.initial_position) + (m.drift(c) + w) * dt)
        new_crossed.append(c)
    return new_pos, new_crossed


def simulate(config: ExperimentConfig, rep: int) -> tuple[RunRecord, list]:
    """One closed-loop run; returns the record and the plans to validate."""
    pc = config.planner
    seed = _run_seed(config.seed, rep)
    rng = np.random.default_rng(seed)
    record = RunRecord(rep, seed)
    obstacles = [Obstacle(o.model, o.radius) for o in config.obstacles]
    crossed = [o.model.crossed for o in obstacles]
    radii = np.array([o.radius for o in obstacles])
    x = np.zeros(4)
    x[:2] = pc.path.points[0]
    x[2] = math.atan2(*pc.path.tangents[0][::-1])
    prev = last = None
    v = 0.0
    plans = []
    substeps = max(1, round(pc.dt / pc.control_period))
    dyn = Unicycle(pc.dt / substeps, progress=True)
    step = 0
    try:
        while record.duration < config.max_time - 1e-9:
            state = RobotState.from_array(x)
            if config.method == "sh-mpc":
                out = mpc_step(state, obstacles, pc, prev, seed=_run_seed(seed, step), last_certified=last, v_current=v)
            else:
                out = baseline_step(state, obstacles, pc, config.epsilon_k, prev, last, v)
            res = out.result
            fresh = res.status != "fallback"
            if fresh:
                plans.append((res.plan, [o.model for o in obstacles], radii, res.certificate.epsilon_bound, step))
            record.steps.append({
                "step": step, "t": round(record.duration, 6),
                "x": float(x[0]), "y": float(x[1]), "heading": float(x[2]),
                "v": float(out.command.v), "omega": float(out.command.omega),
                "status": res.status, "support": res.support_size, "removed": len(res.removed),
                "epsilon_bound": res.certificate.epsilon_bound, "iterations": res.iterations_used,
                "attempts": out.attempts,
                "timings_us": {k: round(float(t), 1) for k, t in out.timings.items()},
            })
            prev = res.plan if fresh else None
            last = out.certified_plan
            # move robot and pedestrians, checking overlap at the control rate
            old_obs = [np.asarray(o.model.initial_position) for o in obstacles]
            new_obs, crossed = _true_positions([o.model for o in obstacles], crossed, rng, pc.dt)
            u = out.command.as_array()
            s_prev = x[3]
            for i in range(1, substeps + 1):
                x_next = dyn.step(x, u)
                record.traveled += float(np.hypot(*(x_next[:2] - x[:2])))
                x = x_next
                lam = i / substeps
                robot = disc_positions(x[None], pc.discs)[0]
                for j, (a, b) in enumerate(zip(old_obs, new_obs)):
                    p = (1 - lam) * a + lam * b
                    gap = float(np.min(np.hypot(*(robot - p).T))) - pc.robot_radius - radii[j]
                    record.min_distance = min(record.min_distance, gap)
                    if gap < 0:
                        record.collisions += 1
            x[3] = pc.path.project(x[:2], s_min=s_prev)  # progress never decreases
            obstacles = [Obstacle(o.model.at(p, c), o.radius) for o, p, c in zip(obstacles, new_obs, crossed)]
            v = float(u[0])
            record.duration += pc.dt
            step += 1
            if x[3] >= pc.path.length - config.goal_tolerance:
                record.completed = True
                break
    except Exception as exc:  # noqa: BLE001 - recorded, not fatal
        record.error = f"{type(exc).__name__}: {exc}"
    return record, plans


def validate_run(record: RunRecord, plans: list, config: ExperimentConfig) -> RunRecord:
    pc = config.planner
    estimates = validate_plans([(p, m, r) for p, m, r, _, _ in plans], pc.discs, config.n_mc,
                               _run_seed(record.seed, 10**6), pc.robot_radius)
    by_step = {s["step"]: s for s in record.steps}
    for (_, _, _, bound, step), est in zip(plans, estimates):
        by_step[step]["joint_cp"] = est.joint
        by_step[step]["joint_cp_se"] = est.joint_se
        by_step[step]["max_marginal_cp"] = est.max_marginal
        record.max_joint_cp = max(record.max_joint_cp, est.joint)
        record.max_marginal_cp = max(record.max_marginal_cp, est.max_marginal)
        if config.method == "sh-mpc" and est.joint > bound + 3 * est.joint_se:
            record.certificate_violations += 1
    record.validated_plans = len(estimates)
    record.plans = [plan_to_dict(p, m, r, bound, step, est) for (p, m, r, bound, step), est in zip(plans, estimates)]
    return record


def _model_to_dict(model: ObstacleModel) -> dict:
    d = asdict(model)
    d["variant"] = model.variant.value
    return d


def _model_from_dict(d: dict) -> ObstacleModel:
    def tup(v):
        return tuple(tup(x) for x in v) if isinstance(v, list) else v

    return ObstacleModel(**{k: tup(v) for k, v in d.items()})


def plan_to_dict(plan: TrajectoryPlan, models, radii, bound: float, step: int, est: CPEstimate | None = None) -> dict:
    out = {
        "step": step, "dt": plan.dt, "states": plan.states.tolist(), "inputs": plan.inputs.tolist(),
        "obstacles": [_model_to_dict(m) for m in models], "radii": [float(r) for r in radii],
        "epsilon_bound": bound,
    }
    if est is not None:
        out.update(joint_cp=est.joint, joint_cp_se=est.joint_se, marginal_cp=est.marginal.tolist())
    return out


def plan_from_dict(d: dict):
    plan = TrajectoryPlan(np.array(d["states"]), np.array(d["inputs"]), d["dt"])
    return plan, [_model_from_dict(m) for m in d["obstacles"]], np.array(d["radii"])


def validate_stored(plans_file: str | Path, n_mc: int, seed: int = 0, discs=((0.0, 0.0),),
                    robot_radius: float = 0.325) -> list[dict]:
    """Re-validate plans written by :func:`write_outputs` with a fresh Monte-Carlo sample."""
    rows = [json.loads(line) for line in Path(plans_file).read_text().splitlines() if line.strip()]
    estimates = validate_plans([plan_from_dict(r) for r in rows], discs, n_mc, seed, robot_radius)
    return [{
        "repetition": r.get("repetition"), "step": r["step"], "joint_cp": float(e.joint),
        "joint_cp_se": float(e.joint_se), "max_marginal_cp": float(e.max_marginal),
        "epsilon_bound": r["epsilon_bound"], "within_bound": bool(e.joint <= r["epsilon_bound"] + 3 * e.joint_se),
    } for r, e in zip(rows, estimates)]


def _run_one(args) -> RunRecord:
    config, rep = args
    record, plans = simulate(config, rep)
    return validate_run(record, plans, config)


@dataclass
class SummaryTable:
    row: dict
    runs: list[RunRecord]

    @property
    def max_joint_cp(self) -> float:
        return self.row["Max CP"]

    @property
    def max_marginal_cp(self) -> float:
        return self.row["Max CP_k"]


def summarize(config: ExperimentConfig, runs: list[RunRecord]) -> SummaryTable:
    done = [r for r in runs if r.completed and r.error is None]
    step_ms = [s["timings_us"]["step_us"] / 1e3 for r in runs for s in r.steps]

    def stat(values):
        return (float(np.mean(values)), float(np.std(values))) if values else (math.nan, math.nan)

    dur, trav = stat([r.duration for r in done]), stat([r.traveled for r in done])
    dist = stat([r.min_distance for r in runs if math.isfinite(r.min_distance)])
    row = {
        "Method": config.method_label,
        "Scene": config.scene,
        "Runs": len(runs),
        "Incomplete": len(runs) - len(done),
        "Max CP_k": float(max((r.max_marginal_cp for r in runs), default=0.0)),
        "Spec CP_k": config.epsilon_k if config.method == "gaussian" else "-",
        "Max CP": float(max((r.max_joint_cp for r in runs), default=0.0)),
        "Spec CP": config.planner.risk.epsilon if config.method == "sh-mpc" else "-",
        "Dur. [s]": dur[0], "Dur. std": dur[1],
        "Trav. [m]": trav[0], "Trav. std": trav[1],
        "Min Dist. [m]": dist[0], "Min Dist. std": dist[1],
        "Collisions": sum(r.collisions > 0 for r in runs),
        "Runtime [ms]": float(np.mean(step_ms)) if step_ms else math.nan,
        "Runtime (Max) [ms]": float(np.max(step_ms)) if step_ms else math.nan,
    }
    return SummaryTable(row, runs)


def run_experiment(config: ExperimentConfig) -> SummaryTable:
    """Repeated closed-loop runs, each validated plan by plan, reduced to one summary row."""
    jobs = [(config, rep) for rep in range(config.repetitions)]
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            runs = list(pool.map(_run_one, jobs))
    else:
        runs = [_run_one(job) for job in jobs]
    runs.sort(key=lambda r: r.repetition)
    table = summarize(config, runs)
    if config.out_dir:
        write_outputs(table, Path(config.out_dir))
    return table


def write_outputs(table: SummaryTable, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_summary_csv([table.row], out / "summary.csv")
    with open(out / "steps.jsonl", "w") as fh:
        for run in table.runs:
            for s in run.steps:
                fh.write(json.dumps({"repetition": run.repetition, **s}) + "\n")
    with open(out / "plans.jsonl", "w") as fh:
        for run in table.runs:
            for p in run.plans:
                fh.write(json.dumps({"repetition": run.repetition, **p}) + "\n")


def write_summary_csv(rows: Sequence[dict], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS, extrasaction="ignore")
        writer.writeheader()
        writer.writerows(rows)


def sensitivity_sweep(parameter: str, values: Sequence[float], base: ExperimentConfig) -> list[dict]:
    """Re-run the experiment per value; for ``epsilon`` the sample size is re-derived."""
    if not values:
        raise ValueError("no sweep values")
    rows = []
    for value in values:
        risk = base.planner.risk
        if parameter == "epsilon":
            risk = RiskConfig(float(value), risk.beta, risk.support_limit, risk.removal_budget)
            planner = replace(base.planner, risk=risk)
        elif parameter == "N":
            planner = replace(base.planner, N=int(value))
        else:
            raise ValueError(f"cannot sweep {parameter!r}")
        config = replace(base, planner=planner, out_dir=None)
        table = run_experiment(config)
        steps = [s["timings_us"] for r in table.runs for s in r.steps]
        poly = [t.get("polytope_us", 0.0) / 1e3 for t in steps]
        solve = [(t.get("total_us", 0.0) - t.get("polytope_us", 0.0)) / 1e3 for t in steps]
        rows.append({
            "parameter": parameter, "value": value, "S": risk.sample_size,
            "max_cp": table.max_joint_cp, "duration": table.row["Dur. [s]"],
            "solve_ms": float(np.mean(solve)) if solve else math.nan,
            "polytope_ms": float(np.mean(poly)) if poly else math.nan,
        })
    return rows


# --- toy studies -------------------------------------------------------------------


def support_compare(sizes: Sequence[int], realizations: int, seed: int, literal: bool = True) -> list[dict]:
    """Estimated vs greedy support and the wall time of each, per sample size."""
    rows = []
    for S in sizes:
        for i in range(realizations):
            inst = sample_toy(S, seed * 1_000_003 + S * 1_000 + i)
            config = toy_config(S)
            t = time.perf_counter()
            res = solve_toy(inst, config)
            t_est = time.perf_counter() - t
            problem, plan = toy_problem(inst)
            t = time.perf_counter()
            greedy = greedy_support(problem, config, plan, skip_redundant=not literal)
            t_greedy = time.perf_counter() - t
            rows.append({
                "S": S, "realization": i, "estimate": sorted(res.support_set), "greedy": sorted(greedy),
                "subset": greedy <= res.support_set, "estimate_s": t_est, "greedy_s": t_greedy,
            })
    return rows


def removal_study(R_values: Sequence[int], repeats: int, seed: int, epsilon: float = 0.1, beta: float = 1e-6,
                  n_mc: int = 10_000) -> list[dict]:
    """Cost and validated risk as the removal budget grows, at the matching sample size."""
    rows = []
    for R in R_values:
        S = compute_sample_size(epsilon, beta, 2 + R)
        for i in range(repeats):
            inst = sample_toy(S, seed * 1_000_003 + R * 10_000 + i)
            res = solve_toy(inst, toy_config(S, removal_budget=R, epsilon=epsilon, beta=beta))
            risk = empirical_risk(res.plan, n_mc, seed * 7_919 + R * 10_000 + i + 1)
            bound = certificate_bound(res.support_size, S, beta)
            rows.append({
                "R": R, "S": S, "repeat": i, "status": res.status, "cost": toy_cost(res),
                "support": res.support_size, "removed": len(res.removed), "risk": risk, "bound": bound,
                "risk_ok": risk <= bound,
            })
    return rows


def toy_example(mode: str, S: int = 400, seed: int = 0, sizes: Sequence[int] = (100, 200, 400, 700, 1000),
                realizations: int = 25, R_values: Sequence[int] = tuple(range(0, 21, 2)), repeats: int = 100):
    if mode == "solve":
        inst = sample_toy(S, seed)
        res = solve_toy(inst)
        return {
            "S": S, "status": res.status, "cost": toy_cost(res), "support": sorted(res.support_set),
            "y": res.plan.states[1:, 1].tolist(), "epsilon_bound": epsilon_of_n(res.support_size, S, 1e-6),
            "clears_all": bool(np.all(res.plan.states[1:, 1] >= inst.deltas.max(axis=0) + inst.radius - 1e-6)),
        }
    if mode == "support-compare":
        return support_compare(sizes, realizations, seed)
    if mode == "removal-study":
        return removal_study(R_values, repeats, seed)
    raise ValueError(f"unknown toy mode {mode!r}")
