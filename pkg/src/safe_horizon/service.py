"""HTTP front end over the planner, the experiment harness and the sample-size calculus."""
from __future__ import annotations

import math
from pathlib import Path
from typing import Any, Literal, Optional

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import __version__
from .config import ExperimentSpec, ObstacleSpec, PlannerSpec, RiskSpec, load_spec, scene_names
from .experiments import SUMMARY_COLUMNS, sensitivity_sweep, run_experiment, toy_example, validate_stored
from .planner import RobotState, mpc_step
from .risk import SampleSizeError, compute_sample_size, epsilon_of_n

app = FastAPI(title="safe-horizon", version=__version__)


def _finite(value):
    # NaN is not valid JSON
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


class SampleSizeRequest(BaseModel):
    epsilon: float = Field(gt=0, lt=1)
    beta: float = Field(gt=0, lt=1)
    support: int = Field(ge=0)
    removal: int = Field(0, ge=0)


class EpsilonRow(BaseModel):
    n: int
    epsilon_n: float


class SampleSizeResponse(BaseModel):
    S: int
    support_limit: int
    table: list[EpsilonRow]


class SimulateRequest(BaseModel):
    scene: Optional[str] = None
    spec: Optional[ExperimentSpec] = None
    seed: Optional[int] = None
    repetitions: Optional[int] = Field(None, ge=1)
    n_mc: Optional[int] = Field(None, ge=1000)
    out_dir: Optional[str] = None

    def resolve(self) -> ExperimentSpec:
        overrides = {"seed": self.seed, "repetitions": self.repetitions, "n_mc": self.n_mc, "out_dir": self.out_dir}
        if self.spec is not None:
            data = self.spec.model_dump()
            data.update({k: v for k, v in overrides.items() if v is not None})
            return ExperimentSpec.model_validate(data)
        if self.scene is None:
            raise HTTPException(422, "give either a scene name or a spec")
        try:
            return load_spec(self.scene, **overrides)
        except FileNotFoundError as exc:
            raise HTTPException(404, str(exc))


class RunSummary(BaseModel):
    repetition: int
    seed: int
    steps: int
    completed: bool
    collisions: int
    max_joint_cp: float
    certificate_violations: int
    error: Optional[str] = None


class SimulateResponse(BaseModel):
    columns: list[str]
    summary: dict[str, Any]
    runs: list[RunSummary]


class ValidateRequest(BaseModel):
    plans: str
    n_mc: int = Field(100_000, ge=1000)
    seed: int = 0
    robot_radius: float = Field(0.325, gt=0)
    discs: list[tuple[float, float]] = [(0.0, 0.0)]


class ValidateResponse(BaseModel):
    plans: int
    max_joint_cp: float
    violations: int
    rows: list[dict[str, Any]]


class SweepRequest(SimulateRequest):
    parameter: Literal["epsilon", "N"] = "epsilon"
    values: list[float] = Field(min_length=1)


class ToyRequest(BaseModel):
    mode: Literal["solve", "support-compare", "removal-study"] = "solve"
    S: int = Field(400, ge=3)
    seed: int = 0
    sizes: list[int] = [100, 200, 400, 700, 1000]
    realizations: int = Field(25, ge=1)
    R_values: list[int] = list(range(0, 21, 2))
    repeats: int = Field(100, ge=1)


class PlanRequest(BaseModel):
    state: tuple[float, float, float] = (0.0, 0.0, 0.0)
    v_current: float = 0.0
    planner: PlannerSpec
    risk: RiskSpec = RiskSpec()
    obstacles: list[ObstacleSpec] = []
    seed: int = 0


class PlanResponse(BaseModel):
    status: str
    command: tuple[float, float]
    support: list[int]
    removed: list[int]
    certified: bool
    epsilon_bound: float
    states: list[list[float]]
    inputs: list[list[float]]
    timings_us: dict[str, float]


@app.get("/health")
def health():
    return {"status": "ok", "version": __version__}


@app.get("/scenes")
def scenes():
    return {"scenes": scene_names()}


@app.get("/scenes/{name}")
def scene(name: str):
    try:
        return load_spec(name).model_dump()
    except FileNotFoundError as exc:
        raise HTTPException(404, str(exc))


@app.post("/sample-size", response_model=SampleSizeResponse)
def sample_size(req: SampleSizeRequest):
    limit = req.support + req.removal
    try:
        S = compute_sample_size(req.epsilon, req.beta, limit)
    except SampleSizeError as exc:
        raise HTTPException(422, str(exc))
    table = [{"n": n, "epsilon_n": epsilon_of_n(n, S, req.beta)} for n in range(limit + 1)]
    return SampleSizeResponse(S=S, support_limit=limit, table=table)


@app.post("/simulate", response_model=SimulateResponse)
def simulate(req: SimulateRequest):
    table = run_experiment(req.resolve().build())
    runs = [RunSummary(
        repetition=r.repetition, seed=r.seed, steps=len(r.steps), completed=r.completed, collisions=r.collisions,
        max_joint_cp=r.max_joint_cp, certificate_violations=r.certificate_violations, error=r.error,
    ) for r in table.runs]
    return SimulateResponse(columns=SUMMARY_COLUMNS, summary={k: _finite(v) for k, v in table.row.items()},
                            runs=runs)


@app.post("/validate", response_model=ValidateResponse)
def validate(req: ValidateRequest):
    path = Path(req.plans)
    if path.is_dir():
        path = path / "plans.jsonl"
    if not path.exists():
        raise HTTPException(404, f"no stored plans at {path}")
    rows = validate_stored(path, req.n_mc, req.seed, req.discs, req.robot_radius)
    return ValidateResponse(
        plans=len(rows), max_joint_cp=max((r["joint_cp"] for r in rows), default=0.0),
        violations=sum(not r["within_bound"] for r in rows), rows=rows,
    )


@app.post("/sweep")
def sweep(req: SweepRequest):
    rows = sensitivity_sweep(req.parameter, req.values, req.resolve().build())
    return {"rows": [{k: _finite(v) for k, v in row.items()} for row in rows]}


@app.post("/toy")
def toy(req: ToyRequest):
    try:
        out = toy_example(req.mode, S=req.S, seed=req.seed, sizes=req.sizes, realizations=req.realizations,
                          R_values=req.R_values, repeats=req.repeats)
    except SampleSizeError as exc:
        raise HTTPException(422, str(exc))
    return {"mode": req.mode, "result": out}


@app.post("/plan", response_model=PlanResponse)
def plan(req: PlanRequest):
    config = req.planner.build(req.risk.build())
    out = mpc_step(RobotState(*req.state), [o.build() for o in req.obstacles], config, None, req.seed,
                   v_current=req.v_current)
    res = out.result
    return PlanResponse(
        status=res.status, command=(out.command.v, out.command.omega), support=sorted(res.support_set),
        removed=sorted(res.removed), certified=res.certificate.certified,
        epsilon_bound=res.certificate.epsilon_bound, states=res.plan.states.tolist(),
        inputs=res.plan.inputs.tolist(), timings_us=out.timings,
    )
