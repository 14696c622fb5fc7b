"""Validated configuration tree shared by the scene files, the service and the CLI."""
from __future__ import annotations

from pathlib import Path
from typing import Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator

from .experiments import ExperimentConfig
from .planner import Obstacle, PlannerConfig, ReferencePath
from .risk import RiskConfig
from .uncertainty import constant_velocity, gaussian_random_walk, markov_chain_gmm

SCENE_DIR = Path(__file__).parent / "scenes"

Pair = tuple[float, float]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class RiskSpec(_Strict):
    epsilon: float = Field(0.05, gt=0, lt=1)
    beta: float = Field(0.01, gt=0, lt=1)
    support_limit: int = Field(9, ge=0)
    removal_budget: int = Field(1, ge=0)

    def build(self) -> RiskConfig:
        return RiskConfig(self.epsilon, self.beta, self.support_limit, self.removal_budget)


class Weights(_Strict):
    velocity: float = Field(0.05, ge=0)
    angular: float = Field(0.05, ge=0)
    contour: float = Field(0.02, ge=0)
    lag: float = Field(0.1, ge=0)


class PlannerSpec(_Strict):
    path: list[Pair]
    N: int = Field(20, ge=1)
    dt: float = Field(0.2, gt=0)
    control_period: float = Field(0.05, gt=0)
    weights: Weights = Weights()
    v_ref: float = 2.0
    v_max: float = Field(3.0, gt=0)
    omega_max: float = Field(2.0, gt=0)
    deceleration: float = Field(2.0, gt=0)
    robot_radius: float = Field(0.325, gt=0)
    discs: list[Pair] = [(0.0, 0.0)]
    max_iters: int = Field(15, ge=1)
    n_H: int = Field(20, ge=1)

    @field_validator("path")
    @classmethod
    def _two_points(cls, v):
        if len(v) < 2:
            raise ValueError("a path needs at least two points")
        return v

    def build(self, risk: RiskConfig) -> PlannerConfig:
        w = self.weights
        return PlannerConfig(
            ReferencePath(self.path), risk, N=self.N, dt=self.dt, control_period=self.control_period,
            w_velocity=w.velocity, w_angular=w.angular, w_contour=w.contour, w_lag=w.lag,
            v_ref=self.v_ref, v_max=self.v_max, omega_max=self.omega_max, deceleration=self.deceleration,
            discs=self.discs, robot_radius=self.robot_radius, max_iters=self.max_iters, n_H=self.n_H,
        )


class ObstacleSpec(_Strict):
    model: Literal["gaussian_random_walk", "constant_velocity", "markov_chain_gmm"]
    position: Pair
    sigma_w: Union[float, Pair] = 0.3  # m/s, per axis
    radius: float = Field(0.3, gt=0)
    velocity: Pair = (0.0, 0.0)
    speed: float = 0.0
    crossing_probability: float = Field(0.0, ge=0, le=1)
    b_h: Pair = (1.0, 0.0)
    b_d: Pair = (0.7071067811865476, 0.7071067811865476)
    initial_variance: Pair = (0.0, 0.0)

    def build(self) -> Obstacle:
        kw = {"initial_variance": self.initial_variance}
        if self.model == "gaussian_random_walk":
            model = gaussian_random_walk(self.position, self.sigma_w, **kw)
        elif self.model == "constant_velocity":
            model = constant_velocity(self.position, self.velocity, self.sigma_w, **kw)
        else:
            model = markov_chain_gmm(self.position, self.speed, self.sigma_w, self.crossing_probability,
                                     b_h=self.b_h, b_d=self.b_d, **kw)
        return Obstacle(model, self.radius)


class ExperimentSpec(_Strict):
    scene: str
    planner: PlannerSpec
    risk: RiskSpec = RiskSpec()
    obstacles: list[ObstacleSpec] = Field(min_length=1)
    repetitions: int = Field(20, ge=1)
    seed: int = Field(0, ge=0)
    n_mc: int = Field(10_000, ge=1000)
    method: Literal["sh-mpc", "gaussian"] = "sh-mpc"
    epsilon_k: float = Field(0.0025, gt=0, le=0.5)
    max_time: float = Field(30.0, gt=0)
    goal_tolerance: float = Field(0.5, gt=0)
    workers: int = Field(1, ge=1)
    out_dir: Optional[str] = None

    def build(self) -> ExperimentConfig:
        return ExperimentConfig(
            scene=self.scene, planner=self.planner.build(self.risk.build()),
            obstacles=[o.build() for o in self.obstacles], repetitions=self.repetitions, seed=self.seed,
            n_mc=self.n_mc, out_dir=self.out_dir, method=self.method, epsilon_k=self.epsilon_k,
            max_time=self.max_time, goal_tolerance=self.goal_tolerance, workers=self.workers,
        )


def scene_names() -> list[str]:
    return sorted(p.stem for p in SCENE_DIR.glob("*.yaml"))


def load_spec(name_or_path: str | Path, **overrides) -> ExperimentSpec:
    """A bundled scene by name, or any YAML file; top-level keys may be overridden."""
    path = Path(name_or_path)
    if not path.suffix:
        path = SCENE_DIR / f"{name_or_path}.yaml"
    if not path.exists():
        raise FileNotFoundError(f"no scene {name_or_path!r}; bundled: {', '.join(scene_names())}")
    data = yaml.safe_load(path.read_text())
    data.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentSpec.model_validate(data)


def load_experiment(name_or_path: str | Path, **overrides) -> ExperimentConfig:
    return load_spec(name_or_path, **overrides).build()
