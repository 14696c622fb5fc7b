"""Probabilistic obstacle-trajectory models and joint scenario sampling.

A scenario is one draw of the joint future of all obstacles: an ``(M, N, 2)``
array of positions for steps 1..N.  Sampling uses Philox streams keyed by
``(seed, obstacle, block)`` so that the same seed always yields the same
samples and a larger sample set extends a smaller one block by block.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

BLOCK = 256
_NOISE_STREAM = 0
_SWITCH_STREAM = 1
_INIT_STREAM = 2


class Variant(str, Enum):
    GAUSSIAN_RANDOM_WALK = "gaussian_random_walk"
    CONSTANT_VELOCITY = "constant_velocity"
    MARKOV_CHAIN_GMM = "markov_chain_gmm"


@dataclass(frozen=True)
class ObstacleModel:
    """Discrete-time motion model of one obstacle.

    ``process_noise`` is the diagonal covariance of the velocity noise in
    (m/s)^2; it enters the position update multiplied by ``dt``.  For the
    Markov-chain model the velocity is ``speed * direction`` where the
    direction switches once from ``b_h`` to ``b_d``.
    """

    variant: Variant
    initial_position: tuple[float, float]
    mean_velocity: tuple[float, float] = (0.0, 0.0)
    process_noise: tuple[tuple[float, float], tuple[float, float]] = ((0.0, 0.0), (0.0, 0.0))
    initial_variance: tuple[float, float] = (0.0, 0.0)
    crossing_probability: float = 0.0
    speed: float = 0.0
    b_h: tuple[float, float] = (1.0, 0.0)
    b_d: tuple[float, float] = (1.0 / math.sqrt(2.0), 1.0 / math.sqrt(2.0))
    crossed: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "variant", Variant(self.variant))
        cov = np.asarray(self.process_noise, dtype=float)
        if cov.shape != (2, 2):
            raise ValueError("process noise must be a 2x2 matrix")
        if cov[0, 1] != 0.0 or cov[1, 0] != 0.0:
            raise ValueError("process noise must be diagonal (independent x/y noise)")
        if cov[0, 0] < 0 or cov[1, 1] < 0 or min(self.initial_variance) < 0:
            raise ValueError("variances must be non-negative")
        if not 0.0 <= self.crossing_probability <= 1.0:
            raise ValueError("crossing probability must lie in [0, 1]")
        object.__setattr__(
            self, "process_noise", tuple(tuple(float(v) for v in row) for row in cov)
        )

    @property
    def noise_std(self) -> np.ndarray:
        return np.sqrt(np.diag(np.asarray(self.process_noise)))

    def at(self, position: Sequence[float], crossed: bool | None = None) -> "ObstacleModel":
        """Same model re-anchored at a new current position."""
        return ObstacleModel(
            variant=self.variant,
            initial_position=(float(position[0]), float(position[1])),
            mean_velocity=self.mean_velocity,
            process_noise=self.process_noise,
            initial_variance=self.initial_variance,
            crossing_probability=self.crossing_probability,
            speed=self.speed,
            b_h=self.b_h,
            b_d=self.b_d,
            crossed=self.crossed if crossed is None else crossed,
        )

    def drift(self, crossed: bool) -> np.ndarray:
        if self.variant is Variant.GAUSSIAN_RANDOM_WALK:
            return np.zeros(2)
        if self.variant is Variant.CONSTANT_VELOCITY:
            return np.asarray(self.mean_velocity, dtype=float)
        direction = self.b_d if crossed else self.b_h
        return self.speed * np.asarray(direction, dtype=float)

    def mean_and_variance(self, N: int, dt: float, crossing_step: int | None = None):
        """Per-step mean positions ``(N, 2)`` and variances ``(N, 2)``.

        For the Markov-chain model the mean is that of a single mode, which
        switches direction from ``crossing_step`` on (``None``: never).
        """
        steps = np.arange(1, N + 1)
        var = np.asarray(self.initial_variance)[None, :] + steps[:, None] * (
            np.diag(np.asarray(self.process_noise)) * dt * dt
        )[None, :]
        if self.variant is Variant.MARKOV_CHAIN_GMM:
            if self.crossed:
                crossing_step = 1
            crossed = np.array(
                [crossing_step is not None and t >= crossing_step for t in steps]
            )
            vel = np.where(crossed[:, None], self.drift(True), self.drift(False))
        else:
            vel = np.repeat(self.drift(False)[None, :], N, axis=0)
        mean = np.asarray(self.initial_position)[None, :] + np.cumsum(vel * dt, axis=0)
        return mean, var


def gaussian_random_walk(position, sigma_w, **kw) -> ObstacleModel:
    sx, sy = _pair(sigma_w)
    return ObstacleModel(
        Variant.GAUSSIAN_RANDOM_WALK, tuple(position), process_noise=((sx**2, 0.0), (0.0, sy**2)), **kw
    )


def constant_velocity(position, velocity, sigma_w, **kw) -> ObstacleModel:
    sx, sy = _pair(sigma_w)
    return ObstacleModel(
        Variant.CONSTANT_VELOCITY,
        tuple(position),
        mean_velocity=tuple(velocity),
        process_noise=((sx**2, 0.0), (0.0, sy**2)),
        **kw,
    )


def markov_chain_gmm(position, speed, sigma_w, crossing_probability, **kw) -> ObstacleModel:
    sx, sy = _pair(sigma_w)
    return ObstacleModel(
        Variant.MARKOV_CHAIN_GMM,
        tuple(position),
        process_noise=((sx**2, 0.0), (0.0, sy**2)),
        crossing_probability=crossing_probability,
        speed=speed,
        **kw,
    )


def _pair(value) -> tuple[float, float]:
    if np.isscalar(value):
        return float(value), float(value)
    return float(value[0]), float(value[1])


@dataclass
class ScenarioSet:
    """``S`` joint obstacle trajectories with per-scenario removal flags.

    ``samples`` has shape ``(S, M, N, 2)``.  Scenario ids default to ``1..S``
    and survive :meth:`subset`, so provenance stays comparable across
    re-solves on a subsample.
    """

    samples: np.ndarray
    seed: int
    ids: np.ndarray | None = None
    removed: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=float)
        self.samples.setflags(write=False)
        if self.ids is None:
            self.ids = np.arange(1, self.S + 1)
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if self.removed is None:
            self.removed = np.zeros(self.S, dtype=bool)
        self._pos = {int(i): k for k, i in enumerate(self.ids)}

    @property
    def S(self) -> int:
        return self.samples.shape[0]

    @property
    def M(self) -> int:
        return self.samples.shape[1]

    @property
    def N(self) -> int:
        return self.samples.shape[2]

    def remove(self, ids) -> None:
        for i in ids:
            self.removed[self._pos[int(i)]] = True

    @property
    def removed_ids(self) -> set[int]:
        return {int(i) for i in self.ids[self.removed]}

    def subset(self, ids) -> "ScenarioSet":
        keep = np.asarray(sorted(self._pos[int(i)] for i in ids), dtype=np.int64)
        return ScenarioSet(self.samples[keep], self.seed, ids=self.ids[keep])

    def fresh(self) -> "ScenarioSet":
        """Copy with all removal flags cleared."""
        return ScenarioSet(self.samples, self.seed, ids=self.ids.copy())


def _stream(seed: int, kind: int, obstacle: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[seed & 0xFFFFFFFFFFFFFFFF, (kind << 48) | (obstacle << 24) | block]))


def _draw(seed, kind, obstacle, S, per_scenario, sampler):
    out = []
    for block in range(math.ceil(S / BLOCK)):
        rows = min(BLOCK, S - block * BLOCK)
        gen = _stream(seed, kind, obstacle, block)
        out.append(sampler(gen, (BLOCK,) + per_scenario)[:rows])
    return np.concatenate(out, axis=0) if out else np.zeros((0,) + per_scenario)


def sample_obstacle(model: ObstacleModel, N: int, S: int, dt: float, seed: int, index: int = 0) -> np.ndarray:
    """``(S, N, 2)`` sampled future positions of a single obstacle."""
    noise = _draw(seed, _NOISE_STREAM, index, S, (N, 2), lambda g, shape: g.standard_normal(shape))
    noise *= model.noise_std[None, None, :]
    start = np.asarray(model.initial_position, dtype=float)
    init_std = np.sqrt(np.asarray(model.initial_variance, dtype=float))
    if np.any(init_std > 0):
        start = start + _draw(seed, _INIT_STREAM, index, S, (2,), lambda g, s: g.standard_normal(s)) * init_std
    else:
        start = np.broadcast_to(start, (S, 2))

    if model.variant is Variant.MARKOV_CHAIN_GMM:
        if model.crossed:
            switch = np.ones(S, dtype=np.int64)
        else:
            switch = crossing_steps(model, N, S, seed, index)
        steps = np.arange(1, N + 1)
        crossed = steps[None, :] >= switch[:, None]
        vel = np.where(crossed[..., None], model.drift(True), model.drift(False))
    else:
        vel = np.broadcast_to(model.drift(False), (S, N, 2))

    return start[:, None, :] + np.cumsum((vel + noise) * dt, axis=1)


def sample_trajectories(
    models: Sequence[ObstacleModel], N: int, S: int, dt: float, seed: int
) -> ScenarioSet:
    """Draw ``S`` i.i.d. joint trajectories of all obstacles over ``N`` steps."""
    if S < 1 or N < 1 or len(models) < 1 or dt <= 0:
        raise ValueError("need S >= 1, N >= 1, at least one obstacle and dt > 0")
    per = [sample_obstacle(m, N, S, dt, seed, j) for j, m in enumerate(models)]
    return ScenarioSet(np.stack(per, axis=1), seed)


def crossing_steps(model: ObstacleModel, N: int, S: int, seed: int, index: int = 0) -> np.ndarray:
    """Crossing step of each sampled trajectory (``N + 1`` = never)."""
    if model.crossing_probability <= 0.0:
        return np.full(S, N + 1)
    u = _draw(seed, _SWITCH_STREAM, index, S, (), lambda g, s: g.random(s))
    p = model.crossing_probability
    if p >= 1.0:
        return np.ones(S, dtype=np.int64)
    return np.minimum(np.floor(np.log1p(-u) / math.log1p(-p)).astype(np.int64) + 1, N + 1)


def propagate_marginal_gaussian(sigma0, sigma_w, k: int) -> np.ndarray:
    """Per-axis variance after ``k`` steps of additive independent noise."""
    return np.asarray(sigma0, dtype=float) + k * np.asarray(sigma_w, dtype=float)


def markov_chain_modes(p_c: float, N: int) -> list[tuple[int | None, float]]:
    """Modes of the crossing chain: ``(step, probability)``, ``None`` = never crosses."""
    if not 0.0 <= p_c <= 1.0:
        raise ValueError("crossing probability must lie in [0, 1]")
    modes: list[tuple[int | None, float]] = [
        (j, (1.0 - p_c) ** (j - 1) * p_c) for j in range(1, N + 1)
    ]
    never = 1.0 - math.fsum(p for _, p in modes)
    modes.append((None, max(0.0, never)))
    return modes


def dump_samples(scenarios: ScenarioSet, path: str | Path) -> None:
    """CSV debug dump with columns scenario_id, obstacle_id, step, x, y."""
    ids = scenarios.ids
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scenario_id", "obstacle_id", "step", "x", "y"])
        for i, sid in enumerate(ids):
            for j in range(scenarios.M):
                for k in range(scenarios.N):
                    x, y = scenarios.samples[i, j, k]
                    writer.writerow([int(sid), j, k + 1, f"{x:.6f}", f"{y:.6f}"])
