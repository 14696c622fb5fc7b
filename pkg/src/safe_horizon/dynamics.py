"""Euler-discretized unicycle models with analytic Jacobians."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


def wrap_angle(angle: float) -> float:
    """Wrap to (-pi, pi]."""
    wrapped = math.remainder(angle, 2.0 * math.pi)
    return math.pi if wrapped == -math.pi else wrapped


@dataclass(frozen=True)
class Unicycle:
    """State ``(x, y, eta)`` or, with ``progress``, ``(x, y, eta, s)``; input ``(v, omega)``."""

    dt: float
    progress: bool = False

    @property
    def nx(self) -> int:
        return 4 if self.progress else 3

    nu: int = 2
    pos_index: tuple[int, int] = (0, 1)
    heading_index: int = 2

    def step(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        v, w = u[0], u[1]
        c, s = math.cos(x[2]), math.sin(x[2])
        nxt = np.array(x, dtype=float, copy=True)
        nxt[0] += v * c * self.dt
        nxt[1] += v * s * self.dt
        nxt[2] += w * self.dt
        if self.progress:
            nxt[3] += v * self.dt
        return nxt

    def jacobians(self, x: np.ndarray, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        v = u[0]
        c, s = math.cos(x[2]), math.sin(x[2])
        dt = self.dt
        A = np.eye(self.nx)
        A[0, 2] = -v * s * dt
        A[1, 2] = v * c * dt
        B = np.zeros((self.nx, 2))
        B[0, 0] = c * dt
        B[1, 0] = s * dt
        B[2, 1] = dt
        if self.progress:
            B[3, 0] = dt
        return A, B

    def rollout(self, x0: np.ndarray, U: np.ndarray) -> np.ndarray:
        X = np.empty((len(U) + 1, self.nx))
        X[0] = x0
        for k, u in enumerate(U):
            X[k + 1] = self.step(X[k], u)
        return X


def disc_positions(X: np.ndarray, offsets: np.ndarray, pos_index=(0, 1), heading_index: int = 2) -> np.ndarray:
    """Centers of the robot discs, ``(len(X), n_d, 2)``; offsets are in the body frame."""
    p = X[:, list(pos_index)]
    eta = X[:, heading_index]
    c, s = np.cos(eta), np.sin(eta)
    ox, oy = offsets[:, 0], offsets[:, 1]
    dx = c[:, None] * ox[None] - s[:, None] * oy[None]
    dy = s[:, None] * ox[None] + c[:, None] * oy[None]
    return p[:, None, :] + np.stack([dx, dy], axis=-1)


def disc_jacobian(x: np.ndarray, offset: np.ndarray, nx: int, pos_index=(0, 1), heading_index: int = 2) -> np.ndarray:
    """``d p_disc / d x`` as a ``(2, nx)`` matrix."""
    J = np.zeros((2, nx))
    J[0, pos_index[0]] = 1.0
    J[1, pos_index[1]] = 1.0
    c, s = math.cos(x[heading_index]), math.sin(x[heading_index])
    J[0, heading_index] = -s * offset[0] - c * offset[1]
    J[1, heading_index] = c * offset[0] - s * offset[1]
    return J
