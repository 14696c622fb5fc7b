"""Linearized collision constraints and 2-D free-space polytopes.

Each sampled obstacle position ``delta`` is turned into the halfspace
``A.p <= b`` with ``A`` the unit vector from the linearization point towards
``delta`` and ``b = A.delta - r``; it contains no point of the disc of radius
``r`` around ``delta``.  Per stage the thousands of such halfspaces are
reduced to the few that bound the free space, using the polar dual: with an
interior point ``c`` and slacks ``s = b - A.c`` a halfspace is redundant iff
its dual point ``A / s`` lies inside the convex hull of the other dual points.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import linprog

from .uncertainty import ObstacleModel, sample_obstacle

NO_PROVENANCE = (-1, -1, -1, -1)
_DIRECTIONS = np.stack(
    [np.cos(np.linspace(0, 2 * np.pi, 16, endpoint=False)), np.sin(np.linspace(0, 2 * np.pi, 16, endpoint=False))],
    axis=1,
)


class DegenerateDirection(ValueError):
    """Linearization point coincides with the obstacle position."""


class InfeasiblePolytope(ValueError):
    """The halfspaces have no common point inside the box."""

    def __init__(self, blocking: list[tuple[int, int, int, int]], stage: int = -1, disc: int = 0):
        self.blocking = blocking
        self.stage = stage
        self.disc = disc
        super().__init__(f"empty free space at stage {stage}, disc {disc}; blocking {blocking}")

    @property
    def scenario_ids(self) -> set[int]:
        return {p[0] for p in self.blocking if p[0] >= 0}


@dataclass(frozen=True)
class Halfspace:
    """``{p : normal . p <= offset}`` with provenance (scenario, obstacle, step, disc)."""

    normal: tuple[float, float]
    offset: float
    provenance: tuple[int, int, int, int] = NO_PROVENANCE

    def contains(self, points) -> np.ndarray:
        pts = np.atleast_2d(points)
        return pts @ np.asarray(self.normal) <= self.offset


@dataclass(frozen=True)
class Box:
    lo: tuple[float, float]
    hi: tuple[float, float]

    @classmethod
    def around(cls, point, half_width: float = 10.0) -> "Box":
        x, y = float(point[0]), float(point[1])
        return cls((x - half_width, y - half_width), (x + half_width, y + half_width))

    def halfspaces(self) -> tuple[np.ndarray, np.ndarray]:
        A = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
        b = np.array([self.hi[0], self.hi[1], -self.lo[0], -self.lo[1]])
        return A, b

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.lo) + np.asarray(self.hi))

    @property
    def half_widths(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.hi) - np.asarray(self.lo))

    def corners(self) -> np.ndarray:
        (x0, y0), (x1, y1) = self.lo, self.hi
        return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=float)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.lo, self.hi, size=(n, 2))


@dataclass
class Polytope:
    """Free space of one stage and disc: ``A p <= b`` plus the bounding box."""

    A: np.ndarray
    b: np.ndarray
    provenance: np.ndarray
    box: Box
    stage: int = 0
    disc: int = 0
    interior: np.ndarray | None = None
    flagged: bool = False
    candidates: int = 0

    @property
    def facets(self) -> list[Halfspace]:
        return [
            Halfspace((float(a[0]), float(a[1])), float(bb), tuple(int(v) for v in p))
            for a, bb, p in zip(self.A, self.b, self.provenance)
        ]

    @property
    def scenario_ids(self) -> np.ndarray:
        return self.provenance[:, 0]

    def all_constraints(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Facets followed by the four box halfspaces (provenance -1)."""
        Ab, bb = self.box.halfspaces()
        prov = np.vstack([self.provenance.reshape(-1, 4), np.full((4, 4), -1)])
        return np.vstack([self.A.reshape(-1, 2), Ab]), np.concatenate([self.b, bb]), prov

    def contains(self, points, tol: float = 0.0) -> np.ndarray:
        A, b, _ = self.all_constraints()
        pts = np.atleast_2d(points)
        return np.all(pts @ A.T <= b + tol, axis=1)

    def slack(self, point) -> np.ndarray:
        return self.b - self.A @ np.asarray(point, dtype=float)


# --- linearization -------------------------------------------------------


def linearize_collision(p_hat, delta, r: float, provenance=NO_PROVENANCE) -> Halfspace:
    if r <= 0:
        raise ValueError("combined radius must be positive")
    diff = np.asarray(delta, dtype=float) - np.asarray(p_hat, dtype=float)
    dist = float(np.hypot(diff[0], diff[1]))
    if dist == 0.0:
        raise DegenerateDirection("linearization point coincides with obstacle position")
    A = diff / dist
    return Halfspace((float(A[0]), float(A[1])), float(A @ np.asarray(delta, dtype=float) - r), tuple(provenance))


def linearize_many(p_hat, deltas, r) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized linearization: ``p_hat`` broadcasts against ``deltas[..., 2]``.

    Coincident points get the +x direction; callers project the
    linearization point out of obstacle discs beforehand.
    """
    deltas = np.asarray(deltas, dtype=float)
    diff = deltas - np.asarray(p_hat, dtype=float)
    dist = np.hypot(diff[..., 0], diff[..., 1])
    safe = np.where(dist > 0.0, dist, 1.0)
    A = diff / safe[..., None]
    A[dist == 0.0] = (1.0, 0.0)
    b = np.einsum("...i,...i->...", A, deltas) - r
    return A, b


# --- reduction -------------------------------------------------------------


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _hull_indices(points: np.ndarray, order_keys: np.ndarray) -> list[int]:
    """Andrew's monotone chain; collinear and duplicate points are dropped.

    ``order_keys`` breaks ties between identical points so the lowest key wins.
    """
    idx = np.lexsort((order_keys, points[:, 1], points[:, 0]))
    pts = points[idx]
    keep = np.ones(len(idx), dtype=bool)
    keep[1:] = np.any(pts[1:] != pts[:-1], axis=1)
    idx, pts = idx[keep], pts[keep]
    if len(idx) <= 2:
        return list(idx)
    P = pts.tolist()
    lower: list[int] = []
    for k in range(len(P)):
        while len(lower) >= 2 and _cross(P[lower[-2]], P[lower[-1]], P[k]) <= 0:
            lower.pop()
        lower.append(k)
    upper: list[int] = []
    for k in range(len(P) - 1, -1, -1):
        while len(upper) >= 2 and _cross(P[upper[-2]], P[upper[-1]], P[k]) <= 0:
            upper.pop()
        upper.append(k)
    return [int(idx[k]) for k in lower[:-1] + upper[:-1]]


def _prefilter(q: np.ndarray) -> np.ndarray:
    """Boolean mask of dual points that may be hull vertices.

    Points strictly inside the polygon spanned by the extreme points along a
    fixed fan of directions cannot be hull vertices.
    """
    if len(q) <= 64:
        return np.ones(len(q), dtype=bool)
    ext = np.unique(np.argmax(_DIRECTIONS @ q.T, axis=1))
    if len(ext) < 3:
        return np.ones(len(q), dtype=bool)
    poly = q[ext]
    cen = poly.mean(axis=0)
    poly = poly[np.argsort(np.arctan2(poly[:, 1] - cen[1], poly[:, 0] - cen[0]))]
    edge = np.roll(poly, -1, axis=0) - poly
    # inward unit normals: left of each counter-clockwise edge
    normal = np.stack([-edge[:, 1], edge[:, 0]], axis=1) / np.hypot(edge[:, 0], edge[:, 1])[:, None]
    offset = np.einsum("ij,ij->i", normal, poly) + 1e-9 * (np.abs(poly).max() + 1.0)
    mask = ~np.all(q @ normal.T > offset, axis=1)
    mask[ext] = True
    return mask


def _clip_polygon(poly: np.ndarray, A: np.ndarray, b: float) -> np.ndarray:
    """Clip a convex polygon (vertices in order) by ``A.p <= b``."""
    if len(poly) == 0:
        return poly
    out = []
    vals = poly @ A - b
    for k in range(len(poly)):
        cur, nxt = poly[k], poly[(k + 1) % len(poly)]
        vc, vn = vals[k], vals[(k + 1) % len(poly)]
        if vc <= 0:
            out.append(cur)
        if (vc < 0 < vn) or (vn < 0 < vc):
            t = vc / (vc - vn)
            out.append(cur + t * (nxt - cur))
    return np.array(out) if out else np.zeros((0, 2))


def clipped_polygon(A: np.ndarray, b: np.ndarray, box: Box) -> np.ndarray:
    poly = box.corners()
    for a, bb in zip(np.atleast_2d(A), np.atleast_1d(b)):
        poly = _clip_polygon(poly, a, bb)
        if len(poly) == 0:
            break
    return poly


def feasibility_lp(A: np.ndarray, b: np.ndarray, box: Box):
    """Minimize the largest violation ``t`` of ``A p <= b + t`` over the box.

    Returns ``(t, point, duals)``; ``t < 0`` means a strictly interior point exists.
    """
    m = len(b)
    c = np.array([0.0, 0.0, 1.0])
    A_ub = np.hstack([A, -np.ones((m, 1))]) if m else np.zeros((0, 3))
    bounds = [(box.lo[0], box.hi[0]), (box.lo[1], box.hi[1]), (-1.0, None)]
    res = linprog(c, A_ub=A_ub, b_ub=b, bounds=bounds, method="highs")
    if res.status != 0:
        raise RuntimeError(f"feasibility LP failed: {res.message}")
    duals = -np.asarray(res.ineqlin.marginals) if m else np.zeros(0)
    return float(res.x[2]), res.x[:2], duals


def blocking_set(A: np.ndarray, b: np.ndarray, box: Box, tol: float = 1e-9) -> list[int]:
    """Irreducible subset of rows of ``A p <= b`` with no common point in the box."""
    t, _, duals = feasibility_lp(A, b, box)
    if t <= tol:
        return []
    candidate = [int(i) for i in np.flatnonzero(duals > 1e-12)]
    if not candidate:
        candidate = list(range(len(b)))
    # deletion filter keeps the set irreducible
    k = 0
    while k < len(candidate):
        trial = candidate[:k] + candidate[k + 1:]
        if trial and feasibility_lp(A[trial], b[trial], box)[0] > tol:
            candidate = trial
        else:
            k += 1
    return sorted(candidate)


def _as_arrays(halfspaces) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if isinstance(halfspaces, tuple) and len(halfspaces) == 3:
        A, b, prov = halfspaces
        return np.asarray(A, float).reshape(-1, 2), np.asarray(b, float).ravel(), np.asarray(prov).reshape(-1, 4)
    hs = list(halfspaces)
    if not hs:
        return np.zeros((0, 2)), np.zeros(0), np.zeros((0, 4), dtype=np.int64)
    A = np.array([h.normal for h in hs], dtype=float)
    b = np.array([h.offset for h in hs], dtype=float)
    prov = np.array([h.provenance for h in hs], dtype=np.int64)
    return A, b, prov


def reduce_polytope(
    halfspaces,
    box: Box,
    n_H: int = 20,
    interior=None,
    stage: int = 0,
    disc: int = 0,
) -> Polytope:
    """Minimal facet description of the halfspace intersection within ``box``.

    ``halfspaces`` is a sequence of :class:`Halfspace` or a tuple
    ``(A, b, provenance)`` of arrays.  Facets are ordered by the polar angle of
    their normal.  If more than ``n_H`` facets are needed the stage is flagged
    and the extra facets are kept.
    """
    A, b, prov = _as_arrays(halfspaces)
    Abox, bbox = box.halfspaces()
    c = None if interior is None else np.asarray(interior, dtype=float)
    if c is None or np.any(b - A @ c <= 0) or np.any(bbox - Abox @ c <= 0):
        t, point, _ = feasibility_lp(np.vstack([A, Abox]), np.concatenate([b, bbox]), box)
        if t >= -1e-12:
            rows = blocking_set(A, b, box)
            raise InfeasiblePolytope([tuple(int(v) for v in prov[i]) for i in rows], stage, disc)
        c = point
    n = len(b)

    # halfspaces whose boundary misses the box entirely are implied by it
    reach = np.abs(A) @ box.half_widths
    cuts = b - A @ box.center < reach
    slack = b - A @ c
    sel = np.flatnonzero(cuts)

    q = np.vstack([A[sel] / slack[sel, None], Abox / (bbox - Abox @ c)[:, None]])
    keys = np.concatenate([_order_keys(prov[sel]), np.full(4, np.iinfo(np.int64).max)])
    cand = np.flatnonzero(_prefilter(q))
    hull = _hull_indices(q[cand], keys[cand])
    rows = sorted(int(sel[cand[h]]) for h in hull if cand[h] < len(sel))
    rows = np.asarray(rows, dtype=np.int64)

    flagged = False
    if len(rows) > n_H:
        rows, flagged = _cap_facets(A, b, rows, slack, n_H, box)

    angle = np.arctan2(A[rows, 1], A[rows, 0]) if len(rows) else np.zeros(0)
    order = np.lexsort((_order_keys(prov[rows]), angle)) if len(rows) else rows
    rows = rows[order]
    return Polytope(A[rows], b[rows], prov[rows], box, stage, disc, c, flagged, n)


def _order_keys(prov: np.ndarray) -> np.ndarray:
    prov = np.asarray(prov, dtype=np.int64).reshape(-1, 4)
    return ((prov[:, 0] * 4096 + prov[:, 1]) * 4096 + prov[:, 2]) * 64 + prov[:, 3]


def _cap_facets(A, b, rows, slack, n_H, box):
    """Keep the ``n_H`` tightest facets if the rest are implied; else keep all and flag."""
    order = rows[np.argsort(slack[rows], kind="stable")]
    kept, dropped = order[:n_H], order[n_H:]
    poly = clipped_polygon(A[kept], b[kept], box)
    implied = [len(poly) == 0 or np.all(poly @ A[j] <= b[j] + 1e-9) for j in dropped]
    if all(implied):
        return np.sort(kept), False
    extra = [j for j, ok in zip(dropped, implied) if not ok]
    return np.sort(np.concatenate([kept, np.asarray(extra, dtype=np.int64)])), True


def redundancy_oracle(A: np.ndarray, b: np.ndarray, box: Box, tol: float = 1e-9) -> np.ndarray:
    """Brute-force LP redundancy elimination; returns the indices kept.

    Each halfspace is tested against all others still kept (plus the box) by
    maximizing its normal over them; it is dropped if the maximum stays below
    its offset.
    """
    keep = list(range(len(b)))
    Abox, bbox = box.halfspaces()
    bounds = [(box.lo[0], box.hi[0]), (box.lo[1], box.hi[1])]
    for i in range(len(b)):
        others = [j for j in keep if j != i]
        res = linprog(-A[i], A_ub=A[others] if others else None, b_ub=b[others] if others else None,
                      bounds=bounds, method="highs")
        if res.status == 2:  # the others are already infeasible
            continue
        if -res.fun <= b[i] + tol:
            keep.remove(i)
    return np.asarray(keep, dtype=np.int64)


# --- pairwise redundancy and shadows ---------------------------------------


def is_redundant_pair(h1: Halfspace, h2: Halfspace, box: Box, tol: float = 1e-12) -> bool:
    """True iff, inside ``box``, one halfspace's region contains the other's."""
    A = np.array([h1.normal, h2.normal], dtype=float)
    b = np.array([h1.offset, h2.offset], dtype=float)
    redundant = _pairwise_redundancy(A, b, box, tol)
    return bool(redundant[0, 1] or redundant[1, 0])


def _region_vertices(A: np.ndarray, b: np.ndarray, box: Box) -> tuple[np.ndarray, np.ndarray]:
    """Vertices of ``box`` clipped by each halfspace, ``(n, 8, 2)`` with a validity mask."""
    corners = box.corners()
    nxt = np.roll(corners, -1, axis=0)
    vc = A @ corners.T - b[:, None]
    vn = np.roll(vc, -1, axis=1)
    crossing = ((vc < 0) & (vn > 0)) | ((vn < 0) & (vc > 0))
    t = np.where(crossing, vc / np.where(crossing, vc - vn, 1.0), 0.0)
    edge_pts = corners[None] + t[..., None] * (nxt - corners)[None]
    pts = np.concatenate([np.broadcast_to(corners, (len(b), 4, 2)), edge_pts], axis=1)
    valid = np.concatenate([vc <= 0, crossing], axis=1)
    return pts, valid


def _pairwise_redundancy(A, b, box, tol=1e-12) -> np.ndarray:
    """``out[i, j]`` is True when region i (within the box) lies inside halfspace j."""
    pts, valid = _region_vertices(A, b, box)
    # value of halfspace j at the vertices of region i
    vals = np.einsum("ikd,jd->ijk", pts, A) - b[None, :, None]
    return np.all(np.where(valid[:, None, :], vals, -np.inf) <= tol, axis=2)


def count_redundant(A: np.ndarray, b: np.ndarray, box: Box) -> int:
    """Number of halfspaces that are mutually redundant with at least one other."""
    red = _pairwise_redundancy(A, b, box)
    np.fill_diagonal(red, False)
    involved = red.any(axis=0) | red.any(axis=1)
    return int(involved.sum())


def redundancy_experiment(
    model: ObstacleModel,
    S_values: Sequence[int],
    trials: int,
    seed: int,
    p_hat=(0.0, 0.0),
    r: float = 0.625,
    box: Box | None = None,
    dt: float = 0.2,
    step: int = 1,
) -> list[tuple[int, float]]:
    """Fraction of trials in which none of ``S`` single-step samples is redundant."""
    if not S_values:
        raise ValueError("need at least one sample size")
    box = box or Box.around(p_hat, 10.0)
    table = []
    for S in S_values:
        clean = 0
        for t in range(trials):
            pos = sample_obstacle(model, step, S, dt, seed=seed * 1_000_003 + t)[:, step - 1]
            A, b = linearize_many(np.asarray(p_hat, dtype=float), pos, r)
            if S < 2 or count_redundant(A, b, box) == 0:
                clean += 1
        table.append((int(S), clean / trials))
    return table


# --- debug output ----------------------------------------------------------


def dump_polytopes(polytopes: Iterable[Polytope], path: str | Path) -> None:
    """CSV with columns stage, disc, facet, Ax, Ay, b, scenario_id."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["stage", "disc", "facet", "Ax", "Ay", "b", "scenario_id"])
        for poly in polytopes:
            for i, (a, bb, p) in enumerate(zip(poly.A, poly.b, poly.provenance)):
                writer.writerow([poly.stage, poly.disc, i, f"{a[0]:.9f}", f"{a[1]:.9f}", f"{bb:.9f}", int(p[0])])
