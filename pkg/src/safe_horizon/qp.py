"""Dense strictly convex QP solver (Goldfarb-Idnani dual active set).

Solves

    min  1/2 x'Gx + a'x   s.t.  C_eq x = d_eq,   C_in x <= d_in

with ``G`` positive definite.  The dual method starts at the unconstrained
minimizer and adds violated constraints one at a time, so it returns an exact
active set with multipliers, which the scenario solver needs for its support
estimate.  The factorization ``J = L^-T Q`` with upper-triangular ``R`` is
updated with a Householder reflection on additions and a small QR on drops.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, solve_triangular


class QPError(RuntimeError):
    pass


@dataclass
class QPResult:
    x: np.ndarray
    status: str  # "optimal", "infeasible" or "max_iter"
    objective: float
    active: np.ndarray  # active inequality rows at the solution
    multipliers_in: np.ndarray  # >= 0, one per inequality row
    multipliers_eq: np.ndarray
    iterations: int
    infeasible_rows: list[int] = field(default_factory=list)

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


def solve_qp(
    G: np.ndarray,
    a: np.ndarray,
    C_eq: np.ndarray | None = None,
    d_eq: np.ndarray | None = None,
    C_in: np.ndarray | None = None,
    d_in: np.ndarray | None = None,
    tol: float = 1e-9,
    max_iter: int | None = None,
) -> QPResult:
    G = np.asarray(G, dtype=float)
    a = np.asarray(a, dtype=float)
    n = len(a)
    C_eq = np.zeros((0, n)) if C_eq is None else np.atleast_2d(np.asarray(C_eq, dtype=float))
    d_eq = np.zeros(0) if d_eq is None else np.atleast_1d(np.asarray(d_eq, dtype=float))
    C_in = np.zeros((0, n)) if C_in is None else np.atleast_2d(np.asarray(C_in, dtype=float))
    d_in = np.zeros(0) if d_in is None else np.atleast_1d(np.asarray(d_in, dtype=float))
    m_eq, m_in = len(d_eq), len(d_in)
    max_iter = max_iter or 10 * (n + m_eq + m_in) + 50

    try:
        L, _ = cho_factor(G, lower=True)
    except np.linalg.LinAlgError as exc:
        raise QPError("Hessian is not positive definite") from exc
    L = np.tril(L)
    # J = L^-T, so that J'GJ = I
    J = solve_triangular(L, np.eye(n), lower=True, trans="T")
    x = -J @ (J.T @ a)

    # constraints in the form n'x >= b; equality rows may be sign-flipped
    N_in = -C_in
    b_in = -d_in
    row_norm = np.maximum(np.linalg.norm(C_in, axis=1), 1e-300)
    eq_sign = np.ones(m_eq)

    R = np.zeros((n, n))
    active: list[int] = []  # >= 0: inequality row, < 0: equality row -(k+1)
    u = np.zeros(0)
    iterations = 0

    def normal(c: int) -> np.ndarray:
        return N_in[c] if c >= 0 else eq_sign[-c - 1] * C_eq[-c - 1]

    def offset(c: int) -> float:
        return b_in[c] if c >= 0 else eq_sign[-c - 1] * d_eq[-c - 1]

    def drop(k: int) -> None:
        nonlocal R, J
        q = len(active)
        R_h = np.delete(R[:q, :q], k, axis=1)
        Q, R_new = np.linalg.qr(R_h, mode="complete")
        J[:, :q] = J[:, :q] @ Q
        R = np.zeros((n, n))
        R[: q - 1, : q - 1] = R_new[: q - 1]
        del active[k]

    def add(c: int, d: np.ndarray) -> None:
        nonlocal R
        q = len(active)
        d2 = d[q:]
        nrm = np.linalg.norm(d2)
        if len(d2) > 1:
            # Householder reflector mapping d2 onto nrm * e1
            v = d2.copy()
            v[0] += np.copysign(nrm, d2[0]) if d2[0] != 0 else nrm
            vv = v @ v
            if vv > 0:
                J[:, q:] -= np.outer(J[:, q:] @ v, (2.0 / vv) * v)
            lead = -np.copysign(nrm, d2[0]) if d2[0] != 0 else -nrm
        else:
            lead = d2[0]
        R[:q, q] = d[:q]
        R[q, q] = lead
        active.append(c)

    pending_eq = list(range(m_eq))
    while True:
        iterations += 1
        if iterations > max_iter:
            return _result(x, "max_iter", G, a, active, u, m_eq, m_in, eq_sign, iterations)

        # choose the next constraint: equalities first, then the most violated row
        if pending_eq:
            k = pending_eq.pop(0)
            if C_eq[k] @ x - d_eq[k] > 0:
                eq_sign[k] = -1.0
            p = -(k + 1)
            s_p = normal(p) @ x - offset(p)
        else:
            if m_in == 0:
                break
            s = (N_in @ x - b_in) / row_norm
            if active:
                s[[c for c in active if c >= 0]] = np.inf
            p = int(np.argmin(s))
            if s[p] >= -tol:
                break
            s_p = N_in[p] @ x - b_in[p]

        u_p = 0.0
        n_p = normal(p)
        while True:
            q = len(active)
            d = J.T @ n_p
            z = J[:, q:] @ d[q:]
            r = solve_triangular(R[:q, :q], d[:q], lower=False) if q else np.zeros(0)
            # dual blocking step over active inequalities
            t1, blocking = np.inf, -1
            for j, c in enumerate(active):
                if c >= 0 and r[j] > 1e-12:
                    ratio = u[j] / r[j]
                    if ratio < t1:
                        t1, blocking = ratio, j
            zn = z @ n_p
            full = zn > 1e-12 * max(1.0, n_p @ n_p)
            t2 = -s_p / zn if full else np.inf
            if not full and not np.isfinite(t1):
                if p < 0:
                    # dependent equality constraints
                    if abs(s_p) <= 1e-9 * max(1.0, np.abs(n_p).sum()):
                        break
                    rows = [c for c in active if c >= 0]
                    return _result(x, "infeasible", G, a, active, u, m_eq, m_in, eq_sign, iterations, rows)
                rows = sorted({p} | {c for j, c in enumerate(active) if c >= 0 and r[j] < -1e-12})
                return _result(x, "infeasible", G, a, active, u, m_eq, m_in, eq_sign, iterations, rows)
            t = min(t1, t2)
            if full:
                x = x + t * z
            u = u - t * r
            u_p += t
            if t == t2:
                add(p, d)
                u = np.append(u, u_p)
                break
            u = np.delete(u, blocking)
            drop(blocking)
            s_p = n_p @ x - offset(p)

    return _result(x, "optimal", G, a, active, u, m_eq, m_in, eq_sign, iterations)


def _result(x, status, G, a, active, u, m_eq, m_in, eq_sign, iterations, rows=None) -> QPResult:
    lam = np.zeros(m_in)
    mu = np.zeros(m_eq)
    for c, val in zip(active, u):
        if c >= 0:
            lam[c] = max(val, 0.0)
        else:
            mu[-c - 1] = -eq_sign[-c - 1] * val
    act = np.array(sorted(c for c in active if c >= 0), dtype=np.int64)
    obj = float(0.5 * x @ G @ x + a @ x)
    return QPResult(x, status, obj, act, lam, mu, iterations, rows or [])


def kkt_residual(G, a, x, C_eq, d_eq, C_in, d_in, lam, mu) -> float:
    """Largest violation of stationarity, feasibility and complementarity."""
    grad = G @ x + a
    if C_eq is not None and len(mu):
        grad = grad + C_eq.T @ mu
    if C_in is not None and len(lam):
        grad = grad + C_in.T @ lam
    res = [np.abs(grad).max(initial=0.0)]
    if C_eq is not None and len(mu):
        res.append(np.abs(C_eq @ x - d_eq).max())
    if C_in is not None and len(lam):
        slack = C_in @ x - d_in
        res.append(max(slack.max(), 0.0))
        res.append(np.abs(slack * lam).max())
        res.append(max(-lam.min(), 0.0))
    return float(max(res))
