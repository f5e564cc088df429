"""Dense strictly convex QP solver (dual active-set method).

Solves ``min 1/2 x'Hx + g'x`` subject to ``A_eq x = b_eq`` and
``lb <= x <= ub``. The dual method starts from the unconstrained minimizer and
adds violated constraints one at a time, so no feasible starting point is
needed. Violated constraints enter in index order, which keeps the iteration
deterministic.
"""
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from src.utils.errors import Infeasible, InvalidConfig, MaxIterations, NotPositiveDefinite

VIOLATION_TOL = 1e-10


@dataclass(frozen=True)
class QpProblem:
    H: np.ndarray
    g: np.ndarray
    lb: Optional[np.ndarray] = None
    ub: Optional[np.ndarray] = None
    A_eq: Optional[np.ndarray] = None
    b_eq: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return len(self.g)


@dataclass(frozen=True)
class QpSolution:
    """Minimizer with its active constraints and their multipliers.

    ``active`` holds ``(kind, index)`` pairs with kind in {"eq", "lb", "ub"};
    multipliers of bound constraints are non-negative at the optimum.
    """

    x: np.ndarray
    active: Tuple[Tuple[str, int], ...]
    multipliers: np.ndarray
    iterations: int

    def objective(self, problem: QpProblem) -> float:
        return float(0.5 * self.x @ problem.H @ self.x + problem.g @ self.x)


def _constraints(p: QpProblem):
    """Rows as (kind, index, normal, rhs) in the form normal @ x >= rhs (or == for eq)."""
    n = p.n
    rows = []
    if p.A_eq is not None and len(p.A_eq):
        A = np.atleast_2d(np.asarray(p.A_eq, dtype=float))
        b = np.atleast_1d(np.asarray(p.b_eq, dtype=float))
        for i in range(A.shape[0]):
            rows.append(("eq", i, A[i], float(b[i])))
    eye = np.eye(n)
    lb = np.full(n, -np.inf) if p.lb is None else np.asarray(p.lb, dtype=float)
    ub = np.full(n, np.inf) if p.ub is None else np.asarray(p.ub, dtype=float)
    if np.any(lb > ub):
        raise InvalidConfig("lower bound exceeds upper bound")
    for i in range(n):
        if np.isfinite(lb[i]):
            rows.append(("lb", i, eye[i], float(lb[i])))
        if np.isfinite(ub[i]):
            rows.append(("ub", i, -eye[i], -float(ub[i])))
    return rows


def _factor(H: np.ndarray):
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise NotPositiveDefinite("Hessian must be square")
    if not np.allclose(H, H.T, rtol=0.0, atol=1e-12 * max(1.0, float(np.abs(H).max()))):
        raise NotPositiveDefinite("Hessian is not symmetric")
    try:
        return cho_factor(H, lower=True)
    except np.linalg.LinAlgError as e:
        raise NotPositiveDefinite(f"Hessian is not positive definite: {e}")


def solve_qp(p: QpProblem, max_iterations: Optional[int] = None) -> QpSolution:
    """Solve a QpProblem.

    Raises:
        NotPositiveDefinite: If H is not symmetric positive definite
        Infeasible: If the constraints admit no point
        MaxIterations: If the iteration cap is reached
    """
    H = np.asarray(p.H, dtype=float)
    g = np.asarray(p.g, dtype=float)
    chol = _factor(H)
    rows = _constraints(p)
    if max_iterations is None:
        max_iterations = 10 * (len(rows) + p.n) + 10

    def hinv(v):
        return cho_solve(chol, v)

    x = -hinv(g)
    active: List[int] = []
    normals: List[np.ndarray] = []
    u = np.zeros(0)
    iterations = 0

    def step_directions(n_p):
        if not active:
            return hinv(n_p), np.zeros(0)
        N = np.column_stack(normals)
        HinvN = hinv(N)
        r = np.linalg.solve(N.T @ HinvN, HinvN.T @ n_p)
        z = hinv(n_p - N @ r)
        return z, r

    pending_eq = [i for i, row in enumerate(rows) if row[0] == "eq"]
    signs = {}

    while True:
        # Pick the next constraint to add: equalities first, then the
        # lowest-index violated inequality.
        p_idx = None
        if pending_eq:
            p_idx = pending_eq.pop(0)
        else:
            for i, (kind, _, normal, rhs) in enumerate(rows):
                if kind != "eq" and i not in active and normal @ x - rhs < -VIOLATION_TOL:
                    p_idx = i
                    break
        if p_idx is None:
            break

        kind, _, n_p, rhs = rows[p_idx]
        n_p = n_p.astype(float)
        signs[p_idx] = 1.0
        if kind == "eq" and n_p @ x - rhs > 0:
            n_p, rhs = -n_p, -rhs
            signs[p_idx] = -1.0
        u_plus = np.append(u, 0.0)

        while True:
            iterations += 1
            if iterations > max_iterations:
                raise MaxIterations(f"QP did not converge in {max_iterations} iterations")

            z, r = step_directions(n_p)
            slack = float(n_p @ x - rhs)

            # Partial step limited by the multipliers of active inequalities.
            t1, k_drop = np.inf, None
            for j, (row_idx, rj) in enumerate(zip(active, r)):
                if rows[row_idx][0] != "eq" and rj > 1e-14:
                    ratio = u_plus[j] / rj
                    if ratio < t1:
                        t1, k_drop = ratio, j

            curvature = float(z @ n_p)
            zero_step = float(np.linalg.norm(z)) <= 1e-14 * max(1.0, float(np.linalg.norm(n_p)))
            t2 = np.inf if zero_step or curvature <= 0 else -slack / curvature

            if kind == "eq" and zero_step and abs(slack) <= VIOLATION_TOL:
                # Redundant equality.
                break

            t = min(t1, t2)
            if not np.isfinite(t):
                raise Infeasible("constraints are inconsistent")

            if not np.isfinite(t2):
                u_plus[:-1] -= t * r
                u_plus[-1] += t
                del active[k_drop]
                del normals[k_drop]
                u_plus = np.delete(u_plus, k_drop)
                continue

            x = x + t * z
            u_plus[:-1] -= t * r
            u_plus[-1] += t
            if t == t2:
                active.append(p_idx)
                normals.append(n_p)
                u = u_plus
                break
            del active[k_drop]
            del normals[k_drop]
            u_plus = np.delete(u_plus, k_drop)

    # Land exactly on active bounds.
    for row_idx in active:
        kind, i, _, rhs = rows[row_idx]
        if kind == "lb":
            x[i] = rhs
        elif kind == "ub":
            x[i] = -rhs

    labels = tuple((rows[i][0], rows[i][1]) for i in active)
    multipliers = u * np.array([signs[i] for i in active]) if active else u.copy()
    return QpSolution(x=x, active=labels, multipliers=multipliers, iterations=iterations)


def kkt_residual(p: QpProblem, solution: QpSolution) -> float:
    """Norm of the stationarity residual at a solution."""
    rows = _constraints(p)
    lookup = {(kind, i): normal for kind, i, normal, _ in rows}
    grad = np.asarray(p.H, dtype=float) @ solution.x + np.asarray(p.g, dtype=float)
    for label, mult in zip(solution.active, solution.multipliers):
        normal = lookup[label]
        grad = grad - mult * normal
    return float(np.linalg.norm(grad))
