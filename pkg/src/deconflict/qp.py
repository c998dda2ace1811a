"""Dense convex QP for speed-rate relaxations.

Problems have the form::

    minimize    sum_i w * (1 - q_i)^2
    subject to  lower <= q <= upper,  rows @ q <= rhs

which is the Euclidean projection of the all-ones vector onto a polytope.
Solved with the Goldfarb-Idnani dual active-set method (identity Hessian), so
the iterate is always the unconstrained-optimal point of the current active
set and constraints are added in order of violation.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

FEAS_TOL = 1e-9
DEPENDENT_TOL = 1e-10
KKT_TOL = 1e-8


@dataclass
class BoxQP:
    n: int
    weight: float
    lower: np.ndarray
    upper: np.ndarray
    # each row is (coeffs over all n variables, rhs) meaning coeffs @ q <= rhs
    rows: List[Tuple[np.ndarray, float]] = field(default_factory=list)

    def __post_init__(self):
        self.lower = np.broadcast_to(np.asarray(self.lower, dtype=float), (self.n,)).copy()
        self.upper = np.broadcast_to(np.asarray(self.upper, dtype=float), (self.n,)).copy()
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound exceeds upper bound")
        if self.weight < 0:
            raise ValueError("weight must be nonnegative")

    def add_row(self, coeffs, rhs: float = 0.0) -> None:
        self.rows.append((np.asarray(coeffs, dtype=float), float(rhs)))

    def constraint_matrix(self) -> Tuple[np.ndarray, np.ndarray]:
        """All constraints stacked as ``A @ q <= b`` (bounds first)."""
        eye = np.eye(self.n)
        parts = [eye, -eye]
        rhs = [self.upper, -self.lower]
        if self.rows:
            parts.append(np.array([r for r, _ in self.rows]).reshape(-1, self.n))
            rhs.append(np.array([b for _, b in self.rows]))
        return np.vstack(parts), np.concatenate(rhs)

    def objective(self, q) -> float:
        q = np.asarray(q, dtype=float)
        return float(self.weight * np.sum((1.0 - q) ** 2))


@dataclass
class QpSolution:
    q: Optional[np.ndarray]
    objective: float
    status: str  # "optimal" | "infeasible"
    kkt_residual: float = 0.0
    multipliers: Optional[np.ndarray] = None
    # active-set state for warm starts on problems with appended rows
    state: Optional[tuple] = field(default=None, repr=False)

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


def project_polytope(c: np.ndarray, A: np.ndarray, b: np.ndarray,
                     tol: float = FEAS_TOL, max_iter: int = 500):
    """Project ``c`` onto ``{x : A x <= b}``.

    Returns ``(x, multipliers)`` or ``(None, None)`` if the polytope is empty.
    Multipliers satisfy ``x - c + A.T @ u = 0`` with ``u >= 0``.
    """
    x, mult, _ = _dual_active_set(c, A, b, tol, max_iter, None)
    return x, mult


def _dual_active_set(c, A, b, tol, max_iter, warm):
    """Goldfarb-Idnani iterations; ``warm`` is a state from a problem whose rows prefix ``A``.

    Adding constraints keeps a dual-feasible state dual feasible, so the
    iteration may resume from the parent problem's active set.
    """
    m, n = A.shape
    norms = np.linalg.norm(A, axis=1)
    norms[norms == 0.0] = 1.0
    An = A / norms[:, None]
    bn = b / norms
    if warm is None:
        x = np.array(c, dtype=float)
        active: List[int] = []
        u = np.zeros(0)
    else:
        x, active, u = warm[0].copy(), list(warm[1]), warm[2].copy()
    for _ in range(max_iter):
        slack = bn - An @ x
        if active:
            slack[active] = np.inf
        p = int(np.argmin(slack))
        if slack[p] >= -tol:
            mult = np.zeros(m)
            mult[active] = u / norms[active]
            return x, mult, (x.copy(), tuple(active), u.copy())
        # constraint p in ">=" form: n_p . x >= -bn[p] with n_p = -An[p]
        npl = -An[p]
        u_new = 0.0
        while True:
            if active:
                N = -An[active].T
                r = np.linalg.solve(N.T @ N, N.T @ npl)
                z = npl - N @ r
            else:
                r = np.zeros(0)
                z = npl
            viol = -bn[p] - npl @ x  # > 0 while p violated
            zz = float(z @ z)
            # rows are unit-normalized: zz is the squared sine to the active span
            t2 = viol / zz if zz > DEPENDENT_TOL else np.inf
            t1, k = np.inf, -1
            for idx, rj in enumerate(r):
                if rj > 1e-12:
                    ratio = u[idx] / rj
                    if ratio < t1:
                        t1, k = ratio, idx
            if not np.isfinite(t1) and not np.isfinite(t2):
                return None, None, None
            t = min(t1, t2)
            if np.isfinite(t2):
                x = x + t * z
                if not np.all(np.isfinite(x)):
                    raise RuntimeError("QP active-set step diverged")
            u = u - t * r
            u_new += t
            if t2 <= t1:
                active.append(p)
                u = np.append(u, u_new)
                break
            del active[k]
            u = np.delete(u, k)
    raise RuntimeError("QP active-set iteration limit reached")


def kkt_residual(problem: BoxQP, q: np.ndarray, multipliers: np.ndarray) -> float:
    """Max of stationarity, primal infeasibility and complementarity violations."""
    A, b = problem.constraint_matrix()
    scale = max(problem.weight, 1.0)
    grad = 2.0 * scale * (q - 1.0)
    lam = 2.0 * scale * multipliers
    stat = np.max(np.abs(grad + A.T @ lam)) if len(q) else 0.0
    slack = b - A @ q
    prim = max(0.0, -float(np.min(slack))) if len(slack) else 0.0
    comp = float(np.max(np.abs(lam * np.minimum(slack, 1.0)))) if len(slack) else 0.0
    dual = max(0.0, -float(np.min(lam))) if len(lam) else 0.0
    return max(stat, prim, comp, dual)


def solve_convex_qp(problem: BoxQP, certify: bool = True, warm: Optional[tuple] = None) -> QpSolution:
    """Certified optimum, or status ``infeasible`` for an empty polytope.

    ``certify=False`` skips the KKT residual evaluation (reported as NaN); used
    in hot branch-and-bound loops where the certificate is checked in tests.
    ``warm`` is the ``state`` of a solved problem with the same box whose rows
    are a prefix of this problem's rows.
    """
    A, b = problem.constraint_matrix()
    x, mult, state = _dual_active_set(np.ones(problem.n), A, b, FEAS_TOL, 500, warm)
    if x is None:
        return QpSolution(None, np.inf, "infeasible", np.inf)
    # clean roundoff on the bounds
    x = np.clip(x, problem.lower, problem.upper)
    res = kkt_residual(problem, x, mult) if certify else float("nan")
    return QpSolution(x, problem.objective(x), "optimal", res, mult, state)


def sample_feasible_points(problem: BoxQP, rng: np.random.Generator, count: int) -> Sequence[np.ndarray]:
    """Rejection-sample points of the feasible polytope (used by tests)."""
    A, b = problem.constraint_matrix()
    pts = rng.uniform(problem.lower, problem.upper, size=(count, problem.n))
    ok = np.all(pts @ A.T <= b + 1e-12, axis=1)
    return list(pts[ok])
