"""Dense-tableau two-phase simplex with implicit variable bounds.

Solves ``min c.x  s.t.  A x (<=, =, >=) b,  lb <= x <= ub``. Columns are
shifted so that every working variable lives in ``[0, U]``; nonbasic
variables sit at either end of that interval and bound flips replace
pivots when the entering variable reaches its own far bound first. Phase 1
minimizes the sum of artificials, after which the artificials are pinned
to zero and phase 2 optimizes the real objective on the same tableau.

Dantzig pricing is used until ``5 * (rows + cols)`` iterations have passed
in a phase; after that Bland's smallest-index rule takes over, which rules
out cycling.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

FEAS_TOL = 1e-7
PIVOT_TOL = 1e-9
OPT_TOL = 1e-9


@dataclass
class LpProblem:
    c: np.ndarray
    A: np.ndarray
    senses: list
    b: np.ndarray
    lb: np.ndarray
    ub: np.ndarray

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=np.float64)
        n = self.c.size
        self.A = np.asarray(self.A, dtype=np.float64).reshape(-1, n)
        self.b = np.asarray(self.b, dtype=np.float64).reshape(-1)
        self.lb = np.asarray(self.lb, dtype=np.float64).reshape(n)
        self.ub = np.asarray(self.ub, dtype=np.float64).reshape(n)
        self.senses = list(self.senses)
        if len(self.senses) != self.A.shape[0] or self.b.size != self.A.shape[0]:
            raise ValueError("row count mismatch between A, b and senses")
        if not np.all(np.isfinite(self.b)):
            raise ValueError("right-hand sides must be finite")


@dataclass
class LpResult:
    status: str  # optimal | infeasible | unbounded | numerical_failure
    x: np.ndarray | None
    objective: float
    iterations: int = 0


class _Tableau:
    """Working state shared by both phases."""

    def __init__(self, T, beta, basis, U):
        self.T = T
        self.beta = beta
        self.basis = basis
        self.U = U
        self.at_ub = np.zeros(T.shape[1], dtype=bool)
        self.iterations = 0

    def nonbasic_values(self):
        vals = np.where(self.at_ub, self.U, 0.0)
        vals[self.basis] = 0.0
        return vals

    def run(self, cost, max_iter):
        """Optimize ``cost`` from the current basis; returns a status string."""
        T, U = self.T, self.U
        m, N = T.shape
        d = cost - cost[self.basis] @ T
        movable = U > 0.0
        is_basic = np.zeros(N, dtype=bool)
        is_basic[self.basis] = True
        bland_after = 5 * (m + N)
        steps = 0
        while True:
            if steps >= max_iter:
                return "numerical_failure"
            # improving directions: increase from lb (d < 0) or decrease from ub (d > 0)
            up = (~is_basic) & movable & (~self.at_ub) & (d < -OPT_TOL)
            down = (~is_basic) & movable & self.at_ub & (d > OPT_TOL)
            eligible = up | down
            if not eligible.any():
                return "optimal"
            if steps < bland_after:
                q = int(np.argmax(np.where(eligible, np.abs(d), -1.0)))
            else:
                q = int(np.flatnonzero(eligible)[0])
            sigma = 1.0 if up[q] else -1.0
            col = T[:, q]
            scol = sigma * col
            ratios = np.full(m, math.inf)
            dec = scol > PIVOT_TOL
            ratios[dec] = np.maximum(self.beta[dec], 0.0) / scol[dec]
            inc = (scol < -PIVOT_TOL) & np.isfinite(U[self.basis])
            ratios[inc] = np.maximum(U[self.basis][inc] - self.beta[inc], 0.0) / (-scol[inc])
            t_pivot = ratios.min() if m else math.inf
            t_flip = U[q]
            if math.isinf(t_pivot) and math.isinf(t_flip):
                return "unbounded"
            steps += 1
            self.iterations += 1
            if t_flip <= t_pivot:
                self.beta -= scol * t_flip
                self.at_ub[q] = not self.at_ub[q]
                continue
            ties = np.flatnonzero(ratios <= t_pivot + 1e-12)
            if steps >= bland_after:
                r = int(ties[np.argmin(self.basis[ties])])
            else:
                r = int(ties[np.argmax(np.abs(col[ties]))])
            leaving = self.basis[r]
            leaving_to_ub = bool(inc[r])
            entering_value = t_pivot if sigma > 0 else U[q] - t_pivot
            self.beta -= scol * t_pivot
            self.beta[r] = entering_value
            piv = T[r, q]
            T[r] /= piv
            factor = T[:, q].copy()
            factor[r] = 0.0
            rows = np.flatnonzero(factor)
            cols = np.flatnonzero(T[r])
            if rows.size and cols.size:
                # both the pivot column and the pivot row are usually sparse
                T[np.ix_(rows, cols)] -= np.outer(factor[rows], T[r, cols])
            T[:, q] = 0.0
            T[r, q] = 1.0
            d -= d[q] * T[r]
            d[q] = 0.0
            is_basic[leaving] = False
            is_basic[q] = True
            self.basis[r] = q
            self.at_ub[q] = False
            self.at_ub[leaving] = leaving_to_ub and math.isfinite(U[leaving])


def simplex_solve(lp: LpProblem, max_iter: int | None = None) -> LpResult:
    n = lp.c.size
    m = lp.A.shape[0]
    lb, ub = lp.lb, lp.ub
    if np.any(lb > ub + FEAS_TOL):
        return LpResult("infeasible", None, math.inf)

    # column transform: x = offset + sum(scale * y), y in [0, U]
    cols = []  # (original index, sign)
    U = []
    offset = np.zeros(n)
    for j in range(n):
        lo, hi = lb[j], ub[j]
        if math.isfinite(lo):
            offset[j] = lo
            cols.append((j, 1.0))
            U.append(max(hi - lo, 0.0))
        elif math.isfinite(hi):
            offset[j] = hi
            cols.append((j, -1.0))
            U.append(math.inf)
        else:
            cols.append((j, 1.0))
            U.append(math.inf)
            cols.append((j, -1.0))
            U.append(math.inf)
    idx = np.array([j for j, _ in cols], dtype=np.int64)
    sgn = np.array([s for _, s in cols])
    Ay = lp.A[:, idx] * sgn if m else np.zeros((0, idx.size))
    cy = lp.c[idx] * sgn
    rhs = lp.b - lp.A @ offset if m else np.zeros(0)
    ny = idx.size

    slack_sign = np.array([{"<=": 1.0, ">=": -1.0, "=": 0.0}[s] for s in lp.senses])
    slack_rows = np.flatnonzero(slack_sign != 0.0)
    ns = slack_rows.size
    flip = np.where(rhs < 0, -1.0, 1.0)
    rhs = rhs * flip

    slack_block = np.zeros((m, ns))
    slack_block[slack_rows, np.arange(ns)] = slack_sign[slack_rows]
    body = np.hstack([Ay, slack_block]) * flip[:, None]

    basis = np.full(m, -1, dtype=np.int64)
    for k, i in enumerate(slack_rows):
        if body[i, ny + k] > 0:
            basis[i] = ny + k
    art_rows = np.flatnonzero(basis < 0)
    na = art_rows.size
    art_block = np.zeros((m, na))
    art_block[art_rows, np.arange(na)] = 1.0
    basis[art_rows] = ny + ns + np.arange(na)

    T = np.hstack([body, art_block])
    N = T.shape[1]
    Uall = np.concatenate([np.array(U, dtype=np.float64), np.full(ns, math.inf), np.full(na, math.inf)])
    tab = _Tableau(T, rhs.copy(), basis, Uall)
    limit = max_iter or 50 * (m + N) + 1000

    if na:
        phase1 = np.zeros(N)
        phase1[ny + ns:] = 1.0
        status = tab.run(phase1, limit)
        if status != "optimal":
            return LpResult("numerical_failure", None, math.nan, tab.iterations)
        _refresh(tab, body, art_block, rhs)
        infeas = float(np.sum(_values(tab)[ny + ns:]))
        if infeas > FEAS_TOL * max(1.0, float(np.abs(rhs).max(initial=0.0))):
            return LpResult("infeasible", None, math.inf, tab.iterations)
        Uall[ny + ns:] = 0.0

    cost = np.concatenate([cy, np.zeros(ns + na)])
    status = tab.run(cost, limit)
    if status == "unbounded":
        return LpResult("unbounded", None, -math.inf, tab.iterations)
    if status != "optimal":
        return LpResult("numerical_failure", None, math.nan, tab.iterations)
    _refresh(tab, body, art_block, rhs)
    yvals = _values(tab)[:ny]
    x = offset.copy()
    np.add.at(x, idx, sgn * yvals)
    x = np.clip(x, lb, ub)
    if not _check(lp, x):
        return LpResult("numerical_failure", None, math.nan, tab.iterations)
    return LpResult("optimal", x, float(lp.c @ x), tab.iterations)


def _values(tab: _Tableau) -> np.ndarray:
    vals = tab.nonbasic_values()
    vals[tab.basis] = tab.beta
    return vals


def _refresh(tab: _Tableau, body, art_block, rhs) -> None:
    """Recompute basic values from the original rows to shed drift."""
    full = np.hstack([body, art_block])
    if full.shape[0] == 0:
        return
    xn = tab.nonbasic_values()
    B = full[:, tab.basis]
    try:
        tab.beta = np.linalg.solve(B, rhs - full @ xn)
    except np.linalg.LinAlgError:
        pass


def _check(lp: LpProblem, x: np.ndarray, tol: float = 1e-6) -> bool:
    if lp.A.shape[0] == 0:
        return True
    lhs = lp.A @ x
    scale = np.maximum(1.0, np.abs(lp.b))
    for s, code in (("<=", 1), (">=", -1)):
        mask = np.array([t == s for t in lp.senses])
        if mask.any() and np.any(code * (lhs[mask] - lp.b[mask]) > tol * scale[mask]):
            return False
    mask = np.array([t == "=" for t in lp.senses])
    return not (mask.any() and np.any(np.abs(lhs[mask] - lp.b[mask]) > tol * scale[mask]))
