"""Best-first branch-and-bound over binary variables.

Each node fixes some binaries. Its LP relaxation is built from the base
rows plus, for every indicator,

* the implied row itself when the guard is fixed at its active value,
* nothing when the guard is fixed at the other value,
* big-M rows (with M recomputed from the node's bounds) otherwise.

Integral LP points are re-solved with every binary fixed, so incumbents
never rely on a big-M row being exactly tight.
"""
from __future__ import annotations

import heapq
import itertools
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .milp import MilpModel, ModelError
from .simplex import LpProblem, simplex_solve

log = logging.getLogger(__name__)

INT_TOL = 1e-6


@dataclass
class BnbConfig:
    branching: str = "most_fractional"  # or "first_fractional"
    node_limit: int = 100_000
    gap: float = 1e-6
    time_limit: float = math.inf
    deterministic: bool = True

    def __post_init__(self):
        if self.node_limit < 1:
            raise ValueError("node_limit must be >= 1")
        if self.branching not in ("most_fractional", "first_fractional"):
            raise ValueError(f"unknown branching rule {self.branching!r}")


@dataclass
class SolveResult:
    status: str  # optimal | infeasible | unbounded | node_limit | time_limit | numerical_failure
    objective: float
    assignment: np.ndarray | None
    nodes: int = 0
    best_bound: float = -math.inf
    bound_history: list = field(default_factory=list, repr=False)

    @property
    def values(self) -> dict:
        return {} if self.assignment is None else dict(enumerate(self.assignment.tolist()))


class _Relaxation:
    """Dense matrices of a model, ready to be specialised per node."""

    def __init__(self, model: MilpModel):
        n = model.n_vars
        self.n = n
        self.c = np.array([v.cost for v in model.variables])
        self.lb = np.array([v.lb for v in model.variables])
        self.ub = np.array([v.ub for v in model.variables])
        self.binaries = np.array(model.binaries(), dtype=np.int64)
        self.A = np.zeros((len(model.constraints), n))
        self.b = np.zeros(len(model.constraints))
        self.senses = []
        for r, con in enumerate(model.constraints):
            for i, a in con.terms:
                self.A[r, i] = a
            self.b[r] = con.rhs
            self.senses.append(con.sense)
        # indicator halves, all normalised to "<="
        rows, rhs, guards, active, names = [], [], [], [], []
        for ind in model.indicators:
            con = ind.implied
            vec = np.zeros(n)
            for i, a in con.terms:
                vec[i] = a
            halves = []
            if con.sense in ("<=", "="):
                halves.append((vec, con.rhs))
            if con.sense in (">=", "="):
                halves.append((-vec, -con.rhs))
            for v, r in halves:
                rows.append(v)
                rhs.append(r)
                guards.append(ind.guard)
                active.append(ind.active_when)
                names.append(ind.name)
        self.ind_A = np.array(rows).reshape(-1, n)
        self.ind_b = np.array(rhs, dtype=np.float64)
        self.ind_guard = np.array(guards, dtype=np.int64)
        self.ind_active = np.array(active, dtype=np.int64)
        self.ind_names = names
        self.names = [v.name for v in model.variables]

    def node_lp(self, lb, ub) -> LpProblem:
        g_lo, g_hi = lb[self.ind_guard], ub[self.ind_guard]
        fixed = g_lo == g_hi
        enforce = fixed & (g_lo == self.ind_active)
        relax = ~fixed
        parts_A = [self.A]
        parts_b = [self.b]
        senses = list(self.senses)
        if enforce.any():
            parts_A.append(self.ind_A[enforce])
            parts_b.append(self.ind_b[enforce])
            senses += ["<="] * int(enforce.sum())
        if relax.any():
            A = self.ind_A[relax]
            pos, neg = np.clip(A, 0, None), np.clip(A, None, 0)
            with np.errstate(invalid="ignore"):
                top = _safe_dot(pos, ub) + _safe_dot(neg, lb)
            if not np.all(np.isfinite(top)):
                bad = int(np.flatnonzero(~np.isfinite(top))[0])
                row = A[bad]
                var = next(i for i in np.flatnonzero(row)
                           if not math.isfinite(ub[i] if row[i] > 0 else lb[i]))
                name = [nm for nm, k in zip(self.ind_names, relax) if k][bad]
                raise ModelError(f"indicator {name}: variable {self.names[var]} lacks a finite bound")
            big_m = top - self.ind_b[relax]
            keep = big_m > 0.0
            if keep.any():
                guard = self.ind_guard[relax][keep]
                act = self.ind_active[relax][keep]
                M = big_m[keep]
                rows = A[keep].copy()
                rhs = self.ind_b[relax][keep].copy()
                k = np.arange(rows.shape[0])
                # z=1 -> a.x <= r  :  a.x + M z <= r + M ;  z=0 -> a.x <= r  :  a.x - M z <= r
                rows[k, guard] += np.where(act == 1, M, -M)
                rhs += np.where(act == 1, M, 0.0)
                parts_A.append(rows)
                parts_b.append(rhs)
                senses += ["<="] * rows.shape[0]
        A = np.vstack(parts_A) if parts_A else np.zeros((0, self.n))
        return LpProblem(self.c, A, senses, np.concatenate(parts_b), lb, ub)


def _safe_dot(A, x):
    """``A @ x`` treating ``0 * inf`` as 0."""
    out = np.zeros(A.shape[0])
    for j in np.flatnonzero(np.any(A != 0, axis=0)):
        out += A[:, j] * x[j]
    return out


def _fractional(x, binaries):
    vals = x[binaries]
    frac = np.abs(vals - np.round(vals))
    return frac


def branch_and_bound(model: MilpModel, config: BnbConfig | None = None, cost=None) -> SolveResult:
    """Minimize the model's objective (or ``cost``, a per-variable vector, when given)."""
    config = config or BnbConfig()
    relax = _Relaxation(model)
    if cost is not None:
        relax.c = np.asarray(cost, dtype=np.float64)
    start = time.monotonic()
    counter = itertools.count()
    binaries = relax.binaries

    base_lb, base_ub = relax.lb.copy(), relax.ub.copy()
    if np.any(base_lb > base_ub):
        return SolveResult("infeasible", math.inf, None)

    incumbent, inc_obj = None, math.inf
    heap = [(-math.inf, 0, next(counter), base_lb, base_ub)]
    nodes = 0
    numerical = 0
    history = []
    best_bound = -math.inf
    status = None

    while heap:
        bound, neg_depth, _, lb, ub = heapq.heappop(heap)
        if bound >= inc_obj - config.gap:
            heap.clear()
            break
        if bound > best_bound:
            best_bound = bound
        history.append(best_bound)
        if nodes >= config.node_limit:
            heapq.heappush(heap, (bound, neg_depth, next(counter), lb, ub))
            status = "node_limit"
            break
        if time.monotonic() - start > config.time_limit:
            heapq.heappush(heap, (bound, neg_depth, next(counter), lb, ub))
            status = "time_limit"
            break
        nodes += 1
        res = simplex_solve(relax.node_lp(lb, ub))
        if res.status == "infeasible":
            continue
        if res.status == "unbounded":
            if nodes == 1:
                return SolveResult("unbounded", -math.inf, None, nodes, -math.inf, history)
            continue
        if res.status != "optimal":
            numerical += 1
            log.warning("node %d: LP relaxation failed (%s)", nodes, res.status)
            continue
        if res.objective >= inc_obj - config.gap:
            continue
        x = res.x
        frac = _fractional(x, binaries)
        if binaries.size == 0 or frac.max() <= INT_TOL:
            cand = x
            if binaries.size and np.any(lb[binaries] != ub[binaries]):
                flb, fub = lb.copy(), ub.copy()
                rounded = np.round(x[binaries])
                flb[binaries] = rounded
                fub[binaries] = rounded
                exact = simplex_solve(relax.node_lp(flb, fub))
                if exact.status != "optimal":
                    numerical += exact.status == "numerical_failure"
                    continue
                cand = exact.x
            cand = cand.copy()
            cand[binaries] = np.round(cand[binaries])
            obj = float(relax.c @ cand)
            if obj < inc_obj:
                incumbent, inc_obj = cand, obj
            continue
        open_bin = frac > INT_TOL
        if config.branching == "most_fractional":
            # ties resolve to the lowest variable id
            j = int(binaries[np.argmax(np.where(open_bin, frac, -1.0))])
        else:
            j = int(binaries[np.flatnonzero(open_bin)[0]])
        for value in (0.0, 1.0):
            clb, cub = lb.copy(), ub.copy()
            clb[j] = cub[j] = value
            heapq.heappush(heap, (res.objective, neg_depth - 1, next(counter), clb, cub))

    if status is None:
        if incumbent is None:
            status = "infeasible"
            best_bound = math.inf
        else:
            status = "optimal" if numerical == 0 else "numerical_failure"
            best_bound = inc_obj if not heap else min(inc_obj, heap[0][0])
    else:
        best_bound = min(inc_obj, heap[0][0]) if heap else inc_obj
        best_bound = max(best_bound, history[-1] if history else -math.inf)
    history.append(best_bound)
    return SolveResult(status, inc_obj, incumbent, nodes, best_bound, history)


def solve_lp_relaxation(model: MilpModel, cost=None):
    """Plain LP relaxation of the big-M expansion (binaries continuous in [0, 1])."""
    relax = _Relaxation(model)
    if cost is not None:
        relax.c = np.asarray(cost, dtype=np.float64)
    return simplex_solve(relax.node_lp(relax.lb.copy(), relax.ub.copy()))
