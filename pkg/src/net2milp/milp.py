"""Intermediate representation for 0-1 mixed integer linear programs.

A :class:`MilpModel` holds variables with bounds and objective costs,
linear constraints, and indicator constraints of the form
``guard = v -> sum(a * x) <= r``. The objective is always minimized.
Indicators stay first-class; :func:`to_big_m` lowers them when an
indicator-free model is needed.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

FEAS_TOL = 1e-6
SENSES = ("<=", "=", ">=")


class ModelError(ValueError):
    pass


@dataclass
class Variable:
    id: int
    name: str
    kind: str = "continuous"  # or "binary"
    lb: float = 0.0
    ub: float = math.inf
    cost: float = 0.0

    @property
    def is_binary(self) -> bool:
        return self.kind == "binary"


@dataclass
class LinearConstraint:
    terms: tuple  # ((var id, coefficient), ...)
    sense: str
    rhs: float
    name: str = ""

    def lhs(self, values) -> float:
        return math.fsum(a * values[i] for i, a in self.terms)

    def violation(self, values) -> float:
        """Amount by which ``values`` violates the constraint (0 if satisfied)."""
        lhs = self.lhs(values)
        if self.sense == "<=":
            return max(0.0, lhs - self.rhs)
        if self.sense == ">=":
            return max(0.0, self.rhs - lhs)
        return abs(lhs - self.rhs)


@dataclass
class IndicatorConstraint:
    guard: int
    active_when: int
    implied: LinearConstraint
    name: str = ""


def _merge_terms(terms: Iterable) -> tuple:
    merged: dict[int, float] = {}
    for i, a in terms:
        merged[int(i)] = merged.get(int(i), 0.0) + float(a)
    return tuple((i, a) for i, a in merged.items() if a != 0.0)


@dataclass
class MilpModel:
    variables: list = field(default_factory=list)
    constraints: list = field(default_factory=list)
    indicators: list = field(default_factory=list)
    name: str = "model"

    def __post_init__(self):
        self._by_name = {v.name: v.id for v in self.variables}

    # construction -------------------------------------------------------
    def add_var(self, name: str, kind: str = "continuous", lb: float = 0.0,
                ub: float = math.inf, cost: float = 0.0) -> int:
        if kind not in ("continuous", "binary"):
            raise ModelError(f"unknown variable kind {kind!r}")
        if name in self._by_name:
            raise ModelError(f"duplicate variable name {name!r}")
        if kind == "binary":
            lb, ub = max(0.0, float(lb)), min(1.0, float(ub))
        lb, ub = float(lb), float(ub)
        if math.isnan(lb) or math.isnan(ub) or lb > ub:
            raise ModelError(f"variable {name}: lb {lb} > ub {ub}")
        var = Variable(len(self.variables), name, kind, lb, ub, float(cost))
        self.variables.append(var)
        self._by_name[name] = var.id
        return var.id

    def add_constraint(self, terms, sense: str, rhs: float, name: str = "") -> LinearConstraint:
        if sense not in SENSES:
            raise ModelError(f"unknown sense {sense!r}")
        terms = _merge_terms(terms)
        self._check_ids(i for i, _ in terms)
        con = LinearConstraint(terms, sense, float(rhs), name or f"c{len(self.constraints)}")
        self.constraints.append(con)
        return con

    def add_indicator(self, guard: int, active_when: int, terms, rhs: float,
                      name: str = "", sense: str = "<=") -> IndicatorConstraint:
        if not self.variables[guard].is_binary:
            raise ModelError(f"indicator guard {self.variables[guard].name} is not binary")
        if active_when not in (0, 1):
            raise ModelError("active_when must be 0 or 1")
        terms = _merge_terms(terms)
        self._check_ids(i for i, _ in terms)
        name = name or f"ind{len(self.indicators)}"
        ind = IndicatorConstraint(guard, active_when, LinearConstraint(terms, sense, float(rhs), name), name)
        self.indicators.append(ind)
        return ind

    def _check_ids(self, ids):
        n = len(self.variables)
        for i in ids:
            if not 0 <= i < n:
                raise ModelError(f"constraint references unknown variable id {i}")

    # queries --------------------------------------------------------------
    def var(self, name: str) -> Variable:
        return self.variables[self._by_name[name]]

    def var_id(self, name: str) -> int:
        return self._by_name[name]

    @property
    def n_vars(self) -> int:
        return len(self.variables)

    def binaries(self) -> list:
        return [v.id for v in self.variables if v.is_binary]

    def copy(self) -> "MilpModel":
        return copy.deepcopy(self)

    def set_bounds(self, vid: int, lb: float, ub: float) -> None:
        if lb > ub:
            raise ModelError(f"variable {self.variables[vid].name}: lb {lb} > ub {ub}")
        self.variables[vid].lb = float(lb)
        self.variables[vid].ub = float(ub)

    def objective(self, values) -> float:
        return math.fsum(v.cost * values[v.id] for v in self.variables if v.cost != 0.0)

    def stats(self) -> dict:
        return {
            "variables": self.n_vars,
            "binaries": len(self.binaries()),
            "constraints": len(self.constraints),
            "equalities": sum(c.sense == "=" for c in self.constraints),
            "indicators": len(self.indicators),
        }


# --------------------------------------------------------------------------
# big-M lowering
# --------------------------------------------------------------------------

def implied_max(model: MilpModel, con: LinearConstraint) -> float:
    """Largest value the left side of ``con`` can take under variable bounds."""
    total = 0.0
    for i, a in con.terms:
        v = model.variables[i]
        bound = v.ub if a > 0 else v.lb
        if math.isinf(bound):
            raise ModelError(
                f"indicator {con.name}: variable {v.name} lacks a finite "
                f"{'upper' if a > 0 else 'lower'} bound"
            )
        total += a * bound
    return total


def implied_min(model: MilpModel, con: LinearConstraint) -> float:
    neg = LinearConstraint(tuple((i, -a) for i, a in con.terms), "<=", -con.rhs, con.name)
    return -implied_max(model, neg)


def big_m_rows(model: MilpModel, ind: IndicatorConstraint) -> list:
    """Big-M rows replacing one indicator; an empty list when it is vacuous.

    ``z = 1 -> a.x <= r`` becomes ``a.x + M z <= r + M`` and
    ``z = 0 -> a.x <= r`` becomes ``a.x - M z <= r`` with
    ``M = max(a.x) - r`` over the variable box. ``>=`` and ``=``
    implications are split into ``<=`` halves first.
    """
    con = ind.implied
    halves = []
    if con.sense in ("<=", "="):
        halves.append((con.terms, con.rhs))
    if con.sense in (">=", "="):
        halves.append((tuple((i, -a) for i, a in con.terms), -con.rhs))
    rows = []
    for terms, rhs in halves:
        lc = LinearConstraint(terms, "<=", rhs, con.name)
        big_m = implied_max(model, lc) - rhs
        if big_m <= 0.0:
            continue
        if ind.active_when == 1:
            rows.append((terms + ((ind.guard, big_m),), "<=", rhs + big_m))
        else:
            rows.append((terms + ((ind.guard, -big_m),), "<=", rhs))
    return rows


def to_big_m(model: MilpModel) -> MilpModel:
    """Return an indicator-free copy with each indicator replaced by big-M rows."""
    out = MilpModel(copy.deepcopy(model.variables), copy.deepcopy(model.constraints), [], model.name)
    for ind in model.indicators:
        for k, (terms, sense, rhs) in enumerate(big_m_rows(model, ind)):
            out.add_constraint(terms, sense, rhs, ind.name if k == 0 else f"{ind.name}_{k}")
    return out


# --------------------------------------------------------------------------
# evaluation
# --------------------------------------------------------------------------

@dataclass
class Evaluation:
    feasible: bool
    objective: float
    violation: str | None = None


def _as_values(model: MilpModel, assignment) -> Sequence[float]:
    if isinstance(assignment, Mapping):
        missing = [v.name for v in model.variables if v.id not in assignment]
        if missing:
            raise ModelError(f"assignment missing variable {missing[0]}")
        return [float(assignment[v.id]) for v in model.variables]
    values = [float(a) for a in assignment]
    if len(values) < model.n_vars:
        raise ModelError(f"assignment missing variable {model.variables[len(values)].name}")
    return values


def evaluate(model: MilpModel, assignment, tol: float = FEAS_TOL) -> Evaluation:
    """Check bounds, integrality, linear rows and indicators; report the first violation."""
    x = _as_values(model, assignment)
    obj = model.objective(x)
    for v in model.variables:
        val = x[v.id]
        if val < v.lb - tol or val > v.ub + tol:
            return Evaluation(False, obj, f"bound of {v.name}: {val} not in [{v.lb}, {v.ub}]")
        if v.is_binary and min(abs(val), abs(val - 1.0)) > tol:
            return Evaluation(False, obj, f"integrality of {v.name}: {val}")
    for con in model.constraints:
        amount = con.violation(x)
        if amount > tol:
            return Evaluation(False, obj, f"constraint {con.name} violated by {amount:.3g}")
    for ind in model.indicators:
        if abs(x[ind.guard] - ind.active_when) <= tol:
            amount = ind.implied.violation(x)
            if amount > tol:
                return Evaluation(False, obj, f"indicator {ind.name} violated by {amount:.3g}")
    return Evaluation(True, obj, None)
