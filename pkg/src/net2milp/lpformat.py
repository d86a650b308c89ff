"""Reader and writer for the CPLEX-style LP text format.

Only the subset the package emits is supported: a minimization objective,
linear rows, indicator rows (``z = 1 -> a x <= r``), explicit bounds for
every variable, and a Binaries section. Numbers are written with 17
significant digits so that a write/read cycle is exact.
"""
from __future__ import annotations

import math
import re

from .milp import LinearConstraint, MilpModel, ModelError


def _num(x: float) -> str:
    if math.isinf(x):
        return "+inf" if x > 0 else "-inf"
    text = "%.17g" % x
    return "0" if text == "-0" else text


def _expr(model: MilpModel, terms) -> str:
    parts = []
    for k, (i, a) in enumerate(terms):
        name = model.variables[i].name
        sign = "-" if a < 0 else "+"
        mag = _num(abs(a))
        coef = "" if mag == "1" else mag + " "
        if k == 0:
            parts.append(("- " if a < 0 else "") + coef + name)
        else:
            parts.append(f"{sign} {coef}{name}")
    return " ".join(parts) if parts else "0"


def write_lp(model: MilpModel) -> str:
    lines = [f"\\ {model.name}", "Minimize"]
    obj_terms = [(v.id, v.cost) for v in model.variables if v.cost != 0.0]
    lines.append(" obj: " + _expr(model, obj_terms) if obj_terms else " obj:")
    lines.append("Subject To")
    for con in model.constraints:
        lines.append(f" {con.name}: {_expr(model, con.terms)} {con.sense} {_num(con.rhs)}")
    for ind in model.indicators:
        guard = model.variables[ind.guard].name
        imp = ind.implied
        lines.append(
            f" {ind.name}: {guard} = {ind.active_when} -> "
            f"{_expr(model, imp.terms)} {imp.sense} {_num(imp.rhs)}"
        )
    lines.append("Bounds")
    for v in model.variables:
        if math.isinf(v.lb) and math.isinf(v.ub) and v.lb < 0 < v.ub:
            lines.append(f" {v.name} free")
        elif v.lb == v.ub:
            lines.append(f" {v.name} = {_num(v.lb)}")
        else:
            lines.append(f" {_num(v.lb)} <= {v.name} <= {_num(v.ub)}")
    binaries = [v.name for v in model.variables if v.is_binary]
    lines.append("Binaries")
    lines.extend(f" {name}" for name in binaries)
    lines.append("End")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# reader
# --------------------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>[+-]?inf(?:inity)?\b|\d+\.?\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<op><=|>=|=<|=>|->|[<>=:+\-])"
    r"|(?P<name>[A-Za-z_!\"#$%&()/,;?@`'{}|~][A-Za-z0-9_!\"#$%&()/,.;?@`'{}|~\[\]]*))",
    re.IGNORECASE,
)

_SECTIONS = {
    "minimize": "obj", "minimise": "obj", "min": "obj",
    "subject to": "st", "such that": "st", "st": "st", "s.t.": "st",
    "bounds": "bounds", "bound": "bounds",
    "binaries": "bin", "binary": "bin", "bin": "bin",
    "end": "end",
}


def _tokenize(text: str) -> list:
    tokens = []
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise ModelError(f"cannot parse LP text near {text[pos:pos + 20]!r}")
        pos = m.end()
        if m.group("num") is not None:
            tokens.append(("num", float(m.group("num").lower().replace("infinity", "inf"))))
        elif m.group("op") is not None:
            op = {"=<": "<=", "=>": ">=", "<": "<=", ">": ">="}.get(m.group("op"), m.group("op"))
            tokens.append(("op", op))
        else:
            tokens.append(("name", m.group("name")))
    return tokens


class _Parser:
    def __init__(self, tokens):
        self.toks = tokens
        self.pos = 0

    def peek(self, k=0):
        j = self.pos + k
        return self.toks[j] if j < len(self.toks) else (None, None)

    def take(self):
        tok = self.peek()
        self.pos += 1
        return tok

    def done(self):
        return self.pos >= len(self.toks)

    def label(self):
        if self.peek()[0] == "name" and self.peek(1) == ("op", ":"):
            name = self.take()[1]
            self.take()
            return name
        return ""

    def expr(self):
        """Linear expression up to a sense operator or a new label."""
        terms = []
        while not self.done():
            kind, val = self.peek()
            if kind == "op" and val in ("<=", ">=", "="):
                break
            if kind == "name" and self.peek(1) == ("op", ":"):
                break
            sign = 1.0
            while self.peek()[0] == "op" and self.peek()[1] in "+-":
                if self.take()[1] == "-":
                    sign = -sign
            coef = 1.0
            if self.peek()[0] == "num":
                coef = self.take()[1]
            kind, val = self.peek()
            if kind == "name":
                self.take()
                terms.append((val, sign * coef))
            elif coef != 1.0 or sign != 1.0:
                if coef != 0.0:
                    raise ModelError("constant terms are not supported in LP expressions")
            else:
                break
        return terms


def _split_sections(text: str) -> list:
    sections = []
    current = None
    buf: list = []
    for raw in text.splitlines():
        line = raw.split("\\", 1)[0].strip()
        if not line:
            continue
        key = _SECTIONS.get(line.lower())
        if key is None:
            low = line.lower()
            for word, k in _SECTIONS.items():
                if low.startswith(word + " ") and k in ("obj",):
                    key, line = k, line[len(word):]
                    break
            else:
                buf.append(line)
                continue
            if current is not None:
                sections.append((current, " ".join(buf)))
            current, buf = key, [line]
            continue
        if current is not None:
            sections.append((current, " ".join(buf)))
        current, buf = key, []
    if current is not None:
        sections.append((current, " ".join(buf)))
    return sections


def read_lp(text: str) -> MilpModel:
    """Parse LP text produced by :func:`write_lp` (and close relatives)."""
    sections = _split_sections(text)
    name = "model"
    first = text.lstrip().splitlines()[0] if text.strip() else ""
    if first.startswith("\\"):
        name = first[1:].strip() or name

    objective: list = []
    rows: list = []
    bounds: dict = {}
    order: list = []
    binaries: list = []

    def note(var):
        if var not in bounds and var not in order:
            order.append(var)

    for key, body in sections:
        p = _Parser(_tokenize(body))
        if key == "obj":
            p.label()
            objective = p.expr()
        elif key == "st":
            while not p.done():
                label = p.label()
                if (p.peek()[0] == "name" and p.peek(1) == ("op", "=")
                        and p.peek(2)[0] == "num" and p.peek(3) == ("op", "->")):
                    guard = p.take()[1]
                    p.take()
                    active = int(p.take()[1])
                    p.take()
                    terms = p.expr()
                    sense = p.take()[1]
                    rhs = _signed_num(p)
                    rows.append(("ind", label, terms, sense, rhs, guard, active))
                else:
                    terms = p.expr()
                    sense = p.take()[1]
                    rhs = _signed_num(p)
                    rows.append(("lin", label, terms, sense, rhs, None, None))
        elif key == "bounds":
            _parse_bounds(p, bounds, order)
        elif key == "bin":
            while not p.done():
                kind, val = p.take()
                if kind != "name":
                    raise ModelError(f"unexpected token {val!r} in Binaries")
                binaries.append(val)

    for terms in [objective] + [r[2] for r in rows]:
        for var, _ in terms:
            note(var)
    for row in rows:
        if row[0] == "ind":
            note(row[5])
    for var in binaries:
        note(var)

    model = MilpModel(name=name)
    bin_set = set(binaries)
    for var in order:
        lb, ub = bounds.get(var, (0.0, 1.0 if var in bin_set else math.inf))
        model.add_var(var, "binary" if var in bin_set else "continuous", lb, ub)
    for var, coef in objective:
        model.variables[model.var_id(var)].cost += coef
    for kind, label, terms, sense, rhs, guard, active in rows:
        ids = [(model.var_id(v), a) for v, a in terms]
        if kind == "lin":
            model.add_constraint(ids, sense, rhs, label)
        else:
            model.add_indicator(model.var_id(guard), active, ids, rhs, label, sense)
    return model


def _signed_num(p: _Parser) -> float:
    sign = 1.0
    while p.peek()[0] == "op" and p.peek()[1] in "+-":
        if p.take()[1] == "-":
            sign = -sign
    kind, val = p.take()
    if kind != "num":
        raise ModelError(f"expected a number, got {val!r}")
    return sign * val


def _parse_bounds(p: _Parser, bounds: dict, order: list) -> None:
    def get(var):
        if var not in bounds:
            bounds[var] = [0.0, math.inf]
            order.append(var)
        return bounds[var]

    while not p.done():
        kind, val = p.peek()
        if kind == "name":
            var = p.take()[1]
            b = get(var)
            if p.peek() == ("name", "free") or (p.peek()[0] == "name" and p.peek()[1].lower() == "free"):
                p.take()
                b[0], b[1] = -math.inf, math.inf
                continue
            op = p.take()[1]
            num = _signed_num(p)
            if op == "<=":
                b[1] = num
            elif op == ">=":
                b[0] = num
            else:
                b[0] = b[1] = num
        else:
            num = _signed_num(p)
            op = p.take()[1]
            var = p.take()[1]
            b = get(var)
            if op == "<=":
                b[0] = num
            elif op == ">=":
                b[1] = num
            else:
                b[0] = b[1] = num
            if p.peek() in (("op", "<="), ("op", ">=")):
                op2 = p.take()[1]
                num2 = _signed_num(p)
                if op2 == "<=":
                    b[1] = num2
                else:
                    b[0] = num2
    for var, b in bounds.items():
        bounds[var] = (b[0], b[1])


def structurally_equal(a: MilpModel, b: MilpModel) -> bool:
    """Same variables (name, kind, bounds, cost), rows and indicators, in order."""
    if [(v.name, v.kind, v.lb, v.ub, v.cost) for v in a.variables] != \
            [(v.name, v.kind, v.lb, v.ub, v.cost) for v in b.variables]:
        return False

    def rows(m):
        return [(c.name, c.terms, c.sense, c.rhs) for c in m.constraints]

    def inds(m):
        return [(i.name, i.guard, i.active_when, i.implied.terms, i.implied.sense, i.implied.rhs)
                for i in m.indicators]

    return rows(a) == rows(b) and inds(a) == inds(b)


__all__ = ["LinearConstraint", "read_lp", "structurally_equal", "write_lp"]
