"""Adversarial examples as a MILP overlay on an encoded network.

Starting from a model whose input is a box, the overlay adds one
perturbation variable per pixel (``|x~ - x| <= eps <= eps_max``), margin
rows making the target output at least ``margin`` times every other
output, puts a negative cost on the target output and adds ``sum eps``
to the objective. Solutions are re-checked with the forward pass.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .bnb import BnbConfig, SolveResult, branch_and_bound
from .bounds import interval_propagate, lp_tighten
from .encode_common import InputMode, VarMap
from .milp import MilpModel, ModelError
from .network import NetworkSpec, classify, forward

log = logging.getLogger(__name__)

# absolute tolerance on pixel caps and the [0, 1] box
PIXEL_TOL = 1e-9
# tolerance on solver activations against the forward trace
TRACE_TOL = 1e-6


class LabelMismatch(ValueError):
    pass


@dataclass
class AdversarialConfig:
    margin: float = 1.2
    eps_max: float = 0.2
    target_rule: str = "plus_five_mod_ten"  # or "explicit:<label>"
    target_cost: float = -1.0
    other_cost: float = 0.0
    activation_penalty: float = 0.0  # gamma on every binary
    hidden_cost: float | None = 0.0  # cost on hidden unit outputs; None keeps the encoder's
    # the margin rows are written as target - margin * other >= margin_slack so
    # the forward pass clears the margin despite solver tolerances
    margin_slack: float = 1e-5
    bounds: str = "lp_relaxation"  # interval | lp_relaxation | exact_milp
    node_limit: int = 100_000
    time_limit: float = math.inf

    def __post_init__(self):
        if not self.margin > 1.0:
            raise ValueError("margin factor must exceed 1")
        if not 0.0 <= self.eps_max <= 1.0:
            raise ValueError("eps_max must lie in [0, 1]")
        if not self.target_cost < 0.0:
            raise ValueError("target cost must be negative")
        if self.other_cost < 0.0:
            raise ValueError("non-target output cost must be non-negative")
        if self.margin_slack < 0.0:
            raise ValueError("margin slack must be non-negative")
        if self.bounds not in ("interval", "lp_relaxation", "exact_milp"):
            raise ValueError(f"unknown bounds mode {self.bounds!r}")
        parse_rule(self.target_rule)


def parse_rule(rule: str):
    if rule == "plus_five_mod_ten":
        return rule, None
    if rule.startswith("explicit:"):
        try:
            return "explicit", int(rule.split(":", 1)[1])
        except ValueError:
            pass
    raise ValueError(f"unknown target rule {rule!r}")


def target_label(d: int, rule: str = "plus_five_mod_ten", class_count: int = 10) -> int:
    kind, explicit = parse_rule(rule)
    if kind == "plus_five_mod_ten":
        if not 0 <= d <= 9:
            raise ValueError(f"label {d} outside 0..9")
        target = (d + 5) % 10
    else:
        target = explicit
        if target == d:
            raise ValueError(f"explicit target {target} equals the original label")
    if not 0 <= target < class_count:
        raise ValueError(f"target {target} outside the {class_count} classes")
    return target


def build_adversarial(model: MilpModel, varmap: VarMap, image, label: int,
                      config: AdversarialConfig | None = None, target: int | None = None) -> MilpModel:
    """Copy of ``model`` with the perturbation, margin and objective overlay."""
    config = config or AdversarialConfig()
    x = np.asarray(image, dtype=np.float64)
    if x.shape != varmap.inputs.shape:
        raise ModelError(f"image extents {x.shape} != model input extents {varmap.inputs.shape}")
    out_ids = varmap.output.reshape(-1)
    n_cls = out_ids.size
    if target is None:
        target = target_label(label, config.target_rule, n_cls)
    if not 0 <= target < n_cls:
        raise ModelError(f"target {target} outside the {n_cls} outputs")

    m = model.copy()
    for idx in np.ndindex(x.shape):
        var = m.variables[int(varmap.inputs[idx])]
        if var.lb == var.ub and config.eps_max > 0.0:
            raise ModelError("the model's input is fixed; encode with a box")
        if not var.lb - PIXEL_TOL <= x[idx] <= var.ub + PIXEL_TOL:
            raise ModelError(f"pixel {idx} = {x[idx]} lies outside the input box")

    if config.hidden_cost is not None:
        for roles in varmap.layers[:-1]:
            for role in ("x", "pre"):
                for vid in roles.get(role, np.empty(0, dtype=np.int64)).reshape(-1):
                    m.variables[int(vid)].cost = config.hidden_cost
    for vid in m.binaries():
        m.variables[vid].cost = config.activation_penalty
    for j, vid in enumerate(out_ids):
        m.variables[int(vid)].cost = config.target_cost if j == target else config.other_cost

    for flat, idx in enumerate(np.ndindex(x.shape)):
        xv = int(varmap.inputs[idx])
        e = m.add_var(f"eps_{flat}", "continuous", 0.0, config.eps_max, 1.0)
        m.add_constraint([(xv, 1.0), (e, -1.0)], "<=", float(x[idx]), f"dlo_{flat}")
        m.add_constraint([(xv, 1.0), (e, 1.0)], ">=", float(x[idx]), f"dhi_{flat}")
    t = int(out_ids[target])
    for j, vid in enumerate(out_ids):
        if j != target:
            m.add_constraint([(t, 1.0), (int(vid), -config.margin)], ">=", config.margin_slack, f"margin_{j}")
    return m


@dataclass
class AdversarialResult:
    status: str
    original_label: int
    target: int
    image: np.ndarray | None = None
    eps: np.ndarray | None = None
    achieved_label: int | None = None
    achieved_margin: float = math.nan
    objective: float = math.nan
    nodes: int = 0
    unit_values: list = field(default_factory=list, repr=False)
    pre_values: list = field(default_factory=list, repr=False)

    @property
    def eps_sum(self) -> float:
        return math.nan if self.eps is None else float(self.eps.sum())

    @property
    def max_change(self) -> float:
        return math.nan if self.eps is None else float(self.eps.max(initial=0.0))


def achieved_margin(scores: np.ndarray, target: int) -> float:
    others = np.delete(scores, target)
    top = float(others.max()) if others.size else -math.inf
    if top <= 0.0:
        return math.inf if scores[target] > 0 else math.nan
    return float(scores[target]) / top


def extract(net: NetworkSpec, model: MilpModel, varmap: VarMap, image, label: int, target: int,
            res: SolveResult) -> AdversarialResult:
    out = AdversarialResult(res.status, label, target, objective=res.objective, nodes=res.nodes)
    if res.assignment is None:
        return out
    a = res.assignment
    adv = varmap.values(a).reshape(np.shape(image))
    out.image = adv
    out.eps = np.abs(adv - np.asarray(image, dtype=np.float64))
    out.unit_values = [varmap.values(a, k) for k in range(len(varmap.layers))]
    out.pre_values = [varmap.values(a, k, "pre") if "pre" in roles else None
                      for k, roles in enumerate(varmap.layers)]
    lab, scores = classify(net, adv)
    out.achieved_label = lab
    out.achieved_margin = achieved_margin(scores, target)
    return out


@dataclass
class Verdict:
    passed: bool
    reasons: list
    checks: dict


def verify_adversarial(net: NetworkSpec, result: AdversarialResult, original, label: int,
                       config: AdversarialConfig | None = None) -> Verdict:
    """Forward-pass check of a solver result.

    Four checks: the label is the target, the target output beats every
    other output by the margin factor (and is positive), every pixel stays
    within its cap and the box, and the solver's activations match the trace.
    """
    config = config or AdversarialConfig()
    checks, reasons = {}, []
    if result.status != "optimal" or result.image is None:
        return Verdict(False, [f"solver status {result.status}"], {"status": False})
    x0 = np.asarray(original, dtype=np.float64)
    adv = np.asarray(result.image, dtype=np.float64)
    trace = forward(net, adv)
    scores = trace.output
    t = result.target

    checks["label"] = int(np.argmax(scores)) == t and t != label
    if not checks["label"]:
        reasons.append(f"label: forward pass gives {int(np.argmax(scores))}, target {t}")

    others = np.delete(scores, t)
    checks["margin"] = bool(scores[t] > 0.0 and np.all(scores[t] >= config.margin * others))
    if not checks["margin"]:
        reasons.append(f"margin: target score {float(scores[t])!r} vs margin x others {(config.margin * others).tolist()}")

    diff = np.abs(adv - x0)
    caps = diff <= config.eps_max + PIXEL_TOL
    if result.eps is not None:
        caps &= diff <= np.asarray(result.eps) + PIXEL_TOL
    box = (adv >= -PIXEL_TOL) & (adv <= 1.0 + PIXEL_TOL)
    checks["caps"] = bool(np.all(caps) and np.all(box))
    if not checks["caps"]:
        bad = np.argwhere(~(caps & box))[0]
        reasons.append(f"caps: pixel {tuple(int(i) for i in bad)} changed by {float(diff[tuple(bad)])!r}")

    worst = 0.0
    for k, vals in enumerate(result.unit_values):
        worst = max(worst, float(np.max(np.abs(vals - trace.post[k].reshape(vals.shape)), initial=0.0)))
        pre = result.pre_values[k] if k < len(result.pre_values) else None
        if pre is not None:
            worst = max(worst, float(np.max(np.abs(pre - trace.pre[k].reshape(pre.shape)), initial=0.0)))
    checks["trace"] = worst <= TRACE_TOL
    if not checks["trace"]:
        reasons.append(f"trace: solver activations differ from the forward pass by {float(worst)!r}")
    return Verdict(all(checks.values()), reasons, checks)


def _box(image, eps_max):
    x = np.asarray(image, dtype=np.float64)
    return np.clip(x - eps_max, 0.0, 1.0), np.clip(x + eps_max, 0.0, 1.0)


def encode_for_attack(net: NetworkSpec, image, config: AdversarialConfig, threads: int = 1):
    """Bounds over the reachable box, then the network encoding (before the overlay)."""
    from .encode_cnn import CnnEncodeConfig, encode_cnn
    from .encode_dnn import DnnEncodeConfig, encode_dnn

    lo, hi = _box(image, config.eps_max)
    if config.bounds == "interval":
        bounds = interval_propagate(net, lo, hi)
    else:
        bounds = lp_tighten(net, lo, hi, config.bounds, threads=threads)
    mode = InputMode.boxed(lo, hi)
    if net.is_dense_only():
        return encode_dnn(net, bounds, DnnEncodeConfig(input_mode=mode, input_cost=0.0))
    return encode_cnn(net, bounds, CnnEncodeConfig(include_biases=True, input_mode=mode, input_cost=0.0))


def generate_adversarial(net: NetworkSpec, image, label: int, config: AdversarialConfig | None = None,
                         threads: int = 1) -> AdversarialResult:
    config = config or AdversarialConfig()
    got, _ = classify(net, image)
    if got != label:
        raise LabelMismatch(f"the network classifies the image as {got}, not {label}")
    target = target_label(label, config.target_rule, net.class_count)
    model, varmap = encode_for_attack(net, image, config, threads)
    adv_model = build_adversarial(model, varmap, image, label, config, target)
    res = branch_and_bound(adv_model, BnbConfig(node_limit=config.node_limit, time_limit=config.time_limit))
    log.info("adversarial solve: %s after %d nodes", res.status, res.nodes)
    return extract(net, adv_model, varmap, image, label, target, res)


def report(result: AdversarialResult, verdict: Verdict | None = None) -> dict:
    def num(v):
        return None if v is None or (isinstance(v, float) and not math.isfinite(v)) else v

    doc = {
        "original_label": result.original_label,
        "target": result.target,
        "status": result.status,
        "achieved_label": result.achieved_label,
        "achieved_margin": num(result.achieved_margin),
        "eps_sum": num(result.eps_sum),
        "max_pixel_change": num(result.max_change),
        "objective": num(result.objective),
        "nodes": result.nodes,
    }
    if result.status == "infeasible":
        doc["certificate"] = "no input within the pixel caps reaches the target at this margin"
    if verdict is not None:
        doc["verified"] = verdict.passed
        doc["checks"] = verdict.checks
        doc["reasons"] = verdict.reasons
    return doc


def format_report(doc: dict) -> str:
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"
