"""Per-unit activation bounds: interval propagation and LP/MILP tightening."""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .network import Conv, Dense, Flatten, MaxPool, NetworkSpec, _maps
from .tensor import ConvParams, conv2d, maxpool2d

log = logging.getLogger(__name__)

# Tightened bounds come from solver optima accurate to the simplex
# feasibility tolerance; widen them by this much so they stay sound.
SAFETY = 1e-7


@dataclass
class LayerBounds:
    """Bounds for one layer.

    ``lo``/``hi`` bound the layer output. For dense and conv layers
    ``pre_lo``/``pre_hi`` bound the affine value before the activation;
    they are ``None`` for pooling and flatten.
    """

    kind: str
    lo: np.ndarray
    hi: np.ndarray
    pre_lo: np.ndarray | None = None
    pre_hi: np.ndarray | None = None
    activation: str | None = None

    @property
    def x_ub(self) -> np.ndarray:
        if self.pre_hi is None or self.activation != "relu":
            return self.hi
        return np.maximum(self.pre_hi, 0.0)

    @property
    def s_ub(self) -> np.ndarray:
        return np.maximum(-self.pre_lo, 0.0)


@dataclass
class BoundSet:
    input_lo: np.ndarray
    input_hi: np.ndarray
    layers: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    def copy(self) -> "BoundSet":
        def cp(a):
            return None if a is None else a.copy()

        return BoundSet(self.input_lo.copy(), self.input_hi.copy(),
                        [LayerBounds(b.kind, b.lo.copy(), b.hi.copy(), cp(b.pre_lo), cp(b.pre_hi), b.activation)
                         for b in self.layers], list(self.warnings))

    def affine_layers(self) -> list:
        return [k for k, b in enumerate(self.layers) if b.pre_lo is not None]

    # serialization -----------------------------------------------------
    def to_json(self) -> str:
        def arr(a):
            return None if a is None else {"shape": list(a.shape), "values": a.reshape(-1).tolist()}

        doc = {
            "format": "net2milp-bounds",
            "version": 1,
            "input": {"lb": arr(self.input_lo), "ub": arr(self.input_hi)},
            "layers": [
                {"index": k, "kind": b.kind, "activation": b.activation,
                 "lb": arr(b.lo), "ub": arr(b.hi), "pre_lb": arr(b.pre_lo), "pre_ub": arr(b.pre_hi)}
                for k, b in enumerate(self.layers)
            ],
        }
        return json.dumps(doc, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "BoundSet":
        doc = json.loads(text)

        def arr(d):
            return None if d is None else np.array(d["values"], dtype=np.float64).reshape(d["shape"])

        layers = [LayerBounds(d["kind"], arr(d["lb"]), arr(d["ub"]), arr(d["pre_lb"]), arr(d["pre_ub"]),
                              d.get("activation")) for d in doc["layers"]]
        return cls(arr(doc["input"]["lb"]), arr(doc["input"]["ub"]), layers)


def _box(net: NetworkSpec, lo, hi):
    lo = np.broadcast_to(np.asarray(lo, dtype=np.float64), net.input_shape).copy()
    hi = np.broadcast_to(np.asarray(hi, dtype=np.float64), net.input_shape).copy()
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise ValueError("input box must be finite")
    if np.any(lo > hi):
        raise ValueError("input box has lb > ub")
    return lo, hi


def _layer_interval(layer, lo, hi) -> LayerBounds:
    if isinstance(layer, Dense):
        wp, wn = np.clip(layer.weights, 0, None), np.clip(layer.weights, None, 0)
        pre_lo = wp @ lo + wn @ hi + layer.bias
        pre_hi = wp @ hi + wn @ lo + layer.bias
        return _activate("dense", pre_lo, pre_hi, layer.activation)
    if isinstance(layer, Conv):
        lo_m, hi_m = lo.reshape(_maps(lo.shape)), hi.reshape(_maps(hi.shape))
        p: ConvParams = layer.params
        plo, phi = [], []
        for gamma in range(layer.n_kernels):
            kp, kn = np.clip(layer.kernels[gamma], 0, None), np.clip(layer.kernels[gamma], None, 0)
            for beta in range(lo_m.shape[0]):
                # padding contributes exact zeros to both bounds
                plo.append(conv2d(lo_m[beta], kp, p) + conv2d(hi_m[beta], kn, p) + layer.bias[gamma])
                phi.append(conv2d(hi_m[beta], kp, p) + conv2d(lo_m[beta], kn, p) + layer.bias[gamma])
        return _activate("conv", np.stack(plo), np.stack(phi), layer.activation)
    if isinstance(layer, MaxPool):
        lo_m, hi_m = lo.reshape(_maps(lo.shape)), hi.reshape(_maps(hi.shape))
        f, s = layer.pool_size, layer.stride
        return LayerBounds("maxpool", np.stack([maxpool2d(m, f, s) for m in lo_m]),
                           np.stack([maxpool2d(m, f, s) for m in hi_m]))
    if isinstance(layer, Flatten):
        return LayerBounds("flatten", lo.reshape(-1).copy(), hi.reshape(-1).copy())
    raise TypeError(type(layer))


def _activate(kind, pre_lo, pre_hi, activation) -> LayerBounds:
    if activation == "relu":
        return LayerBounds(kind, np.maximum(pre_lo, 0.0), np.maximum(pre_hi, 0.0), pre_lo, pre_hi, activation)
    return LayerBounds(kind, pre_lo.copy(), pre_hi.copy(), pre_lo, pre_hi, activation)


def interval_propagate(net: NetworkSpec, lo, hi) -> BoundSet:
    """Interval arithmetic through every layer of ``net`` over the box [lo, hi]."""
    lo, hi = _box(net, lo, hi)
    out = BoundSet(lo, hi)
    for layer in net.layers:
        b = _layer_interval(layer, lo, hi)
        out.layers.append(b)
        lo, hi = b.lo, b.hi
    return out


def _repropagate(net: NetworkSpec, bounds: BoundSet, start: int) -> None:
    """Recompute layers from ``start`` on and intersect with what is there."""
    for k in range(start, len(net.layers)):
        prev = bounds.layers[k - 1] if k else None
        lo = bounds.input_lo if prev is None else prev.lo
        hi = bounds.input_hi if prev is None else prev.hi
        fresh = _layer_interval(net.layers[k], lo, hi)
        old = bounds.layers[k]
        if fresh.pre_lo is not None:
            pre_lo = np.maximum(old.pre_lo, fresh.pre_lo)
            pre_hi = np.minimum(old.pre_hi, fresh.pre_hi)
            bounds.layers[k] = _activate(old.kind, pre_lo, pre_hi, old.activation)
        else:
            bounds.layers[k] = LayerBounds(old.kind, np.maximum(old.lo, fresh.lo), np.minimum(old.hi, fresh.hi))


def _exact_by_interval(net: NetworkSpec, k: int) -> bool:
    """A first affine layer sees the raw box; interval bounds are already optimal there."""
    return all(isinstance(layer, Flatten) for layer in net.layers[:k])


def lp_tighten(net: NetworkSpec, lo, hi, mode: str = "lp_relaxation",
               time_budget: float = math.inf, threads: int = 1,
               seed_bounds: BoundSet | None = None) -> BoundSet:
    """Tighten pre-activation bounds layer by layer.

    For every unit of a dense or conv layer, the network below that layer is
    encoded (with the bounds obtained so far) and the unit's pre-activation
    is minimized and maximized, either over the LP relaxation or exactly by
    branch-and-bound (whose best bound is valid even at a limit). A new
    bound only replaces the old one when it is tighter.
    """
    from .bnb import BnbConfig, branch_and_bound, solve_lp_relaxation
    from .encode_common import encode_prefix

    if mode not in ("lp_relaxation", "exact_milp"):
        raise ValueError(f"unknown tightening mode {mode!r}")
    lo, hi = _box(net, lo, hi)
    bounds = seed_bounds.copy() if seed_bounds is not None else interval_propagate(net, lo, hi)

    def solve(model, cost):
        if mode == "lp_relaxation":
            res = solve_lp_relaxation(model, cost)
            return res.status, res.objective
        res = branch_and_bound(model, BnbConfig(time_limit=time_budget), cost)
        if res.status in ("optimal", "node_limit", "time_limit") and math.isfinite(res.best_bound):
            return "optimal", res.best_bound
        return res.status, math.nan

    for k, layer in enumerate(net.layers):
        if not isinstance(layer, (Dense, Conv)) or _exact_by_interval(net, k):
            continue
        model, exprs = encode_prefix(net, k, bounds)
        cur = bounds.layers[k]
        flat_lo, flat_hi = cur.pre_lo.reshape(-1).copy(), cur.pre_hi.reshape(-1).copy()

        def unit(j):
            terms, const = exprs[j]
            out = []
            for sign in (1.0, -1.0):  # minimize, then maximize
                cost = np.zeros(model.n_vars)
                for vid, a in terms:
                    cost[vid] += sign * a
                status, val = solve(model, cost)
                out.append((status, sign * val + const if status == "optimal" else math.nan))
            return out

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(unit, range(flat_lo.size)))
        else:
            results = [unit(j) for j in range(flat_lo.size)]
        for j, ((st_lo, v_lo), (st_hi, v_hi)) in enumerate(results):
            if st_lo == "optimal":
                flat_lo[j] = max(flat_lo[j], v_lo - SAFETY * max(1.0, abs(v_lo)))
            else:
                bounds.warnings.append(f"layer {k} unit {j}: lower bound solve {st_lo}")
                log.warning("layer %d unit %d: lower bound solve %s; keeping interval bound", k, j, st_lo)
            if st_hi == "optimal":
                flat_hi[j] = min(flat_hi[j], v_hi + SAFETY * max(1.0, abs(v_hi)))
            else:
                bounds.warnings.append(f"layer {k} unit {j}: upper bound solve {st_hi}")
                log.warning("layer %d unit %d: upper bound solve %s; keeping interval bound", k, j, st_hi)
        flat_lo = np.minimum(flat_lo, flat_hi)
        bounds.layers[k] = _activate(cur.kind, flat_lo.reshape(cur.pre_lo.shape),
                                     flat_hi.reshape(cur.pre_hi.shape), cur.activation)
        _repropagate(net, bounds, k + 1)
    return bounds


def violations(net: NetworkSpec, bounds: BoundSet, samples, tol: float = 0.0) -> int:
    """Number of (sample, unit) pairs whose forward value leaves the bounds."""
    from .network import forward

    count = 0
    for x in samples:
        tr = forward(net, x)
        for k, b in enumerate(bounds.layers):
            if tr.pre[k] is not None:
                v = tr.pre[k]
                count += int(np.sum((v < b.pre_lo - tol) | (v > b.pre_hi + tol)))
            v = tr.post[k]
            count += int(np.sum((v < b.lo - tol) | (v > b.hi + tol)))
    return count
