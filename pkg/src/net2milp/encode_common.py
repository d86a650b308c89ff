"""Pieces shared by the dense and convolutional encoders."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .milp import MilpModel, ModelError
from .network import Conv, Dense, NetworkSpec, _maps
from .tensor import ShapeError


@dataclass(frozen=True, eq=False)
class InputMode:
    """Either a fixed image or a per-pixel box."""

    kind: str  # "fixed" | "boxed"
    lb: np.ndarray
    ub: np.ndarray

    @classmethod
    def fixed(cls, values) -> "InputMode":
        v = np.asarray(values, dtype=np.float64)
        if not np.all(np.isfinite(v)):
            raise ValueError("fixed input must be finite")
        return cls("fixed", v.copy(), v.copy())

    @classmethod
    def boxed(cls, lb, ub, shape=None) -> "InputMode":
        lb = np.asarray(lb, dtype=np.float64)
        ub = np.asarray(ub, dtype=np.float64)
        if shape is not None:
            lb, ub = np.broadcast_to(lb, shape).copy(), np.broadcast_to(ub, shape).copy()
        if np.any(lb > ub):
            raise ValueError("input box has lb > ub")
        return cls("boxed", lb, ub)

    def for_net(self, net: NetworkSpec) -> "InputMode":
        lb = np.broadcast_to(self.lb, net.input_shape).copy()
        ub = np.broadcast_to(self.ub, net.input_shape).copy()
        return InputMode(self.kind, lb, ub)


def unit_box(net: NetworkSpec) -> InputMode:
    return InputMode.boxed(0.0, 1.0, net.input_shape)


@dataclass
class VarMap:
    """Variable ids of an encoded network.

    ``inputs`` holds the ids of the input pixels in the input's shape.
    ``layers[k]`` maps a role name to an id array shaped like that role;
    role ``"x"`` is always the layer's output. Missing entries are -1.
    """

    inputs: np.ndarray
    layers: list = field(default_factory=list)
    kind: str = "dnn"

    @property
    def output(self) -> np.ndarray:
        return self.layers[-1]["x"]

    def unit(self, k: int, j) -> tuple:
        """(x, s, z) ids of unit ``j`` (flat index or coordinate) in layer ``k``."""
        roles = self.layers[k]
        out = []
        for role in ("x", "s", "z"):
            ids = roles.get(role)
            if ids is None:
                out.append(-1)
            else:
                out.append(int(ids.reshape(-1)[j] if np.isscalar(j) else ids[tuple(j)]))
        return tuple(out)

    def values(self, assignment, k: int | None = None, role: str = "x") -> np.ndarray:
        ids = self.inputs if k is None else self.layers[k][role]
        return np.asarray(assignment, dtype=np.float64)[ids]

    def all_ids(self) -> list:
        ids = [int(i) for i in self.inputs.reshape(-1)]
        for roles in self.layers:
            for arr in roles.values():
                ids.extend(int(i) for i in arr.reshape(-1) if i >= 0)
        return ids

    def to_json(self, model: MilpModel | None = None) -> str:
        def enc(a):
            if model is None:
                return {"shape": list(a.shape), "ids": a.reshape(-1).tolist()}
            return {"shape": list(a.shape), "ids": a.reshape(-1).tolist(),
                    "names": [model.variables[i].name if i >= 0 else None for i in a.reshape(-1)]}

        doc = {"format": "net2milp-varmap", "kind": self.kind, "inputs": enc(self.inputs),
               "layers": [{role: enc(arr) for role, arr in roles.items()} for roles in self.layers]}
        return json.dumps(doc, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "VarMap":
        doc = json.loads(text)

        def dec(d):
            return np.array(d["ids"], dtype=np.int64).reshape(d["shape"])

        return cls(dec(doc["inputs"]), [{r: dec(a) for r, a in roles.items()} for roles in doc["layers"]],
                   doc.get("kind", "dnn"))


def _finite(value: float, what: str) -> float:
    if not math.isfinite(value):
        raise ModelError(f"{what}: bound must be finite, got {value}")
    return float(value)


def add_inputs(model: MilpModel, names, mode: InputMode, cost: float) -> np.ndarray:
    """One variable per pixel, bounded by the input mode."""
    ids = np.empty(mode.lb.shape, dtype=np.int64)
    for idx, name in zip(np.ndindex(mode.lb.shape), names):
        ids[idx] = model.add_var(name, "continuous", _finite(mode.lb[idx], name),
                                 _finite(mode.ub[idx], name), cost)
    return ids


def relu_split(model: MilpModel, terms, const: float, pre_lo: float, pre_hi: float, names,
               x_cost: float, z_cost: float, linear: bool = False, s_cost: float = 0.0):
    """Encode ``out = act(sum(terms) + const)``; returns (x, s, z) ids (-1 if absent).

    ReLU: ``sum(terms) - x + s = -const``, ``z=1 -> x <= 0``, ``z=0 -> s <= 0``.
    Linear: ``sum(terms) - x = -const`` with x bounded by the pre-activation bounds.
    """
    xn, sn, zn = names
    lo = _finite(pre_lo, xn)
    hi = _finite(pre_hi, xn)
    if linear:
        x = model.add_var(xn, "continuous", lo, hi, x_cost)
        model.add_constraint(list(terms) + [(x, -1.0)], "=", -const, f"eq_{xn}")
        return x, -1, -1
    x = model.add_var(xn, "continuous", 0.0, max(hi, 0.0), x_cost)
    s = model.add_var(sn, "continuous", 0.0, max(-lo, 0.0), s_cost)
    # a unit whose bounds decide its sign gets its indicator fixed; at a
    # pre-activation pinned to exactly 0 the penalty-free z=0 is used
    z_lo, z_hi = (0.0, 0.0) if lo >= 0.0 else (1.0, 1.0) if hi <= 0.0 else (0.0, 1.0)
    z = model.add_var(zn, "binary", z_lo, z_hi, z_cost)
    model.add_constraint(list(terms) + [(x, -1.0), (s, 1.0)], "=", -const, f"eq_{xn}")
    model.add_indicator(z, 1, [(x, 1.0)], 0.0, f"on_{xn}")
    model.add_indicator(z, 0, [(s, 1.0)], 0.0, f"off_{xn}")
    return x, s, z


def dense_exprs(layer: Dense, prev: np.ndarray) -> list:
    """(terms, constant) of every unit's pre-activation."""
    prev = prev.reshape(-1)
    out = []
    for j in range(layer.n_out):
        row = layer.weights[j]
        terms = [(int(prev[i]), float(row[i])) for i in np.flatnonzero(row)]
        out.append((terms, float(layer.bias[j])))
    return out


def conv_exprs(layer: Conv, prev: np.ndarray) -> list:
    """Per-map sweep: output map ``beta + gamma * alpha`` convolves input map ``beta``
    with kernel ``gamma``. Padding cells are constant zeros and contribute nothing.
    Returned in row-major (map, row, col) order."""
    maps = prev.reshape(_maps(prev.shape))
    alpha, h, w = maps.shape
    p = layer.params
    oh, ow = p.output_extents(h, w)
    f, S, P = p.kernel_size, p.stride, p.padding
    out = [None] * (layer.n_kernels * alpha * oh * ow)
    for gamma in range(layer.n_kernels):
        k = layer.kernels[gamma]
        nz = [(i, j, float(k[i, j])) for i in range(f) for j in range(f) if k[i, j] != 0.0]
        for beta in range(alpha):
            delta = beta + gamma * alpha
            for r in range(oh):
                for c in range(ow):
                    terms = []
                    for i, j, a in nz:
                        rr, cc = r * S + i - P, c * S + j - P
                        if 0 <= rr < h and 0 <= cc < w:
                            terms.append((int(maps[beta, rr, cc]), a))
                    out[(delta * oh + r) * ow + c] = (terms, float(layer.bias[gamma]))
    return out


def encode_prefix(net: NetworkSpec, upto: int, bounds):
    """Zero-cost model of layers ``[0, upto)`` over the bounds' input box.

    Returns the model and the (terms, constant) pre-activation expressions
    of every unit in layer ``upto``, written over the prefix's variables.
    """
    layer = net.layers[upto]
    if not isinstance(layer, (Dense, Conv)):
        raise ValueError(f"layer {upto} has no pre-activation")
    mode = InputMode.boxed(bounds.input_lo, bounds.input_hi)
    if net.is_dense_only():
        from .encode_dnn import _walk
    else:
        from .encode_cnn import _walk
    model = MilpModel(name=f"prefix_{upto}")
    varmap = _walk(model, net, bounds, mode, upto, costs=None)
    prev = varmap.inputs if upto == 0 else varmap.layers[upto - 1]["x"]
    exprs = dense_exprs(layer, prev) if isinstance(layer, Dense) else conv_exprs(layer, prev)
    return model, exprs


def check_image(varmap: VarMap, image) -> np.ndarray:
    x = np.asarray(image, dtype=np.float64)
    if x.shape != varmap.inputs.shape:
        raise ShapeError(f"image extents {x.shape} != model input extents {varmap.inputs.shape}")
    return x


def fix_input(model: MilpModel, varmap: VarMap, image, tol: float = 1e-12) -> MilpModel:
    """Copy of ``model`` with every input variable pinned to the image's pixel."""
    x = check_image(varmap, image)
    out = model.copy()
    for idx in np.ndindex(x.shape):
        var = out.variables[int(varmap.inputs[idx])]
        v = float(x[idx])
        if v < var.lb - tol or v > var.ub + tol:
            raise ModelError(f"pixel {idx} = {v} lies outside the declared input box [{var.lb}, {var.ub}]")
        out.set_bounds(var.id, v, v)
    return out
