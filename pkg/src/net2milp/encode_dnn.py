"""Dense ReLU network -> 0-1 MILP.

Every unit j of dense layer k gets a nonnegative pair (x, s) with
``W x_prev + b = x - s`` and a binary z with ``z=1 -> x <= 0`` and
``z=0 -> s <= 0``. The objective is ``sum c*x + sum gamma*z``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bounds import BoundSet, interval_propagate
from .encode_common import InputMode, VarMap, add_inputs, dense_exprs, fix_input, relu_split, unit_box
from .milp import MilpModel, ModelError
from .network import Dense, Flatten, NetworkSpec


@dataclass
class DnnEncodeConfig:
    unit_cost: float = 1.0
    activation_penalty: float = 1.0
    input_mode: InputMode | None = None  # None: the unit box [0, 1]
    input_cost: float | None = None  # None: 1 for a fixed input, 0 for a box

    def __post_init__(self):
        if self.activation_penalty < 0:
            raise ValueError("activation penalty must be non-negative")

    def resolved_input_cost(self, mode: InputMode) -> float:
        if self.input_cost is not None:
            return float(self.input_cost)
        return 1.0 if mode.kind == "fixed" else 0.0


def check_dense(net: NetworkSpec) -> None:
    for k, layer in enumerate(net.layers):
        if isinstance(layer, Flatten) and k == 0:
            continue
        if not isinstance(layer, Dense):
            raise ModelError(f"layer {k} ({layer.kind}) is not dense; use the CNN encoder")
        if layer.activation == "linear" and k != len(net.layers) - 1:
            raise ModelError(f"layer {k}: only the output layer may be linear")


def _walk(model: MilpModel, net: NetworkSpec, bounds: BoundSet, mode: InputMode, upto: int,
          costs: dict | None) -> VarMap:
    costs = costs or {"input": 0.0, "unit": 0.0, "gamma": 0.0}
    n0 = int(np.prod(net.input_shape))
    inputs = add_inputs(model, [f"x_0_{j}" for j in range(n0)], mode, costs["input"])
    varmap = VarMap(inputs, [], "dnn")
    prev = inputs.reshape(-1)
    ordinal = 0
    for k, layer in enumerate(net.layers[:upto]):
        if isinstance(layer, Flatten):
            varmap.layers.append({"x": prev.copy()})
            continue
        ordinal += 1
        b = bounds.layers[k]
        linear = layer.activation == "linear"
        ids = np.full((3, layer.n_out), -1, dtype=np.int64)
        for j, (terms, const) in enumerate(dense_exprs(layer, prev)):
            names = (f"x_{ordinal}_{j}", f"s_{ordinal}_{j}", f"z_{ordinal}_{j}")
            ids[:, j] = relu_split(model, terms, const, b.pre_lo[j], b.pre_hi[j], names,
                                   costs["unit"], costs["gamma"], linear)
        roles = {"x": ids[0]}
        if not linear:
            roles.update(s=ids[1], z=ids[2])
        varmap.layers.append(roles)
        prev = ids[0]
    return varmap


def encode_dnn(net: NetworkSpec, bounds: BoundSet | None = None,
               config: DnnEncodeConfig | None = None) -> tuple[MilpModel, VarMap]:
    """Encode a dense network. ``bounds`` default to interval propagation over the input mode."""
    config = config or DnnEncodeConfig()
    check_dense(net)
    mode = (config.input_mode or unit_box(net)).for_net(net)
    if bounds is None:
        bounds = interval_propagate(net, mode.lb, mode.ub)
    model = MilpModel(name="dnn")
    costs = {"input": config.resolved_input_cost(mode), "unit": config.unit_cost,
             "gamma": config.activation_penalty}
    varmap = _walk(model, net, bounds, mode, len(net.layers), costs)
    return model, varmap


def census(net: NetworkSpec) -> dict:
    """Closed-form model size for a ReLU-output dense net."""
    n0 = int(np.prod(net.input_shape))
    units = [l.n_out for l in net.layers if isinstance(l, Dense)]
    linear_out = isinstance(net.layers[-1], Dense) and net.layers[-1].activation == "linear"
    relu_units = sum(units) - (units[-1] if linear_out else 0)
    return {
        "variables": n0 + 3 * relu_units + (units[-1] if linear_out else 0),
        "binaries": relu_units,
        "equalities": sum(units),
        "indicators": 2 * relu_units,
    }


__all__ = ["DnnEncodeConfig", "census", "check_dense", "encode_dnn", "fix_input"]
