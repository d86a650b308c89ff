"""Block-structured CNN -> 0-1 MILP.

Architecture: C blocks of (conv + ReLU, max-pool), then flatten, a dense
ReLU layer (phi) and the output layer (psi). Variable families, by block c:

    A_c    block input maps (A_0 is the image)
    B_c    conv output, Bh_c its ReLU, s_c / z_c the split and indicator
    zeta_c one binary per pooling-window element marking the maximum
    pi     flattened final maps
    phi, st, zt     first dense layer (x, s, z)
    psi, stt, ztt   output layer (x, s, z)

The objective charges c on block-input maps, g on B, l on Bh, n on z,
o on zeta, c~ on phi, q on zt and c~~ on psi.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .bounds import BoundSet, interval_propagate
from .encode_common import (InputMode, VarMap, add_inputs, conv_exprs, dense_exprs, fix_input,
                            relu_split, unit_box)
from .milp import MilpModel, ModelError
from .network import Conv, Dense, Flatten, MaxPool, NetworkSpec, _maps
from .tensor import pool_output_extents

log = logging.getLogger(__name__)


@dataclass
class CnnEncodeConfig:
    c: float = 1.0  # block input maps
    g: float = 1.0  # conv outputs B
    l: float = 1.0  # ReLU outputs Bh
    n: float = 1.0  # ReLU indicators z
    o: float = 1.0  # pooling selectors zeta
    c_phi: float = 1.0  # dense layer units
    q: float = 1.0  # dense layer indicators
    c_psi: float = 1.0  # output units
    include_biases: bool = False
    input_mode: InputMode | None = None
    input_cost: float | None = None  # None: c for a fixed input, 0 for a box

    def __post_init__(self):
        for name in ("n", "o", "q"):
            if getattr(self, name) < 0:
                raise ValueError(f"penalty cost {name} must be non-negative")

    def costs(self, mode: InputMode) -> dict:
        inp = self.input_cost if self.input_cost is not None else (self.c if mode.kind == "fixed" else 0.0)
        return {"input": inp, "c": self.c, "g": self.g, "l": self.l, "n": self.n, "o": self.o,
                "c_phi": self.c_phi, "q": self.q, "c_psi": self.c_psi}


_ZERO_COSTS = dict.fromkeys(("input", "c", "g", "l", "n", "o", "c_phi", "q", "c_psi"), 0.0)


@dataclass
class BlockDims:
    h: int
    w: int
    h_conv: int
    w_conv: int
    h_pool: int
    w_pool: int


def block_dims(net: NetworkSpec) -> list:
    dims = []
    for k, layer in enumerate(net.layers):
        if isinstance(layer, Conv):
            _, h, w = _maps(net.shapes[k])
            _, hc, wc = net.shapes[k + 1]
            _, hp, wp = net.shapes[k + 2]
            dims.append(BlockDims(h, w, hc, wc, hp, wp))
    return dims


def check_blocks(net: NetworkSpec) -> int:
    """Number of blocks; raises naming the first layer that breaks the pattern."""
    layers = net.layers
    k = 0
    while k < len(layers) and isinstance(layers[k], Conv):
        if layers[k].activation != "relu":
            raise ModelError(f"layer {k}: conv layers must use ReLU")
        if k + 1 >= len(layers) or not isinstance(layers[k + 1], MaxPool):
            raise ModelError(f"layer {k + 1}: expected max-pool after the conv layer")
        k += 2
    blocks = k // 2
    if blocks == 0:
        raise ModelError("layer 0: expected a conv layer opening the first block")
    expected = (Flatten, Dense, Dense)
    for offset, cls in enumerate(expected):
        j = k + offset
        if j >= len(layers) or not isinstance(layers[j], cls):
            raise ModelError(f"layer {j}: expected {cls.__name__.lower()} after {blocks} block(s)")
    if len(layers) != k + 3:
        raise ModelError(f"layer {k + 3}: unexpected layer after the output layer")
    if layers[k + 1].activation != "relu":
        raise ModelError(f"layer {k + 1}: the hidden dense layer must use ReLU")
    return blocks


# --------------------------------------------------------------------------
# block encoders
# --------------------------------------------------------------------------

def encode_conv_block(model: MilpModel, A: np.ndarray, layer: Conv, c: int,
                      pre_lo: np.ndarray, pre_hi: np.ndarray, cost: float = 0.0) -> np.ndarray:
    """Conv output variables B_c with one equality per output cell."""
    A = A.reshape(_maps(A.shape))
    alpha, h, w = A.shape
    layer.params.check(h, w)
    oh, ow = layer.params.output_extents(h, w)
    B = np.empty((layer.n_kernels * alpha, oh, ow), dtype=np.int64)
    exprs = conv_exprs(layer, A)
    for flat, idx in enumerate(np.ndindex(B.shape)):
        name = f"B_{c}_{idx[0]}_{idx[1]}_{idx[2]}"
        lo, hi = float(pre_lo[idx]), float(pre_hi[idx])
        if not (np.isfinite(lo) and np.isfinite(hi)):
            raise ModelError(f"{name}: bounds must be finite")
        B[idx] = model.add_var(name, "continuous", lo, hi, cost)
        terms, const = exprs[flat]
        model.add_constraint([(int(B[idx]), 1.0)] + [(i, -a) for i, a in terms], "=", const, f"conv_{name}")
    return B


def encode_relu_block(model: MilpModel, B: np.ndarray, c: int, costs: dict | None = None):
    """ReLU split of every B cell: ``B - Bh + s = 0`` with indicator z."""
    costs = costs or _ZERO_COSTS
    Bh = np.empty(B.shape, dtype=np.int64)
    S = np.empty(B.shape, dtype=np.int64)
    Z = np.empty(B.shape, dtype=np.int64)
    for idx in np.ndindex(B.shape):
        var = model.variables[int(B[idx])]
        if not (np.isfinite(var.lb) and np.isfinite(var.ub)):
            raise ModelError(f"{var.name}: ReLU split needs finite bounds")
        tag = "_".join(str(i) for i in idx)
        Bh[idx], S[idx], Z[idx] = relu_split(
            model, [(var.id, 1.0)], 0.0, var.lb, var.ub,
            (f"Bh_{c}_{tag}", f"s_{c}_{tag}", f"z_{c}_{tag}"), costs["l"], costs["n"])
    return Bh, S, Z


def encode_maxpool_block(model: MilpModel, Bh: np.ndarray, pool_size: int, stride: int, c: int,
                         a_cost: float = 0.0, zeta_cost: float = 0.0):
    """Pooled maps A_{c+1} plus window selectors zeta (maps, rows, cols, window)."""
    maps, h, w = Bh.shape
    oh, ow = pool_output_extents(h, w, pool_size, stride)
    A = np.empty((maps, oh, ow), dtype=np.int64)
    Zeta = np.empty((maps, oh, ow, pool_size * pool_size), dtype=np.int64)
    for d, r, col in np.ndindex(A.shape):
        window = [int(Bh[d, r * stride + i, col * stride + j]) for i in range(pool_size) for j in range(pool_size)]
        lbs = [model.variables[v].lb for v in window]
        ubs = [model.variables[v].ub for v in window]
        name = f"A_{c + 1}_{d}_{r}_{col}"
        a = model.add_var(name, "continuous", max(lbs), max(ubs), a_cost)
        A[d, r, col] = a
        zs = []
        floor = max(lbs)
        for t, v in enumerate(window):
            # an element whose upper bound is below another's lower bound is never the max
            zub = 1.0 if ubs[t] >= floor else 0.0
            z = model.add_var(f"zeta_{c}_{d}_{r}_{col}_{t}", "binary", 0.0, zub, zeta_cost)
            zs.append(z)
            model.add_constraint([(a, 1.0), (v, -1.0)], ">=", 0.0, f"ge_{name}_{t}")
            model.add_indicator(z, 1, [(a, 1.0), (v, -1.0)], 0.0, f"sel_{name}_{t}")
        Zeta[d, r, col] = zs
        model.add_constraint([(z, 1.0) for z in zs], "=", 1.0, f"one_{name}")
    return A, Zeta


def flat_index(delta: int, row: int, col: int, h: int, w: int) -> int:
    """Position of map ``delta``, cell (row, col) in the flattened vector (0-based).

    Offsets whole maps by ``h * w`` so different maps never collide.
    """
    return delta * h * w + row * w + col


def encode_flatten(model: MilpModel, A: np.ndarray) -> np.ndarray:
    maps, h, w = A.shape
    pi = np.empty(maps * h * w, dtype=np.int64)
    for d, r, col in np.ndindex(A.shape):
        idx = flat_index(d, r, col, h, w)
        src = model.variables[int(A[d, r, col])]
        pi[idx] = model.add_var(f"pi_{idx}", "continuous", src.lb, src.ub, 0.0)
        model.add_constraint([(int(pi[idx]), 1.0), (src.id, -1.0)], "=", 0.0, f"flat_{idx}")
    return pi


def _encode_dense(model, prev, layer: Dense, pre_lo, pre_hi, names, x_cost, z_cost) -> dict:
    if layer.n_in != prev.size:
        raise ModelError(f"dense layer expects {layer.n_in} inputs, got {prev.size}")
    xn, sn, zn = names
    linear = layer.activation == "linear"
    ids = np.full((3, layer.n_out), -1, dtype=np.int64)
    for j, (terms, const) in enumerate(dense_exprs(layer, prev)):
        ids[:, j] = relu_split(model, terms, const, pre_lo[j], pre_hi[j],
                               (f"{xn}_{j}", f"{sn}_{j}", f"{zn}_{j}"), x_cost, z_cost, linear)
    return {"x": ids[0]} if linear else {"x": ids[0], "s": ids[1], "z": ids[2]}


def encode_fc_and_output(model: MilpModel, pi: np.ndarray, hidden: Dense, output: Dense,
                         hidden_bounds, output_bounds, costs: dict | None = None) -> tuple:
    """ReLU-split dense layer phi followed by the output layer psi."""
    costs = costs or _ZERO_COSTS
    phi = _encode_dense(model, pi, hidden, hidden_bounds.pre_lo, hidden_bounds.pre_hi,
                        ("phi", "st", "zt"), costs["c_phi"], costs["q"])
    psi = _encode_dense(model, phi["x"], output, output_bounds.pre_lo, output_bounds.pre_hi,
                        ("psi", "stt", "ztt"), costs["c_psi"], 0.0)
    return phi, psi


# --------------------------------------------------------------------------
# whole network
# --------------------------------------------------------------------------

def _walk(model: MilpModel, net: NetworkSpec, bounds: BoundSet, mode: InputMode, upto: int,
          costs: dict | None) -> VarMap:
    costs = costs or _ZERO_COSTS
    shape = _maps(net.input_shape)
    names = [f"A_0_{b}_{r}_{c}" for b, r, c in np.ndindex(shape)]
    inputs = add_inputs(model, names, mode, costs["input"])
    varmap = VarMap(inputs, [], "cnn")
    prev = inputs.reshape(shape)
    block = 0
    dense_seen = 0
    for k, layer in enumerate(net.layers[:upto]):
        b = bounds.layers[k]
        if isinstance(layer, Conv):
            B = encode_conv_block(model, prev, layer, block, b.pre_lo, b.pre_hi, costs["g"])
            Bh, S, Z = encode_relu_block(model, B, block, costs)
            varmap.layers.append({"x": Bh, "pre": B, "s": S, "z": Z})
            prev = Bh
        elif isinstance(layer, MaxPool):
            more_blocks = any(isinstance(l, Conv) for l in net.layers[k + 1:])
            A, Zeta = encode_maxpool_block(model, prev, layer.pool_size, layer.stride, block,
                                           costs["c"] if more_blocks else 0.0, costs["o"])
            varmap.layers.append({"x": A, "zeta": Zeta})
            prev = A
            block += 1
        elif isinstance(layer, Flatten):
            prev = encode_flatten(model, prev.reshape(_maps(prev.shape)))
            varmap.layers.append({"x": prev})
        elif isinstance(layer, Dense):
            tags = [("phi", "st", "zt", "c_phi", "q"), ("psi", "stt", "ztt", "c_psi", None)]
            if dense_seen < 2:
                xn, sn, zn, cx, cz = tags[dense_seen]
            else:
                xn, sn, zn, cx, cz = f"d{k}", f"ds{k}", f"dz{k}", "c_psi", None
            roles = _encode_dense(model, prev, layer, b.pre_lo, b.pre_hi, (xn, sn, zn),
                                  costs[cx], costs[cz] if cz else 0.0)
            varmap.layers.append(roles)
            prev = roles["x"]
            dense_seen += 1
        else:
            raise ModelError(f"layer {k}: unsupported layer type")
    return varmap


def strip_biases(net: NetworkSpec) -> NetworkSpec:
    layers = []
    for layer in net.layers:
        if isinstance(layer, Conv):
            layer = Conv(layer.kernels, np.zeros_like(layer.bias), layer.params.stride, layer.params.padding)
        elif isinstance(layer, Dense):
            layer = Dense(layer.weights, np.zeros_like(layer.bias), layer.activation)
        layers.append(layer)
    return net.replace_layers(layers)


def encode_cnn(net: NetworkSpec, bounds: BoundSet | None = None,
               config: CnnEncodeConfig | None = None) -> tuple[MilpModel, VarMap]:
    """Encode a block CNN.

    Without ``include_biases`` every bias is treated as zero (bounds computed
    here follow suit; caller-supplied bounds must match the net encoded).
    """
    config = config or CnnEncodeConfig()
    check_blocks(net)
    if not config.include_biases:
        if any(np.any(l.bias != 0) for l in net.layers if isinstance(l, (Conv, Dense))):
            log.warning("non-zero biases dropped (include_biases is off)")
        net = strip_biases(net)
    mode = (config.input_mode or unit_box(net)).for_net(net)
    if bounds is None:
        bounds = interval_propagate(net, mode.lb, mode.ub)
    model = MilpModel(name="cnn")
    varmap = _walk(model, net, bounds, mode, len(net.layers), config.costs(mode))
    return model, varmap


def census(net: NetworkSpec) -> dict:
    """Closed-form model size of a block CNN with a ReLU output layer."""
    check_blocks(net)
    alpha, h, w = _maps(net.input_shape)
    variables = alpha * h * w
    equalities = inequalities = indicators = binaries = 0
    maps = alpha
    k = 0
    for dims in block_dims(net):
        conv, pool = net.layers[k], net.layers[k + 1]
        maps *= conv.n_kernels
        cells = maps * dims.h_conv * dims.w_conv
        pooled = maps * dims.h_pool * dims.w_pool
        window = pool.pool_size ** 2
        variables += 4 * cells + pooled + pooled * window
        binaries += cells + pooled * window
        equalities += 2 * cells + pooled
        inequalities += pooled * window
        indicators += 2 * cells + pooled * window
        k += 2
    n_pi = net.shapes[k + 1][0]
    n_phi, n_psi = net.layers[k + 1].n_out, net.layers[k + 2].n_out
    variables += n_pi + 3 * n_phi + 3 * n_psi
    binaries += n_phi + n_psi
    equalities += n_pi + n_phi + n_psi
    indicators += 2 * (n_phi + n_psi)
    return {"variables": variables, "binaries": binaries, "equalities": equalities,
            "inequalities": inequalities, "indicators": indicators}


__all__ = [
    "BlockDims", "CnnEncodeConfig", "block_dims", "census", "check_blocks", "encode_cnn",
    "encode_conv_block", "encode_fc_and_output", "encode_flatten", "encode_maxpool_block",
    "encode_relu_block", "fix_input", "flat_index", "strip_biases",
]
