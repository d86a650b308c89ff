"""Sequential network definition, weight-file I/O and the forward evaluator.

A network is an ordered list of layers applied to one input tensor. The
forward pass here is the reference every MILP solution is checked against,
so it is deliberately plain: no caching, no batching, float64 throughout.

Convolution follows the per-map scheme: every kernel sweeps every input
map separately, so ``m`` kernels on ``alpha`` maps give ``m * alpha``
output maps, with output map ``delta = beta + gamma * alpha`` (0-based)
produced by kernel ``gamma`` on input map ``beta``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .tensor import ConvParams, ShapeError, as_tensor, conv2d, flatten, maxpool2d, pool_output_extents, relu

ACTIVATIONS = ("relu", "linear")


class NetworkError(ValueError):
    """A weight file or network definition that cannot be used."""


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Dense:
    weights: np.ndarray  # (n_out, n_in)
    bias: np.ndarray  # (n_out,)
    activation: str = "relu"

    kind = "dense"

    def __post_init__(self):
        w = _frozen(self.weights)
        b = _frozen(self.bias)
        if w.ndim != 2:
            raise NetworkError(f"dense weights must be 2-D, got shape {w.shape}")
        if b.shape != (w.shape[0],):
            raise NetworkError(f"dense bias length {b.size} != weight rows {w.shape[0]}")
        if self.activation not in ACTIVATIONS:
            raise NetworkError(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def n_in(self) -> int:
        return self.weights.shape[1]

    @property
    def n_out(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True, eq=False)
class Conv:
    kernels: np.ndarray  # (m, f, f)
    bias: np.ndarray  # (m,)
    stride: int = 1
    padding: int = 0
    activation: str = "relu"

    kind = "conv"

    def __post_init__(self):
        k = _frozen(self.kernels)
        b = _frozen(self.bias)
        if k.ndim != 3 or k.shape[1] != k.shape[2]:
            raise NetworkError(f"conv kernels must share square extents f x f, got {k.shape}")
        if b.shape != (k.shape[0],):
            raise NetworkError(f"conv bias length {b.size} != kernel count {k.shape[0]}")
        if self.activation != "relu":
            raise NetworkError("conv layers always use relu")
        object.__setattr__(self, "kernels", k)
        object.__setattr__(self, "bias", b)
        object.__setattr__(self, "params", ConvParams(k.shape[1], int(self.stride), int(self.padding)))

    @property
    def n_kernels(self) -> int:
        return self.kernels.shape[0]


@dataclass(frozen=True)
class MaxPool:
    pool_size: int
    stride: int

    kind = "maxpool"


@dataclass(frozen=True)
class Flatten:
    kind = "flatten"


Layer = Union[Dense, Conv, MaxPool, Flatten]


def _maps(shape: tuple) -> tuple[int, int, int]:
    """View a 2-D or 3-D image shape as (maps, height, width)."""
    if len(shape) == 2:
        return (1, *shape)
    if len(shape) == 3:
        return tuple(shape)
    raise ShapeError(f"expected (h, w) or (maps, h, w), got {shape}")


def layer_output_shape(layer: Layer, shape: tuple, index: int = 0) -> tuple:
    try:
        if isinstance(layer, Dense):
            if len(shape) != 1 or shape[0] != layer.n_in:
                raise ShapeError(f"dense expects input ({layer.n_in},), got {shape}")
            return (layer.n_out,)
        if isinstance(layer, Conv):
            alpha, h, w = _maps(shape)
            oh, ow = layer.params.output_extents(h, w)
            return (layer.n_kernels * alpha, oh, ow)
        if isinstance(layer, MaxPool):
            alpha, h, w = _maps(shape)
            oh, ow = pool_output_extents(h, w, layer.pool_size, layer.stride)
            return (alpha, oh, ow)
        if isinstance(layer, Flatten):
            return (int(np.prod(shape)),)
    except ShapeError as exc:
        raise NetworkError(f"layer {index} ({layer.kind}): {exc}") from None
    raise NetworkError(f"layer {index}: unknown layer type {type(layer).__name__}")


@dataclass(frozen=True, eq=False)
class NetworkSpec:
    input_shape: tuple
    layers: tuple
    class_count: int
    shapes: tuple = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise NetworkError("network has no layers")
        shapes = [self.input_shape]
        for k, layer in enumerate(self.layers):
            shapes.append(layer_output_shape(layer, shapes[-1], k))
        object.__setattr__(self, "shapes", tuple(shapes))
        final = shapes[-1]
        if len(final) != 1 or final[0] != self.class_count:
            raise NetworkError(
                f"final layer output {final} does not match class_count {self.class_count}"
            )

    @property
    def output_shape(self) -> tuple:
        return self.shapes[-1]

    def replace_layers(self, layers) -> "NetworkSpec":
        return NetworkSpec(self.input_shape, tuple(layers), self.class_count)

    def is_dense_only(self) -> bool:
        """True for a (possibly flattened) stack of dense layers."""
        body = list(self.layers)
        if body and isinstance(body[0], Flatten):
            body = body[1:]
        return bool(body) and all(isinstance(layer, Dense) for layer in body)


@dataclass
class ActivationTrace:
    """Per-layer values of one forward pass.

    ``post[k]`` is the output of layer ``k``; ``pre[k]`` is the affine value
    before the activation for dense and conv layers and ``None`` otherwise.
    """

    input: np.ndarray
    pre: list
    post: list

    @property
    def output(self) -> np.ndarray:
        return self.post[-1]


def apply_layer(layer: Layer, x: np.ndarray):
    """Return ``(pre, post)`` for one layer; ``pre`` is None without an affine part."""
    if isinstance(layer, Dense):
        pre = layer.weights @ x + layer.bias
        return pre, (relu(pre) if layer.activation == "relu" else pre.copy())
    if isinstance(layer, Conv):
        maps = x.reshape(_maps(x.shape))
        alpha = maps.shape[0]
        out = []
        for gamma in range(layer.n_kernels):
            for beta in range(alpha):
                out.append(conv2d(maps[beta], layer.kernels[gamma], layer.params) + layer.bias[gamma])
        pre = np.stack(out)
        return pre, relu(pre)
    if isinstance(layer, MaxPool):
        maps = x.reshape(_maps(x.shape))
        return None, np.stack([maxpool2d(m, layer.pool_size, layer.stride) for m in maps])
    if isinstance(layer, Flatten):
        return None, flatten(x)
    raise NetworkError(f"unknown layer type {type(layer).__name__}")


def forward(net: NetworkSpec, image) -> ActivationTrace:
    x = np.asarray(image, dtype=np.float64)
    if x.shape != net.input_shape:
        raise NetworkError(f"input extents {x.shape} != network input {net.input_shape}")
    trace = ActivationTrace(input=x.copy(), pre=[], post=[])
    for layer in net.layers:
        pre, x = apply_layer(layer, x)
        trace.pre.append(pre)
        trace.post.append(x)
    return trace


def classify(net: NetworkSpec, image) -> tuple[int, np.ndarray]:
    """Label is the argmax of the final scores; ``np.argmax`` keeps the lowest index on ties."""
    scores = forward(net, image).output
    return int(np.argmax(scores)), scores


# --------------------------------------------------------------------------
# weight file
# --------------------------------------------------------------------------

def _layer_to_dict(layer: Layer) -> dict:
    if isinstance(layer, Dense):
        return {
            "kind": "dense",
            "weights": layer.weights.tolist(),
            "bias": layer.bias.tolist(),
            "activation": layer.activation,
        }
    if isinstance(layer, Conv):
        return {
            "kind": "conv",
            "kernels": layer.kernels.tolist(),
            "bias": layer.bias.tolist(),
            "stride": layer.params.stride,
            "padding": layer.params.padding,
        }
    if isinstance(layer, MaxPool):
        return {"kind": "maxpool", "pool_size": layer.pool_size, "stride": layer.stride}
    return {"kind": "flatten"}


def dump_network(net: NetworkSpec) -> str:
    """Serialize to the weight-file text; floats use shortest round-trip repr."""
    doc = {
        "input_shape": list(net.input_shape),
        "class_count": net.class_count,
        "layers": [_layer_to_dict(layer) for layer in net.layers],
    }
    return json.dumps(doc, indent=1) + "\n"


def _require(obj: dict, key: str, index: int, kind: str):
    if key not in obj:
        raise NetworkError(f"layer {index} ({kind}): missing field {key!r}")
    return obj[key]


def _layer_from_dict(obj: dict, index: int) -> Layer:
    if not isinstance(obj, dict) or "kind" not in obj:
        raise NetworkError(f"layer {index}: expected an object with a 'kind' field")
    kind = obj["kind"]
    try:
        if kind == "dense":
            return Dense(
                np.array(_require(obj, "weights", index, kind), dtype=np.float64),
                np.array(_require(obj, "bias", index, kind), dtype=np.float64),
                obj.get("activation", "relu"),
            )
        if kind == "conv":
            return Conv(
                np.array(_require(obj, "kernels", index, kind), dtype=np.float64),
                np.array(_require(obj, "bias", index, kind), dtype=np.float64),
                int(obj.get("stride", 1)),
                int(obj.get("padding", 0)),
            )
        if kind == "maxpool":
            return MaxPool(int(_require(obj, "pool_size", index, kind)), int(_require(obj, "stride", index, kind)))
        if kind == "flatten":
            return Flatten()
    except (NetworkError, ShapeError) as exc:
        raise NetworkError(f"layer {index} ({kind}): {exc}") from None
    except (TypeError, ValueError) as exc:
        raise NetworkError(f"layer {index} ({kind}): malformed values ({exc})") from None
    raise NetworkError(f"layer {index}: unknown kind {kind!r}")


def load_network(document: str) -> NetworkSpec:
    """Parse and validate a weight-file document."""
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise NetworkError(f"weight file is not valid JSON: {exc}") from None
    for key in ("input_shape", "class_count", "layers"):
        if key not in doc:
            raise NetworkError(f"weight file missing top-level field {key!r}")
    layers = [_layer_from_dict(obj, k) for k, obj in enumerate(doc["layers"])]
    values = [v for layer in layers for v in _params(layer)]
    if any(not np.all(np.isfinite(v)) for v in values):
        raise NetworkError("weight file contains non-finite values")
    return NetworkSpec(tuple(doc["input_shape"]), tuple(layers), int(doc["class_count"]))


def read_network(path) -> NetworkSpec:
    with open(path) as fh:
        return load_network(fh.read())


def write_network(net: NetworkSpec, path) -> None:
    with open(path, "w") as fh:
        fh.write(dump_network(net))


def _params(layer: Layer) -> list:
    if isinstance(layer, Dense):
        return [layer.weights, layer.bias]
    if isinstance(layer, Conv):
        return [layer.kernels, layer.bias]
    return []


def random_dense_net(rng: np.random.Generator, sizes, output_activation="relu", scale=1.0) -> NetworkSpec:
    """Random dense ReLU network with layer widths ``sizes`` (input first)."""
    layers = []
    for k in range(1, len(sizes)):
        act = output_activation if k == len(sizes) - 1 else "relu"
        layers.append(Dense(
            scale * rng.standard_normal((sizes[k], sizes[k - 1])),
            scale * rng.standard_normal(sizes[k]) * 0.5,
            act,
        ))
    return NetworkSpec((sizes[0],), tuple(layers), sizes[-1])


__all__ = [
    "ActivationTrace", "Conv", "Dense", "Flatten", "Layer", "MaxPool", "NetworkError",
    "NetworkSpec", "apply_layer", "as_tensor", "classify", "dump_network", "forward",
    "load_network", "random_dense_net", "read_network", "write_network",
]
