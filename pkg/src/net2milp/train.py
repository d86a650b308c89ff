"""Full-batch gradient descent on mean squared error.

Only the plain update ``w := w - alpha * dE/dw`` is provided. The loss is
``E = 1/(2M) * sum_m sum_i (target_i(m) - output_i(m))**2``; ReLU's
derivative at exactly zero is taken as zero and max pooling routes the
gradient to the first maximal entry of each window.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import rng as rngmod
from .network import Conv, Dense, Flatten, MaxPool, NetworkSpec, apply_layer, forward, layer_output_shape
from .tensor import ConvParams, pad, pool_argmax


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"loss became non-finite ({loss}) at epoch {epoch}")
        self.epoch = epoch
        self.loss = loss


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    epochs: int = 500
    seed: int = 0
    init: str = "he_gaussian"  # or "uniform_kernel"
    bias_init: float = 0.0
    # multiplies the output layer's initial weights; 0 starts every output at
    # the bias, which keeps ReLU outputs alive on many-class one-hot targets
    output_scale: float = 1.0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.init not in ("he_gaussian", "uniform_kernel"):
            raise ValueError(f"unknown init {self.init!r}")


@dataclass
class Dataset:
    inputs: list
    targets: list

    def __post_init__(self):
        self.inputs = [np.asarray(x, dtype=np.float64) for x in self.inputs]
        self.targets = [np.asarray(t, dtype=np.float64) for t in self.targets]
        if len(self.inputs) != len(self.targets):
            raise ValueError("inputs and targets differ in length")
        for t in self.targets:
            if t.ndim != 1 or np.count_nonzero(t == 1.0) != 1 or np.count_nonzero(t) != 1:
                raise ValueError("targets must be one-hot vectors")

    @classmethod
    def from_labels(cls, inputs, labels, class_count: int) -> "Dataset":
        targets = []
        for label in labels:
            t = np.zeros(class_count)
            t[int(label)] = 1.0
            targets.append(t)
        return cls(list(inputs), targets)

    @property
    def labels(self) -> list:
        return [int(np.argmax(t)) for t in self.targets]

    def __len__(self) -> int:
        return len(self.inputs)


# --------------------------------------------------------------------------
# initialisation
# --------------------------------------------------------------------------

def _gen(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return rngmod.stream(int(seed), "init")


def he_init(shape, fan_in: int, seed) -> np.ndarray:
    """Zero-mean Gaussian draws with standard deviation ``sqrt(2 / fan_in)``."""
    if fan_in < 1:
        raise ValueError("fan_in must be >= 1")
    return _gen(seed).standard_normal(tuple(shape)) * math.sqrt(2.0 / fan_in)


def uniform_kernel_bound(f: int, alpha_in: int, m: int) -> float:
    return math.sqrt(f / ((alpha_in + f) * m * m))


def uniform_kernel_init(f: int, alpha_in: int, m: int, seed) -> np.ndarray:
    """Uniform draws on ``+-sqrt(f / ((alpha_in + f) * m**2))``, shape (f, f)."""
    if f < 1 or alpha_in < 1 or m < 1:
        raise ValueError("f, alpha_in and m must be >= 1")
    bound = uniform_kernel_bound(f, alpha_in, m)
    return _gen(seed).uniform(-bound, bound, (f, f))


PRESETS = {
    "dense-16-8": ("flatten", ("dense", 16), ("dense", 8)),
    "dense-12": ("flatten", ("dense", 12)),
    "cnn-tiny": (("conv", 2, 3, 1, 0), ("maxpool", 2, 2), "flatten", ("dense", 8)),
}


def init_network(preset, input_shape, class_count: int, config: TrainConfig) -> NetworkSpec:
    """Build a freshly initialised network from a preset name or layer recipe.

    Dense layers use He initialisation, conv kernels the uniform rule (or
    He when ``config.init == 'he_gaussian'``). Biases start at
    ``config.bias_init`` and the output layer uses ReLU so the trained net
    can be encoded as-is.
    """
    recipe = PRESETS[preset] if isinstance(preset, str) else tuple(preset)
    gen = rngmod.stream(config.seed, "init")
    shape = tuple(input_shape)
    layers = []
    items = recipe + (("dense", class_count),)
    for pos, item in enumerate(items):
        kind = item if isinstance(item, str) else item[0]
        if kind == "flatten":
            layer = Flatten()
        elif kind == "maxpool":
            layer = MaxPool(item[1], item[2])
        elif kind == "conv":
            m, f = item[1], item[2]
            stride, padding = (item[3], item[4]) if len(item) > 3 else (1, 0)
            alpha = shape[0] if len(shape) == 3 else 1
            if config.init == "uniform_kernel":
                kernels = np.stack([uniform_kernel_init(f, alpha, m, gen) for _ in range(m)])
            else:
                kernels = he_init((m, f, f), f * f, gen)
            layer = Conv(kernels, np.full(m, config.bias_init), stride, padding)
        elif kind == "dense":
            n_in = int(np.prod(shape))
            w = he_init((item[1], n_in), n_in, gen)
            if pos == len(items) - 1:
                w = w * config.output_scale
            layer = Dense(w, np.full(item[1], config.bias_init), "relu")
        else:
            raise ValueError(f"unknown layer kind {kind!r}")
        shape = layer_output_shape(layer, shape, len(layers))
        layers.append(layer)
    return NetworkSpec(tuple(input_shape), tuple(layers), class_count)


# --------------------------------------------------------------------------
# loss and gradients
# --------------------------------------------------------------------------

def mse_loss(net: NetworkSpec, data: Dataset) -> float:
    M = len(data)
    total = 0.0
    for x, t in zip(data.inputs, data.targets):
        y = forward(net, x).output
        if y.shape != t.shape:
            raise ValueError(f"output shape {y.shape} != target shape {t.shape}")
        total += float(np.sum((t - y) ** 2))
    return total / (2.0 * M)


def _dense_only(net: NetworkSpec) -> bool:
    return net.is_dense_only()


def _batched_dense(net: NetworkSpec, data: Dataset):
    X = np.stack([x.reshape(-1) for x in data.inputs])
    Tm = np.stack(data.targets)
    layers = [l for l in net.layers if isinstance(l, Dense)]
    acts, pres = [X], []
    for layer in layers:
        pre = acts[-1] @ layer.weights.T + layer.bias
        pres.append(pre)
        acts.append(np.maximum(pre, 0.0) if layer.activation == "relu" else pre)
    return X, Tm, layers, acts, pres


def backprop(net: NetworkSpec, data: Dataset) -> list:
    """Exact gradient of :func:`mse_loss`.

    Returns one entry per layer: ``(d_weights, d_bias)`` for dense and conv
    layers (``d_weights`` shaped like the weights or kernels), ``None``
    for parameter-free layers.
    """
    M = len(data)
    if _dense_only(net):
        X, Tm, layers, acts, pres = _batched_dense(net, data)
        g = (acts[-1] - Tm) / M
        grads_dense = []
        for k in range(len(layers) - 1, -1, -1):
            if layers[k].activation == "relu":
                g = g * (pres[k] > 0.0)
            grads_dense.append((g.T @ acts[k], g.sum(axis=0)))
            g = g @ layers[k].weights
        grads_dense.reverse()
        it = iter(grads_dense)
        return [next(it) if isinstance(l, Dense) else None for l in net.layers]

    grads = [_zeros_like(l) for l in net.layers]
    for x, t in zip(data.inputs, data.targets):
        trace = forward(net, x)
        g = (trace.output - t) / M
        for k in range(len(net.layers) - 1, -1, -1):
            layer = net.layers[k]
            x_in = trace.input if k == 0 else trace.post[k - 1]
            g = _layer_backward(layer, x_in, trace.pre[k], g, grads[k])
    return [None if g is None else tuple(g) for g in grads]


def _zeros_like(layer):
    if isinstance(layer, Dense):
        return [np.zeros_like(layer.weights), np.zeros_like(layer.bias)]
    if isinstance(layer, Conv):
        return [np.zeros_like(layer.kernels), np.zeros_like(layer.bias)]
    return None


def _layer_backward(layer, x_in, pre, g_out, acc):
    if isinstance(layer, Dense):
        g = g_out * (pre > 0.0) if layer.activation == "relu" else g_out
        acc[0] += np.outer(g, x_in)
        acc[1] += g
        return layer.weights.T @ g
    if isinstance(layer, Conv):
        g = g_out * (pre > 0.0)
        maps = x_in.reshape((1, *x_in.shape) if x_in.ndim == 2 else x_in.shape)
        alpha = maps.shape[0]
        p: ConvParams = layer.params
        f, s = p.kernel_size, p.stride
        _, oh, ow = g.shape
        g_in = np.zeros((alpha, maps.shape[1] + 2 * p.padding, maps.shape[2] + 2 * p.padding))
        for gamma in range(layer.n_kernels):
            for beta in range(alpha):
                delta = beta + gamma * alpha
                padded = pad(maps[beta], p.padding)
                gd = g[delta]
                acc[1][gamma] += gd.sum()
                for i in range(f):
                    for j in range(f):
                        win = padded[i:i + s * (oh - 1) + 1:s, j:j + s * (ow - 1) + 1:s]
                        acc[0][gamma, i, j] += np.sum(gd * win)
                        g_in[beta, i:i + s * (oh - 1) + 1:s, j:j + s * (ow - 1) + 1:s] += layer.kernels[gamma, i, j] * gd
        if p.padding:
            g_in = g_in[:, p.padding:-p.padding, p.padding:-p.padding]
        return g_in.reshape(x_in.shape)
    if isinstance(layer, MaxPool):
        maps = x_in.reshape((1, *x_in.shape) if x_in.ndim == 2 else x_in.shape)
        g_in = np.zeros_like(maps)
        fsz, s = layer.pool_size, layer.stride
        for beta in range(maps.shape[0]):
            arg = pool_argmax(maps[beta], fsz, s)
            for (r, c), t in np.ndenumerate(arg):
                i, j = divmod(int(t), fsz)
                g_in[beta, r * s + i, c * s + j] += g_out[beta, r, c]
        return g_in.reshape(x_in.shape)
    if isinstance(layer, Flatten):
        return g_out.reshape(x_in.shape)
    raise TypeError(type(layer))


def gd_step(net: NetworkSpec, gradients: list, alpha: float) -> NetworkSpec:
    if not alpha > 0:
        raise ValueError("learning rate must be positive")
    layers = []
    for layer, g in zip(net.layers, gradients):
        if isinstance(layer, Dense):
            layers.append(Dense(layer.weights - alpha * g[0], layer.bias - alpha * g[1], layer.activation))
        elif isinstance(layer, Conv):
            layers.append(Conv(layer.kernels - alpha * g[0], layer.bias - alpha * g[1],
                               layer.params.stride, layer.params.padding))
        else:
            layers.append(layer)
    return net.replace_layers(layers)


def _fast_loss(net: NetworkSpec, data: Dataset) -> float:
    if _dense_only(net):
        _, Tm, _, acts, _ = _batched_dense(net, data)
        return float(np.sum((Tm - acts[-1]) ** 2)) / (2.0 * len(data))
    return mse_loss(net, data)


def train(net: NetworkSpec, data: Dataset, config: TrainConfig):
    """Run ``config.epochs`` full-batch steps; history includes the initial loss."""
    history = [_fast_loss(net, data)]
    if not math.isfinite(history[0]):
        raise TrainingDiverged(0, history[0])
    for epoch in range(1, config.epochs + 1):
        net = gd_step(net, backprop(net, data), config.learning_rate)
        loss = _fast_loss(net, data)
        if not math.isfinite(loss):
            raise TrainingDiverged(epoch, loss)
        history.append(loss)
    return net, history


def accuracy(net: NetworkSpec, data: Dataset) -> float:
    from .network import classify

    hits = sum(classify(net, x)[0] == label for x, label in zip(data.inputs, data.labels))
    return hits / len(data)


def write_loss_csv(history, path) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,loss\n")
        for epoch, loss in enumerate(history):
            fh.write(f"{epoch},{loss!r}\n")


__all__ = [
    "Dataset", "PRESETS", "TrainConfig", "TrainingDiverged", "accuracy", "apply_layer",
    "backprop", "gd_step", "he_init", "init_network", "mse_loss", "train",
    "uniform_kernel_bound", "uniform_kernel_init", "write_loss_csv",
]
