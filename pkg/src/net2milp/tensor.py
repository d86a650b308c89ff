"""Dense tensor kernels: convolution, max pooling, ReLU and flatten.

Everything here works on float64 numpy arrays in row-major order. The
sweeps follow the raster order used throughout the package: output rows
top to bottom, and within a row, columns left to right.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    """Raised when extents, strides or paddings do not fit together."""


def as_tensor(values, shape=None) -> np.ndarray:
    """Convert ``values`` to a finite float64 array, optionally reshaped."""
    arr = np.array(values, dtype=np.float64)
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if arr.size != int(np.prod(shape)):
            raise ShapeError(f"cannot view {arr.size} values as shape {shape}")
        arr = arr.reshape(shape)
    if any(s <= 0 for s in arr.shape):
        raise ShapeError(f"tensor extents must be positive, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor contains NaN or Inf")
    return arr


@dataclass(frozen=True)
class ConvParams:
    """Kernel size ``f``, stride ``S`` and zero padding ``P`` of a convolution."""

    kernel_size: int
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.kernel_size < 1 or self.stride < 1 or self.padding < 0:
            raise ShapeError(f"invalid convolution parameters {self}")
        if self.stride > self.kernel_size:
            raise ShapeError(
                f"stride {self.stride} exceeds kernel size {self.kernel_size}; "
                "windows would skip input pixels"
            )

    def check(self, height: int, width: int) -> None:
        f, s, p = self.kernel_size, self.stride, self.padding
        for name, n in (("height", height), ("width", width)):
            if n + 2 * p < f:
                raise ShapeError(f"kernel {f} larger than padded {name} {n + 2 * p}")
            if (n - f + 2 * p) % s != 0:
                raise ShapeError(
                    f"({name} - f + 2P) mod S = ({n} - {f} + 2*{p}) mod {s} "
                    f"= {(n - f + 2 * p) % s}, must be 0"
                )

    def output_extents(self, height: int, width: int) -> tuple[int, int]:
        self.check(height, width)
        f, s, p = self.kernel_size, self.stride, self.padding
        return (height - f + 2 * p) // s + 1, (width - f + 2 * p) // s + 1


def pool_output_extents(height: int, width: int, pool_size: int, stride: int) -> tuple[int, int]:
    """Output extents of a max pooling sweep; raises on invalid geometry."""
    if pool_size < 1 or stride < 1:
        raise ShapeError("pool size and stride must be positive")
    if stride > pool_size:
        raise ShapeError(f"pool stride {stride} exceeds pool size {pool_size}")
    for name, n in (("height", height), ("width", width)):
        if n < pool_size:
            raise ShapeError(f"pool size {pool_size} larger than {name} {n}")
        if (n - pool_size) % stride != 0:
            raise ShapeError(
                f"({name} - pool) mod stride = ({n} - {pool_size}) mod {stride} "
                f"= {(n - pool_size) % stride}, must be 0"
            )
    return (height - pool_size) // stride + 1, (width - pool_size) // stride + 1


def pad(image: np.ndarray, padding: int) -> np.ndarray:
    """Surround a 2-D map with ``padding`` frames of zeros."""
    if padding == 0:
        return image
    return np.pad(image, padding, mode="constant", constant_values=0.0)


def conv2d(image, kernel, params: ConvParams) -> np.ndarray:
    """Slide a square kernel over a 2-D map (cross-correlation, no flip).

    Parameters
    ----------
    image : array of shape (h, w)
    kernel : array of shape (f, f)
    params : ConvParams
        ``params.kernel_size`` must equal ``f``.

    Returns
    -------
    array of shape ((h - f + 2P)/S + 1, (w - f + 2P)/S + 1)
    """
    image = np.asarray(image, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    if image.ndim != 2:
        raise ShapeError(f"conv2d expects a 2-D map, got shape {image.shape}")
    f = params.kernel_size
    if kernel.shape != (f, f):
        raise ShapeError(f"kernel shape {kernel.shape} does not match f={f}")
    oh, ow = params.output_extents(*image.shape)
    padded = pad(image, params.padding)
    s = params.stride
    out = np.zeros((oh, ow))
    for i in range(f):
        for j in range(f):
            out += kernel[i, j] * padded[i:i + s * (oh - 1) + 1:s, j:j + s * (ow - 1) + 1:s]
    return out


def maxpool2d(image, pool_size: int, stride: int) -> np.ndarray:
    """Maximum over each ``pool_size`` x ``pool_size`` window of a 2-D map."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ShapeError(f"maxpool2d expects a 2-D map, got shape {image.shape}")
    oh, ow = pool_output_extents(*image.shape, pool_size, stride)
    out = np.full((oh, ow), -np.inf)
    for i in range(pool_size):
        for j in range(pool_size):
            window = image[i:i + stride * (oh - 1) + 1:stride, j:j + stride * (ow - 1) + 1:stride]
            np.maximum(out, window, out=out)
    return out


def pool_argmax(image, pool_size: int, stride: int) -> np.ndarray:
    """Flat in-window index of each window maximum, lowest index on ties.

    The returned array has the pooled extents; entry ``t`` encodes the
    window offset ``(t // pool_size, t % pool_size)``.
    """
    image = np.asarray(image, dtype=np.float64)
    oh, ow = pool_output_extents(*image.shape, pool_size, stride)
    best = np.full((oh, ow), -np.inf)
    arg = np.zeros((oh, ow), dtype=np.int64)
    for t in range(pool_size * pool_size):
        i, j = divmod(t, pool_size)
        window = image[i:i + stride * (oh - 1) + 1:stride, j:j + stride * (ow - 1) + 1:stride]
        better = window > best
        best = np.where(better, window, best)
        arg = np.where(better, t, arg)
    return arg


def relu(x) -> np.ndarray:
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def flatten(maps) -> np.ndarray:
    """Row-major reshape: map by map, row by row, column by column."""
    return np.asarray(maps, dtype=np.float64).reshape(-1)


def matvec(weights, x) -> np.ndarray:
    return np.asarray(weights, dtype=np.float64) @ np.asarray(x, dtype=np.float64)
