"""Image and dataset files: text grids, binary/ASCII PGM, MNIST IDX."""
from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np


def format_grid(image) -> str:
    """One row per line, values in shortest round-trip form."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError("text grids hold 2-D images")
    return "\n".join(" ".join(repr(float(v)) for v in row) for row in arr) + "\n"


def parse_grid(text: str) -> np.ndarray:
    rows = [line.split() for line in text.splitlines() if line.strip() and not line.startswith("#")]
    if not rows or len({len(r) for r in rows}) != 1:
        raise ValueError("grid rows are empty or ragged")
    return np.array([[float(v) for v in r] for r in rows])


def write_pgm(image, path) -> None:
    """8-bit binary PGM; values in [0, 1] are scaled to 0..255."""
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    data = np.round(arr * 255.0).astype(np.uint8)
    h, w = data.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + data.tobytes())


def read_pgm(path) -> np.ndarray:
    """P5 or P2 PGM, scaled to [0, 1] by the maximum grey value."""
    raw = Path(path).read_bytes()
    magic = raw[:2]
    if magic not in (b"P5", b"P2"):
        raise ValueError(f"{path}: not a PGM file")
    fields, pos = [], 2
    while len(fields) < 3:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        start = pos
        while not raw[pos:pos + 1].isspace():
            pos += 1
        fields.append(int(raw[start:pos]))
    w, h, maxval = fields
    if magic == b"P5":
        dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
        data = np.frombuffer(raw[pos + 1:], dtype=dtype, count=w * h)
    else:
        data = np.array(raw[pos:].split()[: w * h], dtype=np.int64)
    return data.reshape(h, w).astype(np.float64) / maxval


def read_image(path) -> np.ndarray:
    """PGM by magic number, otherwise a text grid."""
    head = Path(path).read_bytes()[:2]
    if head in (b"P5", b"P2"):
        return read_pgm(path)
    return parse_grid(Path(path).read_text())


# --------------------------------------------------------------------------
# labelled datasets
# --------------------------------------------------------------------------

def format_dataset(images, labels) -> str:
    """Blocks of ``label N`` followed by the image grid, separated by blank lines."""
    parts = []
    for img, lab in zip(images, labels):
        arr = np.asarray(img, dtype=np.float64)
        rows = "\n".join(" ".join(_short(v) for v in row) for row in arr)
        parts.append(f"label {int(lab)}\n{rows}\n")
    return "\n".join(parts)


def _short(v: float) -> str:
    text = repr(float(v))
    return text[:-2] if text.endswith(".0") else text


def parse_dataset(text: str):
    images, labels = [], []
    block: list = []
    label = None

    def close():
        if label is not None:
            images.append(parse_grid("\n".join(block)))
            labels.append(label)

    for line in text.splitlines():
        s = line.strip()
        if s.startswith("#"):
            continue
        if s.startswith("label"):
            close()
            label = int(s.split()[1])
            block = []
        elif s:
            block.append(s)
    close()
    if not images:
        raise ValueError("dataset holds no images")
    return images, labels


def read_dataset(path):
    return parse_dataset(Path(path).read_text())


def read_idx(path) -> np.ndarray:
    """Array from an MNIST-style IDX file (optionally gzipped)."""
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as fh:
        raw = fh.read()
    zero, dtype_code, ndim = struct.unpack(">HBB", raw[:4])
    if zero != 0:
        raise ValueError(f"{path}: bad IDX magic")
    dims = struct.unpack(">" + "I" * ndim, raw[4:4 + 4 * ndim])
    dtypes = {0x08: np.uint8, 0x09: np.int8, 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}
    data = np.frombuffer(raw[4 + 4 * ndim:], dtype=dtypes[dtype_code], count=int(np.prod(dims)))
    return data.reshape(dims)


def read_mnist(images_path, labels_path, limit: int | None = None):
    """Images scaled to [0, 1] plus integer labels."""
    imgs = read_idx(images_path)[:limit].astype(np.float64) / 255.0
    labs = read_idx(labels_path)[:limit].astype(np.int64)
    return list(imgs), labs.tolist()
