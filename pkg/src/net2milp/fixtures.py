"""Synthetic 8x8 digit glyphs used as the desk-scale training set.

Each class has one hand-drawn glyph; variants shift it by one pixel and
add a little intensity noise. The generated set is committed under
``data/digits8.txt``; :func:`generate` rebuilds it from the seed.
"""
from __future__ import annotations

from importlib import resources

import numpy as np

from . import rng as rngmod
from .imageio import format_dataset, parse_dataset

GLYPHS = {
    0: ["..####..",
        ".##..##.",
        ".#....#.",
        ".#....#.",
        ".#....#.",
        ".#....#.",
        ".##..##.",
        "..####.."],
    1: ["...##...",
        "..###...",
        ".#.##...",
        "...##...",
        "...##...",
        "...##...",
        "...##...",
        ".######."],
    2: ["..####..",
        ".#....#.",
        "......#.",
        ".....#..",
        "....#...",
        "...#....",
        "..#.....",
        ".######."],
    3: [".#####..",
        "......#.",
        "......#.",
        "..####..",
        "......#.",
        "......#.",
        "......#.",
        ".#####.."],
    4: [".#...#..",
        ".#...#..",
        ".#...#..",
        ".######.",
        ".....#..",
        ".....#..",
        ".....#..",
        ".....#.."],
    5: [".######.",
        ".#......",
        ".#......",
        ".#####..",
        "......#.",
        "......#.",
        ".#....#.",
        "..####.."],
    6: ["...###..",
        "..#.....",
        ".#......",
        ".#####..",
        ".#....#.",
        ".#....#.",
        ".#....#.",
        "..####.."],
    7: [".######.",
        "......#.",
        ".....#..",
        ".....#..",
        "....#...",
        "....#...",
        "...#....",
        "...#...."],
    8: ["..####..",
        ".#....#.",
        ".#....#.",
        "..####..",
        ".#....#.",
        ".#....#.",
        ".#....#.",
        "..####.."],
    9: ["..####..",
        ".#....#.",
        ".#....#.",
        "..#####.",
        "......#.",
        "......#.",
        ".....#..",
        "..###..."],
}

SHIFTS = ((0, 0), (0, 1), (0, -1), (1, 0), (-1, 0))


def glyph(label: int) -> np.ndarray:
    return np.array([[1.0 if ch == "#" else 0.0 for ch in row] for row in GLYPHS[label]])


def _shift(img: np.ndarray, dr: int, dc: int) -> np.ndarray:
    out = np.zeros_like(img)
    h, w = img.shape
    out[max(dr, 0):h + min(dr, 0), max(dc, 0):w + min(dc, 0)] = \
        img[max(-dr, 0):h + min(-dr, 0), max(-dc, 0):w + min(-dc, 0)]
    return out


def generate(classes=range(10), per_class: int = 10, noise: float = 0.1, seed: int = 0):
    """Shifted, noisy copies of each glyph, rounded to 1/100 and clipped to [0, 1]."""
    gen = rngmod.stream(seed, "fixtures")
    images, labels = [], []
    for label in classes:
        base = glyph(label)
        for v in range(per_class):
            dr, dc = SHIFTS[v % len(SHIFTS)]
            img = _shift(base, dr, dc)
            if noise and v > 0:
                img = img + gen.uniform(-noise, noise, img.shape) * (img > 0) + \
                    gen.uniform(0, noise, img.shape) * (img == 0)
            images.append(np.clip(np.round(img, 2), 0.0, 1.0))
            labels.append(int(label))
    return images, labels


def load_digits(classes=None):
    """The committed fixture set, optionally restricted to some classes."""
    text = resources.files("net2milp").joinpath("data/digits8.txt").read_text()
    images, labels = parse_dataset(text)
    if classes is None:
        return images, labels
    keep = [i for i, lab in enumerate(labels) if lab in set(classes)]
    return [images[i] for i in keep], [labels[i] for i in keep]


def write_digits(path, **kwargs) -> None:
    images, labels = generate(**kwargs)
    with open(path, "w") as fh:
        fh.write("# 8x8 synthetic digit glyphs; regenerate with net2milp.fixtures.write_digits\n")
        fh.write(format_dataset(images, labels))
