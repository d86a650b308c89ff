"""Capsule network reference pieces: squash, routing by agreement, margin loss,
PrimaryCaps restacking and the parameter-count audit. Forward only."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def squash(s) -> np.ndarray:
    """Shrink ``s`` to length ``|s|^2 / (1 + |s|^2)`` keeping its direction; 0 maps to 0."""
    s = np.asarray(s, dtype=np.float64)
    n2 = float(s @ s)
    if n2 == 0.0:
        return np.zeros_like(s)
    return (n2 / (1.0 + n2)) * s / np.sqrt(n2)


def predict(u, W) -> np.ndarray:
    """Prediction vector ``W @ u`` of one lower capsule for one upper capsule."""
    u = np.asarray(u, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2 or W.shape[1] != u.shape[0]:
        raise ValueError(f"weight extents {W.shape} do not match capsule length {u.shape[0]}")
    return W @ u


def softmax_rows(b: np.ndarray) -> np.ndarray:
    e = np.exp(b - b.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class RoutingState:
    b: np.ndarray  # (lower, upper) logits
    c: np.ndarray  # (lower, upper) couplings
    history: list = field(default_factory=list)  # couplings used in each iteration
    logit_history: list = field(default_factory=list)  # logits after each iteration


def route(u_hat, r: int = 3):
    """Routing by agreement.

    ``u_hat[i, j]`` is lower capsule i's prediction for upper capsule j.
    Each iteration: couplings ``c_i = softmax(b_i)`` over j, weighted sums
    ``s_j = sum_i c_ij u_hat[i, j]``, outputs ``v_j = squash(s_j)`` and
    agreement updates ``b_ij += u_hat[i, j] . v_j``.
    """
    if r < 1:
        raise ValueError("routing needs at least one iteration")
    u_hat = np.asarray(u_hat, dtype=np.float64)
    n_lower, n_upper, _ = u_hat.shape
    b = np.zeros((n_lower, n_upper))
    state = RoutingState(b, b.copy())
    v = None
    for _ in range(r):
        c = softmax_rows(b)
        s = np.einsum("ij,ijd->jd", c, u_hat)
        v = np.stack([squash(sj) for sj in s])
        b = b + np.einsum("ijd,jd->ij", u_hat, v)
        state.history.append(c)
        state.logit_history.append(b.copy())
    state.b, state.c = b, state.history[-1]
    return v, state


M_PLUS, M_MINUS, LAMBDA = 0.9, 0.1, 0.5


def margin_loss(v, present, m_plus: float = M_PLUS, m_minus: float = M_MINUS, lam: float = LAMBDA) -> float:
    lengths = np.linalg.norm(np.asarray(v, dtype=np.float64), axis=-1)
    T = np.asarray(present, dtype=np.float64)
    return float(np.sum(T * np.maximum(0.0, m_plus - lengths) ** 2
                        + lam * (1.0 - T) * np.maximum(0.0, lengths - m_minus) ** 2))


def primarycaps_restack(maps, dim: int = 8) -> np.ndarray:
    """(decks*dim, h, w) maps -> (decks, h, w, dim) capsules.

    Component t of a capsule in deck d is read from map ``t + dim * d``.
    """
    maps = np.asarray(maps, dtype=np.float64)
    if maps.shape[0] % dim:
        raise ValueError(f"{maps.shape[0]} maps cannot be split into decks of width {dim}")
    decks = maps.shape[0] // dim
    return maps.reshape(decks, dim, *maps.shape[1:]).transpose(0, 2, 3, 1).copy()


def primarycaps_unstack(caps) -> np.ndarray:
    caps = np.asarray(caps, dtype=np.float64)
    decks, h, w, dim = caps.shape
    return caps.transpose(0, 3, 1, 2).reshape(decks * dim, h, w).copy()


@dataclass(frozen=True)
class CapsArchitecture:
    conv_kernels: int = 256
    conv_size: int = 9
    primary_size: int = 9
    decks: int = 32
    primary_dim: int = 8
    # 20x20 maps under a 9x9 stride-2 kernel give 6x6 only with flooring
    primary_extent: int = 6
    digit_dim: int = 16
    classes: int = 10
    decoder: tuple = (512, 1024, 784)

    @property
    def n_capsules(self) -> int:
        return self.decks * self.primary_extent * self.primary_extent


def param_count(arch: CapsArchitecture | None = None) -> dict:
    """Layer-by-layer trainable-parameter arithmetic, integers throughout.

    The digitcaps term also counts one routing logit and one coupling per
    lower capsule, although both are per-pass state rather than weights.
    """
    a = arch or CapsArchitecture()
    conv = (a.conv_size ** 2 + 1) * a.conv_kernels
    primary = (a.decks * a.primary_dim) * ((a.primary_size ** 2 + 1) * a.conv_kernels)
    n = a.n_capsules
    digit = (n * (a.digit_dim * a.primary_dim) + n * 2) * a.classes
    d = a.decoder
    decoder = sum((d[k] + 1) * d[k + 1] for k in range(len(d) - 1))
    without = conv + primary + digit
    return {"conv": conv, "primarycaps": primary, "digitcaps": digit, "decoder": decoder,
            "total_without_decoder": without, "total_with_decoder": without + decoder}


def worked_example() -> np.ndarray:
    """Two lower capsules, two classes: both agree on class 2, disagree (orthogonally) on class 1."""
    u = np.zeros((2, 2, 2))
    u[0, 0] = (0.9, 0.0)
    u[1, 0] = (0.0, 0.9)
    u[0, 1] = (0.6, 0.6)
    u[1, 1] = (0.62, 0.58)
    return u
