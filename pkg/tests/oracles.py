"""Reference implementations the package is checked against.

Nothing here imports the code under test except the plain data classes it
needs to read (layers, models). scipy is used only on this side.
"""
import itertools
import math

import numpy as np


def naive_conv(image, kernel, stride=1, padding=0):
    h, w = image.shape
    f = kernel.shape[0]
    padded = np.zeros((h + 2 * padding, w + 2 * padding))
    padded[padding:padding + h, padding:padding + w] = image
    oh = (h - f + 2 * padding) // stride + 1
    ow = (w - f + 2 * padding) // stride + 1
    out = np.zeros((oh, ow))
    for r in range(oh):
        for c in range(ow):
            acc = 0.0
            for i in range(f):
                for j in range(f):
                    acc += padded[r * stride + i, c * stride + j] * kernel[i, j]
            out[r, c] = acc
    return out


def naive_pool(image, size, stride):
    h, w = image.shape
    oh, ow = (h - size) // stride + 1, (w - size) // stride + 1
    out = np.empty((oh, ow))
    for r in range(oh):
        for c in range(ow):
            out[r, c] = max(image[r * stride + i, c * stride + j] for i in range(size) for j in range(size))
    return out


def straight_line_forward(net, x):
    """Layer-by-layer evaluation with explicit loops; returns the list of layer outputs."""
    outs = []
    cur = np.array(x, dtype=float)
    for layer in net.layers:
        kind = layer.kind
        if kind == "dense":
            v = cur.reshape(-1)
            pre = [sum(layer.weights[j, i] * v[i] for i in range(v.size)) + layer.bias[j]
                   for j in range(layer.weights.shape[0])]
            cur = np.array([max(p, 0.0) if layer.activation == "relu" else p for p in pre])
        elif kind == "conv":
            maps = cur if cur.ndim == 3 else cur[None]
            res = []
            for g in range(layer.kernels.shape[0]):
                for b in range(maps.shape[0]):
                    res.append(np.maximum(naive_conv(maps[b], layer.kernels[g], layer.stride, layer.padding)
                                          + layer.bias[g], 0.0))
            cur = np.array(res)
        elif kind == "maxpool":
            maps = cur if cur.ndim == 3 else cur[None]
            cur = np.array([naive_pool(m, layer.pool_size, layer.stride) for m in maps])
        elif kind == "flatten":
            cur = np.array([v for v in cur.flat])
        outs.append(cur)
    return outs


def loss_loop(net, inputs, targets):
    total = 0.0
    for x, t in zip(inputs, targets):
        out = straight_line_forward(net, x)[-1]
        for i in range(len(t)):
            total += (t[i] - out[i]) ** 2
    return total / (2 * len(inputs))


def _model_arrays(model):
    n = len(model.variables)
    rows, senses, rhs = [], [], []
    for con in model.constraints:
        a = np.zeros(n)
        for i, v in con.terms:
            a[i] += v
        rows.append(a)
        senses.append(con.sense)
        rhs.append(con.rhs)
    return rows, senses, rhs


def _linprog(c, rows, senses, rhs, lb, ub):
    from scipy.optimize import linprog

    n = len(c)
    a_ub, b_ub, a_eq, b_eq = [], [], [], []
    for a, s, r in zip(rows, senses, rhs):
        if s == "<=":
            a_ub.append(a); b_ub.append(r)
        elif s == ">=":
            a_ub.append(-a); b_ub.append(-r)
        else:
            a_eq.append(a); b_eq.append(r)
    bounds = [(None if math.isinf(l) else l, None if math.isinf(u) else u) for l, u in zip(lb, ub)]
    res = linprog(c, A_ub=np.array(a_ub).reshape(-1, n) if a_ub else None, b_ub=b_ub or None,
                  A_eq=np.array(a_eq).reshape(-1, n) if a_eq else None, b_eq=b_eq or None,
                  bounds=bounds, method="highs")
    if res.status == 0:
        return res.fun
    if res.status == 2:
        return math.inf
    if res.status == 3:
        return -math.inf
    raise RuntimeError(f"linprog status {res.status}: {res.message}")


def enumerate_milp(model):
    """Minimum over all 2^b binary patterns, each an LP with the active indicators added."""
    rows, senses, rhs = _model_arrays(model)
    n = len(model.variables)
    c = np.array([v.cost for v in model.variables])
    binaries = [v.id for v in model.variables if v.kind == "binary"]
    best = math.inf
    for pattern in itertools.product((0, 1), repeat=len(binaries)):
        lb = [v.lb for v in model.variables]
        ub = [v.ub for v in model.variables]
        skip = False
        for vid, val in zip(binaries, pattern):
            if not model.variables[vid].lb <= val <= model.variables[vid].ub:
                skip = True
            lb[vid] = ub[vid] = float(val)
        if skip:
            continue
        extra_rows, extra_senses, extra_rhs = [], [], []
        for ind in model.indicators:
            if pattern[binaries.index(ind.guard)] == ind.active_when:
                a = np.zeros(n)
                for i, v in ind.implied.terms:
                    a[i] += v
                extra_rows.append(a); extra_senses.append(ind.implied.sense); extra_rhs.append(ind.implied.rhs)
        best = min(best, _linprog(c, rows + extra_rows, senses + extra_senses, rhs + extra_rhs, lb, ub))
    return best


def vertex_lp(c, A, senses, b, lb, ub, chunk=20000):
    """Best vertex of a bounded LP by trying every choice of n tight constraints."""
    c = np.asarray(c, float)
    n = c.size
    G, h, eq = [], [], []
    for a, s, r in zip(A, senses, b):
        G.append(np.asarray(a, float)); h.append(r); eq.append(s == "=")
    for i in range(n):
        e = np.zeros(n); e[i] = 1.0
        G.append(e); h.append(lb[i]); eq.append(False)
        G.append(e); h.append(ub[i]); eq.append(False)
    G, h = np.array(G), np.array(h)
    lower = np.array([s == ">=" for s in senses] + [True, False] * n)
    upper = np.array([s == "<=" for s in senses] + [False, True] * n)
    eqs = np.array([s == "=" for s in senses] + [False] * (2 * n))

    def feasible(x):
        r = x @ G.T - h
        ok = np.ones(x.shape[0], bool)
        ok &= np.all(np.where(upper, r <= 1e-9, True), axis=1)
        ok &= np.all(np.where(lower, r >= -1e-9, True), axis=1)
        ok &= np.all(np.where(eqs, np.abs(r) <= 1e-9, True), axis=1)
        return ok

    best = math.inf
    combos = itertools.combinations(range(G.shape[0]), n)
    while True:
        batch = list(itertools.islice(combos, chunk))
        if not batch:
            break
        idx = np.array(batch)
        M = G[idx]
        rhs = h[idx]
        det = np.linalg.det(M)
        good = np.abs(det) > 1e-10
        if not good.any():
            continue
        x = np.linalg.solve(M[good], rhs[good][..., None])[..., 0]
        ok = feasible(x)
        if ok.any():
            best = min(best, float((x[ok] @ c).min()))
    return best


def feasible_batch(model, X, guards=None, big_m=False, tol=1e-9):
    """Feasibility of many points at once (rows of ``X``) for a model.

    With ``big_m`` false, indicators are checked as implications at the
    guard values in ``X``.
    """
    X = np.asarray(X, float)
    lb = np.array([v.lb for v in model.variables])
    ub = np.array([v.ub for v in model.variables])
    ok = np.all((X >= lb - tol) & (X <= ub + tol), axis=1)
    for con in model.constraints:
        lhs = sum(v * X[:, i] for i, v in con.terms) if con.terms else np.zeros(len(X))
        if con.sense == "<=":
            ok &= lhs <= con.rhs + tol
        elif con.sense == ">=":
            ok &= lhs >= con.rhs - tol
        else:
            ok &= np.abs(lhs - con.rhs) <= tol
    if not big_m:
        for ind in model.indicators:
            lhs = sum(v * X[:, i] for i, v in ind.implied.terms)
            active = X[:, ind.guard] == ind.active_when
            ok &= ~active | (lhs <= ind.implied.rhs + tol)
    return ok


def batch_dense_pre_post(net, X):
    """(pre, post) per layer for a batch of inputs through a dense (optionally flattened) net."""
    cur = np.asarray(X, float).reshape(len(X), -1)
    out = []
    for layer in net.layers:
        if layer.kind == "flatten":
            out.append((None, cur))
            continue
        pre = cur @ layer.weights.T + layer.bias
        cur = np.maximum(pre, 0.0) if layer.activation == "relu" else pre
        out.append((pre, cur))
    return out


def loop_route(u_hat, r):
    """Routing by agreement with plain loops; returns (v, couplings per iteration, logits per iteration)."""
    n_i, n_j, d = len(u_hat), len(u_hat[0]), len(u_hat[0][0])
    b = [[0.0] * n_j for _ in range(n_i)]
    cs, bs, v = [], [], None
    for _ in range(r):
        c = []
        for i in range(n_i):
            m = max(b[i])
            e = [math.exp(bij - m) for bij in b[i]]
            c.append([x / sum(e) for x in e])
        v = []
        for j in range(n_j):
            s = [sum(c[i][j] * u_hat[i][j][k] for i in range(n_i)) for k in range(d)]
            n2 = sum(x * x for x in s)
            v.append([0.0] * d if n2 == 0 else [n2 / (1 + n2) * x / math.sqrt(n2) for x in s])
        for i in range(n_i):
            for j in range(n_j):
                b[i][j] += sum(u_hat[i][j][k] * v[j][k] for k in range(d))
        cs.append(c)
        bs.append([row[:] for row in b])
    return v, cs, bs
