import itertools

import numpy as np
import pytest

from net2milp.bnb import branch_and_bound
from net2milp.bounds import interval_propagate
from net2milp.encode_cnn import (CnnEncodeConfig, block_dims, census, check_blocks, encode_cnn, encode_conv_block,
                                 encode_fc_and_output, encode_flatten, encode_maxpool_block, encode_relu_block,
                                 flat_index, strip_biases)
from net2milp.encode_common import InputMode
from net2milp.milp import MilpModel, ModelError, evaluate
from net2milp.network import Conv, Dense, Flatten, MaxPool, NetworkSpec, forward
from net2milp.tensor import conv2d, maxpool2d
from generators import random_cnn


def _fixed_vars(model, values, prefix, lo=-10.0, hi=10.0):
    """Variables pinned by equality rows (not bounds) to the given values."""
    ids = np.empty(values.shape, dtype=np.int64)
    for idx in np.ndindex(values.shape):
        ids[idx] = model.add_var(f"{prefix}_{'_'.join(map(str, idx))}", lb=lo, ub=hi)
        model.add_constraint([(int(ids[idx]), 1.0)], "=", float(values[idx]))
    return ids


def _wide(shape, v=50.0):
    return np.full(shape, -v), np.full(shape, v)


@pytest.mark.parametrize("alpha, m, maps", [(1, 2, 2), (3, 4, 12)])
def test_conv_block_map_count(alpha, m, maps):
    model = MilpModel()
    A = _fixed_vars(model, np.zeros((alpha, 4, 4)), "A")
    layer = Conv(np.ones((m, 3, 3)), np.zeros(m))
    B = encode_conv_block(model, A, layer, 0, *_wide((maps, 2, 2)))
    assert B.shape == (maps, 2, 2)


def test_zero_kernel_forces_zero(rng):
    model = MilpModel()
    A = _fixed_vars(model, rng.uniform(0, 1, (1, 4, 4)), "A")
    B = encode_conv_block(model, A, Conv(np.zeros((1, 3, 3)), np.zeros(1)), 0, *_wide((1, 2, 2)))
    for vid in B.ravel():
        c = np.zeros(model.n_vars)
        c[vid] = 1.0
        assert branch_and_bound(model, cost=c).objective == pytest.approx(0.0, abs=1e-12)
        assert branch_and_bound(model, cost=-c).objective == pytest.approx(0.0, abs=1e-12)


def test_conv_block_matches_conv2d(rng):
    x = rng.uniform(0, 1, (2, 5, 5))
    k = rng.standard_normal((2, 3, 3))
    model = MilpModel()
    A = _fixed_vars(model, x, "A")
    layer = Conv(k, np.zeros(2))
    B = encode_conv_block(model, A, layer, 0, *_wide((4, 3, 3)))
    res = branch_and_bound(model)
    for gamma in range(2):
        for beta in range(2):
            # output map beta + gamma * alpha convolves input map beta with kernel gamma
            want = conv2d(x[beta], k[gamma], layer.params)
            np.testing.assert_allclose(res.assignment[B[beta + 2 * gamma]], want, atol=1e-9)


@pytest.mark.parametrize("value, want", [(3.0, (3.0, 0.0, 0.0)), (-3.0, (0.0, 3.0, 1.0))])
def test_relu_block_fixed_cell(value, want):
    model = MilpModel()
    B = _fixed_vars(model, np.array([[[value]]]), "B", -5.0, 5.0)
    Bh, S, Z = encode_relu_block(model, B, 0)
    res = branch_and_bound(model)
    got = tuple(res.assignment[v[0, 0, 0]] for v in (Bh, S, Z))
    assert got == pytest.approx(want, abs=1e-9)


def test_relu_block_random_maps(rng):
    vals = rng.standard_normal((2, 3, 3))
    model = MilpModel()
    B = _fixed_vars(model, vals, "B", -5.0, 5.0)
    Bh, _, _ = encode_relu_block(model, B, 0)
    res = branch_and_bound(model)
    np.testing.assert_allclose(res.assignment[Bh], np.maximum(vals, 0), atol=1e-9)


def test_relu_block_needs_bounds():
    model = MilpModel()
    B = np.array([[[model.add_var("B", lb=-np.inf, ub=1.0)]]])
    with pytest.raises(ModelError):
        encode_relu_block(model, B, 0)


def test_pool_window_picks_maximum():
    model = MilpModel()
    Bh = _fixed_vars(model, np.array([[[1.0, 2.0], [3.0, 4.0]]]), "Bh", 0.0, 5.0)
    A, Zeta = encode_maxpool_block(model, Bh, 2, 2, 0)
    for sense in (1.0, -1.0):
        c = np.zeros(model.n_vars)
        c[A[0, 0, 0]] = sense
        res = branch_and_bound(model, cost=c)
        assert res.assignment[A[0, 0, 0]] == pytest.approx(4.0)
        assert res.assignment[Zeta[0, 0, 0]].tolist() == [0, 0, 0, 1]


def test_pool_constant_window_any_selector():
    model = MilpModel()
    Bh = _fixed_vars(model, np.full((1, 2, 2), 0.7), "Bh", 0.0, 5.0)
    A, Zeta = encode_maxpool_block(model, Bh, 2, 2, 0)
    base = branch_and_bound(model).assignment.copy()
    assert base[A[0, 0, 0]] == pytest.approx(0.7)
    for t in range(4):
        point = base.copy()
        point[Zeta[0, 0, 0]] = 0.0
        point[Zeta[0, 0, 0, t]] = 1.0
        assert evaluate(model, point).feasible


def test_pool_matches_maxpool_on_random_maps(rng):
    for _ in range(200):
        vals = rng.uniform(0, 1, (1, 4, 4))
        model = MilpModel()
        Bh = _fixed_vars(model, vals, "Bh", 0.0, 1.0)
        A, Zeta = encode_maxpool_block(model, Bh, 2, 2, 0)
        res = branch_and_bound(model)
        np.testing.assert_array_equal(res.assignment[A[0]], maxpool2d(vals[0], 2, 2))
        assert np.all(res.assignment[Zeta].sum(axis=-1) == 1.0)


def test_flat_index_row_major_single_map():
    assert [flat_index(0, r, c, 2, 2) for r in range(2) for c in range(2)] == [0, 1, 2, 3]


def test_flat_index_two_unit_maps():
    assert flat_index(0, 0, 0, 1, 1) == 0 and flat_index(1, 0, 0, 1, 1) == 1


def test_flat_index_collision_free_exhaustive():
    for maps, h, w in itertools.product(range(1, 5), range(1, 5), range(1, 5)):
        idx = [flat_index(d, r, c, h, w) for d in range(maps) for r in range(h) for c in range(w)]
        assert sorted(idx) == list(range(maps * h * w))


def test_encode_flatten_matches_reshape(rng):
    vals = rng.uniform(0, 1, (2, 2, 3))
    model = MilpModel()
    A = _fixed_vars(model, vals, "A")
    pi = encode_flatten(model, A)
    res = branch_and_bound(model)
    np.testing.assert_allclose(res.assignment[pi], vals.reshape(-1), atol=1e-12)


def _bounds_for(layer, n):
    from net2milp.bounds import LayerBounds

    lo, hi = np.full(n, -50.0), np.full(n, 50.0)
    return LayerBounds("dense", np.maximum(lo, 0), np.maximum(hi, 0), lo, hi, layer.activation)


def test_fc_identity_passes_values(rng):
    vals = rng.uniform(0, 1, 4)
    model = MilpModel()
    pi = _fixed_vars(model, vals, "p")
    hidden = Dense(np.eye(4), np.zeros(4))
    out = Dense(np.ones((2, 4)), np.zeros(2))
    phi, psi = encode_fc_and_output(model, pi, hidden, out, _bounds_for(hidden, 4), _bounds_for(out, 2))
    res = branch_and_bound(model)
    np.testing.assert_allclose(res.assignment[phi["x"]], vals, atol=1e-9)
    assert set(psi) == {"x", "s", "z"}


def test_fc_all_negative_outputs():
    model = MilpModel()
    pi = _fixed_vars(model, np.ones(3), "p")
    hidden = Dense(np.eye(3), np.zeros(3))
    out = Dense(-np.ones((2, 3)), np.zeros(2))
    _, psi = encode_fc_and_output(model, pi, hidden, out, _bounds_for(hidden, 3), _bounds_for(out, 2))
    res = branch_and_bound(model)
    assert np.all(res.assignment[psi["x"]] == 0) and np.all(res.assignment[psi["z"]] == 1)


def _one_block_net(rng, classes=10, biases=False):
    conv = Conv(rng.standard_normal((1, 2, 2)), np.zeros(1) if not biases else rng.standard_normal(1))
    return NetworkSpec((6, 6), [conv, MaxPool(2, 1), Flatten(), Dense(rng.standard_normal((5, 16)) * 0.5,
                       np.zeros(5)), Dense(rng.standard_normal((classes, 5)), np.zeros(classes))], classes)


def _check_trace(net, vm, res, x):
    trace = forward(net, x)
    for k, roles in enumerate(vm.layers):
        np.testing.assert_allclose(res.assignment[roles["x"]], trace.post[k].reshape(roles["x"].shape), atol=1e-6)
        if "pre" in roles:
            np.testing.assert_allclose(res.assignment[roles["pre"]], trace.pre[k], atol=1e-6)


def test_one_block_full_match(rng):
    net = _one_block_net(rng)
    x = rng.uniform(0, 1, (6, 6))
    model, vm = encode_cnn(net, None, CnnEncodeConfig(input_mode=InputMode.fixed(x)))
    res = branch_and_bound(model)
    assert res.status == "optimal"
    _check_trace(net, vm, res, x)


def test_output_head_of_ten(rng):
    net = _one_block_net(rng, classes=10)
    x = rng.uniform(0, 1, (6, 6))
    model, vm = encode_cnn(net, None, CnnEncodeConfig(input_mode=InputMode.fixed(x)))
    res = branch_and_bound(model)
    np.testing.assert_allclose(res.assignment[vm.output], forward(net, x).output, atol=1e-6)


def test_biases_included_on_request(rng):
    net = random_cnn(rng, biases=True)
    x = rng.uniform(0, 1, (6, 6))
    model, vm = encode_cnn(net, None, CnnEncodeConfig(include_biases=True, input_mode=InputMode.fixed(x)))
    res = branch_and_bound(model)
    _check_trace(net, vm, res, x)


def test_biases_dropped_by_default(rng, caplog):
    net = random_cnn(rng, biases=True)
    x = rng.uniform(0, 1, (6, 6))
    model, vm = encode_cnn(net, None, CnnEncodeConfig(input_mode=InputMode.fixed(x)))
    assert "biases dropped" in caplog.text
    res = branch_and_bound(model)
    _check_trace(strip_biases(net), vm, res, x)


def test_census_matches_model(rng):
    for _ in range(10):
        net = random_cnn(rng)
        model, _ = encode_cnn(net)
        stats = model.stats()
        want = census(net)
        assert stats["variables"] == want["variables"] and stats["binaries"] == want["binaries"]
        assert stats["equalities"] == want["equalities"] and stats["indicators"] == want["indicators"]
        assert stats["constraints"] == want["equalities"] + want["inequalities"]


def test_block_dims(rng):
    net = NetworkSpec((8, 8), [Conv(np.ones((2, 3, 3)), np.zeros(2), 1, 1), MaxPool(2, 2),
                               Conv(np.ones((1, 3, 3)), np.zeros(1)), MaxPool(2, 2), Flatten(),
                               Dense(np.ones((3, 2)), np.zeros(3)), Dense(np.ones((2, 3)), np.zeros(2))], 2)
    dims = block_dims(net)
    assert [(d.h, d.h_conv, d.h_pool) for d in dims] == [(8, 8, 4), (4, 2, 1)]
    assert check_blocks(net) == 2


def test_zero_image_zero_kernels(rng):
    net = NetworkSpec((4, 4), [Conv(np.zeros((1, 3, 3)), np.zeros(1)), MaxPool(2, 2), Flatten(),
                               Dense(np.zeros((2, 1)), np.zeros(2)), Dense(np.zeros((2, 2)), np.zeros(2))], 2)
    model, vm = encode_cnn(net, None, CnnEncodeConfig(input_mode=InputMode.fixed(np.zeros((4, 4)))))
    res = branch_and_bound(model)
    for roles in vm.layers:
        assert np.all(res.assignment[roles["x"]] == 0)
    penalty = sum(v.cost * res.assignment[v.id] for v in model.variables if v.is_binary)
    assert res.objective == pytest.approx(penalty)


@pytest.mark.parametrize("layers, where", [
    ([Flatten(), Dense(np.ones((1, 16)), np.zeros(1))], "layer 0"),
    ([Conv(np.ones((1, 3, 3)), np.zeros(1)), Flatten(), Dense(np.ones((1, 4)), np.zeros(1))], "layer 1"),
])
def test_rejects_non_block_architecture(layers, where):
    net = NetworkSpec((4, 4), layers, 1)
    with pytest.raises(ModelError, match=where):
        encode_cnn(net)


def test_penalty_costs_validated():
    with pytest.raises(ValueError):
        CnnEncodeConfig(o=-1.0)


def test_objective_cost_groups(rng):
    net = _one_block_net(rng, classes=2)
    cfg = CnnEncodeConfig(c=0.1, g=0.2, l=0.3, n=0.4, o=0.5, c_phi=0.6, q=0.7, c_psi=0.8)
    model, _ = encode_cnn(net, None, cfg)
    by_prefix = {}
    for v in model.variables:
        by_prefix.setdefault(v.name.split("_")[0], set()).add(v.cost)
    assert by_prefix["B"] == {0.2} and by_prefix["Bh"] == {0.3} and by_prefix["zeta"] == {0.5}
    assert by_prefix["phi"] == {0.6} and by_prefix["zt"] == {0.7} and by_prefix["psi"] == {0.8}
    assert by_prefix["z"] == {0.4} and by_prefix["ztt"] == {0.0}
    assert by_prefix["A"] == {0.0}  # boxed input, single block: no inner block inputs


def test_bounds_argument_used(rng):
    net = _one_block_net(rng, classes=2)
    b = interval_propagate(net, np.zeros((6, 6)), np.ones((6, 6)))
    model, vm = encode_cnn(net, b)
    vid = int(vm.layers[0]["pre"][0, 0, 0])
    assert model.variables[vid].ub == pytest.approx(b.layers[0].pre_hi[0, 0, 0])
