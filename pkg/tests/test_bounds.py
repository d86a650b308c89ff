import numpy as np
import pytest

from net2milp.bounds import BoundSet, interval_propagate, lp_tighten, violations
from net2milp.network import Dense, NetworkSpec
from generators import random_cnn, random_dense_net
from oracles import batch_dense_pre_post


def _unit(w):
    return NetworkSpec((1,), [Dense(np.array([[w]]), np.zeros(1))], 1)


def test_unit_positive_weight():
    b = interval_propagate(_unit(1.0), [0.0], [1.0]).layers[0]
    assert (b.lo[0], b.hi[0]) == (0.0, 1.0) and b.s_ub[0] == 0.0


def test_unit_negative_weight():
    b = interval_propagate(_unit(-1.0), [0.0], [1.0]).layers[0]
    assert (b.lo[0], b.hi[0]) == (0.0, 0.0) and b.s_ub[0] == 1.0


def cancelling_net():
    """|x| written as relu(x) + relu(-x); interval arithmetic cannot see the cancellation."""
    return NetworkSpec((1,), [Dense(np.array([[1.0], [-1.0]]), np.zeros(2)),
                              Dense(np.array([[1.0, 1.0]]), np.zeros(1))], 1)


def test_cancelling_weights_exact_beats_interval():
    net = cancelling_net()
    iv = interval_propagate(net, [-1.0], [1.0]).layers[1].pre_hi[0]
    ex = lp_tighten(net, [-1.0], [1.0], "exact_milp").layers[1].pre_hi[0]
    assert iv == 2.0
    assert ex < iv
    assert ex == pytest.approx(1.0, abs=1e-6)


def _box_samples(rng, shape, n=10_000):
    return rng.uniform(0, 1, (n, *shape))


def _batch_violations(net, bounds, X):
    bad = 0
    for b, (pre, post) in zip(bounds.layers, batch_dense_pre_post(net, X)):
        if pre is not None:
            bad += int(np.sum((pre < b.pre_lo) | (pre > b.pre_hi)))
        bad += int(np.sum((post < b.lo) | (post > b.hi)))
    return bad


@pytest.mark.parametrize("mode", ["interval", "lp_relaxation"])
def test_sampled_traces_stay_inside(rng, mode):
    for _ in range(3):
        net = random_dense_net(rng, 4, 3, 6)
        lo, hi = np.zeros(4), np.ones(4)
        b = interval_propagate(net, lo, hi) if mode == "interval" else lp_tighten(net, lo, hi)
        X = _box_samples(rng, (4,))
        assert _batch_violations(net, b, X) == 0


def test_cnn_samples_stay_inside(rng):
    net = random_cnn(rng)
    b = lp_tighten(net, np.zeros((6, 6)), np.ones((6, 6)))
    assert violations(net, b, _box_samples(rng, (6, 6), 2000)) == 0


def test_violation_counter_agrees_with_batch_oracle(rng):
    net = random_dense_net(rng, 3, 3, 5)
    b = interval_propagate(net, np.zeros(3), np.ones(3))
    # shrink one bound so some samples break it
    b.layers[0].pre_hi[:] = b.layers[0].pre_hi * 0.5
    X = _box_samples(rng, (3,), 500)
    assert violations(net, b, X) == _batch_violations(net, b, X) > 0


def test_single_layer_tightening_is_identity(rng):
    net = random_dense_net(rng, 4, 1, 6)
    iv = interval_propagate(net, np.zeros(4), np.ones(4))
    for mode in ("lp_relaxation", "exact_milp"):
        t = lp_tighten(net, np.zeros(4), np.ones(4), mode)
        np.testing.assert_array_equal(t.layers[0].pre_hi, iv.layers[0].pre_hi)
        np.testing.assert_array_equal(t.layers[0].pre_lo, iv.layers[0].pre_lo)


def test_tightened_ub_covers_samples(rng):
    net = random_dense_net(rng, 3, 3, 5)
    t = lp_tighten(net, np.zeros(3), np.ones(3), "exact_milp")
    layers = batch_dense_pre_post(net, _box_samples(rng, (3,)))
    for b, (pre, post) in zip(t.layers, layers):
        assert np.all(b.pre_hi >= pre.max(axis=0)) and np.all(b.hi >= post.max(axis=0))


def test_monotone_chain(rng):
    for _ in range(3):
        net = random_dense_net(rng, 3, 3, 5)
        lo, hi = np.zeros(3), np.ones(3)
        iv = interval_propagate(net, lo, hi)
        lp = lp_tighten(net, lo, hi, "lp_relaxation")
        ex = lp_tighten(net, lo, hi, "exact_milp")
        for a, b, c in zip(iv.layers, lp.layers, ex.layers):
            assert np.all(b.pre_hi <= a.pre_hi) and np.all(c.pre_hi <= b.pre_hi)
            assert np.all(b.pre_lo >= a.pre_lo) and np.all(c.pre_lo >= b.pre_lo)


def test_interval_idempotent(rng):
    net = random_dense_net(rng, 3, 3, 5)
    a = interval_propagate(net, np.zeros(3), np.ones(3))
    b = interval_propagate(net, np.zeros(3), np.ones(3))
    assert a.to_json() == b.to_json()


def test_hidden_lower_bounds_nonnegative(rng):
    net = random_dense_net(rng, 3, 3, 5)
    for layer in interval_propagate(net, -np.ones(3), np.ones(3)).layers:
        assert np.all(layer.lo >= 0) and np.all(layer.s_ub >= 0)


def test_threads_do_not_change_result(rng):
    net = random_dense_net(rng, 4, 3, 6)
    a = lp_tighten(net, np.zeros(4), np.ones(4), threads=1)
    b = lp_tighten(net, np.zeros(4), np.ones(4), threads=3)
    assert a.to_json() == b.to_json()


def test_failed_unit_keeps_interval_bound(rng):
    net = cancelling_net()
    iv = interval_propagate(net, [-1.0], [1.0])
    t = lp_tighten(net, [-1.0], [1.0], "exact_milp", time_budget=-1.0)
    assert t.warnings and "layer 1" in t.warnings[0]
    np.testing.assert_array_equal(t.layers[1].pre_hi, iv.layers[1].pre_hi)


def test_json_round_trip(rng):
    net = random_cnn(rng)
    b = lp_tighten(net, np.zeros((6, 6)), np.ones((6, 6)))
    again = BoundSet.from_json(b.to_json())
    assert again.to_json() == b.to_json()
    for x, y in zip(b.layers, again.layers):
        np.testing.assert_array_equal(x.hi, y.hi)


def test_unknown_mode():
    with pytest.raises(ValueError):
        lp_tighten(_unit(1.0), [0.0], [1.0], "magic")


def test_trace_inside_for_fixture(two_class_net):
    net, data, _ = two_class_net
    b = lp_tighten(net, np.zeros((8, 8)), np.ones((8, 8)))
    assert violations(net, b, data.inputs) == 0
