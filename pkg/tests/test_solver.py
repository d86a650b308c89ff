import json
import math
from pathlib import Path

import numpy as np
import pytest

from net2milp.bnb import BnbConfig, branch_and_bound, solve_lp_relaxation
from net2milp.encode_common import InputMode
from net2milp.encode_dnn import DnnEncodeConfig, encode_dnn
from net2milp.lpformat import read_lp, write_lp
from net2milp.milp import MilpModel, evaluate, to_big_m
from net2milp.network import Dense, NetworkSpec
from net2milp.simplex import LpProblem, simplex_solve
from generators import random_milp
from oracles import enumerate_milp

DATA = Path(__file__).parent / "data"


def test_simplex_max_x():
    res = simplex_solve(LpProblem([-1.0], [[1.0]], ["<="], [5.0], [0.0], [math.inf]))
    assert res.status == "optimal" and res.x[0] == pytest.approx(5.0) and res.objective == pytest.approx(-5.0)


def test_simplex_infeasible():
    res = simplex_solve(LpProblem([0.0], [[1.0], [1.0]], [">=", "<="], [1.0, 0.0], [-math.inf], [math.inf]))
    assert res.status == "infeasible"


def test_simplex_unbounded():
    res = simplex_solve(LpProblem([-1.0], np.zeros((0, 1)), [], [], [0.0], [math.inf]))
    assert res.status == "unbounded"


def test_simplex_matches_frozen_vertex_oracle():
    doc = json.loads((DATA / "lp_vertices.json").read_text())
    assert len(doc["instances"]) == 50
    for rec in doc["instances"]:
        res = simplex_solve(LpProblem(rec["c"], rec["A"], rec["senses"], rec["b"], rec["lb"], rec["ub"]))
        assert res.status == "optimal"
        assert res.objective == pytest.approx(rec["objective"], abs=1e-6)


def test_simplex_degenerate_cycling_instance():
    # a classic degenerate LP that cycles under the plain largest-coefficient rule
    c = [-0.75, 150.0, -0.02, 6.0]
    A = [[0.25, -60.0, -0.04, 9.0], [0.5, -90.0, -0.02, 3.0], [0.0, 0.0, 1.0, 0.0]]
    res = simplex_solve(LpProblem(c, A, ["<=", "<=", "<="], [0.0, 0.0, 1.0], [0.0] * 4, [math.inf] * 4))
    assert res.status == "optimal" and res.objective == pytest.approx(-0.05)


def test_no_binaries_equals_simplex(rng):
    m = MilpModel()
    xs = [m.add_var(f"x{i}", lb=-1, ub=2, cost=float(rng.standard_normal())) for i in range(4)]
    m.add_constraint([(x, 1.0) for x in xs], "<=", 1.5)
    res = branch_and_bound(m)
    lp = solve_lp_relaxation(m)
    assert res.status == "optimal" and res.objective == pytest.approx(lp.objective, abs=1e-12)
    assert res.nodes == 1


def test_matches_frozen_enumeration_subset():
    doc = json.loads((DATA / "milp_enumeration.json").read_text())
    for rec in doc["instances"][:25]:
        res = branch_and_bound(read_lp(rec["lp"]))
        if rec["infeasible"]:
            assert res.status == "infeasible"
        else:
            assert res.status == "optimal" and abs(res.objective - rec["objective"]) <= 1e-6


def test_live_enumeration_oracle(rng):
    pytest.importorskip("scipy")
    for _ in range(8):
        m = random_milp(rng, max_binaries=5, max_continuous=6)
        want = enumerate_milp(m)
        res = branch_and_bound(m)
        if math.isinf(want):
            assert res.status == "infeasible"
        else:
            assert res.objective == pytest.approx(want, abs=1e-6)


def test_negative_input_unit_pays_penalty():
    net = NetworkSpec((1,), [Dense(np.array([[1.0]]), np.zeros(1))], 1)
    gamma = 0.7
    model, vm = encode_dnn(net, None, DnnEncodeConfig(1.0, gamma, InputMode.fixed([-2.0])))
    res = branch_and_bound(model)
    x, s, z = vm.unit(0, 0)
    assert res.assignment[z] == 1 and res.assignment[x] == 0
    # the fixed input's own cost is constant and counted in the objective
    assert res.objective == pytest.approx(gamma + 1.0 * -2.0)
    model, _ = encode_dnn(net, None, DnnEncodeConfig(1.0, gamma, InputMode.fixed([-2.0]), input_cost=0.0))
    assert branch_and_bound(model).objective == pytest.approx(gamma)


def test_indicator_branching_equals_big_m(rng):
    for _ in range(15):
        m = random_milp(rng, max_binaries=6, max_continuous=8)
        a, b = branch_and_bound(m), branch_and_bound(to_big_m(m))
        assert a.status == b.status
        if a.status == "optimal":
            assert a.objective == pytest.approx(b.objective, abs=1e-6)


def test_deterministic(rng):
    m = random_milp(rng, max_binaries=10, max_continuous=10)
    a, b = branch_and_bound(m), branch_and_bound(m)
    assert a.nodes == b.nodes and a.status == b.status
    assert (a.assignment is None and b.assignment is None) or np.array_equal(a.assignment, b.assignment)


def test_best_bound_monotone(rng):
    for _ in range(10):
        res = branch_and_bound(random_milp(rng))
        h = [v for v in res.bound_history if not math.isinf(v)]
        assert all(x <= y + 1e-12 for x, y in zip(h, h[1:]))


def test_optimal_gap_invariant(rng):
    for _ in range(10):
        res = branch_and_bound(random_milp(rng))
        if res.status == "optimal":
            assert abs(res.objective - res.best_bound) <= 1e-6


def test_node_limit_reports_status():
    rng = np.random.default_rng(5)
    while True:
        m = random_milp(rng)
        if branch_and_bound(m).nodes > 3:
            break
    res = branch_and_bound(m, BnbConfig(node_limit=1))
    assert res.status == "node_limit" and res.nodes == 1
    if res.assignment is None:
        assert math.isinf(res.objective)
    else:
        assert evaluate(m, res.assignment).feasible


def test_branching_rules_agree(rng):
    for _ in range(10):
        m = random_milp(rng, max_binaries=6, max_continuous=6)
        a = branch_and_bound(m, BnbConfig(branching="most_fractional"))
        b = branch_and_bound(m, BnbConfig(branching="first_fractional"))
        assert a.status == b.status
        if a.status == "optimal":
            assert a.objective == pytest.approx(b.objective, abs=1e-6)


def test_config_validation():
    with pytest.raises(ValueError):
        BnbConfig(node_limit=0)
    with pytest.raises(ValueError):
        BnbConfig(branching="random")


def test_big_m_model_solves_in_external_solver(rng, tmp_path):
    highspy = pytest.importorskip("highspy")
    for _ in range(10):
        m = random_milp(rng, max_binaries=6, max_continuous=8)
        path = tmp_path / "m.lp"
        path.write_text(write_lp(to_big_m(m)))
        h = highspy.Highs()
        h.setOptionValue("output_flag", False)
        assert h.readModel(str(path)) == highspy.HighsStatus.kOk
        h.run()
        ours = branch_and_bound(m)
        if h.getModelStatus() == highspy.HighsModelStatus.kInfeasible:
            assert ours.status == "infeasible"
        else:
            assert ours.objective == pytest.approx(h.getInfo().objective_function_value, abs=1e-6)
