import json
import os
from pathlib import Path

import numpy as np
import pytest

import bmpc

SCENARIOS = Path(os.environ.get("BMPC_SCENARIOS", Path(__file__).parents[2] / "scenarios"))


def test_qp_equality_closed_form():
    s = bmpc.solve_qp(np.eye(2), np.zeros(2), np.ones((1, 2)), np.array([2.0]),
                      np.zeros((0, 2)), np.zeros(0))
    assert s["status"] == "Optimal"
    np.testing.assert_allclose(s["z"], [1.0, 1.0], atol=1e-9)
    assert s["J"] == pytest.approx(1.0, abs=1e-9)


def test_cost_gradient_active_bound():
    # min 1/2 x^2 s.t. x <= theta at theta = -1: dJ/dtheta = theta
    one = np.ones((1, 1))
    args = (one, np.zeros(1), np.zeros((0, 1)), np.zeros(0), one, np.array([-1.0]))
    blocks = ([np.zeros((1, 1))], [np.zeros(1)], [np.zeros((0, 1))], [np.zeros(0)],
              [np.zeros((1, 1))], [np.ones(1)])
    for adjoint in (True, False):
        g = bmpc.cost_gradient(*args, *blocks, adjoint=adjoint)
        assert g[0] == pytest.approx(-1.0, abs=1e-8)


def test_toy_converges():
    toy = bmpc.ToyProblem()
    trace = bmpc.run_toy(toy, 0.15, 200)
    assert all(c["in_polytope"] for c in trace)
    assert min(abs(c["true_grad"]) for c in trace) < 1e-3
    assert all(c["grad"] * c["true_grad"] > 0 for c in trace if abs(c["true_grad"]) > 1e-12)


def test_scenario_defaults_and_rejection():
    sc = bmpc.load_scenario(SCENARIOS / "stand.json")
    assert sc["gait"] == "stand"
    assert sc["mpc"]["N"] == 20
    with pytest.raises(bmpc.BmpcError, match="ScenarioInvalid"):
        bmpc.validate_scenario(json.dumps({"name": "x", "speed": 1}))


def test_short_stand_run():
    sc = bmpc.load_scenario(SCENARIOS / "stand.json")
    sc["duration"] = 0.5
    sc["recovery"]["window"] = 0.25
    summary, trace = bmpc.simulate(sc, bilevel=False)
    assert summary["cycles"] == 10
    assert summary["recovered"]
    lines = trace.strip().splitlines()
    assert lines[0].startswith("k,t,rx")
    assert len(lines) == 11
