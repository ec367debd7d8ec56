import json

import numpy as np
import pytest
import scipy.linalg as sla

from pieh2.gpde import PieSystem
from pieh2.piop import PIOperator
from pieh2.sim import discretize, simulate_ic
from pieh2.synth import (
    GridGain,
    SynthesisError,
    SynthOptions,
    closed_loop_controller_grid,
    closed_loop_estimator_grid,
    h2_bound_dual,
    h2_bound_primal,
    h2_controller,
    h2_estimator,
    stability_lpi,
)

from conftest import load_pie

M = PIOperator.matrix
RIC = np.sqrt(np.sqrt(2.0) - 1.0)  # H2 optimum of the scalar plants below


def ode_plant():
    """x' = -x + w1 + u, z = (x, u), y = x + w2."""
    return PieSystem.build(M([[1.0]]), M([[-1.0]]), B1=M([[1.0, 0.0]]), B2=M([[1.0]]),
                           C1=M([[1.0], [0.0]]), D12=[[0.0], [1.0]], C2=M([[1.0]]), D21=[[0.0, 1.0]])


def test_riccati_oracle_value():
    X = sla.solve_continuous_are(np.array([[-1.0]]), np.eye(1), np.eye(1), np.eye(1))
    assert np.sqrt(X[0, 0]) == pytest.approx(RIC, abs=1e-12)


def test_ode_bound_equals_lyapunov_value():
    pie = load_pie("ode_embed.json")
    for fn in (h2_bound_primal, h2_bound_dual):
        res = fn(pie)
        assert res.ok and res.gamma == pytest.approx(1 / np.sqrt(2), abs=1e-4)


def test_zero_input_gives_zero_bound():
    pie = load_pie("ode_embed.json")
    zero = PieSystem.build(pie.T, pie.A, B1=M([[0.0]]), C1=pie.C1)
    assert h2_bound_primal(zero).gamma == pytest.approx(0.0, abs=1e-2)


def test_feedthrough_rejected():
    pie = load_pie("ode_embed.json")
    bad = PieSystem.build(pie.T, pie.A, B1=pie.B1, C1=pie.C1, D11=[[1.0]])
    with pytest.raises(SynthesisError):
        h2_bound_primal(bad)


def test_ode_controller_matches_riccati():
    res = h2_controller(ode_plant())
    assert res.ok
    assert res.gamma == pytest.approx(RIC, abs=1e-3)
    K = res.gain.matrix
    assert K[0, 0] == pytest.approx(-(np.sqrt(2.0) - 1.0), abs=1e-2)


def test_ode_estimator_matches_riccati():
    res = h2_estimator(ode_plant())
    assert res.ok
    assert res.gamma == pytest.approx(RIC, abs=1e-3)


def test_heat_duality_and_stability():
    pie = load_pie("heat_mixed.ini")
    opts = SynthOptions(degree=1)
    p, d = h2_bound_primal(pie, opts), h2_bound_dual(pie, opts)
    assert abs(p.gamma - d.gamma) <= 0.02 * p.gamma
    assert stability_lpi(load_pie("heat_dirichlet.ini"), opts).status == "stable"


def test_unstable_plant_has_no_certificate():
    res = stability_lpi(load_pie("react_diff.ini"), SynthOptions(degree=1))
    assert res.status == "unknown"
    assert res.diagnostics["decay_bound"] > 0


@pytest.fixture(scope="module")
def rd_controller():
    return h2_controller(load_pie("react_diff.ini"), SynthOptions(degree=2))


def test_rd_controller_bound_holds_in_simulation(rd_controller):
    res = rd_controller
    assert res.ok
    d = discretize(load_pie("react_diff.ini"), 24)
    sim = simulate_ic(closed_loop_controller_grid(d, res.gain), u0=[1.0], dt=1e-3, T_end=10.0)
    assert sim.decaying
    assert sim.h2_estimate <= 1.05 * res.gamma


def test_gain_serialization(rd_controller):
    g = rd_controller.gain
    back = GridGain.from_dict(json.loads(json.dumps(g.to_dict())))
    np.testing.assert_array_equal(back.matrix, g.matrix)
    assert back.side == g.side and back.grid.N == g.grid.N
    data = json.loads(rd_controller.to_json())
    assert data["schema_version"] >= 1 and data["gamma"] == rd_controller.gamma


def test_rd_estimator_error_decays():
    pie = load_pie("react_diff.ini")
    res = h2_estimator(pie, SynthOptions(degree=2))
    assert res.ok
    d = discretize(pie, 24)
    err = closed_loop_estimator_grid(d, res.gain)
    sim = simulate_ic(err, ic_rhs=-d.B1[:, 0], dt=1e-3, T_end=10.0)
    assert sim.decaying
    assert sim.h2_estimate <= 1.05 * res.gamma
