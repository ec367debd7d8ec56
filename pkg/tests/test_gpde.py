import dataclasses

import numpy as np
import pytest

from pieh2 import config
from pieh2.cli import fixture_path
from pieh2.gpde import (
    ConversionError,
    GpdeSystem,
    PieSystem,
    convert_to_pie,
    fundamental_identity,
    validate_pie,
)
from pieh2.piop import PIOperator
from pieh2.polyalg import PolyMatrix, s_var, theta_var

from conftest import load_pie


def const(mat):
    return PolyMatrix.constant(mat)


def test_beam_fundamental_identity_kernels():
    Bb = np.zeros((4, 8))
    Bb[0, 0] = Bb[1, 2] = Bb[2, 5] = Bb[3, 7] = 1
    fi = fundamental_identity(2, Bb, 2)
    s, t = s_var(), theta_var()
    T = fi.state_map
    assert T.R1[0, 0].allclose(s - t, atol=1e-12)
    assert T.R2[1, 1].allclose(t - s, atol=1e-12)
    assert T.R1[1, 1].is_zero(1e-12) and T.R2[0, 0].is_zero(1e-12)
    assert T.R0.is_zero(1e-12)


def test_beam_pie_parameters():
    pie = load_pie("eb_beam.ini")
    np.testing.assert_allclose(pie.A.R0(0.3), [[0, -0.1], [1, 0]], atol=1e-12)
    assert pie.A.R1.is_zero(1e-12) and pie.A.R2.is_zero(1e-12)
    np.testing.assert_allclose(pie.B1.Q2(0.7), [[1], [0]], atol=1e-12)
    np.testing.assert_allclose(pie.B2.Q2(0.7), [[1], [0]], atol=1e-12)
    q = pie.C1.Q1
    c = np.zeros(5)
    c[2:] = [0.5, -1 / 6, -1 / 12]
    np.testing.assert_allclose(q.coef[0, 1, :, 0, 0], c, atol=1e-12)
    assert q[:, 0:1].is_zero(1e-12) and q[1:2, :].is_zero(1e-12)
    np.testing.assert_allclose(pie.D12, [[0], [1]])
    assert validate_pie(pie)["ok"]


def test_react_diff_input_kernel():
    pie = load_pie("react_diff.ini")
    s = s_var()
    assert pie.B1.Q2.allclose((s @ s).scale(0.5) - s, atol=1e-12)
    assert pie.D21.shape == (1, 1) and pie.D21[0, 0] == 1.0


def test_empty_dynamics_gives_zero_generator():
    pie = load_pie("empty_dynamics.ini")
    assert all(getattr(pie.A, p).is_zero() for p in ("P", "Q1", "Q2", "R0", "R1", "R2"))


def test_first_order_transport_identity():
    # x(a) = 0, x = int_a^s x_s
    fi = fundamental_identity(1, np.array([[1.0, 0.0]]), 1)
    assert fi.state_map.R1.allclose(PolyMatrix.constant([[1.0]]), atol=1e-12)
    assert fi.state_map.R2.is_zero(1e-12)


def test_ill_posed_boundary_rejected():
    # two conditions on x(a) only: the boundary value problem is singular
    with pytest.raises(ConversionError):
        fundamental_identity(2, np.array([[1.0, 0, 0, 0], [2.0, 0, 0, 0]]), 1)


def test_validate_flags_width_mismatch():
    pie = load_pie("react_diff.ini")
    bad = dataclasses.replace(pie, B1=PIOperator.zero((2, 0), pie.state_dims))
    report = validate_pie(bad)
    assert not report["ok"]
    # w is two wide now, so the w feedthroughs no longer fit
    assert {i["operator"] for i in report["issues"]} >= {"D11", "D21"}


def test_validate_warns_on_feedthrough():
    pie = load_pie("ode_embed.json")
    report = validate_pie(dataclasses.replace(pie, D11=np.ones((1, 1))))
    assert report["ok"] and report["warnings"]


def test_heat_dirichlet_T_is_green_function():
    pie = load_pie("heat_dirichlet.ini")
    # x = int G x_ss with G(s, theta) = theta (s - 1) below the diagonal
    np.testing.assert_allclose(pie.T.R1(0.6, 0.2)[0, 0], 0.2 * (0.6 - 1), atol=1e-12)
    np.testing.assert_allclose(pie.T.R2(0.2, 0.6)[0, 0], 0.2 * (0.6 - 1), atol=1e-12)


def test_pie_json_round_trip():
    pie = load_pie("eb_repro.ini")
    back = PieSystem.from_json(pie.to_json())
    for name in ("T", "A", "B1", "B2", "C1", "C2"):
        assert getattr(back, name).allclose(getattr(pie, name), atol=0.0)
    np.testing.assert_array_equal(back.D21, pie.D21)


def test_create_requires_matching_boundary_matrix():
    with pytest.raises(ConversionError):
        convert_to_pie(GpdeSystem.create((0, 1), 1, 2, {2: const([[1.0]])}, np.zeros((1, 4))))


def test_every_fixture_converts_and_validates():
    for name in ("eb_beam.ini", "eb_repro.ini", "react_diff.ini", "heat_dirichlet.ini", "heat_mixed.ini",
                 "empty_dynamics.ini"):
        cfg = config.load(fixture_path(name))
        assert validate_pie(convert_to_pie(cfg.system))["ok"], name
