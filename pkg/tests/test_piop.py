import numpy as np
import pytest

from pieh2.piop import (
    DimensionError,
    PIOperator,
    RL2Element,
    pi_add,
    pi_adjoint,
    pi_apply,
    pi_block,
    pi_compose,
    pi_scale,
)
from pieh2.polyalg import PolyMatrix

from conftest import as_callable, load_pie, op_allclose, quad_apply, quad_inner, random_element, random_op


@pytest.fixture(scope="module")
def beam():
    return load_pie("eb_beam.ini")


def poly(coefs):
    return PolyMatrix(np.asarray(coefs, float).reshape(1, 1, -1, 1))


def test_beam_T_on_constant(beam):
    v = RL2Element.make(fn=PolyMatrix(np.array([1.0, 0.0]).reshape(2, 1, 1, 1)))
    out = pi_apply(beam.T, v)
    assert out.fn[0, 0].allclose(poly([0, 0, 0.5]), atol=1e-12)
    assert out.fn[1, 0].is_zero(1e-12)


def test_beam_T_on_quadratic(beam):
    fn = PolyMatrix(np.array([[[0, 0, 1.0]], [[1.0, 0, 0]]]).reshape(2, 1, 3, 1))
    out = pi_apply(beam.T, RL2Element.make(fn=fn))
    assert out.fn[0, 0].allclose(poly([0, 0, 0, 0, 1 / 12]), atol=1e-12)
    assert out.fn[1, 0].allclose(poly([0.5, -1.0, 0.5]), atol=1e-12)


def test_beam_composition_matches_sequential(beam, rng):
    AT = pi_compose(beam.A, beam.T)
    for _ in range(20):
        v = random_element(rng, (0, 2), deg=4)
        direct = pi_apply(AT, v)
        seq = pi_apply(beam.A, pi_apply(beam.T, v))
        diff = RL2Element(direct.finite - seq.finite, direct.fn - seq.fn)
        assert diff.norm() <= 1e-9 * max(seq.norm(), 1e-12)


def test_adjoint_identity_and_involution(rng):
    I = PIOperator.identity(2, 3)
    assert pi_adjoint(I).allclose(I)
    a = random_op(rng, (1, 2), (2, 1))
    assert pi_adjoint(pi_adjoint(a)).allclose(a, atol=0.0)


def test_beam_adjoint_inner_product(beam, rng):
    T, Ts = beam.T, pi_adjoint(beam.T)
    for _ in range(20):
        u, v = random_element(rng, (0, 2)), random_element(rng, (0, 2))
        lhs = pi_apply(T, u).inner(v)
        rhs = u.inner(pi_apply(Ts, v))
        assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


def test_apply_matches_quadrature(rng):
    op = random_op(rng, (2, 2), (1, 3), deg=3)
    v = random_element(rng, (2, 2), deg=3)
    s = np.linspace(0, 1, 7)
    fin, vals = quad_apply(op, *as_callable(v), s)
    out = pi_apply(op, v)
    np.testing.assert_allclose(out.finite, fin, rtol=1e-10, atol=1e-10)
    np.testing.assert_allclose(out.fn.eval_grid(s)[:, 0, :, 0], vals, rtol=1e-10, atol=1e-10)


def test_inner_matches_quadrature(rng):
    u, v = random_element(rng, (2, 3)), random_element(rng, (2, 3))
    assert u.inner(v) == pytest.approx(quad_inner(u, v), rel=1e-12)


def test_linearity(rng):
    a, b = random_op(rng, (1, 2), (1, 2)), random_op(rng, (1, 2), (1, 2))
    v = random_element(rng, (1, 2))
    lhs = pi_apply(pi_add(pi_scale(a, 2.0), b), v)
    rhs = pi_apply(a, v).scale(2.0) + pi_apply(b, v)
    assert RL2Element(lhs.finite - rhs.finite, lhs.fn - rhs.fn).norm() < 1e-9 * rhs.norm()


def test_composition_adjoint_rule(rng):
    a, b = random_op(rng, (1, 1), (2, 1)), random_op(rng, (0, 2), (1, 1))
    assert op_allclose(pi_adjoint(pi_compose(a, b)), pi_compose(pi_adjoint(b), pi_adjoint(a)))


def test_block_assembly(rng):
    a, b = random_op(rng, (1, 1), (1, 1)), random_op(rng, (1, 1), (0, 2))
    M = pi_block([[a], [b]])
    assert M.dims_out == (1, 3)
    v = random_element(rng, (1, 1))
    out = pi_apply(M, v)
    np.testing.assert_allclose(out.finite, pi_apply(a, v).finite)


def test_dimension_errors(rng):
    a = random_op(rng, (1, 2), (1, 2))
    with pytest.raises(DimensionError):
        pi_compose(a, random_op(rng, (1, 1), (1, 1)))
    with pytest.raises(DimensionError):
        pi_apply(a, random_element(rng, (2, 2)))
    with pytest.raises(DimensionError):
        PIOperator.from_params((1, 1), (1, 1), P=np.zeros((2, 2)))


def test_empty_parts_are_zero_sized():
    op = PIOperator.zero((0, 2), (0, 2))
    assert op.P.shape == (0, 0) and op.Q1.shape == (0, 2)


def test_json_round_trip(rng):
    a = random_op(rng, (1, 2), (2, 1))
    assert PIOperator.from_json(a.to_json()).allclose(a, atol=0.0)
