import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pieh2.polyalg import (
    DegreeOverflowError,
    PolyMatrix,
    PolynomialError,
    ShapeMismatchError,
    block,
    falling_power,
    poly_integrate,
    poly_mul,
    poly_substitute,
    s_var,
    theta_var,
)

from conftest import random_poly

coef_arrays = st.integers(0, 2**31 - 1).map(
    lambda seed: np.random.default_rng(seed).normal(size=(2, 2, 3, 3)))


def test_quartic_value_at_one():
    s = s_var()
    p = (s @ s).scale(0.5) - power(s, 3).scale(1 / 6) - power(s, 4).scale(1 / 12)
    assert p(1.0)[0, 0] == pytest.approx(0.25, abs=1e-14)


def power(s, k):
    return falling_power(s, k).scale(float(math.factorial(k)))


def test_zero_polynomial_evaluates_to_zero_matrix():
    z = PolyMatrix.zeros(2, 3)
    assert z.is_zero()
    np.testing.assert_array_equal(z(0.3, 0.7), np.zeros((2, 3)))


def test_kernel_value():
    s, t = s_var(), theta_var()
    R1 = block([[s - t, PolyMatrix.zeros(1, 1)], [PolyMatrix.zeros(1, 1), PolyMatrix.zeros(1, 1)]])
    np.testing.assert_allclose(R1(0.5, 0.25), [[0.25, 0], [0, 0]])


def test_canonical_form_trims_trailing_zeros():
    c = np.zeros((1, 1, 5, 4))
    c[0, 0, 1, 0] = 2.0
    p = PolyMatrix(c)
    assert p.coef.shape[2:4] == (2, 1)
    assert p.deg_s == 1 and p.deg_theta == 0


@settings(max_examples=50, deadline=None)
@given(coef_arrays, coef_arrays, coef_arrays)
def test_ring_axioms(a, b, c):
    p, q, r = PolyMatrix(a), PolyMatrix(b), PolyMatrix(c)
    assert ((p + q) + r).allclose(p + (q + r))
    assert (p + q).allclose(q + p)
    assert ((p @ q) @ r).allclose(p @ (q @ r), atol=1e-9)
    assert (p @ (q + r)).allclose(p @ q + p @ r, atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(coef_arrays, st.floats(0, 1), st.floats(0, 1))
def test_product_evaluates_pointwise(a, s, t):
    p, q = PolyMatrix(a), PolyMatrix(a[::-1])
    np.testing.assert_allclose((p @ q)(s, t), p(s, t) @ q(s, t), atol=1e-10)


def test_integration_against_quadrature(rng):
    p = random_poly(rng, 2, 2, 4)
    xg, wg = np.polynomial.legendre.leggauss(20)
    th = 0.5 * xg + 0.5
    # int_0^s p(s, theta) d theta at s = 0.6
    res = poly_integrate(p, "theta", "a", "s")
    tq = 0.3 * xg + 0.3
    ref = sum(0.3 * w * p(0.6, x) for w, x in zip(wg, tq))
    np.testing.assert_allclose(res(0.6), ref, atol=1e-12)
    full = poly_integrate(p, "s")
    ref2 = sum(0.5 * w * p(x, 0.4) for w, x in zip(wg, th))
    np.testing.assert_allclose(full(0.0, 0.4), ref2, atol=1e-12)


def test_substitute_swaps_variables(rng):
    p = random_poly(rng, 1, 2, 3)
    q = poly_substitute(p, {"s": "theta", "theta": "s"})
    np.testing.assert_allclose(q(0.2, 0.9), p(0.9, 0.2), atol=1e-13)
    with pytest.raises(PolynomialError):
        poly_substitute(p, {"s": "theta"})


def test_shape_mismatch_raises(rng):
    with pytest.raises(ShapeMismatchError):
        poly_mul(random_poly(rng, 2, 3), random_poly(rng, 2, 3))


def test_domain_mismatch_raises():
    with pytest.raises(PolynomialError):
        s_var((0.0, 1.0)) + s_var((0.0, 2.0))


def test_degree_overflow():
    s = s_var()
    with pytest.raises(DegreeOverflowError):
        poly_mul(power(s, 5), power(s, 5), max_degree=8)


def test_json_round_trip(rng):
    p = random_poly(rng, 2, 3, 3)
    assert PolyMatrix.from_json(p.to_json()).allclose(p, atol=0.0)


def test_invalid_domain():
    with pytest.raises(PolynomialError):
        PolyMatrix.zeros(1, 1, (1.0, 0.0))
