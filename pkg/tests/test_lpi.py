import pytest

from pieh2.lpi import (
    DegreeTooSmallError,
    LpiError,
    LpiProgram,
    NotSelfAdjointError,
    PosOpBasis,
)
from pieh2.piop import PIOperator, pi_apply, pi_compose
from pieh2.polyalg import PolyMatrix

from conftest import op_allclose, random_element, random_op


def random_psd(rng, k, rank=None):
    F = rng.normal(size=(k, rank or k))
    return F @ F.T


def multiplier_op(Q, nf, domain=(0.0, 1.0)):
    """``Q`` acting pointwise on ``R^nf x L2^(k - nf)``."""
    k = Q.shape[0]
    c = lambda M: PolyMatrix.constant(M, domain)  # noqa: E731
    return PIOperator.from_params((nf, k - nf), (nf, k - nf), domain, P=Q[:nf, :nf], Q1=c(Q[:nf, nf:]),
                                  Q2=c(Q[nf:, :nf]), R0=c(Q[nf:, nf:]))


@pytest.mark.parametrize("m,n,d", [(0, 1, 1), (1, 1, 1), (0, 2, 2), (2, 1, 0)])
def test_gram_map_matches_composition(rng, m, n, d):
    basis = PosOpBasis(m, n, d)
    Q = random_psd(rng, basis.size)
    Z = basis.operator()
    oracle = pi_compose(Z.star, pi_compose(multiplier_op(Q, len(basis.finite)), Z))
    assert op_allclose(basis.gram_operator(Q), oracle)


def test_gram_operators_are_positive(rng):
    for _ in range(10):
        basis = PosOpBasis(1, 2, 1)
        P = basis.gram_operator(random_psd(rng, basis.size, rank=3))
        assert P.is_self_adjoint(1e-9)
        for _ in range(10):
            v = random_element(rng, (1, 2))
            assert v.inner(pi_apply(P, v)) >= -1e-8


def test_basis_sizes():
    b = PosOpBasis(1, 2, 2)
    assert b.size == 1 + 2 * 3 + 2 * 2 * 9
    assert b.nvars == b.size * (b.size + 1) // 2
    with pytest.raises(LpiError):
        PosOpBasis(1, 1, -1)


def test_identity_is_positive():
    prog = LpiProgram()
    basis = prog.enforce_psd(PIOperator.identity(1, 1), name="S")
    sol = prog.solve()
    assert sol.status == "solved"
    recovered = basis.gram_operator(sol.block("S"))
    assert op_allclose(recovered, PIOperator.identity(1, 1), rtol=1e-6)


def test_negative_identity_is_infeasible():
    prog = LpiProgram()
    prog.enforce_psd(PIOperator.identity(1, 1) * -1.0)
    assert prog.solve().status == "infeasible"


def test_non_self_adjoint_rejected(rng):
    prog = LpiProgram()
    with pytest.raises(NotSelfAdjointError):
        prog.enforce_psd(random_op(rng, (1, 1), (1, 1)))


def test_too_small_degree_rejected():
    s = PolyMatrix.monomial(3)
    op = PIOperator.multiplier(s @ s)
    prog = LpiProgram()
    with pytest.raises(DegreeTooSmallError):
        prog.enforce_psd(op, degree=0)


def test_pos_op_minimizing_scalar_bound():
    # minimize rho subject to rho >= P >= 1 on R^1: optimum rho = 1
    prog = LpiProgram()
    Pv = prog.pos_op((1, 0), degree=1, eps=1.0)
    k, rho = prog.scalar("rho")
    prog.enforce_psd(rho - Pv.expr)
    prog.minimize(k)
    sol = prog.solve()
    assert sol.status == "solved"
    assert sol.scalar(k) == pytest.approx(1.0, abs=1e-5)
