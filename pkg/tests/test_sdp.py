import importlib.util

import numpy as np
import pytest
import scipy.sparse as sp

from pieh2 import sdp
from pieh2.sdp import PsdBlock, SdpProblem


def small_problem():
    """min x00 + x11 s.t. X = [[x00, x01], [x01, x11]] >= 0, x01 = 1, plus t >= 0 with t = x00 - 0.5."""
    blk = PsdBlock("Q", 0, 2)  # variables x00, x01, x11 in column-major triangle order
    A = np.array([[0.0, 1.0, 0.0, 0.0], [1.0, 0.0, 0.0, -1.0]])
    b = np.array([1.0, 0.5])
    c = np.array([1.0, 0.0, 1.0, 0.0])
    return SdpProblem(4, sp.csr_matrix(A), b, c, [blk], np.array([3]))


def test_triangle_order():
    i, j = sdp.triu_colmajor(3)
    assert list(zip(i, j)) == [(0, 0), (0, 1), (1, 1), (0, 2), (1, 2), (2, 2)]
    blk = PsdBlock("Q", 5, 3)
    assert blk.index(2, 1) == blk.index(1, 2) == 5 + 4


@pytest.mark.parametrize("adapter", sorted(sdp.ADAPTERS))
def test_adapters_solve_small_problem(adapter):
    module = {"sdpa": "sdpap", "cvxpy-scs": "cvxpy", "cvxpy-clarabel": "cvxpy"}.get(adapter, "clarabel")
    if importlib.util.find_spec(module) is None:
        pytest.skip(f"{module} not installed")
    sol = sdp.solve(small_problem(), adapter)
    assert sol.status in ("solved", "solved_inaccurate")
    # optimum x00 = x11 = 1 since x00*x11 >= 1 and x00 >= 0.5
    assert sol.objective == pytest.approx(2.0, abs=1e-4)


def test_infeasible_detected():
    # adding x00 = -1 contradicts X >= 0
    p = small_problem()
    A = sp.vstack([p.A, sp.csr_matrix(np.array([[1.0, 0, 0, 0]]))]).tocsr()
    q = SdpProblem(4, A, np.append(p.b, -1.0), p.c, p.blocks, p.nonneg)
    assert sdp.solve(q).status == "infeasible"


def test_feasibility_check():
    p = small_problem()
    good = np.array([1.0, 1.0, 1.0, 0.5])
    assert sdp.is_feasible(p, good)
    assert not sdp.is_feasible(p, np.array([0.5, 1.0, 0.5, 0.0]))  # not PSD
    assert not sdp.is_feasible(p, np.array([1.0, 0.9, 1.0, 0.5]))  # equality violated
    eigs = sdp.min_block_eigs(p, good)
    assert eigs["Q"] == pytest.approx(0.0, abs=1e-12)


def test_dependent_rows_removed():
    A = sp.csr_matrix(np.array([[1.0, 2, 0], [2.0, 4, 0], [0, 0, 1], [1.0, 2, 1]]))
    rows = sdp._independent_rows(A)
    assert len(rows) == 2
    assert np.linalg.matrix_rank(A.toarray()[rows]) == 2


def test_sdpa_round_trip_bit_exact(tmp_path, rng):
    p = small_problem()
    p.A = sp.csr_matrix(p.A.toarray() * rng.normal(size=p.A.shape))
    p.b = p.b / 3.0
    path = sdp.export_sdpa(p, tmp_path / "p.dat-s")
    back = sdp.read_sdpa(path)
    assert back.n == p.n
    np.testing.assert_array_equal(back.A.toarray(), p.A.toarray())
    np.testing.assert_array_equal(back.b, p.b)
    np.testing.assert_array_equal(back.c, p.c)
    assert [(b.offset, b.size) for b in back.blocks] == [(b.offset, b.size) for b in p.blocks]
    np.testing.assert_array_equal(back.nonneg, p.nonneg)


def test_unknown_adapter():
    with pytest.raises((KeyError, sdp.SolverError, ValueError)):
        sdp.solve(small_problem(), "nope")
