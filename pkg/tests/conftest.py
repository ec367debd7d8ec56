import numpy as np
import pytest

from pieh2 import config
from pieh2.cli import fixture_path
from pieh2.gpde import PieSystem, convert_to_pie
from pieh2.piop import PARAMS, PIOperator, RL2Element
from pieh2.polyalg import PolyMatrix


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def load_pie(name: str) -> PieSystem:
    path = fixture_path(name)
    if path.suffix == ".json":
        return PieSystem.from_json(path.read_text())
    return convert_to_pie(config.load(path).system)


def random_poly(rng, rows, cols, deg=3, theta=True, domain=(0.0, 1.0)) -> PolyMatrix:
    dt = deg + 1 if theta else 1
    return PolyMatrix(rng.normal(size=(rows, cols, deg + 1, dt)), domain)


def random_op(rng, dims_in, dims_out, deg=2, domain=(0.0, 1.0)) -> PIOperator:
    (m1, n1), (m2, n2) = dims_in, dims_out
    return PIOperator.from_params(
        dims_in, dims_out, domain,
        P=rng.normal(size=(m2, m1)),
        Q1=random_poly(rng, m2, n1, deg, False, domain),
        Q2=random_poly(rng, n2, m1, deg, False, domain),
        R0=random_poly(rng, n2, n1, deg, False, domain),
        R1=random_poly(rng, n2, n1, deg, True, domain),
        R2=random_poly(rng, n2, n1, deg, True, domain),
    )


def random_element(rng, dims, deg=3, domain=(0.0, 1.0)) -> RL2Element:
    m, n = dims
    return RL2Element.make(rng.normal(size=m), random_poly(rng, n, 1, deg, False, domain))


GAUSS = np.polynomial.legendre.leggauss(40)


def gauss_nodes(lo: float, hi: float):
    xg, wg = GAUSS
    return 0.5 * (hi - lo) * xg + 0.5 * (lo + hi), 0.5 * (hi - lo) * wg


def as_callable(v: RL2Element):
    """``(finite, f)`` with ``f`` mapping an array of points to values of shape (k, n)."""
    return v.finite, lambda pts: v.fn.eval_grid(np.asarray(pts, float))[:, 0, :, 0]


def quad_apply(op: PIOperator, x, f, s: np.ndarray):
    """Apply ``op`` to ``(x, f)`` by Gauss-Legendre quadrature; returns (finite, values at s).

    Integrals are split at ``s`` so every piece integrates a polynomial exactly.
    """
    a, b = op.domain
    s = np.atleast_1d(np.asarray(s, float))
    th, wt = gauss_nodes(a, b)
    fin = op.P(0.0) @ x + np.einsum("q,qrc,qc->r", wt, op.Q1.eval_grid(th)[:, 0], f(th))
    if s.size == 0:
        return fin, np.zeros((0, op.dims_out[1]))
    nodes, weights = [], []
    for si in s:
        lo_t, lo_w = gauss_nodes(a, si)
        hi_t, hi_w = gauss_nodes(si, b)
        nodes.append((lo_t, hi_t))
        weights.append((lo_w, hi_w))
    flat = np.concatenate([np.concatenate(p) for p in nodes])
    fvals = f(flat).reshape(len(s), 2, len(GAUSS[0]), op.dims_in[1])
    out = []
    for i, si in enumerate(s):
        val = op.Q2(si) @ x + op.R0(si) @ f(np.array([si]))[0]
        for part, ker in enumerate((op.R1, op.R2)):
            K = ker.eval_grid(np.array([si]), nodes[i][part])[0]
            val = val + np.einsum("q,qrc,qc->r", weights[i][part], K, fvals[i, part])
        out.append(val)
    return fin, np.array(out)


def quad_inner(u: RL2Element, v: RL2Element) -> float:
    th, wt = gauss_nodes(*u.fn.domain)
    fu, fv = as_callable(u)[1](th), as_callable(v)[1](th)
    return float(u.finite @ v.finite + np.sum(wt[:, None] * fu * fv))


def op_allclose(a: PIOperator, b: PIOperator, rtol=1e-9) -> bool:
    scale = max(1.0, max(float(np.abs(getattr(a, p).coef).max(initial=0.0)) for p in PARAMS))
    return a.allclose(b, atol=rtol * scale)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)
