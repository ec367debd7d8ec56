"""Partial-integral (4-PI) operators on R^m x L2^n[a, b].

An operator with parameters ``P, Q1, Q2, R0, R1, R2`` maps ``(x, y)`` to::

    ( P x + int_a^b Q1(s) y(s) ds ,
      Q2(s) x + R0(s) y(s) + int_a^s R1(s, t) y(t) dt + int_s^b R2(s, t) y(t) dt )

``P`` is a constant matrix, ``Q1``, ``Q2`` and ``R0`` depend on ``s`` only and
``R1``, ``R2`` on ``(s, t)``.  All parameters are :class:`PolyMatrix` objects,
so a decision-variable axis flows through composition, addition and adjoint
unchanged (this is how LPI expressions are formed).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .polyalg import (
    PolyMatrix,
    PolynomialError,
    DegreeOverflowError,
    _Axis,
    _mul_arrays,
    block,
    integrate_axis,
)

# exponent axes of the three-variable workspace (rows, cols, s, t, eta, nv)
_S, _T, _E = 2, 3, 4
_AXIS = {"s": _S, "t": _T, "e": _E}
PARAMS = ("P", "Q1", "Q2", "R0", "R1", "R2")


class DimensionError(ValueError):
    pass


def _embed(coef: np.ndarray, first: str, second: str | None = None) -> np.ndarray:
    """Place a two-variable coefficient array into the (s, t, eta) workspace."""
    r, c, d1, d2, nv = coef.shape
    if second is None:
        if d2 != 1:
            raise PolynomialError("expected a polynomial in one variable")
        second = next(v for v in "ste" if v != first)
    third = next(v for v in "ste" if v not in (first, second))
    work = coef[:, :, :, :, None, :]  # axes: first, second, third
    order = {first: 2, second: 3, third: 4}
    perm = [0, 1, order["s"], order["t"], order["e"], 5]
    return np.transpose(work, perm)


def _term(a: PolyMatrix, amap: str, b: PolyMatrix, bmap: str, lo=None, hi=None) -> np.ndarray:
    """Product ``A * B`` in the workspace, optionally integrated over eta.

    ``amap``/``bmap`` give the workspace labels of each operand's variables,
    e.g. ``"se"`` means (first variable -> s, second -> eta); a single letter
    marks a one-variable polynomial.  Returns a two-variable (s, t) array.
    """
    ea = _embed(a.coef, amap[0], amap[1] if len(amap) > 1 else None)
    eb = _embed(b.coef, bmap[0], bmap[1] if len(bmap) > 1 else None)
    prod = _mul_arrays(ea, eb)
    if lo is None:
        if prod.shape[_E] != 1:
            raise PolynomialError("uncontracted eta dependence")
        return prod[:, :, :, :, 0, :]
    dom = a.domain

    def bound(x):
        if x == "a":
            return dom[0]
        if x == "b":
            return dom[1]
        return _Axis(_AXIS[x])

    out = integrate_axis(prod, _E, bound(lo), bound(hi))
    return out[:, :, :, :, 0, :]


def _sum(shape: tuple[int, int], domain, terms: Sequence[np.ndarray]) -> PolyMatrix:
    ds = max((t.shape[2] for t in terms), default=1)
    dt = max((t.shape[3] for t in terms), default=1)
    nv = max((t.shape[4] for t in terms), default=1)
    acc = np.zeros(shape + (ds, dt, nv))
    for t in terms:
        acc[:, :, : t.shape[2], : t.shape[3], : t.shape[4]] += t
    return PolyMatrix(acc, domain)


@dataclass(frozen=True, eq=False)
class PIOperator:
    """A 4-PI operator; zero-width parts are 0-sized parameters, never None."""

    P: PolyMatrix
    Q1: PolyMatrix
    Q2: PolyMatrix
    R0: PolyMatrix
    R1: PolyMatrix
    R2: PolyMatrix

    def __post_init__(self):
        m2, m1 = self.P.shape
        n2, n1 = self.R0.shape
        expected = {
            "Q1": (m2, n1),
            "Q2": (n2, m1),
            "R1": (n2, n1),
            "R2": (n2, n1),
        }
        for name, shp in expected.items():
            if getattr(self, name).shape != shp:
                raise DimensionError(f"{name} has shape {getattr(self, name).shape}, expected {shp}")
        doms = {getattr(self, p).domain for p in PARAMS}
        if len(doms) != 1:
            raise DimensionError(f"parameters live on different domains: {doms}")
        if self.P.deg_s or self.P.deg_theta:
            raise DimensionError("P must be a constant matrix")
        for name in ("Q1", "Q2", "R0"):
            if getattr(self, name).deg_theta:
                raise DimensionError(f"{name} must not depend on theta")

    # -- constructors -----------------------------------------------------
    @classmethod
    def from_params(cls, dims_in, dims_out, domain=(0.0, 1.0), **params) -> "PIOperator":
        """Build an operator, filling unspecified parameters with zeros.

        Parameters given as plain arrays are treated as constant matrices.
        """
        m1, n1 = dims_in
        m2, n2 = dims_out
        shapes = {"P": (m2, m1), "Q1": (m2, n1), "Q2": (n2, m1), "R0": (n2, n1), "R1": (n2, n1), "R2": (n2, n1)}
        vals = {}
        for name, shp in shapes.items():
            v = params.pop(name, None)
            if v is None:
                v = PolyMatrix.zeros(*shp, domain)
            elif not isinstance(v, PolyMatrix):
                arr = np.asarray(v, dtype=float)
                if arr.size != shp[0] * shp[1]:
                    raise DimensionError(f"{name} has {arr.size} entries, expected shape {shp}")
                v = PolyMatrix(arr.reshape(shp)[:, :, None, None, None], domain)
            vals[name] = v
        if params:
            raise TypeError(f"unknown parameters {sorted(params)}")
        return cls(**vals)

    @classmethod
    def zero(cls, dims_in, dims_out, domain=(0.0, 1.0)) -> "PIOperator":
        return cls.from_params(dims_in, dims_out, domain)

    @classmethod
    def identity(cls, m: int, n: int, domain=(0.0, 1.0)) -> "PIOperator":
        return cls.from_params((m, n), (m, n), domain, P=np.eye(m), R0=PolyMatrix.identity(n, domain) if n else None)

    @classmethod
    def matrix(cls, mat, domain=(0.0, 1.0)) -> "PIOperator":
        """Finite-dimensional operator R^m1 -> R^m2 given by a matrix."""
        mat = np.asarray(mat, dtype=float)
        if mat.ndim != 2:
            raise DimensionError("expected a 2-D matrix")
        return cls.from_params((mat.shape[1], 0), (mat.shape[0], 0), domain, P=mat)

    @classmethod
    def multiplier(cls, R0: PolyMatrix) -> "PIOperator":
        return cls.from_params((0, R0.cols), (0, R0.rows), R0.domain, R0=R0)

    # -- properties -------------------------------------------------------
    @property
    def domain(self) -> tuple[float, float]:
        return self.P.domain

    @property
    def dims_in(self) -> tuple[int, int]:
        return self.P.cols, self.R0.cols

    @property
    def dims_out(self) -> tuple[int, int]:
        return self.P.rows, self.R0.rows

    @property
    def nv(self) -> int:
        return max(getattr(self, p).nv for p in PARAMS)

    @property
    def is_numeric(self) -> bool:
        return all(getattr(self, p).is_numeric for p in PARAMS)

    def params(self) -> dict[str, PolyMatrix]:
        return {p: getattr(self, p) for p in PARAMS}

    def max_degree(self) -> int:
        return max(getattr(self, p).total_degree for p in PARAMS)

    def __repr__(self) -> str:
        return f"PIOperator({self.dims_in} -> {self.dims_out}, domain={self.domain}, nv={self.nv})"

    # -- algebra ----------------------------------------------------------
    def __add__(self, other: "PIOperator") -> "PIOperator":
        return pi_add(self, other)

    def __sub__(self, other: "PIOperator") -> "PIOperator":
        return pi_add(self, pi_scale(other, -1.0))

    def __neg__(self) -> "PIOperator":
        return pi_scale(self, -1.0)

    def __mul__(self, c):
        if isinstance(c, (int, float, np.floating, np.integer)):
            return pi_scale(self, c)
        return NotImplemented

    __rmul__ = __mul__

    def __matmul__(self, other: "PIOperator") -> "PIOperator":
        return pi_compose(self, other)

    @property
    def star(self) -> "PIOperator":
        return pi_adjoint(self)

    def evaluate_vars(self, x: np.ndarray) -> "PIOperator":
        return PIOperator(**{p: getattr(self, p).evaluate_vars(x) for p in PARAMS})

    def pad_vars(self, nv: int) -> "PIOperator":
        return PIOperator(**{p: getattr(self, p).pad_vars(nv) for p in PARAMS})

    def allclose(self, other: "PIOperator", atol: float = 1e-10) -> bool:
        if self.dims_in != other.dims_in or self.dims_out != other.dims_out:
            return False
        return all(getattr(self, p).allclose(getattr(other, p), atol) for p in PARAMS)

    def is_self_adjoint(self, atol: float = 1e-10) -> bool:
        return self.dims_in == self.dims_out and self.allclose(pi_adjoint(self), atol)

    # -- serialization ----------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "dims_in": list(self.dims_in),
            "dims_out": list(self.dims_out),
            "domain": list(self.domain),
            **{p: getattr(self, p).to_dict() for p in PARAMS},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PIOperator":
        dom = tuple(d["domain"])
        vals = {}
        for p in PARAMS:
            pd = dict(d[p])
            pd.setdefault("domain", dom)
            vals[p] = PolyMatrix.from_dict(pd)
        op = cls(**vals)
        if list(op.dims_in) != list(d["dims_in"]) or list(op.dims_out) != list(d["dims_out"]):
            raise DimensionError("serialized dims disagree with parameter shapes")
        return op

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "PIOperator":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True, eq=False)
class RL2Element:
    """An element ``(x, f)`` of R^m x L2^n with polynomial function part."""

    finite: np.ndarray
    fn: PolyMatrix

    def __post_init__(self):
        object.__setattr__(self, "finite", np.asarray(self.finite, dtype=float).reshape(-1))
        if self.fn.cols != 1:
            raise DimensionError("function part must be a column")

    @classmethod
    def make(cls, finite=(), fn: PolyMatrix | None = None, n: int = 0, domain=(0.0, 1.0)) -> "RL2Element":
        if fn is None:
            fn = PolyMatrix.zeros(n, 1, domain)
        return cls(np.asarray(finite, dtype=float), fn)

    @property
    def dims(self) -> tuple[int, int]:
        return self.finite.shape[0], self.fn.rows

    def inner(self, other: "RL2Element") -> float:
        """``x^T y + int_a^b f(s)^T g(s) ds``."""
        if self.dims != other.dims:
            raise DimensionError(f"dims differ: {self.dims} vs {other.dims}")
        prod = _term(self.fn.T, "s", other.fn, "s")
        integral = integrate_axis(prod, _S, self.fn.domain[0], self.fn.domain[1])
        return float(self.finite @ other.finite + integral[0, 0, 0, 0, 0])

    def norm(self) -> float:
        return float(np.sqrt(max(self.inner(self), 0.0)))

    def __add__(self, other: "RL2Element") -> "RL2Element":
        return RL2Element(self.finite + other.finite, self.fn + other.fn)

    def scale(self, c: float) -> "RL2Element":
        return RL2Element(self.finite * c, self.fn.scale(c))


def _check_compatible(a: PIOperator, b: PIOperator) -> None:
    if a.domain != b.domain:
        raise DimensionError(f"domain mismatch: {a.domain} vs {b.domain}")


def pi_add(a: PIOperator, b: PIOperator) -> PIOperator:
    _check_compatible(a, b)
    if a.dims_in != b.dims_in or a.dims_out != b.dims_out:
        raise DimensionError(f"cannot add {a.dims_in}->{a.dims_out} and {b.dims_in}->{b.dims_out}")
    return PIOperator(**{p: getattr(a, p) + getattr(b, p) for p in PARAMS})


def pi_scale(a: PIOperator, c: float) -> PIOperator:
    return PIOperator(**{p: getattr(a, p).scale(c) for p in PARAMS})


def pi_apply(op: PIOperator, v: RL2Element) -> RL2Element:
    """Apply the defining formula exactly (polynomial integration)."""
    if op.dims_in != v.dims:
        raise DimensionError(f"operator expects {op.dims_in}, element has {v.dims}")
    if op.domain != v.fn.domain:
        raise DimensionError("domain mismatch")
    dom = op.domain
    x = PolyMatrix.constant(v.finite.reshape(-1, 1), dom) if v.finite.size else PolyMatrix.zeros(0, 1, dom)
    f = v.fn
    m2, n2 = op.dims_out
    fin = _sum((m2, 1), dom, [
        _term(op.P, "s", x, "s"),
        _term(op.Q1, "e", f, "e", "a", "b"),
    ])
    fn = _sum((n2, 1), dom, [
        _term(op.Q2, "s", x, "s"),
        _term(op.R0, "s", f, "s"),
        _term(op.R1, "se", f, "e", "a", "s"),
        _term(op.R2, "se", f, "e", "s", "b"),
    ])
    return RL2Element(fin(0.0).reshape(-1) if m2 else np.zeros(0), fn)


def pi_compose(a: PIOperator, b: PIOperator, max_degree: int | None = None) -> PIOperator:
    """Parameters of ``a o b`` (apply ``b`` first)."""
    _check_compatible(a, b)
    if b.dims_out != a.dims_in:
        raise DimensionError(f"cannot compose: b maps to {b.dims_out}, a expects {a.dims_in}")
    dom = a.domain
    m2, n2 = a.dims_out
    m1, n1 = b.dims_in
    P = _sum((m2, m1), dom, [
        _term(a.P, "s", b.P, "s"),
        _term(a.Q1, "e", b.Q2, "e", "a", "b"),
    ])
    Q1 = _sum((m2, n1), dom, [
        _term(a.P, "s", b.Q1, "s"),
        _term(a.Q1, "s", b.R0, "s"),
        _term(a.Q1, "e", b.R1, "es", "s", "b"),
        _term(a.Q1, "e", b.R2, "es", "a", "s"),
    ])
    Q2 = _sum((n2, m1), dom, [
        _term(a.Q2, "s", b.P, "s"),
        _term(a.R0, "s", b.Q2, "s"),
        _term(a.R1, "se", b.Q2, "e", "a", "s"),
        _term(a.R2, "se", b.Q2, "e", "s", "b"),
    ])
    R0 = _sum((n2, n1), dom, [_term(a.R0, "s", b.R0, "s")])
    sep = _term(a.Q2, "s", b.Q1, "t")
    R1 = _sum((n2, n1), dom, [
        sep,
        _term(a.R0, "s", b.R1, "st"),
        _term(a.R1, "st", b.R0, "t"),
        _term(a.R1, "se", b.R1, "et", "t", "s"),
        _term(a.R1, "se", b.R2, "et", "a", "t"),
        _term(a.R2, "se", b.R1, "et", "s", "b"),
    ])
    R2 = _sum((n2, n1), dom, [
        sep,
        _term(a.R0, "s", b.R2, "st"),
        _term(a.R2, "st", b.R0, "t"),
        _term(a.R1, "se", b.R2, "et", "a", "s"),
        _term(a.R2, "se", b.R1, "et", "t", "b"),
        _term(a.R2, "se", b.R2, "et", "s", "t"),
    ])
    out = PIOperator(P=P, Q1=Q1, Q2=Q2, R0=R0, R1=R1, R2=R2)
    if max_degree is not None and out.max_degree() > max_degree:
        raise DegreeOverflowError(f"composition degree {out.max_degree()} exceeds limit {max_degree}")
    return out


def pi_adjoint(a: PIOperator) -> PIOperator:
    """Adjoint with respect to the R^m x L2^n inner product."""
    return PIOperator(
        P=a.P.T,
        Q1=a.Q2.T,
        Q2=a.Q1.T,
        R0=a.R0.T,
        R1=a.R2.swap_vars().T,
        R2=a.R1.swap_vars().T,
    )


def pi_block(grid: Sequence[Sequence[PIOperator]]) -> PIOperator:
    """Block operator; finite parts and function parts stack separately.

    ``grid[i][j]`` maps input block ``j`` to output block ``i``.  The composite
    input is ``(x_1, ..., x_J, f_1, ..., f_J)`` reordered as
    ``(x_1..x_J) in R^{sum m}`` and ``(f_1..f_J) in L2^{sum n}``.
    """
    if not grid or not grid[0]:
        raise DimensionError("empty block")
    ncol = len(grid[0])
    for row in grid:
        if len(row) != ncol:
            raise DimensionError("ragged block grid")
        outs = {op.dims_out for op in row}
        if len(outs) != 1:
            raise DimensionError(f"block row has inconsistent output dims {outs}")
    for j in range(ncol):
        ins = {row[j].dims_in for row in grid}
        if len(ins) != 1:
            raise DimensionError(f"block column {j} has inconsistent input dims {ins}")
    dom = grid[0][0].domain
    return PIOperator(**{p: block([[getattr(op, p) for op in row] for row in grid], dom) for p in PARAMS})


def pi_diag(ops: Sequence[PIOperator]) -> PIOperator:
    grid = []
    for i, oi in enumerate(ops):
        row = []
        for j, oj in enumerate(ops):
            row.append(oi if i == j else PIOperator.zero(oj.dims_in, oi.dims_out, oi.domain))
        grid.append(row)
    return pi_block(grid)


def pi_hstack(ops: Sequence[PIOperator]) -> PIOperator:
    return pi_block([list(ops)])


def pi_vstack(ops: Sequence[PIOperator]) -> PIOperator:
    return pi_block([[op] for op in ops])


def pi_finite_trace(a: PIOperator) -> float | np.ndarray:
    """Trace of a finite-to-finite operator (affine coefficients if symbolic)."""
    if a.dims_in[1] or a.dims_out[1]:
        raise DimensionError("trace needs an operator with no function channels")
    if a.dims_in[0] != a.dims_out[0]:
        raise DimensionError("trace needs a square operator")
    diag = np.einsum("iiv->v", a.P.coef[:, :, 0, 0, :])
    return float(diag[0]) if a.nv == 1 else diag
