"""Matrix-valued polynomials in the spatial variables ``s`` and ``theta``.

A :class:`PolyMatrix` stores its coefficients in a dense array of shape
``(rows, cols, ds, dt, nv)``: entry ``coef[r, c, i, j, k]`` multiplies
``s**i * theta**j``.  The trailing axis carries affine dependence on decision
variables: slot ``0`` is the constant part and slot ``k >= 1`` is the
coefficient of decision variable ``k - 1``.  Plain (numeric) polynomials have
``nv == 1``.  Keeping the variable axis inside the polynomial lets the PI
operator algebra build LPI expressions with the very same code paths used for
numeric operators.
"""

from __future__ import annotations

import json
import math
from typing import Iterable, Sequence

import numpy as np

ZERO_TOL = 1e-14
DEFAULT_MAX_DEGREE = 16
VARIABLES = ("s", "theta")


class PolynomialError(ValueError):
    pass


class ShapeMismatchError(PolynomialError):
    pass


class DegreeOverflowError(PolynomialError):
    pass


class BilinearError(PolynomialError):
    """Raised when two decision-variable-dependent factors are multiplied."""


def _canonical(coef: np.ndarray, tol: float = ZERO_TOL) -> np.ndarray:
    coef = np.where(np.abs(coef) < tol, 0.0, coef)
    r, c, ds, dt, nv = coef.shape
    if coef.size == 0:
        return np.zeros((r, c, 1, 1, nv))
    mask = np.any(coef != 0.0, axis=(0, 1, 4))
    rows_nz = np.nonzero(mask.any(axis=1))[0]
    cols_nz = np.nonzero(mask.any(axis=0))[0]
    ks = rows_nz[-1] + 1 if rows_nz.size else 1
    kt = cols_nz[-1] + 1 if cols_nz.size else 1
    return np.ascontiguousarray(coef[:, :, :ks, :kt, :])


def _pad_to(coef: np.ndarray, ds: int, dt: int, nv: int) -> np.ndarray:
    r, c, a, b, v = coef.shape
    if (a, b, v) == (ds, dt, nv):
        return coef
    out = np.zeros((r, c, ds, dt, nv))
    out[:, :, :a, :b, :v] = coef
    return out


def _mul_arrays(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with polynomial convolution over every exponent axis.

    ``a`` has shape ``(r, k, *da, va)`` and ``b`` has ``(k, c, *db, vb)``.
    At most one of ``va``, ``vb`` may exceed one.
    """
    va, vb = a.shape[-1], b.shape[-1]
    if va > 1 and vb > 1:
        raise BilinearError("product of two decision-variable-dependent polynomials")
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(f"inner dimensions differ: {a.shape[1]} vs {b.shape[0]}")
    da, db = a.shape[2:-1], b.shape[2:-1]
    out_deg = tuple(x + y - 1 for x, y in zip(da, db))
    nv = max(va, vb)
    out = np.zeros((a.shape[0], b.shape[1]) + out_deg + (nv,))
    if a.shape[0] == 0 or b.shape[1] == 0 or a.shape[1] == 0:
        return out
    nz_a = np.argwhere(np.any(a != 0.0, axis=(0, 1, a.ndim - 1)))
    nz_b = np.argwhere(np.any(b != 0.0, axis=(0, 1, b.ndim - 1)))
    loop_over_b = vb == 1 and (va > 1 or len(nz_b) <= len(nz_a))
    if loop_over_b:
        for e in nz_b:
            bm = b[(slice(None), slice(None)) + tuple(e) + (0,)]
            term = np.tensordot(a, bm, axes=([1], [0]))  # (r, *da, va, c)
            term = np.moveaxis(term, -1, 1)
            sl = tuple(slice(ei, ei + n) for ei, n in zip(e, da))
            out[(slice(None), slice(None)) + sl] += term
    else:
        for e in nz_a:
            am = a[(slice(None), slice(None)) + tuple(e) + (0,)]
            term = np.tensordot(am, b, axes=([1], [0]))  # (r, c, *db, vb)
            sl = tuple(slice(ei, ei + n) for ei, n in zip(e, db))
            out[(slice(None), slice(None)) + sl] += term
    return out


def _bound_power(bound: float, p: np.ndarray) -> np.ndarray:
    return np.power(float(bound), p)


def integrate_axis(coef: np.ndarray, axis: int, lower, upper) -> np.ndarray:
    """Definite integral over the exponent axis ``axis``.

    Bounds are floats or :class:`_Axis` markers naming another exponent axis
    (the bound is then that variable).  The integrated axis is left with length one.
    """
    n = coef.shape[axis]
    shape = list(coef.shape)
    shape[axis] = n + 1
    anti = np.zeros(shape)
    p = np.arange(1, n + 1, dtype=float)
    bshape = [1] * coef.ndim
    bshape[axis] = n
    idx = [slice(None)] * coef.ndim
    idx[axis] = slice(1, n + 1)
    anti[tuple(idx)] = coef / p.reshape(bshape)

    def evaluate(bound):
        if isinstance(bound, _Axis):
            q = bound.index
            if q == axis:
                raise PolynomialError("bound equals the integration variable")
            shp = list(anti.shape)
            shp[axis] = 1
            shp[q] = anti.shape[q] + n
            res = np.zeros(shp)
            for k in range(n + 1):
                src = [slice(None)] * anti.ndim
                src[axis] = slice(k, k + 1)
                dst = [slice(None)] * anti.ndim
                dst[axis] = slice(0, 1)
                dst[q] = slice(k, k + anti.shape[q])
                res[tuple(dst)] += anti[tuple(src)]
            return res
        pw = _bound_power(bound, np.arange(n + 1, dtype=float)).reshape([-1 if i == axis else 1 for i in range(anti.ndim)])
        return np.sum(anti * pw, axis=axis, keepdims=True)

    hi = evaluate(upper)
    lo = evaluate(lower)
    shp = np.maximum(np.array(hi.shape), np.array(lo.shape))
    out = np.zeros(tuple(shp))
    out[tuple(slice(0, k) for k in hi.shape)] += hi
    out[tuple(slice(0, k) for k in lo.shape)] -= lo
    return out


class _Axis:
    """Marks an integration bound that is itself a variable (exponent axis)."""

    __slots__ = ("index",)

    def __init__(self, index: int):
        self.index = index


class PolyMatrix:
    """Immutable matrix of polynomials in ``(s, theta)`` on ``[a, b]``."""

    __slots__ = ("coef", "domain")

    def __init__(self, coef, domain: Sequence[float] = (0.0, 1.0), *, canonical: bool = True):
        arr = np.asarray(coef, dtype=float)
        if arr.ndim == 2:
            arr = arr[:, :, None, None, None]
        elif arr.ndim == 4:
            arr = arr[..., None]
        if arr.ndim != 5:
            raise PolynomialError(f"coefficient array must have 5 axes, got {arr.ndim}")
        a, b = float(domain[0]), float(domain[1])
        if not a < b:
            raise PolynomialError(f"invalid domain [{a}, {b}]")
        if canonical:
            arr = _canonical(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "coef", arr)
        object.__setattr__(self, "domain", (a, b))

    def __setattr__(self, name, value):
        raise AttributeError("PolyMatrix is immutable")

    # -- constructors -----------------------------------------------------
    @classmethod
    def zeros(cls, rows: int, cols: int, domain=(0.0, 1.0), nv: int = 1) -> "PolyMatrix":
        return cls(np.zeros((rows, cols, 1, 1, nv)), domain, canonical=False)

    @classmethod
    def constant(cls, mat, domain=(0.0, 1.0)) -> "PolyMatrix":
        m = np.atleast_2d(np.asarray(mat, dtype=float))
        return cls(m[:, :, None, None, None], domain)

    @classmethod
    def identity(cls, n: int, domain=(0.0, 1.0)) -> "PolyMatrix":
        return cls.constant(np.eye(n), domain)

    @classmethod
    def monomial(cls, i_s: int = 0, i_theta: int = 0, coeff: float = 1.0, domain=(0.0, 1.0)) -> "PolyMatrix":
        c = np.zeros((1, 1, i_s + 1, i_theta + 1, 1))
        c[0, 0, i_s, i_theta, 0] = coeff
        return cls(c, domain)

    @classmethod
    def from_terms(cls, entries: Sequence[Sequence[Iterable[dict]]], domain=(0.0, 1.0)) -> "PolyMatrix":
        """Build from nested lists of ``{"i_s", "i_theta", "coeff"}`` term dicts."""
        rows = len(entries)
        cols = len(entries[0]) if rows else 0
        terms = [[list(t) for t in row] for row in entries]
        ds = 1 + max((t["i_s"] for row in terms for e in row for t in e), default=0)
        dt = 1 + max((t["i_theta"] for row in terms for e in row for t in e), default=0)
        c = np.zeros((rows, cols, ds, dt, 1))
        for r, row in enumerate(terms):
            if len(row) != cols:
                raise ShapeMismatchError("ragged entry list")
            for k, e in enumerate(row):
                for t in e:
                    c[r, k, int(t["i_s"]), int(t["i_theta"]), 0] += float(t["coeff"])
        return cls(c, domain)

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, int]:
        return self.coef.shape[0], self.coef.shape[1]

    @property
    def rows(self) -> int:
        return self.coef.shape[0]

    @property
    def cols(self) -> int:
        return self.coef.shape[1]

    @property
    def nv(self) -> int:
        return self.coef.shape[4]

    @property
    def is_numeric(self) -> bool:
        return self.nv == 1 or not np.any(self.coef[..., 1:])

    @property
    def deg_s(self) -> int:
        return self.coef.shape[2] - 1

    @property
    def deg_theta(self) -> int:
        return self.coef.shape[3] - 1

    @property
    def total_degree(self) -> int:
        nz = np.argwhere(np.any(self.coef != 0.0, axis=(0, 1, 4)))
        return int(nz.sum(axis=1).max()) if len(nz) else 0

    def is_zero(self, tol: float = 0.0) -> bool:
        return not np.any(np.abs(self.coef) > tol)

    def terms(self, r: int = 0, c: int = 0) -> dict[tuple[int, int], float]:
        """Monomial map ``{(i_s, i_theta): coeff}`` of one numeric entry."""
        sub = self.coef[r, c, :, :, 0]
        return {(int(i), int(j)): float(sub[i, j]) for i, j in np.argwhere(sub != 0.0)}

    def __repr__(self) -> str:
        return f"PolyMatrix(shape={self.shape}, deg=({self.deg_s},{self.deg_theta}), nv={self.nv}, domain={self.domain})"

    # -- algebra ----------------------------------------------------------
    def _check_domain(self, other: "PolyMatrix") -> None:
        if self.domain != other.domain:
            raise PolynomialError(f"domain mismatch: {self.domain} vs {other.domain}")

    def pad_vars(self, nv: int) -> "PolyMatrix":
        if nv < self.nv:
            raise PolynomialError("cannot shrink the decision-variable axis")
        if nv == self.nv:
            return self
        return PolyMatrix(_pad_to(self.coef, self.coef.shape[2], self.coef.shape[3], nv), self.domain, canonical=False)

    def __add__(self, other: "PolyMatrix") -> "PolyMatrix":
        if not isinstance(other, PolyMatrix):
            return NotImplemented
        self._check_domain(other)
        if self.shape != other.shape:
            raise ShapeMismatchError(f"cannot add shapes {self.shape} and {other.shape}")
        ds = max(self.coef.shape[2], other.coef.shape[2])
        dt = max(self.coef.shape[3], other.coef.shape[3])
        nv = max(self.nv, other.nv)
        return PolyMatrix(_pad_to(self.coef, ds, dt, nv) + _pad_to(other.coef, ds, dt, nv), self.domain)

    def __neg__(self) -> "PolyMatrix":
        return PolyMatrix(-self.coef, self.domain, canonical=False)

    def __sub__(self, other: "PolyMatrix") -> "PolyMatrix":
        return self + (-other)

    def scale(self, c: float) -> "PolyMatrix":
        return PolyMatrix(self.coef * float(c), self.domain)

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            return self.scale(other)
        return NotImplemented

    __rmul__ = __mul__

    def __matmul__(self, other: "PolyMatrix") -> "PolyMatrix":
        return poly_mul(self, other)

    @property
    def T(self) -> "PolyMatrix":
        return PolyMatrix(np.swapaxes(self.coef, 0, 1), self.domain, canonical=False)

    def swap_vars(self) -> "PolyMatrix":
        return PolyMatrix(np.swapaxes(self.coef, 2, 3), self.domain, canonical=False)

    def __getitem__(self, key) -> "PolyMatrix":
        r, c = key
        r = r if isinstance(r, slice) else slice(r, r + 1)
        c = c if isinstance(c, slice) else slice(c, c + 1)
        return PolyMatrix(self.coef[r, c], self.domain)

    # -- evaluation -------------------------------------------------------
    def eval_affine(self, s: float, theta: float = 0.0) -> np.ndarray:
        """Evaluate keeping the decision-variable axis: shape ``(rows, cols, nv)``."""
        c = self.coef
        acc = np.zeros(c.shape[:2] + (c.shape[3], c.shape[4]))
        for i in range(c.shape[2] - 1, -1, -1):
            acc = acc * s + c[:, :, i]
        out = np.zeros(c.shape[:2] + (c.shape[4],))
        for j in range(c.shape[3] - 1, -1, -1):
            out = out * theta + acc[:, :, j]
        return out

    def __call__(self, s: float, theta: float = 0.0) -> np.ndarray:
        return self.eval_affine(s, theta)[..., 0]

    def eval_grid(self, s: np.ndarray, theta: np.ndarray | None = None) -> np.ndarray:
        """Numeric values on a grid: shape ``(len(s), len(theta), rows, cols)``."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        theta = np.zeros(1) if theta is None else np.atleast_1d(np.asarray(theta, dtype=float))
        vs = np.vander(s, self.coef.shape[2], increasing=True)
        vt = np.vander(theta, self.coef.shape[3], increasing=True)
        return np.einsum("ai,bj,rcij->abrc", vs, vt, self.coef[..., 0])

    def evaluate_vars(self, x: np.ndarray) -> "PolyMatrix":
        """Substitute numeric values for the decision variables."""
        x = np.asarray(x, dtype=float)
        nvars = self.nv - 1
        if x.shape[0] < nvars:
            raise PolynomialError("too few decision-variable values")
        vals = self.coef[..., 0] + self.coef[..., 1:] @ x[:nvars]
        return PolyMatrix(vals[..., None], self.domain)

    # -- serialization ----------------------------------------------------
    def to_dict(self) -> dict:
        if not self.is_numeric:
            raise PolynomialError("only numeric polynomials are serialized")
        entries = []
        for r in range(self.rows):
            row = []
            for k in range(self.cols):
                row.append([{"i_s": i, "i_theta": j, "coeff": v} for (i, j), v in sorted(self.terms(r, k).items())])
            entries.append(row)
        return {"rows": self.rows, "cols": self.cols, "domain": list(self.domain), "entries": entries}

    @classmethod
    def from_dict(cls, d: dict) -> "PolyMatrix":
        dom = tuple(d.get("domain", (0.0, 1.0)))
        if d["rows"] == 0 or d["cols"] == 0:
            return cls.zeros(d["rows"], d["cols"], dom)
        return cls.from_terms(d["entries"], dom)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "PolyMatrix":
        return cls.from_dict(json.loads(text))

    def allclose(self, other: "PolyMatrix", atol: float = 1e-10) -> bool:
        if self.shape != other.shape:
            return False
        ds = max(self.coef.shape[2], other.coef.shape[2])
        dt = max(self.coef.shape[3], other.coef.shape[3])
        nv = max(self.nv, other.nv)
        return bool(np.allclose(_pad_to(self.coef, ds, dt, nv), _pad_to(other.coef, ds, dt, nv), rtol=0.0, atol=atol))


PolyScalar = PolyMatrix  # a 1x1 PolyMatrix; kept as a name for scalar-valued kernels


def s_var(domain=(0.0, 1.0)) -> PolyMatrix:
    return PolyMatrix.monomial(1, 0, 1.0, domain)


def theta_var(domain=(0.0, 1.0)) -> PolyMatrix:
    return PolyMatrix.monomial(0, 1, 1.0, domain)


def poly_add(p: PolyMatrix, q: PolyMatrix) -> PolyMatrix:
    return p + q


def poly_mul(p: PolyMatrix, q: PolyMatrix, max_degree: int | None = None) -> PolyMatrix:
    p._check_domain(q)
    if p.cols != q.rows:
        raise ShapeMismatchError(f"cannot multiply {p.shape} by {q.shape}")
    out = PolyMatrix(_mul_arrays(p.coef, q.coef), p.domain)
    if max_degree is not None and out.total_degree > max_degree:
        raise DegreeOverflowError(f"degree {out.total_degree} exceeds limit {max_degree}")
    return out


def _resolve_bound(bound, domain):
    if isinstance(bound, str):
        if bound == "a":
            return domain[0]
        if bound == "b":
            return domain[1]
        if bound == "s":
            return _Axis(2)
        if bound in ("theta", "t"):
            return _Axis(3)
        raise PolynomialError(f"unknown bound {bound!r}")
    return float(bound)


def poly_integrate(p: PolyMatrix, var: str, lower="a", upper="b") -> PolyMatrix:
    """Integrate over ``var`` (``"s"`` or ``"theta"``) between the given bounds.

    Bounds are ``"a"``, ``"b"``, the other variable name, or a number.  After
    integration the integrated variable is gone; a bound equal to the other
    variable re-introduces that variable.
    """
    if var not in ("s", "theta"):
        raise PolynomialError(f"unknown variable {var!r}")
    axis = 2 if var == "s" else 3
    lo = _resolve_bound(lower, p.domain)
    hi = _resolve_bound(upper, p.domain)
    for bnd in (lo, hi):
        if isinstance(bnd, _Axis) and bnd.index == axis:
            raise PolynomialError(f"cannot integrate {var} up to itself")
    res = integrate_axis(p.coef, axis, lo, hi)
    return PolyMatrix(res, p.domain)


def poly_substitute(p: PolyMatrix, mapping: dict[str, str]) -> PolyMatrix:
    """Relabel variables; the mapping must be a bijection on ``{s, theta}``."""
    keys = set(mapping)
    if keys - set(VARIABLES) or set(mapping.values()) - set(VARIABLES) or len(set(mapping.values())) != len(mapping):
        raise PolynomialError(f"mapping {mapping} is not a bijection on (s, theta)")
    full = {v: mapping.get(v, v) for v in VARIABLES}
    if len(set(full.values())) != 2:
        raise PolynomialError(f"mapping {mapping} is not a bijection on (s, theta)")
    return p.swap_vars() if full["s"] == "theta" else p


def poly_eval(p: PolyMatrix, s: float, theta: float = 0.0) -> np.ndarray:
    return p(s, theta)


def block(rows: Sequence[Sequence[PolyMatrix]], domain=None) -> PolyMatrix:
    """Assemble a block matrix; every block row shares a row count and so on."""
    flat = [m for row in rows for m in row]
    if not flat:
        raise ShapeMismatchError("empty block")
    dom = domain or flat[0].domain
    ds = max(m.coef.shape[2] for m in flat)
    dt = max(m.coef.shape[3] for m in flat)
    nv = max(m.nv for m in flat)
    row_arrays = []
    for row in rows:
        heights = {m.rows for m in row}
        if len(heights) != 1:
            raise ShapeMismatchError(f"block row has inconsistent heights {heights}")
        row_arrays.append(np.concatenate([_pad_to(m.coef, ds, dt, nv) for m in row], axis=1))
    widths = {a.shape[1] for a in row_arrays}
    if len(widths) != 1:
        raise ShapeMismatchError(f"block rows have inconsistent widths {widths}")
    return PolyMatrix(np.concatenate(row_arrays, axis=0), dom)


def falling_power(base: PolyMatrix, k: int) -> PolyMatrix:
    """``base**k / k!`` for a 1x1 polynomial."""
    out = PolyMatrix.identity(1, base.domain)
    for _ in range(k):
        out = out @ base
    return out.scale(1.0 / math.factorial(k))
