"""Linear PI inequalities compiled to semidefinite programs.

Decision operators are :class:`~pieh2.piop.PIOperator` objects whose
polynomial coefficients carry a decision-variable axis, so every LPI
expression is built with the ordinary operator algebra.  Positivity is
imposed through the Gram parameterization ``Z_d^* Q Z_d`` with ``Q`` PSD,
where ``Z_d`` stacks

* the finite part ``x`` itself,
* the multiplier block ``s^p f_c(s)``,
* the lower Volterra block ``s^p int_a^s t^q f_c(t) dt``,
* the upper Volterra block ``s^p int_s^b t^q f_c(t) dt``,

for ``p, q = 0..d``.  The parameters of ``Z_d^* Q Z_d`` follow from the
pairwise integrals of these atoms, which have closed monomial forms; they
are assembled directly as sparse maps rather than by operator composition.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .piop import PARAMS, PIOperator, DimensionError, pi_finite_trace
from .polyalg import PolyMatrix
from . import sdp as sdpmod
from .sdp import PsdBlock, SdpProblem, SdpSolution

log = logging.getLogger(__name__)

DEFAULT_DEGREE = 2
MAX_DEGREE = 6
DEFAULT_EPS = 1e-4
MAX_SLACK_DEGREE = 12


class LpiError(ValueError):
    pass


class DegreeTooSmallError(LpiError):
    """The slack Gram basis cannot represent every monomial of an expression."""


class NotSelfAdjointError(LpiError):
    pass


# -- Gram basis ----------------------------------------------------------------

@dataclass(frozen=True)
class PosOpBasis:
    """Monomial basis operator ``Z_d`` for operators on ``R^m x L2^n``.

    ``mult`` lists the function channels that get a multiplier block;
    ``finite`` lists the finite coordinates passed through.
    """

    m: int
    n: int
    degree: int
    domain: tuple[float, float] = (0.0, 1.0)
    finite: tuple[int, ...] | None = None
    mult: tuple[int, ...] | None = None
    kernels: bool = True

    def __post_init__(self):
        if self.degree < 0:
            raise LpiError("Gram degree must be nonnegative")
        if self.finite is None:
            object.__setattr__(self, "finite", tuple(range(self.m)))
        if self.mult is None:
            object.__setattr__(self, "mult", tuple(range(self.n)))

    @property
    def atoms(self) -> list[tuple[str, int, int, int]]:
        """``(kind, p, q, index)`` for every row of ``Z_d``, in Gram order."""
        d = self.degree
        out = [("F", 0, 0, i) for i in self.finite]
        out += [("M", p, 0, c) for c in self.mult for p in range(d + 1)]
        if self.kernels and self.n:
            for kind in ("L", "U"):
                out += [(kind, p, q, c) for c in range(self.n) for p in range(d + 1) for q in range(d + 1)]
        return out

    @property
    def size(self) -> int:
        return len(self.atoms)

    @property
    def nvars(self) -> int:
        k = self.size
        return k * (k + 1) // 2

    def operator(self) -> PIOperator:
        """``Z_d`` as a PI operator ``(m, n) -> (len(finite), #function atoms)``."""
        atoms = self.atoms
        fn_atoms = [a for a in atoms if a[0] != "F"]
        dom = self.domain
        d = self.degree + 1
        P = np.zeros((len(self.finite), self.m))
        for r, i in enumerate(self.finite):
            P[r, i] = 1.0
        R0 = np.zeros((len(fn_atoms), self.n, d, 1))
        R1 = np.zeros((len(fn_atoms), self.n, d, d))
        R2 = np.zeros((len(fn_atoms), self.n, d, d))
        for r, (kind, p, q, c) in enumerate(fn_atoms):
            if kind == "M":
                R0[r, c, p, 0] = 1.0
            elif kind == "L":
                R1[r, c, p, q] = 1.0
            else:
                R2[r, c, p, q] = 1.0
        return PIOperator.from_params(
            (self.m, self.n), (len(self.finite), len(fn_atoms)), dom,
            P=P, R0=PolyMatrix(R0, dom), R1=PolyMatrix(R1, dom), R2=PolyMatrix(R2, dom))

    def gram_operator(self, Q: np.ndarray) -> PIOperator:
        """Numeric ``Z_d^* Q Z_d`` for a given symmetric ``Q`` (used as an oracle)."""
        Q = np.asarray(Q, dtype=float)
        iu, ju = sdpmod.triu_colmajor(self.size)
        y = Q[iu, ju]
        return gram_map(self).to_operator(y)


def _pair(alpha, beta, a: float, b: float):
    """Parameter contributions of ``int_a^b alpha(u) beta(v)`` as ``<u, K v>``.

    Returns ``(param, row, col, [(i_s, i_t, coeff), ...])`` or ``None``.
    """
    ka, pa, qa, ca = alpha
    kb, pb, qb, cb = beta
    if ka == "F" and kb == "F":
        return "P", ca, cb, [(0, 0, b - a)]
    if ka == "F" or kb == "F":
        # finite coordinate against a function atom: a Q1 (or Q2) entry
        kind, p, q = (kb, pb, qb) if ka == "F" else (ka, pa, qa)
        if kind == "M":
            mons = [(p, 0, 1.0)]
        elif kind == "L":
            mons = [(q, 0, b ** (p + 1) / (p + 1)), (q + p + 1, 0, -1.0 / (p + 1))]
        else:
            mons = [(q + p + 1, 0, 1.0 / (p + 1)), (q, 0, -(a ** (p + 1)) / (p + 1))]
        return ("Q1", ca, cb, mons) if ka == "F" else ("Q2", ca, cb, mons)
    k = pa + pb
    inv = 1.0 / (k + 1)
    if ka == "M" and kb == "M":
        return "R0", ca, cb, [(k, 0, 1.0)]
    if ka == "M":
        return ("R1" if kb == "L" else "R2"), ca, cb, [(k, qb, 1.0)]
    if kb == "M":
        return ("R2" if ka == "L" else "R1"), ca, cb, [(qa, k, 1.0)]
    qs, qt = qa, qb
    if ka == "L" and kb == "L":
        B = b ** (k + 1) * inv
        return [("R1", ca, cb, [(qs, qt, B), (qs + k + 1, qt, -inv)]),
                ("R2", ca, cb, [(qs, qt, B), (qs, qt + k + 1, -inv)])]
    if ka == "U" and kb == "U":
        A = a ** (k + 1) * inv
        return [("R1", ca, cb, [(qs, qt + k + 1, inv), (qs, qt, -A)]),
                ("R2", ca, cb, [(qs + k + 1, qt, inv), (qs, qt, -A)])]
    if ka == "L":  # L against U: only t > s contributes
        return "R2", ca, cb, [(qs, qt + k + 1, inv), (qs + k + 1, qt, -inv)]
    return "R1", ca, cb, [(qs + k + 1, qt, inv), (qs, qt + k + 1, -inv)]


@dataclass
class GramMap:
    """Sparse linear map from Gram entries ``y`` to operator coefficients."""

    m: int
    n: int
    domain: tuple[float, float]
    nvars: int
    frames: dict  # param -> (rows, cols, ds, dt)
    coo: dict  # param -> (r, c, i, j, var, val) integer/float arrays

    def support(self, param: str) -> np.ndarray:
        r, c, i, j, _, _ = self.coo[param]
        return np.stack([r, c, i, j], axis=1) if r.size else np.zeros((0, 4), dtype=int)

    def to_operator(self, y: np.ndarray | None = None, offset: int = 0, nv: int | None = None) -> PIOperator:
        """Numeric operator for values ``y``, or an affine operator when ``y`` is None.

        In the affine case variable ``k`` of the map becomes decision variable
        ``offset + k`` of an operator with ``nv`` variable slots.
        """
        params = {}
        for name in PARAMS:
            rows, cols, ds, dt = self.frames[name]
            r, c, i, j, v, val = self.coo[name]
            if y is not None:
                coef = np.zeros((rows, cols, ds, dt, 1))
                np.add.at(coef, (r, c, i, j, np.zeros_like(r)), val * np.asarray(y)[v])
            else:
                width = nv if nv is not None else 1 + offset + self.nvars
                coef = np.zeros((rows, cols, ds, dt, width))
                np.add.at(coef, (r, c, i, j, 1 + offset + v), val)
            params[name] = PolyMatrix(coef, self.domain)
        return PIOperator(**params)


@lru_cache(maxsize=64)
def _gram_map_cached(basis: PosOpBasis) -> GramMap:
    a, b = basis.domain
    atoms = basis.atoms
    M = len(atoms)
    m, n = basis.m, basis.n
    acc = {p: ([], [], [], [], [], []) for p in PARAMS}
    for ia, alpha in enumerate(atoms):
        for ib, beta in enumerate(atoms):
            lo, hi = (ia, ib) if ia <= ib else (ib, ia)
            var = hi * (hi + 1) // 2 + lo
            res = _pair(alpha, beta, a, b)
            for param, r, c, mons in (res if isinstance(res, list) else [res]):
                lst = acc[param]
                for i, j, val in mons:
                    if val == 0.0:
                        continue
                    lst[0].append(r)
                    lst[1].append(c)
                    lst[2].append(i)
                    lst[3].append(j)
                    lst[4].append(var)
                    lst[5].append(val)
    shapes = {"P": (m, m), "Q1": (m, n), "Q2": (n, m), "R0": (n, n), "R1": (n, n), "R2": (n, n)}
    frames, coo = {}, {}
    for p in PARAMS:
        r, c, i, j, v, val = (np.asarray(x, dtype=int if k < 5 else float) for k, x in enumerate(acc[p]))
        ds = int(i.max()) + 1 if i.size else 1
        dt = int(j.max()) + 1 if j.size else 1
        frames[p] = shapes[p] + (ds, dt)
        coo[p] = (r, c, i, j, v, val)
    return GramMap(m, n, basis.domain, M * (M + 1) // 2, frames, coo)


def gram_map(basis: PosOpBasis) -> GramMap:
    return _gram_map_cached(basis)


# -- affine helpers --------------------------------------------------------------

def _select_vars(op: PIOperator, slots: np.ndarray) -> PIOperator:
    out = {}
    for p in PARAMS:
        pm = getattr(op, p)
        coef = np.zeros(pm.coef.shape[:4] + (len(slots),))
        ok = slots < pm.nv
        coef[..., ok] = pm.coef[..., slots[ok]]
        out[p] = PolyMatrix(coef, pm.domain)
    return PIOperator(**out)


def apply_linear(fn: Callable[[PIOperator], PIOperator], op: PIOperator, chunk: int = 400) -> PIOperator:
    """Apply a linear operator map to an affine operator, chunking the variable axis.

    ``fn`` must be linear (e.g. ``lambda X: T.star @ X @ A``); chunking keeps
    the three-variable composition workspace small when ``op`` has many
    decision variables.
    """
    nv = op.nv
    if nv <= chunk + 1:
        return fn(op)
    const = fn(_select_vars(op, np.array([0])))
    pieces = []
    for start in range(1, nv, chunk):
        slots = np.concatenate([[0], np.arange(start, min(start + chunk, nv))])
        sub = _select_vars(op, slots)
        sub = PIOperator(**{p: PolyMatrix(np.concatenate([np.zeros(getattr(sub, p).coef.shape[:4] + (1,)),
                                                           getattr(sub, p).coef[..., 1:]], axis=4), op.domain,
                                          canonical=False) for p in PARAMS})
        pieces.append(fn(sub))
    out = {}
    for p in PARAMS:
        arrs = [getattr(const, p).coef] + [getattr(x, p).coef[..., 1:] for x in pieces]
        ds = max(a.shape[2] for a in arrs)
        dt = max(a.shape[3] for a in arrs)
        padded = []
        for a in arrs:
            z = np.zeros(a.shape[:2] + (ds, dt, a.shape[4]))
            z[:, :, : a.shape[2], : a.shape[3]] = a
            padded.append(z)
        out[p] = PolyMatrix(np.concatenate(padded, axis=4), op.domain)
    return PIOperator(**out)


def _frame_index(frame, r, c, i, j):
    rows, cols, ds, dt = frame
    return ((r * cols + c) * ds + i) * dt + j


def _independent(param: str, r, c) -> np.ndarray:
    """Mask of parameter entries that determine a self-adjoint operator."""
    if param in ("P", "R0"):
        return r <= c
    if param in ("Q1", "R1"):
        return np.ones_like(r, dtype=bool)
    return np.zeros_like(r, dtype=bool)


# -- program ---------------------------------------------------------------------

@dataclass
class PosOpVar:
    """A Gram-parameterized positive operator variable and its PSD block."""

    name: str
    basis: PosOpBasis
    block: PsdBlock
    eps: float
    expr: PIOperator


@dataclass
class _Rows:
    A: sp.csr_matrix
    b: np.ndarray
    label: str


@dataclass
class LpiSolution:
    status: str
    x: np.ndarray
    objective: float
    sdp: SdpSolution
    program: "LpiProgram"

    @property
    def ok(self) -> bool:
        return self.status == "solved"

    def value(self, expr: PIOperator) -> PIOperator:
        return expr.evaluate_vars(self.x)

    def scalar(self, index: int) -> float:
        return float(self.x[index])

    def block(self, name: str) -> np.ndarray:
        return self.program.blocks[name].unpack(self.x)


class LpiProgram:
    """Incrementally assembled LPI; call :meth:`compile` or :meth:`solve`."""

    def __init__(self, domain=(0.0, 1.0), name: str = "lpi"):
        self.domain = (float(domain[0]), float(domain[1]))
        self.name = name
        self.nvars = 0
        self.blocks: dict[str, PsdBlock] = {}
        self.nonneg: list[int] = []
        self.free: dict[str, np.ndarray] = {}
        self.rows: list[_Rows] = []
        self.objective: dict[int, float] = {}
        self.slack_degrees: dict[str, tuple[int, int, int]] = {}

    # -- variables ------------------------------------------------------
    def _alloc(self, count: int) -> int:
        off = self.nvars
        self.nvars += int(count)
        return off

    def _unique(self, name: str) -> str:
        base, k = name, 1
        while name in self.blocks or name in self.free:
            k += 1
            name = f"{base}{k}"
        return name

    def new_psd(self, size: int, name: str = "Q") -> PsdBlock:
        name = self._unique(name)
        blk = PsdBlock(name, self._alloc(size * (size + 1) // 2), size)
        self.blocks[name] = blk
        return blk

    def new_free(self, count: int = 1, name: str = "v") -> np.ndarray:
        name = self._unique(name)
        idx = self._alloc(count) + np.arange(count)
        self.free[name] = idx
        return idx

    def new_nonneg(self, count: int = 1) -> np.ndarray:
        idx = self._alloc(count) + np.arange(count)
        self.nonneg.extend(int(i) for i in idx)
        return idx

    def scalar(self, name: str = "rho") -> tuple[int, PIOperator]:
        """A free scalar as (index, 1x1 finite operator)."""
        k = int(self.new_free(1, name)[0])
        coef = np.zeros((1, 1, 1, 1, 2 + k))
        coef[0, 0, 0, 0, 1 + k] = 1.0
        op = PIOperator.from_params((1, 0), (1, 0), self.domain, P=PolyMatrix(coef, self.domain))
        return k, op

    def times_scalar(self, op: PIOperator, index: int) -> PIOperator:
        """``x[index] * op`` for a numeric operator ``op``."""
        if not op.is_numeric:
            raise LpiError("times_scalar needs a numeric operator")
        params = {}
        for p in PARAMS:
            c = getattr(op, p).coef
            coef = np.zeros(c.shape[:4] + (2 + int(index),))
            coef[..., 1 + int(index)] = c[..., 0]
            params[p] = PolyMatrix(coef, self.domain)
        return PIOperator(**params)

    def bound_below(self, index: int, lower: float, name: str = "lower") -> int:
        """``x[index] >= lower`` via a nonnegative slack; returns the slack index."""
        sigma = int(self.new_nonneg(1)[0])
        row = np.zeros(self.nvars)
        row[int(index)] = 1.0
        row[sigma] = -1.0
        self._add_rows(row[None, :], [lower], name)
        return sigma

    def sym_matrix(self, q: int, name: str = "W") -> PIOperator:
        """Symmetric ``q x q`` matrix of free variables as a finite operator."""
        nv = q * (q + 1) // 2
        idx = self.new_free(nv, name)
        coef = np.zeros((q, q, 1, 1, 1 + self.nvars))
        iu, ju = sdpmod.triu_colmajor(q)
        coef[iu, ju, 0, 0, 1 + idx] = 1.0
        coef[ju, iu, 0, 0, 1 + idx] = 1.0
        return PIOperator.from_params((q, 0), (q, 0), self.domain, P=PolyMatrix(coef, self.domain))

    def pos_op(self, dims, degree: int = DEFAULT_DEGREE, eps: float = DEFAULT_EPS, name: str = "P") -> PosOpVar:
        """``eps*I + Z_d^* Q Z_d`` on ``R^m x L2^n`` with a fresh PSD block ``Q``."""
        if eps < 0:
            raise LpiError("eps must be nonnegative")
        m, n = dims
        basis = PosOpBasis(m, n, degree, self.domain)
        gm = gram_map(basis)
        blk = self.new_psd(basis.size, name)
        expr = gm.to_operator(offset=blk.offset, nv=1 + self.nvars)
        if eps:
            expr = expr + PIOperator.identity(m, n, self.domain) * eps
        return PosOpVar(blk.name, basis, blk, eps, expr)

    def indefinite_op(self, dims_in, dims_out, degree: int = DEFAULT_DEGREE, name: str = "Z") -> PIOperator:
        """Operator with one free scalar per monomial of every parameter entry."""
        m1, n1 = dims_in
        m2, n2 = dims_out
        d = degree + 1
        layout = {"P": ((m2, m1), 1, 1), "Q1": ((m2, n1), d, 1), "Q2": ((n2, m1), d, 1),
                  "R0": ((n2, n1), d, 1), "R1": ((n2, n1), d, d), "R2": ((n2, n1), d, d)}
        total = sum(r * c * ds * dt for (r, c), ds, dt in layout.values())
        idx = self.new_free(total, name)
        nv = 1 + self.nvars
        params, pos = {}, 0
        for p, ((r, c), ds, dt) in layout.items():
            size = r * c * ds * dt
            coef = np.zeros((r, c, ds, dt, nv))
            flat = coef.reshape(size, nv)
            flat[np.arange(size), 1 + idx[pos:pos + size]] = 1.0
            params[p] = PolyMatrix(coef, self.domain)
            pos += size
        return PIOperator(**params)

    # -- constraints ------------------------------------------------------
    def _add_rows(self, A, b, label: str) -> None:
        A = sp.csr_matrix(A)
        if A.shape[0]:
            self.rows.append(_Rows(A, np.asarray(b, dtype=float), label))

    def enforce_psd(self, e: PIOperator, degree: int | None = None, name: str = "S",
                    slack_extra: int = 0, max_degree: int = MAX_SLACK_DEGREE,
                    allow_uncovered: bool = False) -> PosOpBasis:
        """Impose ``e >= 0`` via ``e = Z_d'^* Q_s Z_d'`` with a new PSD block ``Q_s``.

        The slack degree ``d'`` defaults to the smallest whose monomials cover
        those of ``e`` (plus ``slack_extra``).  Returns the slack basis.
        """
        if e.dims_in != e.dims_out:
            raise NotSelfAdjointError(f"expression maps {e.dims_in} -> {e.dims_out}")
        scale = max(1.0, max(float(np.max(np.abs(getattr(e, p).coef), initial=0.0)) for p in PARAMS))
        if not e.allclose(e.star, atol=1e-9 * scale):
            raise NotSelfAdjointError("expression passed to enforce_psd is not self-adjoint")
        m, n = e.dims_out
        coefs = {p: getattr(e, p).coef for p in PARAMS}
        support = {}
        for p in PARAMS:
            nz = np.argwhere(np.any(coefs[p] != 0.0, axis=4))
            if nz.size:
                nz = nz[_independent(p, nz[:, 0], nz[:, 1])]
            support[p] = nz
        finite = tuple(i for i in range(m) if np.any(coefs["P"][i, i] != 0.0))
        mult = tuple(c for c in range(n) if np.any(coefs["R0"][c, c] != 0.0))
        kernels = bool(support["R1"].size) or bool(support["Q1"].size and n)

        def covers(basis: PosOpBasis) -> bool:
            gm = gram_map(basis)
            for p in PARAMS:
                if not support[p].size:
                    continue
                have = {tuple(x) for x in gm.support(p)}
                if any(tuple(x) not in have for x in support[p]):
                    return False
            return True

        def make(d):
            return PosOpBasis(m, n, d, self.domain, finite, mult, kernels)

        if degree is None:
            degree = next((d for d in range(max_degree + 1) if covers(make(d))), None)
            if degree is None:
                raise DegreeTooSmallError(f"no slack degree <= {max_degree} covers the monomials of {name}")
            degree += slack_extra
        basis = make(degree)
        if not allow_uncovered and not covers(basis):
            raise DegreeTooSmallError(f"slack degree {degree} cannot represent every monomial of {name}")
        gm = gram_map(basis)
        blk = self.new_psd(basis.size, name)
        self.slack_degrees[blk.name] = degree

        A_parts, b_parts = [], []
        for p in PARAMS:
            rows, cols = gm.frames[p][:2]
            if rows == 0 or cols == 0:
                continue
            ce = coefs[p]
            ds = max(gm.frames[p][2], ce.shape[2])
            dt = max(gm.frames[p][3], ce.shape[3])
            frame = (rows, cols, ds, dt)
            r, c, i, j, v, val = gm.coo[p]
            keep = _independent(p, r, c)
            s_pos = _frame_index(frame, r[keep], c[keep], i[keep], j[keep])
            e_idx = np.argwhere(np.any(ce != 0.0, axis=4))
            e_idx = e_idx[_independent(p, e_idx[:, 0], e_idx[:, 1])] if e_idx.size else e_idx.reshape(0, 4)
            e_pos = _frame_index(frame, *e_idx.T) if e_idx.size else np.zeros(0, dtype=int)
            positions = np.union1d(s_pos, e_pos)
            if not positions.size:
                continue
            row_of = {int(x): k for k, x in enumerate(positions)}
            # slack columns (negated: e - S = 0)
            srow = np.array([row_of[int(x)] for x in s_pos], dtype=int)
            S = sp.csr_matrix((-val[keep], (srow, blk.offset + v[keep])), shape=(positions.size, self.nvars))
            # expression coefficients
            E_const = np.zeros(positions.size)
            if e_idx.size:
                erow = np.array([row_of[int(x)] for x in e_pos], dtype=int)
                sub = ce[e_idx[:, 0], e_idx[:, 1], e_idx[:, 2], e_idx[:, 3], :]
                E_const[erow] = sub[:, 0]
                lin = sp.csr_matrix(sub[:, 1:])
                lin = sp.csr_matrix((lin.data, lin.indices, lin.indptr), shape=(e_idx.shape[0], self.nvars))
                P_rows = sp.csr_matrix((np.ones(erow.size), (erow, np.arange(erow.size))), shape=(positions.size, erow.size))
                E = P_rows @ lin
            else:
                E = sp.csr_matrix((positions.size, self.nvars))
            A_parts.append(E + S)
            b_parts.append(-E_const)
        if A_parts:
            self._add_rows(sp.vstack(A_parts), np.concatenate(b_parts), name)
        log.debug("enforce_psd %s: slack degree %d, block %d, %d rows", name, degree, basis.size,
                  sum(a.shape[0] for a in A_parts))
        return basis

    def enforce_nsd(self, e: PIOperator, **kwargs) -> PosOpBasis:
        return self.enforce_psd(-e, **kwargs)

    def enforce_trace_le(self, a: PIOperator, bound_index: int, name: str = "trace") -> int:
        """``trace(a) <= x[bound_index]`` via a nonnegative slack; returns the slack index."""
        if a.dims_in[1] or a.dims_out[1]:
            raise DimensionError("trace bound needs a finite-to-finite operator")
        t = pi_finite_trace(a)
        t = np.atleast_1d(np.asarray(t, dtype=float))
        sigma = int(self.new_nonneg(1)[0])
        row = np.zeros(self.nvars)
        row[: t.size - 1] = t[1:]
        row[bound_index] -= 1.0
        row[sigma] += 1.0
        self._add_rows(row[None, :], [-t[0]], name)
        return sigma

    def enforce_equal(self, e: PIOperator, name: str = "eq") -> None:
        """Every coefficient of ``e`` equal to zero."""
        rows, rhs = [], []
        for p in PARAMS:
            c = getattr(e, p).coef
            flat = c.reshape(-1, c.shape[4])
            keep = np.any(flat != 0.0, axis=1)
            if keep.any():
                lin = np.zeros((int(keep.sum()), self.nvars))
                lin[:, : flat.shape[1] - 1] = flat[keep, 1:]
                rows.append(sp.csr_matrix(lin))
                rhs.append(-flat[keep, 0])
        if rows:
            self._add_rows(sp.vstack(rows), np.concatenate(rhs), name)

    def minimize(self, index: int, weight: float = 1.0) -> None:
        self.objective[int(index)] = self.objective.get(int(index), 0.0) + float(weight)

    # -- compilation ------------------------------------------------------
    def compile(self) -> SdpProblem:
        n = self.nvars
        mats = []
        for r in self.rows:
            A = r.A.tocoo()
            mats.append(sp.csr_matrix((A.data, (A.row, A.col)), shape=(A.shape[0], n)))
        A = sp.vstack(mats).tocsr() if mats else sp.csr_matrix((0, n))
        A.eliminate_zeros()
        b = np.concatenate([r.b for r in self.rows]) if self.rows else np.zeros(0)
        c = np.zeros(n)
        for k, w in self.objective.items():
            c[k] += w
        blocks = sorted(self.blocks.values(), key=lambda blk: blk.offset)
        names = {k: v.tolist() for k, v in self.free.items()}
        return SdpProblem(n, A, b, c, blocks, np.array(self.nonneg, dtype=int), names)

    def solve(self, adapter: str = sdpmod.DEFAULT_ADAPTER, sdpa_out=None, **kwargs) -> LpiSolution:
        prob = self.compile()
        if sdpa_out:
            sdpmod.export_sdpa(prob, sdpa_out)
        sol = sdpmod.solve(prob, adapter, **kwargs)
        return LpiSolution(sol.status, sol.x, sol.objective, sol, self)

