"""Linear PDEs of uniform spatial order N in {1, 2} and their PIE form.

The state ``x(t, s)`` (width ``n``) is replaced by its highest derivative
``xc = d^N x / ds^N``.  Cauchy's rule for repeated integration expresses every
lower derivative through the boundary values at ``a`` and a Volterra integral
of ``xc``; the boundary conditions then eliminate the boundary values.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .polyalg import PolyMatrix, block, s_var, theta_var
from .piop import PIOperator, DimensionError, pi_compose

BC_CONDITION_LIMIT = 1e8
SCHEMA_VERSION = 1


class ConversionError(ValueError):
    pass


class IllPosedBoundaryError(ConversionError):
    pass


def _zeros(r, c, dom):
    return PolyMatrix.zeros(r, c, dom)


def _const(mat, dom):
    mat = np.asarray(mat, dtype=float)
    if mat.size == 0:
        return PolyMatrix.zeros(mat.shape[0], mat.shape[1], dom)
    return PolyMatrix.constant(mat, dom)


@dataclass(frozen=True)
class GpdeSystem:
    """Coefficients of ``dx/dt = sum_i A_i(s) d^i x + Bw w + Bu u``.

    ``Bb`` acts on the boundary trace ``[x(a); x'(a); ...; x(b); x'(b); ...]``
    (each block ``n`` wide) and ``Bb @ trace = 0``.  Outputs are
    ``z = sum_i int Cz[i] d^i x ds + Czb @ trace + Dzw w + Dzu u`` and likewise
    for ``y``.
    """

    domain: tuple[float, float]
    n: int
    order: int
    A: tuple[PolyMatrix, ...]
    Bb: np.ndarray
    Bw: PolyMatrix
    Bu: PolyMatrix
    Cz: tuple[PolyMatrix, ...]
    Czb: np.ndarray
    Dzw: np.ndarray
    Dzu: np.ndarray
    Cy: tuple[PolyMatrix, ...]
    Cyb: np.ndarray
    Dyw: np.ndarray
    Dyu: np.ndarray
    name: str = ""

    @classmethod
    def create(cls, domain, n: int, order: int, A, Bb, *, Bw=None, Bu=None, Cz=None, Czb=None, Dzw=None,
               Dzu=None, Cy=None, Cyb=None, Dyw=None, Dyu=None, nw=None, nu=None, nz=None, ny=None,
               name: str = "") -> "GpdeSystem":
        """Build a system, filling omitted channels with zeros.

        ``A``, ``Cz`` and ``Cy`` may be dicts ``{derivative order: PolyMatrix}``.
        Widths are inferred from the given maps unless passed explicitly.
        """
        dom = (float(domain[0]), float(domain[1]))
        N = order
        nw = nw if nw is not None else (Bw.cols if Bw is not None else (np.shape(Dzw)[1] if Dzw is not None else 0))
        nu = nu if nu is not None else (Bu.cols if Bu is not None else (np.shape(Dzu)[1] if Dzu is not None else 0))

        def rows_of(C, Cb, Dw, Du):
            for x in (Dw, Du, Cb):
                if x is not None:
                    return np.shape(x)[0]
            if C:
                return next(iter(C.values())).rows
            return 0

        nz = nz if nz is not None else rows_of(Cz, Czb, Dzw, Dzu)
        ny = ny if ny is not None else rows_of(Cy, Cyb, Dyw, Dyu)

        def coeffs(spec, rows, cols):
            spec = dict(enumerate(spec)) if isinstance(spec, (list, tuple)) else dict(spec or {})
            return tuple(spec.get(i, _zeros(rows, cols, dom)) for i in range(N + 1))

        def mat(x, r, c):
            return np.zeros((r, c)) if x is None else np.asarray(x, dtype=float).reshape(r, c)

        return cls(dom, n, N, coeffs(A, n, n), np.asarray(Bb, dtype=float),
                   Bw if Bw is not None else _zeros(n, nw, dom), Bu if Bu is not None else _zeros(n, nu, dom),
                   coeffs(Cz, nz, n), mat(Czb, nz, 2 * N * n), mat(Dzw, nz, nw), mat(Dzu, nz, nu),
                   coeffs(Cy, ny, n), mat(Cyb, ny, 2 * N * n), mat(Dyw, ny, nw), mat(Dyu, ny, nu), name)

    @property
    def nw(self) -> int:
        return self.Bw.cols

    @property
    def nu(self) -> int:
        return self.Bu.cols

    @property
    def nz(self) -> int:
        return self.Dzw.shape[0]

    @property
    def ny(self) -> int:
        return self.Dyw.shape[0]

    def validate(self) -> None:
        N, n = self.order, self.n
        if N not in (1, 2):
            raise ConversionError(f"differentiability order {N} is not supported (use 1 or 2)")
        if len(self.A) != N + 1:
            raise ConversionError(f"expected {N + 1} dynamics coefficients, got {len(self.A)}")
        for i, Ai in enumerate(self.A):
            if Ai.shape != (n, n):
                raise ConversionError(f"A{i} has shape {Ai.shape}, expected {(n, n)}")
            if Ai.deg_theta:
                raise ConversionError(f"A{i} may depend on s only")
        if self.Bb.shape != (N * n, 2 * N * n):
            raise ConversionError(f"boundary matrix must be {N * n}x{2 * N * n}, got {self.Bb.shape}")
        if np.linalg.matrix_rank(self.Bb) != N * n:
            raise IllPosedBoundaryError("boundary matrix does not have full row rank")
        if self.Bw.rows != n or self.Bu.rows != n:
            raise ConversionError("input maps must have n rows")
        for tag, C, Cb, Dw, Du in (("z", self.Cz, self.Czb, self.Dzw, self.Dzu), ("y", self.Cy, self.Cyb, self.Dyw, self.Dyu)):
            rows = Dw.shape[0]
            if len(C) != N + 1:
                raise ConversionError(f"{tag}: expected {N + 1} integral weights")
            for i, Ci in enumerate(C):
                if Ci.shape != (rows, n):
                    raise ConversionError(f"{tag}: integral weight {i} has shape {Ci.shape}, expected {(rows, n)}")
            if Cb.shape != (rows, 2 * N * n):
                raise ConversionError(f"{tag}: boundary rows have shape {Cb.shape}, expected {(rows, 2 * N * n)}")
            if Dw.shape != (rows, self.nw) or Du.shape != (rows, self.nu):
                raise ConversionError(f"{tag}: feedthrough shapes are inconsistent")
        polys = list(self.A) + [self.Bw, self.Bu] + list(self.Cz) + list(self.Cy)
        if any(p.domain != tuple(self.domain) for p in polys):
            raise ConversionError("all coefficient polynomials must share the domain")


@dataclass(frozen=True, eq=False)
class PieSystem:
    """``T x' = A x + B1 w + B2 u``, ``z = C1 x + D11 w + D12 u``, ``y = C2 x + D21 w + D22 u``."""

    T: PIOperator
    A: PIOperator
    B1: PIOperator
    B2: PIOperator
    C1: PIOperator
    C2: PIOperator
    D11: np.ndarray
    D12: np.ndarray
    D21: np.ndarray
    D22: np.ndarray
    name: str = ""

    @classmethod
    def build(cls, T, A, B1=None, B2=None, C1=None, C2=None, D11=None, D12=None, D21=None, D22=None, name="") -> "PieSystem":
        """Fill missing channels with zero-width operators/matrices."""
        dom = T.domain
        state = T.dims_in
        B1 = B1 if B1 is not None else PIOperator.zero((0, 0), state, dom)
        B2 = B2 if B2 is not None else PIOperator.zero((0, 0), state, dom)
        C1 = C1 if C1 is not None else PIOperator.zero(state, (0, 0), dom)
        C2 = C2 if C2 is not None else PIOperator.zero(state, (0, 0), dom)
        nw, nu = B1.dims_in[0], B2.dims_in[0]
        nz, ny = C1.dims_out[0], C2.dims_out[0]

        def mat(M, r, c):
            return np.zeros((r, c)) if M is None else np.asarray(M, dtype=float).reshape(r, c)

        return cls(T, A, B1, B2, C1, C2, mat(D11, nz, nw), mat(D12, nz, nu), mat(D21, ny, nw), mat(D22, ny, nu), name)

    @property
    def domain(self):
        return self.T.domain

    @property
    def state_dims(self) -> tuple[int, int]:
        return self.T.dims_in

    @property
    def nw(self) -> int:
        return self.B1.dims_in[0]

    @property
    def nu(self) -> int:
        return self.B2.dims_in[0]

    @property
    def nz(self) -> int:
        return self.C1.dims_out[0]

    @property
    def ny(self) -> int:
        return self.C2.dims_out[0]

    def dual(self) -> "PieSystem":
        """``Sigma(T*, A*, C1*, B1*, D11^T)``; control/observation channels swap too."""
        return PieSystem.build(
            self.T.star, self.A.star, B1=self.C1.star, B2=self.C2.star, C1=self.B1.star, C2=self.B2.star,
            D11=self.D11.T, D12=self.D21.T, D21=self.D12.T, D22=self.D22.T, name=f"{self.name}-dual" if self.name else "dual",
        )

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "pie",
            "name": self.name,
            **{k: getattr(self, k).to_dict() for k in ("T", "A", "B1", "B2", "C1", "C2")},
            **{k: getattr(self, k).tolist() for k in ("D11", "D12", "D21", "D22")},
            "widths": {"w": self.nw, "u": self.nu, "z": self.nz, "y": self.ny},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PieSystem":
        ops = {k: PIOperator.from_dict(d[k]) for k in ("T", "A", "B1", "B2", "C1", "C2")}
        w = d.get("widths", {})
        shapes = {
            "D11": (ops["C1"].dims_out[0], ops["B1"].dims_in[0]),
            "D12": (ops["C1"].dims_out[0], ops["B2"].dims_in[0]),
            "D21": (ops["C2"].dims_out[0], ops["B1"].dims_in[0]),
            "D22": (ops["C2"].dims_out[0], ops["B2"].dims_in[0]),
        }
        mats = {k: np.asarray(d.get(k, np.zeros(shp)), dtype=float).reshape(shp) for k, shp in shapes.items()}
        if w and (w.get("w", ops["B1"].dims_in[0]) != ops["B1"].dims_in[0] or w.get("z", ops["C1"].dims_out[0]) != ops["C1"].dims_out[0]):
            raise DimensionError("declared channel widths disagree with operators")
        return cls(**ops, **mats, name=d.get("name", ""))

    def to_json(self, indent=None) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    @classmethod
    def from_json(cls, text: str) -> "PieSystem":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True, eq=False)
class FundamentalIdentity:
    """Maps from the core state to the PDE state, its derivatives and its boundary trace."""

    state_map: PIOperator
    derivative_maps: tuple[PIOperator, ...]  # index j: xc -> d^j x, j = 0..N (N is the identity)
    trace_map: PIOperator  # xc -> [x(a); ...; x^(N-1)(b)], a finite-valued PI operator
    boundary_elim: np.ndarray
    condition: float


def _taylor_block(order: int, n: int, j: int, var: PolyMatrix, dom) -> PolyMatrix:
    """Row block ``[var^(k-j)/(k-j)! I]_k`` (zero for k < j), an n x Nn polynomial."""
    I = np.eye(n)
    blocks = []
    for k in range(order):
        if k < j:
            blocks.append(_zeros(n, n, dom))
        else:
            p = PolyMatrix.identity(1, dom)
            for _ in range(k - j):
                p = p @ var
            p = p.scale(1.0 / math.factorial(k - j))
            blocks.append(PolyMatrix(np.einsum("ab,ijv->abijv", I, p.coef[0, 0]), dom))
    return block([blocks], dom)


def fundamental_identity(order: int, Bb: np.ndarray, n: int, domain=(0.0, 1.0)) -> FundamentalIdentity:
    """PI maps from ``xc = d^N x`` to ``d^j x`` with boundary values eliminated."""
    a, b = float(domain[0]), float(domain[1])
    dom = (a, b)
    N = order
    if N not in (1, 2):
        raise ConversionError(f"order {N} is not supported")
    Bb = np.asarray(Bb, dtype=float)
    if Bb.shape != (N * n, 2 * N * n):
        raise ConversionError(f"boundary matrix must be {N * n}x{2 * N * n}")
    s = s_var(dom)
    t = theta_var(dom)
    one = PolyMatrix.identity(1, dom)
    s_minus_a = s - one.scale(a)
    b_minus_t = one.scale(b) - t
    s_minus_t = s - t
    I = np.eye(n)

    # x^(j)(b) = sum_k H[j,k] x^(k)(a) + int_a^b Kb_j(t) xc(t) dt
    H = np.zeros((N * n, N * n))
    for j in range(N):
        for k in range(j, N):
            H[j * n:(j + 1) * n, k * n:(k + 1) * n] = (b - a) ** (k - j) / math.factorial(k - j) * I
    E = Bb @ np.vstack([np.eye(N * n), H])
    cond = float(np.linalg.cond(E))
    if not np.isfinite(cond) or cond > BC_CONDITION_LIMIT:
        raise IllPosedBoundaryError(f"boundary elimination matrix is singular or ill-conditioned (cond={cond:.3g})")
    Kb_rows = []
    for j in range(N):
        p = PolyMatrix.identity(1, dom)
        for _ in range(N - 1 - j):
            p = p @ b_minus_t
        p = p.scale(1.0 / math.factorial(N - 1 - j))
        Kb_rows.append([PolyMatrix(np.einsum("ab,ijv->abijv", I, p.coef[0, 0]), dom)])
    Kb = block(Kb_rows, dom)  # Nn x n, in theta
    # boundary values at a: c = int G(t) xc(t) dt
    G = PolyMatrix(np.einsum("ab,bcijv->acijv", -np.linalg.solve(E, Bb[:, N * n:]), Kb.coef), dom)

    maps = []
    for j in range(N):
        Fj = _taylor_block(N, n, j, s_minus_a, dom)
        sep = Fj @ G
        p = PolyMatrix.identity(1, dom)
        for _ in range(N - 1 - j):
            p = p @ s_minus_t
        p = p.scale(1.0 / math.factorial(N - 1 - j))
        volterra = PolyMatrix(np.einsum("ab,ijv->abijv", I, p.coef[0, 0]), dom)
        maps.append(PIOperator.from_params((0, n), (0, n), dom, R1=sep + volterra, R2=sep))
    maps.append(PIOperator.identity(0, n, dom))

    trace_kernel = PolyMatrix(np.einsum("ab,bcijv->acijv", np.vstack([np.eye(N * n), H]), G.coef), dom)
    trace_kernel = trace_kernel + block([[_zeros(N * n, n, dom)], [Kb]], dom)
    trace_map = PIOperator.from_params((0, n), (2 * N * n, 0), dom, Q1=trace_kernel.swap_vars())
    return FundamentalIdentity(maps[0], tuple(maps), trace_map, E, cond)


def convert_to_pie(g: GpdeSystem) -> PieSystem:
    """PIE representation of ``g`` in terms of the core state ``d^N x``."""
    g.validate()
    dom = tuple(g.domain)
    n, N = g.n, g.order
    fid = fundamental_identity(N, g.Bb, n, dom)
    T = fid.state_map
    A = PIOperator.zero((0, n), (0, n), dom)
    for i, Ai in enumerate(g.A):
        if Ai.is_zero():
            continue
        A = A + pi_compose(PIOperator.multiplier(Ai), fid.derivative_maps[i])
    B1 = PIOperator.from_params((g.nw, 0), (0, n), dom, Q2=g.Bw)
    B2 = PIOperator.from_params((g.nu, 0), (0, n), dom, Q2=g.Bu)

    def output(C, Cb, rows):
        op = PIOperator.zero((0, n), (rows, 0), dom)
        for i, Ci in enumerate(C):
            if Ci.is_zero():
                continue
            op = op + pi_compose(PIOperator.from_params((0, n), (rows, 0), dom, Q1=Ci), fid.derivative_maps[i])
        if np.any(Cb):
            op = op + pi_compose(PIOperator.matrix(Cb, dom), fid.trace_map)
        return op

    C1 = output(g.Cz, g.Czb, g.nz)
    C2 = output(g.Cy, g.Cyb, g.ny)
    return PieSystem.build(T, A, B1, B2, C1, C2, g.Dzw, g.Dzu, g.Dyw, g.Dyu, name=g.name)


def validate_pie(p: PieSystem) -> dict:
    """Dimension, domain and feedthrough audit; never raises."""
    issues: list[dict] = []
    warnings: list[dict] = []
    state = p.T.dims_in
    checks = {
        "T": (state, state),
        "A": (state, state),
        "B1": ((p.nw, 0), state),
        "B2": ((p.nu, 0), state),
        "C1": (state, (p.nz, 0)),
        "C2": (state, (p.ny, 0)),
    }
    for name, (din, dout) in checks.items():
        op = getattr(p, name)
        if tuple(op.dims_in) != tuple(din) or tuple(op.dims_out) != tuple(dout):
            issues.append({"check": "dims", "operator": name, "got": [op.dims_in, op.dims_out], "expected": [din, dout]})
        if op.domain != p.T.domain:
            issues.append({"check": "domain", "operator": name, "got": list(op.domain), "expected": list(p.T.domain)})
    for name, shp in {"D11": (p.nz, p.nw), "D12": (p.nz, p.nu), "D21": (p.ny, p.nw), "D22": (p.ny, p.nu)}.items():
        if getattr(p, name).shape != shp:
            issues.append({"check": "dims", "operator": name, "got": list(getattr(p, name).shape), "expected": list(shp)})
    if getattr(p.D11, "size", 0) and np.any(p.D11 != 0):
        warnings.append({"check": "feedthrough", "message": "w -> z feedthrough present; the H2 norm is not finite"})
    return {"ok": not issues, "issues": issues, "warnings": warnings, "state_dims": list(state),
            "widths": {"w": p.nw, "u": p.nu, "z": p.nz, "y": p.ny}}
