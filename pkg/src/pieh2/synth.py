"""Stability, H2-norm bounds and H2-optimal estimator/controller synthesis.

Each routine assembles an :class:`~pieh2.lpi.LpiProgram`, solves it and
packages the certificate in a :class:`SynthesisResult`.  Gains
``L = P^{-1} Z`` and ``K = Z P^{-1}`` are recovered on a Chebyshev grid.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, asdict
from typing import Callable

import numpy as np

from .gpde import PieSystem, SCHEMA_VERSION
from .lpi import DEFAULT_DEGREE, DEFAULT_EPS, LpiProgram, LpiSolution, apply_linear
from . import sdp as sdpmod
from .piop import PIOperator, pi_block
from .polyalg import PolyMatrix
from .sim import ChebGrid, DiscretizedPie, discretize_op

log = logging.getLogger(__name__)

GRID_COND_LIMIT = 1e10
FIT_RESIDUAL_LIMIT = 1e-3
INVERSE_CHECK_LIMIT = 1e-4
STABLE_T = -0.5  # certificates scale to t = -1 exactly; solver noise sits near 0


class SynthesisError(RuntimeError):
    pass


class NoCertificateError(SynthesisError):
    """The LPI is infeasible at the requested degree(s)."""


@dataclass
class SynthOptions:
    degree: int = DEFAULT_DEGREE
    eps: float = DEFAULT_EPS
    z_degree: int | None = None  # defaults to 2 * degree
    coupling_degree: int | None = None  # slack degree of the [[P, Y*], [Y, W]] block; defaults to degree + 1
    slack_extra: int = 0
    solver: str = sdpmod.DEFAULT_ADAPTER
    sdpa_out: str | None = None
    escalate: bool = False
    grid: int = 32
    fit_degree: int | None = 8

    def zdeg(self) -> int:
        return 2 * self.degree if self.z_degree is None else self.z_degree

    def cdeg(self) -> int:
        base = self.degree + 1 if self.coupling_degree is None else self.coupling_degree
        return base + self.slack_extra


@dataclass
class GridGain:
    """A gain sampled on a CGL grid: a matrix acting on stacked vectors."""

    side: str  # "left" (L = P^-1 Z) or "right" (K = Z P^-1)
    matrix: np.ndarray
    grid: ChebGrid
    dims_in: tuple[int, int]
    dims_out: tuple[int, int]
    inverse_error: float
    condition: float
    fitted: PIOperator | None = None
    fit_residual: float | None = None

    def to_dict(self) -> dict:
        return {
            "side": self.side,
            "N": self.grid.N,
            "nodes": self.grid.nodes.tolist(),
            "weights": self.grid.weights.tolist(),
            "matrix": self.matrix.tolist(),
            "dims_in": list(self.dims_in),
            "dims_out": list(self.dims_out),
            "inverse_error": self.inverse_error,
            "condition": self.condition,
            "fit_residual": self.fit_residual,
            "fitted": self.fitted.to_dict() if self.fitted is not None else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GridGain":
        nodes = np.asarray(d["nodes"])
        grid = ChebGrid.make(int(d["N"]), (float(nodes[0]), float(nodes[-1])))
        fitted = PIOperator.from_dict(d["fitted"]) if d.get("fitted") else None
        return cls(d["side"], np.asarray(d["matrix"], dtype=float), grid, tuple(d["dims_in"]), tuple(d["dims_out"]),
                   float(d["inverse_error"]), float(d["condition"]), fitted, d.get("fit_residual"))


@dataclass
class SynthesisResult:
    kind: str
    status: str
    degree: int
    gamma: float | None = None
    P_op: PIOperator | None = None
    Z_op: PIOperator | None = None
    W: np.ndarray | None = None
    gain: GridGain | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == "solved" and self.gamma is not None

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": self.kind,
            "status": self.status,
            "degree": self.degree,
            "gamma": self.gamma,
            "W": None if self.W is None else np.atleast_2d(self.W).tolist(),
            "P": None if self.P_op is None else self.P_op.to_dict(),
            "Z": None if self.Z_op is None else self.Z_op.to_dict(),
            "gain": None if self.gain is None else self.gain.to_dict(),
            "diagnostics": self.diagnostics,
        }

    def to_json(self, indent=2) -> str:
        return json.dumps(self.to_dict(), indent=indent, default=float)


# -- helpers -------------------------------------------------------------------

def _mat(M, dom) -> PIOperator:
    M = np.asarray(M, dtype=float)
    return PIOperator.from_params((M.shape[1], 0), (M.shape[0], 0), dom, P=M)


def _hermitian_part(X: PIOperator) -> PIOperator:
    return X + X.star


def _enforce_coupling(prog: LpiProgram, blk: PIOperator, opts: SynthOptions) -> None:
    """``[[P, Y*], [Y, W]] >= 0`` with a slack basis one degree above ``P``.

    The smallest basis covering every monomial of ``Y`` is several degrees
    higher, and its extra atoms can only enter with zero weight (their
    squares produce monomials absent from ``P``).  Coefficients of ``Y`` the
    smaller basis cannot reach are constrained to zero instead.
    """
    prog.enforce_psd(blk, degree=opts.cdeg(), name="S2", allow_uncovered=True)


def _diag(sol: LpiSolution, prog: LpiProgram) -> dict:
    return {
        "solver_status": sol.status,
        "primal_residual": sol.sdp.primal_residual,
        "dual_residual": sol.sdp.dual_residual,
        "solve_time": sol.sdp.solve_time,
        "iterations": sol.sdp.iterations,
        "sdp": prog.compile().summary(),
        "slack_degrees": dict(prog.slack_degrees),
    }


def _with_escalation(fn: Callable[[SynthOptions], SynthesisResult], opts: SynthOptions) -> SynthesisResult:
    degrees = [opts.degree] + ([opts.degree + 1, opts.degree + 2] if opts.escalate else [])
    tried = []
    res = None
    for d in degrees:
        o = SynthOptions(**{**asdict(opts), "degree": d})
        res = fn(o)
        tried.append({"degree": d, "status": res.status, "gamma": res.gamma})
        if res.ok:
            break
    res.diagnostics["degrees_tried"] = tried
    return res


def _finish(kind: str, prog: LpiProgram, sol: LpiSolution, opts: SynthOptions, rho_idx=None, P=None, Z=None,
            W=None) -> SynthesisResult:
    diag = _diag(sol, prog)
    if sol.status not in ("solved", "solved_inaccurate"):
        status = "infeasible" if sol.status in ("infeasible", "unbounded") else sol.status
        diag["message"] = f"no certificate at degree {opts.degree}" if status == "infeasible" else "solver failure"
        return SynthesisResult(kind, status, opts.degree, diagnostics=diag)
    gamma = math.sqrt(max(sol.scalar(rho_idx), 0.0)) if rho_idx is not None else None
    res = SynthesisResult(kind, "solved", opts.degree, gamma,
                          sol.value(P) if P is not None else None,
                          sol.value(Z) if Z is not None else None,
                          sol.value(W).P(0.0) if W is not None else None, None, diag)
    if sol.status == "solved_inaccurate":
        diag["warning"] = "solver reported reduced accuracy"
    return res


# -- analysis ------------------------------------------------------------------

def stability_lpi(pie: PieSystem, opts: SynthOptions | None = None) -> SynthesisResult:
    """Minimize ``t`` s.t. ``P >= eps I``, ``A* P T + T* P A <= t T* T``, ``t >= -1``.

    A solution with ``t < 0`` certifies exponential stability; scaling ``P``
    then drives ``t`` to the bound -1, so only values near -1 are accepted.
    The problem is always feasible, so an unstable plant gives ``t >= 0`` instead of relying
    on an infeasibility certificate; that outcome is reported as "unknown".
    """
    opts = opts or SynthOptions()
    dom = pie.domain
    prog = LpiProgram(dom, "stability")
    Pv = prog.pos_op(pie.state_dims, opts.degree, opts.eps, "P")
    k, _ = prog.scalar("t")
    prog.bound_below(k, -1.0)
    X = apply_linear(lambda Y: pie.T.star @ Y @ pie.A, Pv.expr)
    TT = pie.T.star @ pie.T
    prog.enforce_nsd(_hermitian_part(X) - prog.times_scalar(TT, k), name="S", slack_extra=opts.slack_extra)
    prog.minimize(k)
    sol = prog.solve(opts.solver, sdpa_out=opts.sdpa_out)
    res = _finish("stability", prog, sol, opts, P=Pv.expr)
    if res.status == "solved":
        t = sol.scalar(k)
        res.diagnostics["decay_bound"] = t
        res.status = "stable" if t <= STABLE_T else "unknown"
    elif res.status == "infeasible":
        res.status = "unknown"
    return res


def _h2_primal(pie: PieSystem, opts: SynthOptions) -> SynthesisResult:
    dom = pie.domain
    prog = LpiProgram(dom, "h2-primal")
    Pv = prog.pos_op(pie.state_dims, opts.degree, opts.eps, "P")
    k, _ = prog.scalar("rho")
    X = apply_linear(lambda Y: pie.T.star @ Y @ pie.A, Pv.expr)
    e = _hermitian_part(X) + pie.C1.star @ pie.C1
    prog.enforce_nsd(e, name="S", slack_extra=opts.slack_extra)
    prog.enforce_trace_le(apply_linear(lambda Y: pie.B1.star @ Y @ pie.B1, Pv.expr), k)
    prog.minimize(k)
    sol = prog.solve(opts.solver, sdpa_out=opts.sdpa_out)
    return _finish("h2-primal", prog, sol, opts, k, Pv.expr)


def _h2_dual(pie: PieSystem, opts: SynthOptions) -> SynthesisResult:
    dom = pie.domain
    prog = LpiProgram(dom, "h2-dual")
    Pv = prog.pos_op(pie.state_dims, opts.degree, opts.eps, "P")
    k, _ = prog.scalar("rho")
    X = apply_linear(lambda Y: pie.A @ Y @ pie.T.star, Pv.expr)
    e = _hermitian_part(X) + pie.B1 @ pie.B1.star
    prog.enforce_nsd(e, name="S", slack_extra=opts.slack_extra)
    prog.enforce_trace_le(apply_linear(lambda Y: pie.C1 @ Y @ pie.C1.star, Pv.expr), k)
    prog.minimize(k)
    sol = prog.solve(opts.solver, sdpa_out=opts.sdpa_out)
    return _finish("h2-dual", prog, sol, opts, k, Pv.expr)


def _check_h2_wellposed(pie: PieSystem) -> None:
    if pie.D11.size and np.any(pie.D11 != 0):
        raise SynthesisError("w -> z feedthrough present; the H2 norm is not finite")


def h2_bound_primal(pie: PieSystem, opts: SynthOptions | None = None) -> SynthesisResult:
    """Minimize ``gamma^2`` s.t. ``T*PA + A*PT + C*C <= 0``, ``trace(B*PB) <= gamma^2``."""
    _check_h2_wellposed(pie)
    return _with_escalation(lambda o: _h2_primal(pie, o), opts or SynthOptions())


def h2_bound_dual(pie: PieSystem, opts: SynthOptions | None = None) -> SynthesisResult:
    """Minimize ``gamma^2`` s.t. ``TPA* + APT* + BB* <= 0``, ``trace(CPC*) <= gamma^2``."""
    _check_h2_wellposed(pie)
    return _with_escalation(lambda o: _h2_dual(pie, o), opts or SynthOptions())


# -- synthesis -----------------------------------------------------------------

def _estimator(pie: PieSystem, opts: SynthOptions) -> SynthesisResult:
    dom = pie.domain
    state = pie.state_dims
    prog = LpiProgram(dom, "h2-estimator")
    Pv = prog.pos_op(state, opts.degree, opts.eps, "P")
    Z = prog.indefinite_op((pie.ny, 0), state, opts.zdeg(), "Z")
    W = prog.sym_matrix(pie.nw, "W")
    k, _ = prog.scalar("rho")
    T, A, C1, C2, B1 = pie.T, pie.A, pie.C1, pie.C2, pie.B1
    X = apply_linear(lambda Y: T.star @ Y @ A, Pv.expr) + apply_linear(lambda Y: T.star @ Y @ C2, Z)
    prog.enforce_nsd(_hermitian_part(X) + C1.star @ C1, name="S1", slack_extra=opts.slack_extra)
    off = -(apply_linear(lambda Y: Y @ B1, Pv.expr) + Z @ _mat(pie.D21, dom))
    blk = pi_block([[Pv.expr, off], [off.star, W]])
    _enforce_coupling(prog, blk, opts)
    prog.enforce_trace_le(W, k)
    prog.minimize(k)
    sol = prog.solve(opts.solver, sdpa_out=opts.sdpa_out)
    res = _finish("h2-estimator", prog, sol, opts, k, Pv.expr, Z, W)
    if res.ok:
        res.gain = invert_gain(res.P_op, res.Z_op, "left", opts.grid, opts.fit_degree)
        res.diagnostics["inverse_error"] = res.gain.inverse_error
        res.diagnostics["fit_residual"] = res.gain.fit_residual
    return res


def _controller(pie: PieSystem, opts: SynthOptions) -> SynthesisResult:
    dom = pie.domain
    state = pie.state_dims
    prog = LpiProgram(dom, "h2-controller")
    Pv = prog.pos_op(state, opts.degree, opts.eps, "P")
    Z = prog.indefinite_op(state, (pie.nu, 0), opts.zdeg(), "Z")
    W = prog.sym_matrix(pie.nz, "W")
    k, _ = prog.scalar("rho")
    T, A, B1, B2, C1 = pie.T, pie.A, pie.B1, pie.B2, pie.C1
    X = apply_linear(lambda Y: A @ Y @ T.star, Pv.expr) + apply_linear(lambda Y: B2 @ Y @ T.star, Z)
    prog.enforce_nsd(_hermitian_part(X) + B1 @ B1.star, name="S1", slack_extra=opts.slack_extra)
    Y = apply_linear(lambda V: C1 @ V, Pv.expr) + _mat(pie.D12, dom) @ Z
    blk = pi_block([[Pv.expr, Y.star], [Y, W]])
    _enforce_coupling(prog, blk, opts)
    prog.enforce_trace_le(W, k)
    prog.minimize(k)
    sol = prog.solve(opts.solver, sdpa_out=opts.sdpa_out)
    res = _finish("h2-controller", prog, sol, opts, k, Pv.expr, Z, W)
    if res.ok:
        res.gain = invert_gain(res.P_op, res.Z_op, "right", opts.grid, opts.fit_degree)
        res.diagnostics["inverse_error"] = res.gain.inverse_error
        res.diagnostics["fit_residual"] = res.gain.fit_residual
    return res


def h2_estimator(pie: PieSystem, opts: SynthOptions | None = None) -> SynthesisResult:
    """H2-optimal Luenberger gain ``L = P^{-1} Z`` for the error system."""
    if pie.ny == 0:
        raise SynthesisError("estimator synthesis needs an observed output y")
    return _with_escalation(lambda o: _estimator(pie, o), opts or SynthOptions())


def h2_controller(pie: PieSystem, opts: SynthOptions | None = None) -> SynthesisResult:
    """H2-optimal state feedback ``K = Z P^{-1}``."""
    if pie.nu == 0:
        raise SynthesisError("controller synthesis needs a control input u")
    return _with_escalation(lambda o: _controller(pie, o), opts or SynthOptions())


# -- gains ---------------------------------------------------------------------

def _test_functions(grid: ChebGrid, dims: tuple[int, int], count: int, rng) -> np.ndarray:
    """Random smooth test vectors (low-degree polynomials) sampled on ``grid``."""
    m, n = dims
    a, b = grid.domain
    x = 2.0 * (grid.nodes - a) / (b - a) - 1.0
    cols = []
    for _ in range(count):
        parts = [rng.standard_normal(m)]
        for _c in range(n):
            parts.append(np.polynomial.legendre.legval(x, rng.standard_normal(7)))
        cols.append(np.concatenate(parts))
    return np.array(cols).T


def _fit_kernel(samples: np.ndarray, nodes: np.ndarray, deg: int, domain) -> tuple[PolyMatrix, float]:
    """Least-squares polynomial fit of samples with shape (N, rows, cols)."""
    a, b = domain
    x = 2.0 * (nodes - a) / (b - a) - 1.0
    V = np.polynomial.chebyshev.chebvander(x, deg)
    flat = samples.reshape(samples.shape[0], -1)
    coef_cheb, *_ = np.linalg.lstsq(V, flat, rcond=None)
    resid = float(np.max(np.abs(V @ coef_cheb - flat)) / max(np.max(np.abs(flat)), 1e-300))
    # Chebyshev in x -> monomials in s
    mono = np.zeros((deg + 1, flat.shape[1]))
    for k in range(flat.shape[1]):
        ser = np.polynomial.Chebyshev(coef_cheb[:, k], domain=[a, b])
        p = ser.convert(kind=np.polynomial.Polynomial, domain=[a, b], window=[a, b])
        mono[: p.coef.size, k] = p.coef
    coef = mono.T.reshape(samples.shape[1], samples.shape[2], deg + 1, 1)
    return PolyMatrix(coef, domain), resid


def invert_gain(P_op: PIOperator, Z_op: PIOperator, side: str, N: int = 32, fit_degree: int | None = 8,
                seed: int = 0) -> GridGain:
    """Grid solution of ``P L = Z`` (left) or ``K P = Z`` (right).

    The inverse is certified on a finer grid: random smooth ``g`` are mapped
    through the coarse-grid inverse, interpolated and re-applied with ``P``.
    """
    if side not in ("left", "right"):
        raise ValueError("side must be 'left' or 'right'")
    grid = ChebGrid.make(N, P_op.domain)
    Ph = discretize_op(P_op, grid)
    Zh = discretize_op(Z_op, grid)
    cond = float(np.linalg.cond(Ph))
    if cond > GRID_COND_LIMIT:
        raise SynthesisError(f"discretized P is ill-conditioned (cond = {cond:.2e})")
    if side == "left":
        G = np.linalg.solve(Ph, Zh)
        dims_in, dims_out = Z_op.dims_in, P_op.dims_out
    else:
        G = np.linalg.solve(Ph.T, Zh.T).T
        dims_in, dims_out = P_op.dims_in, Z_op.dims_out

    # inverse check on a finer grid
    m, n = P_op.dims_in
    fine = ChebGrid.make(2 * N, P_op.domain)
    Pf = discretize_op(P_op, fine)
    rng = np.random.default_rng(seed)
    g_coarse = _test_functions(grid, (m, n), 8, rng)
    rng = np.random.default_rng(seed)
    g_fine = _test_functions(fine, (m, n), 8, rng)
    v = np.linalg.solve(Ph, g_coarse)
    Im = grid.interp_matrix(fine.nodes)
    lift = np.zeros((m + n * fine.N, m + n * N))
    lift[:m, :m] = np.eye(m)
    for c in range(n):
        lift[m + c * fine.N: m + (c + 1) * fine.N, m + c * N: m + (c + 1) * N] = Im
    err = float(np.max(np.abs(Pf @ (lift @ v) - g_fine)) / max(np.max(np.abs(g_fine)), 1e-300))

    gain = GridGain(side, G, grid, tuple(dims_in), tuple(dims_out), err, cond)
    if err > INVERSE_CHECK_LIMIT:
        log.warning("grid inverse check error %.2e exceeds %.0e", err, INVERSE_CHECK_LIMIT)
    if fit_degree is not None:
        _fit_gain(gain, fit_degree)
    return gain


def _fit_gain(gain: GridGain, deg: int) -> None:
    """Fit polynomial parameters to a grid gain; keep grid form if the fit is poor."""
    grid = gain.grid
    N = grid.N
    dom = grid.domain
    G = gain.matrix
    m1, n1 = gain.dims_in
    m2, n2 = gain.dims_out
    if n1 and n2:
        return  # gains with kernels between function channels stay in grid form
    params = {"P": G[:m2, :m1]}
    resid = 0.0
    if n2 and m1:  # function-valued output (left gain): Q2 samples
        q2 = G[m2:, :m1].reshape(n2, N, m1).transpose(1, 0, 2)
        params["Q2"], resid = _fit_kernel(q2, grid.nodes, deg, dom)
    if m2 and n1:  # functional (right gain): Q1 samples divided by weights
        q1 = G[:m2, m1:].reshape(m2, n1, N).transpose(2, 0, 1) / grid.weights[:, None, None]
        params["Q1"], resid = _fit_kernel(q1, grid.nodes, deg, dom)
    gain.fit_residual = resid
    if resid <= FIT_RESIDUAL_LIMIT:
        gain.fitted = PIOperator.from_params((m1, n1), (m2, n2), dom, **params)


# -- closed loops --------------------------------------------------------------

def closed_loop_estimator(pie: PieSystem, L: PIOperator) -> PieSystem:
    """Error system ``Sigma(T, A + L C2, -(B1 + L D21), C1)``."""
    dom = pie.domain
    A = pie.A + L @ pie.C2
    B = -(pie.B1 + L @ _mat(pie.D21, dom))
    return PieSystem.build(pie.T, A, B1=B, C1=pie.C1, name=f"{pie.name}-estimator-error")


def closed_loop_controller(pie: PieSystem, K: PIOperator) -> PieSystem:
    """Feedback system ``Sigma(T, A + B2 K, B1, C1 + D12 K)``."""
    dom = pie.domain
    A = pie.A + pie.B2 @ K
    C = pie.C1 + _mat(pie.D12, dom) @ K
    return PieSystem.build(pie.T, A, B1=pie.B1, C1=C, name=f"{pie.name}-controller-loop")


def closed_loop_estimator_grid(d: DiscretizedPie, gain: GridGain) -> DiscretizedPie:
    L = gain_on_grid(gain, d)
    A = d.A + L @ d.C2
    B = -(d.B1 + L @ d.D21)
    return d.with_channels(A=A, B1=B, C1=d.C1, name=f"{d.name}-estimator-error")


def closed_loop_controller_grid(d: DiscretizedPie, gain: GridGain) -> DiscretizedPie:
    K = gain_on_grid(gain, d)
    return d.with_channels(A=d.A + d.B2 @ K, C1=d.C1 + d.D12 @ K, name=f"{d.name}-controller-loop")


def gain_on_grid(gain: GridGain, d: DiscretizedPie) -> np.ndarray:
    """Re-express a grid gain on the simulation grid of ``d`` (interpolation)."""
    if gain.grid.N == d.grid.N and gain.grid.domain == d.grid.domain:
        return gain.matrix
    src, dst = gain.grid, d.grid
    Im = src.interp_matrix(dst.nodes)

    def lift(dims, fine_to_coarse: bool):
        m, n = dims
        if fine_to_coarse:  # restrict samples on dst to src nodes
            R = dst.interp_matrix(src.nodes)
            M = np.zeros((m + n * src.N, m + n * dst.N))
            M[:m, :m] = np.eye(m)
            for c in range(n):
                M[m + c * src.N: m + (c + 1) * src.N, m + c * dst.N: m + (c + 1) * dst.N] = R
            return M
        M = np.zeros((m + n * dst.N, m + n * src.N))
        M[:m, :m] = np.eye(m)
        for c in range(n):
            M[m + c * dst.N: m + (c + 1) * dst.N, m + c * src.N: m + (c + 1) * src.N] = Im
        return M

    return lift(gain.dims_out, False) @ gain.matrix @ lift(gain.dims_in, True)
