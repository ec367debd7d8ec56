"""Chebyshev discretization of PI operators and backward-Euler simulation.

Functions are sampled at Chebyshev-Gauss-Lobatto (CGL) points.  Integrals
over ``[a, b]`` use Clenshaw-Curtis weights and the partial integrals
``int_a^{s_i}`` of the Volterra kernels use the spectral integration matrix
``J``, so polynomial kernels applied to polynomial samples are integrated
exactly up to degree ``N - 1``.

A discretized vector stacks the finite part first, then one block of ``N``
samples per function channel.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla
from numpy.polynomial import chebyshev as C

from .piop import PIOperator, RL2Element
from .gpde import PieSystem, SCHEMA_VERSION

log = logging.getLogger(__name__)

DEFAULT_N = 32
DEFAULT_DT = 1e-3
DEFAULT_TEND = 10.0
TIKHONOV = 1e-12
DIVERGENCE_LIMIT = 1e12
DECAY_RATIO = 0.9


class SimulationError(RuntimeError):
    pass


class DivergenceError(SimulationError):
    pass


@dataclass(frozen=True)
class ChebGrid:
    """CGL nodes on ``[a, b]`` (ascending), quadrature weights and integration matrix."""

    N: int
    domain: tuple[float, float]
    nodes: np.ndarray
    weights: np.ndarray
    J: np.ndarray

    @classmethod
    def make(cls, N: int, domain=(0.0, 1.0)) -> "ChebGrid":
        if N < 2:
            raise ValueError("a CGL grid needs at least two points")
        a, b = float(domain[0]), float(domain[1])
        x = -np.cos(np.pi * np.arange(N) / (N - 1))
        V = C.chebvander(x, N - 1)
        Vint = np.empty_like(V)
        for k in range(N):
            e = np.zeros(N)
            e[k] = 1.0
            Vint[:, k] = C.chebval(x, C.chebint(e, lbnd=-1.0))
        J = np.linalg.solve(V.T, Vint.T).T * (b - a) / 2.0
        nodes = a + (b - a) * (x + 1.0) / 2.0
        nodes[0], nodes[-1] = a, b
        return cls(N, (a, b), nodes, J[-1].copy(), J)

    def interp_matrix(self, points) -> np.ndarray:
        """Matrix mapping samples on this grid to values at ``points``."""
        a, b = self.domain
        x = -np.cos(np.pi * np.arange(self.N) / (self.N - 1))
        xp = 2.0 * (np.asarray(points, dtype=float) - a) / (b - a) - 1.0
        V = C.chebvander(x, self.N - 1)
        Vp = C.chebvander(xp, self.N - 1)
        return np.linalg.solve(V.T, Vp.T).T

    def sample(self, el: RL2Element) -> np.ndarray:
        """Stack an element's finite part and function samples."""
        fn = el.fn.eval_grid(self.nodes)[:, 0, :, 0]  # (N, n)
        return np.concatenate([np.asarray(el.finite, dtype=float), fn.T.reshape(-1)])

    def inner(self, u: np.ndarray, v: np.ndarray, m: int) -> float:
        """Discrete R^m x L2^n inner product of stacked vectors."""
        n = (u.size - m) // self.N
        wts = np.concatenate([np.ones(m), np.tile(self.weights, n)])
        return float(np.sum(wts * u * v))


def discretize_op(op: PIOperator, grid: ChebGrid) -> np.ndarray:
    """Matrix of ``op`` acting on stacked (finite, sampled function) vectors."""
    if not op.is_numeric:
        raise ValueError("only numeric operators can be discretized")
    m1, n1 = op.dims_in
    m2, n2 = op.dims_out
    N = grid.N
    s, w, J = grid.nodes, grid.weights, grid.J
    M = np.zeros((m2 + n2 * N, m1 + n1 * N))
    M[:m2, :m1] = op.P(0.0)
    if m2 and n1:
        q1 = op.Q1.eval_grid(s)[:, 0]  # (N, m2, n1)
        M[:m2, m1:] = np.transpose(q1 * w[:, None, None], (1, 2, 0)).reshape(m2, n1 * N)
    if n2 and m1:
        q2 = op.Q2.eval_grid(s)[:, 0]  # (N, n2, m1)
        M[m2:, :m1] = np.transpose(q2, (1, 0, 2)).reshape(n2 * N, m1)
    if n2 and n1:
        r0 = op.R0.eval_grid(s)[:, 0]  # (N, n2, n1)
        r1 = op.R1.eval_grid(s, s)  # (N, N, n2, n1)
        r2 = op.R2.eval_grid(s, s)
        K = J[:, :, None, None] * r1 + (w[None, :] - J)[:, :, None, None] * r2
        idx = np.arange(N)
        K[idx, idx] += r0
        M[m2:, m1:] = np.transpose(K, (2, 0, 3, 1)).reshape(n2 * N, n1 * N)
    return M


@dataclass
class DiscretizedPie:
    """Matrices of a PIE on a CGL grid (closed loops built from grid gains too)."""

    grid: ChebGrid
    state_dims: tuple[int, int]
    T: np.ndarray
    A: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    C1: np.ndarray
    C2: np.ndarray
    D11: np.ndarray
    D12: np.ndarray
    D21: np.ndarray
    D22: np.ndarray
    name: str = ""
    conditioning: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return self.T.shape[0]

    def with_channels(self, A=None, B1=None, C1=None, name=None) -> "DiscretizedPie":
        """Copy with replaced dynamics or H2 channels (used for closed loops)."""
        return DiscretizedPie(self.grid, self.state_dims, self.T,
                              self.A if A is None else A, self.B1 if B1 is None else B1, self.B2,
                              self.C1 if C1 is None else C1, self.C2, self.D11, self.D12, self.D21, self.D22,
                              self.name if name is None else name, dict(self.conditioning))


def discretize(pie: PieSystem, N: int = DEFAULT_N) -> DiscretizedPie:
    if N < 8:
        raise ValueError("use at least N = 8 collocation points")
    grid = ChebGrid.make(N, pie.domain)
    mats = {k: discretize_op(getattr(pie, k), grid) for k in ("T", "A", "B1", "B2", "C1", "C2")}
    cond = {"T": float(np.linalg.cond(mats["T"]))} if mats["T"].size else {}
    return DiscretizedPie(grid, pie.state_dims, mats["T"], mats["A"], mats["B1"], mats["B2"], mats["C1"],
                          mats["C2"], pie.D11, pie.D12, pie.D21, pie.D22, pie.name, cond)


@dataclass
class SimResult:
    times: np.ndarray
    states: np.ndarray  # saved core-state snapshots, one row per saved time
    state_times: np.ndarray
    z: np.ndarray  # output at every time step, shape (steps + 1, nz)
    u0_norm: float
    grid: ChebGrid
    state_dims: tuple[int, int]
    z_l2: float = 0.0
    h2_estimate: float = 0.0
    tail_energy: float = 0.0
    decaying: bool = True
    warnings: list = field(default_factory=list)

    def metrics(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "z_l2": self.z_l2,
            "h2_estimate": self.h2_estimate,
            "tail_energy": self.tail_energy,
            "h2_estimate_with_tail": self.h2_with_tail(),
            "reliable": self.decaying,
            "u0_norm": self.u0_norm,
            "steps": int(self.times.size - 1),
            "dt": float(self.times[1] - self.times[0]) if self.times.size > 1 else 0.0,
            "N": self.grid.N,
            "warnings": list(self.warnings),
        }

    def h2_with_tail(self) -> float:
        if self.u0_norm == 0:
            return 0.0
        return float(np.sqrt(self.z_l2 ** 2 + self.tail_energy) / self.u0_norm)

    def write_csv(self, path) -> Path:
        """Header row, then ``t``, sampled states per channel and outputs (saved times only)."""
        path = Path(path)
        m, n = self.state_dims
        N = self.grid.N
        header = ["t"] + [f"x{i}" for i in range(m)]
        header += [f"x{c}_s{j}" for c in range(m, m + n) for j in range(N)]
        header += [f"z{k}" for k in range(self.z.shape[1])]
        stride_idx = np.searchsorted(self.times, self.state_times)
        with path.open("w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(header)
            for row, k in zip(self.states, stride_idx):
                wr.writerow([repr(float(self.times[k]))] + [repr(float(v)) for v in row] +
                            [repr(float(v)) for v in self.z[k]])
        return path

    def write_metrics(self, path) -> Path:
        path = Path(path)
        meta = self.metrics()
        meta["grid_nodes"] = self.grid.nodes.tolist()
        path.write_text(json.dumps(meta, indent=2))
        return path


def initial_state(d: DiscretizedPie, rhs: np.ndarray) -> tuple[np.ndarray, list]:
    """Solve ``T_h x0 = rhs`` in the least-squares sense with a Tikhonov floor."""
    T = d.T
    notes = []
    cond = d.conditioning.get("T") or float(np.linalg.cond(T))
    if cond > 1e8:
        notes.append(f"T_h is poorly conditioned (cond = {cond:.2e}); initial state from regularized least squares")
    lam = TIKHONOV * max(1.0, np.linalg.norm(T, 2)) ** 2
    Aug = np.vstack([T, np.sqrt(lam) * np.eye(T.shape[1])])
    b = np.concatenate([rhs, np.zeros(T.shape[1])])
    x0, *_ = np.linalg.lstsq(Aug, b, rcond=None)
    res = float(np.linalg.norm(T @ x0 - rhs) / max(np.linalg.norm(rhs), 1e-300))
    if res > 1e-6:
        notes.append(f"initial condition is not exactly representable (relative residual {res:.2e})")
    return x0, notes


def simulate_ic(d: DiscretizedPie, u0=None, x0=None, dt: float = DEFAULT_DT, T_end: float = DEFAULT_TEND,
                ic_rhs=None, max_saved: int = 1000, w=None) -> SimResult:
    """Backward-Euler response ``(T - dt A) x_{k+1} = T x_k (+ dt B1 w_k)``.

    The initial state is one of: ``u0`` (solving ``T x0 = B1 u0``), ``ic_rhs``
    (solving ``T x0 = ic_rhs``) or ``x0`` given directly as core-state samples.
    ``w`` is an optional callable ``t -> disturbance``.
    """
    if dt <= 0 or T_end <= 0:
        raise ValueError("dt and T_end must be positive")
    notes: list[str] = []
    u0_norm = 1.0
    if u0 is not None:
        u0 = np.atleast_1d(np.asarray(u0, dtype=float))
        u0_norm = float(np.linalg.norm(u0))
        xk, notes = initial_state(d, d.B1 @ u0)
    elif ic_rhs is not None:
        xk, notes = initial_state(d, np.asarray(ic_rhs, dtype=float))
    elif x0 is not None:
        xk = np.asarray(x0, dtype=float).copy()
    else:
        raise ValueError("give u0, ic_rhs or x0")
    steps = int(round(T_end / dt))
    times = dt * np.arange(steps + 1)
    M = d.T - dt * d.A
    try:
        lu = sla.lu_factor(M)
        if not np.all(np.isfinite(lu[0])) or np.min(np.abs(np.diag(lu[0]))) == 0.0:
            raise sla.LinAlgError("singular step matrix")
        solve = lambda rhs: sla.lu_solve(lu, rhs)
    except (sla.LinAlgError, ValueError):
        notes.append("step matrix is singular; using least-squares steps")
        pinv = np.linalg.pinv(M, rcond=1e-12)
        solve = lambda rhs: pinv @ rhs
    stride = max(1, steps // max_saved)
    saved, saved_t = [xk.copy()], [0.0]
    z = np.zeros((steps + 1, d.C1.shape[0]))
    z[0] = d.C1 @ xk
    scale0 = max(np.linalg.norm(xk), 1e-300)
    for k in range(steps):
        rhs = d.T @ xk
        if w is not None:
            rhs = rhs + dt * d.B1 @ np.atleast_1d(w(times[k + 1]))
        xk = solve(rhs)
        z[k + 1] = d.C1 @ xk
        if (k + 1) % stride == 0 or k + 1 == steps:
            saved.append(xk.copy())
            saved_t.append(times[k + 1])
            nrm = np.linalg.norm(xk)
            if not np.isfinite(nrm) or nrm > DIVERGENCE_LIMIT * scale0:
                raise DivergenceError(f"state norm grew by more than {DIVERGENCE_LIMIT:.0e} by t = {times[k + 1]:.4g}")
    res = SimResult(times, np.array(saved), np.array(saved_t), z, u0_norm, d.grid, d.state_dims, warnings=notes)
    _metrics(res)
    return res


def _metrics(r: SimResult) -> None:
    e = np.sum(r.z ** 2, axis=1)
    r.z_l2 = float(np.sqrt(np.trapezoid(e, r.times))) if r.times.size > 1 else 0.0
    r.h2_estimate = r.z_l2 / r.u0_norm if r.u0_norm > 0 else 0.0
    # compare the energy in the last two quarters; the ratio r extends geometrically past T_end
    n = r.times.size - 1
    if n < 8 or e.max() <= 0.0 or e[-1] <= 1e-24 * e.max():
        r.tail_energy, r.decaying = 0.0, True
        return
    k2, k3 = n // 2, (3 * n) // 4
    e3 = np.trapezoid(e[k2:k3 + 1], r.times[k2:k3 + 1])
    e4 = np.trapezoid(e[k3:], r.times[k3:])
    ratio = e4 / e3 if e3 > 0 else np.inf
    if ratio < DECAY_RATIO:
        r.tail_energy = float(e4 * ratio / (1.0 - ratio))
        r.decaying = True
    else:
        r.tail_energy = float("inf")
        r.decaying = False
        r.warnings.append("output energy is not decaying at the end of the horizon; estimate unreliable")


def h2_numeric(r: SimResult) -> float:
    """``||z||_L2 / ||u0||`` from the trapezoidal rule (tail reported separately)."""
    if not r.decaying:
        log.warning("h2 estimate flagged unreliable: output not decaying")
    return r.h2_estimate


def intertwining_check(pie: PieSystem, x0: RL2Element, xbar0: RL2Element, N: int = DEFAULT_N,
                       dt: float = DEFAULT_DT, T_end: float = 1.0) -> dict:
    """Max over time of ``|<T* xbar0, x(t)> - <xbar(t), T x0>|`` (zero inputs).

    The primal runs from ``x(0) = x0`` and the dual ``Sigma(T*, A*)`` from
    ``xbar(0) = xbar0``, each discretized independently.
    """
    grid = ChebGrid.make(N, pie.domain)
    m = pie.state_dims[0]
    T = discretize_op(pie.T, grid)
    A = discretize_op(pie.A, grid)
    Ts = discretize_op(pie.T.star, grid)
    As = discretize_op(pie.A.star, grid)
    xs, xbs = grid.sample(x0), grid.sample(xbar0)
    steps = int(round(T_end / dt))
    lu = sla.lu_factor(T - dt * A)
    lub = sla.lu_factor(Ts - dt * As)
    left_fixed = Ts @ xbs
    right_fixed = T @ xs
    x, xb = xs.copy(), xbs.copy()
    dev = abs(grid.inner(left_fixed, x, m) - grid.inner(xb, right_fixed, m))
    for _ in range(steps):
        x = sla.lu_solve(lu, T @ x)
        xb = sla.lu_solve(lub, Ts @ xb)
        dev = max(dev, abs(grid.inner(left_fixed, x, m) - grid.inner(xb, right_fixed, m)))
    scale = x0.norm() * xbar0.norm()
    return {"deviation": float(dev), "relative": float(dev / scale) if scale else 0.0, "N": N, "dt": dt, "T_end": T_end}
