"""Standard-form semidefinite programs, solver adapters and SDPA sparse I/O.

Problem form::

    minimize    c^T x
    subject to  A x = b
                x[k] >= 0                  for k in nonneg
                smat(x[block]) is PSD      for every PSD block

A PSD block of size ``M`` owns ``M(M+1)/2`` consecutive variables holding
the upper triangle in column-major order, unscaled (``x = Q[i, j]``).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class PsdBlock:
    name: str
    offset: int
    size: int

    @property
    def nvars(self) -> int:
        return self.size * (self.size + 1) // 2

    def index(self, i: int, j: int) -> int:
        if i > j:
            i, j = j, i
        return self.offset + j * (j + 1) // 2 + i

    def unpack(self, x: np.ndarray) -> np.ndarray:
        M = self.size
        Q = np.zeros((M, M))
        iu, ju = triu_colmajor(M)
        Q[iu, ju] = x[self.offset:self.offset + self.nvars]
        Q[ju, iu] = Q[iu, ju]
        return Q


def triu_colmajor(M: int) -> tuple[np.ndarray, np.ndarray]:
    """Row/column indices of the upper triangle in column-major order."""
    j = np.repeat(np.arange(M), np.arange(1, M + 1))
    i = np.concatenate([np.arange(k + 1) for k in range(M)]) if M else np.zeros(0, dtype=int)
    return i.astype(int), j.astype(int)


@dataclass
class SdpProblem:
    n: int
    A: sp.csr_matrix
    b: np.ndarray
    c: np.ndarray
    blocks: list[PsdBlock] = field(default_factory=list)
    nonneg: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    names: dict = field(default_factory=dict)  # metadata: name -> variable indices / block info

    def __post_init__(self):
        self.A = sp.csr_matrix(self.A, shape=(self.A.shape[0], self.n))
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        self.c = np.asarray(self.c, dtype=float).reshape(-1)
        self.nonneg = np.asarray(self.nonneg, dtype=int).reshape(-1)
        if self.A.shape[0] != self.b.shape[0]:
            raise ValueError("A and b row counts differ")
        if self.c.shape[0] != self.n:
            raise ValueError("objective length differs from variable count")
        owned = np.zeros(self.n, dtype=int)
        for blk in self.blocks:
            if blk.offset < 0 or blk.offset + blk.nvars > self.n:
                raise ValueError(f"block {blk.name} references undeclared variables")
            owned[blk.offset:blk.offset + blk.nvars] += 1
        owned[self.nonneg] += 1
        if np.any(owned > 1):
            raise ValueError("a variable belongs to more than one cone")

    @property
    def free(self) -> np.ndarray:
        owned = np.zeros(self.n, dtype=bool)
        for blk in self.blocks:
            owned[blk.offset:blk.offset + blk.nvars] = True
        owned[self.nonneg] = True
        return np.nonzero(~owned)[0]

    def summary(self) -> dict:
        return {
            "variables": self.n,
            "equalities": int(self.A.shape[0]),
            "psd_blocks": [b.size for b in self.blocks],
            "nonneg": int(self.nonneg.size),
            "free": int(self.free.size),
        }


@dataclass
class SdpSolution:
    status: str
    x: np.ndarray
    objective: float
    primal_residual: float
    dual_residual: float
    solve_time: float = 0.0
    iterations: int = 0

    @property
    def ok(self) -> bool:
        return self.status == "solved"

    def block(self, blk: PsdBlock) -> np.ndarray:
        return blk.unpack(self.x)


# -- adapters -----------------------------------------------------------------

def _clarabel_status(status) -> str:
    name = str(status)
    if name.endswith("AlmostSolved"):
        return "solved_inaccurate"
    if name.endswith("Solved"):
        return "solved"
    if "PrimalInfeasible" in name:
        return "infeasible"
    if "DualInfeasible" in name:
        return "unbounded"
    return "numerical_failure"


def solve_clarabel(p: SdpProblem, verbose: bool = False, **settings) -> SdpSolution:
    import clarabel

    rows = [p.A]
    rhs = [p.b]
    cones = []
    if p.A.shape[0]:
        cones.append(clarabel.ZeroConeT(p.A.shape[0]))
    if p.nonneg.size:
        rows.append(sp.csr_matrix((-np.ones(p.nonneg.size), (np.arange(p.nonneg.size), p.nonneg)), shape=(p.nonneg.size, p.n)))
        rhs.append(np.zeros(p.nonneg.size))
        cones.append(clarabel.NonnegativeConeT(p.nonneg.size))
    for blk in p.blocks:
        iu, ju = triu_colmajor(blk.size)
        scale = np.where(iu == ju, 1.0, np.sqrt(2.0))
        rows.append(sp.csr_matrix((-scale, (np.arange(blk.nvars), blk.offset + np.arange(blk.nvars))), shape=(blk.nvars, p.n)))
        rhs.append(np.zeros(blk.nvars))
        cones.append(clarabel.PSDTriangleConeT(blk.size))
    if not cones:
        x = np.zeros(p.n)
        return SdpSolution("solved", x, 0.0, 0.0, 0.0)
    A = sp.vstack(rows).tocsc()
    b = np.concatenate(rhs)
    s = clarabel.DefaultSettings()
    s.verbose = verbose
    for k, v in settings.items():
        setattr(s, k, v)
    solver = clarabel.DefaultSolver(sp.csc_matrix((p.n, p.n)), p.c, A, b, cones, s)
    res = solver.solve()
    status = _clarabel_status(res.status)
    x = np.asarray(res.x, dtype=float)
    return SdpSolution(status, x, float(p.c @ x), float(res.r_prim), float(res.r_dual),
                       float(res.solve_time), int(res.iterations))


def solve_cvxpy(p: SdpProblem, solver: str = "SCS", verbose: bool = False, **kwargs) -> SdpSolution:
    import cvxpy as cp

    x = cp.Variable(p.n)
    cons = []
    if p.A.shape[0]:
        cons.append(p.A @ x == p.b)
    if p.nonneg.size:
        cons.append(x[p.nonneg] >= 0)
    for blk in p.blocks:
        M = blk.size
        iu, ju = triu_colmajor(M)
        k = np.arange(blk.nvars)
        r = np.concatenate([iu * M + ju, ju * M + iu])
        cidx = np.concatenate([k, k])
        keep = np.ones(r.size, dtype=bool)
        keep[blk.nvars:] = iu != ju
        S = sp.csr_matrix((np.ones(keep.sum()), (r[keep], cidx[keep])), shape=(M * M, blk.nvars))
        X = cp.reshape(S @ x[blk.offset:blk.offset + blk.nvars], (M, M), order="C")
        cons.append(0.5 * (X + X.T) >> 0)
    prob = cp.Problem(cp.Minimize(p.c @ x), cons)
    try:
        prob.solve(solver=solver, verbose=verbose, **kwargs)
    except cp.error.SolverError:
        return SdpSolution("numerical_failure", np.zeros(p.n), float("nan"), float("inf"), float("inf"))
    status = {
        cp.OPTIMAL: "solved",
        cp.OPTIMAL_INACCURATE: "solved_inaccurate",
        cp.INFEASIBLE: "infeasible",
        cp.INFEASIBLE_INACCURATE: "infeasible",
        cp.UNBOUNDED: "unbounded",
        cp.UNBOUNDED_INACCURATE: "unbounded",
    }.get(prob.status, "numerical_failure")
    xv = np.zeros(p.n) if x.value is None else np.asarray(x.value, dtype=float)
    res = float(np.max(np.abs(p.A @ xv - p.b))) if p.A.shape[0] else 0.0
    return SdpSolution(status, xv, float(p.c @ xv), res, float("nan"))


def _full_layout(p: SdpProblem):
    """Column map to the SeDuMi layout: free, nonneg, then full column-major PSD blocks.

    Returns ``(src, weight, sizes)``: full column ``k`` carries ``weight[k]``
    times our variable ``src[k]`` (off-diagonal entries are split in half).
    """
    src = [p.free, p.nonneg]
    weight = [np.ones(p.free.size), np.ones(p.nonneg.size)]
    for blk in p.blocks:
        M = blk.size
        jj, ii = np.divmod(np.arange(M * M), M)  # column-major (i, j)
        lo, hi = np.minimum(ii, jj), np.maximum(ii, jj)
        src.append(blk.offset + hi * (hi + 1) // 2 + lo)
        weight.append(np.where(ii == jj, 1.0, 0.5))
    return np.concatenate(src).astype(int), np.concatenate(weight), [blk.size for blk in p.blocks]


def solve_sdpa(p: SdpProblem, verbose: bool = False, **options) -> SdpSolution:
    """SDPA primal-dual interior-point method (Schur complement on the equality rows).

    Its cost grows with the number of equalities rather than with the square
    of the Gram block dimension, which suits coefficient-matching problems.
    """
    import time
    import sdpap

    t0 = time.perf_counter()
    src, weight, sizes = _full_layout(p)
    A = (p.A[:, src] @ sp.diags(weight)).tocsc()
    c = p.c[src] * weight
    K = sdpap.SymCone(f=int(p.free.size), l=int(p.nonneg.size), s=tuple(sizes))
    rows = _independent_rows(A)  # the Schur complement must be nonsingular
    A, b = A[rows], p.b[rows]
    J = sdpap.SymCone(f=int(rows.size))
    opts = {"print": "display" if verbose else "no", "epsilonStar": 1e-9, "epsilonDash": 1e-9, "maxIteration": 200}
    opts.update(options)
    try:
        xf, _, info, _, sinfo = sdpap.solve(A, sp.csc_matrix(b.reshape(-1, 1)), sp.csc_matrix(c.reshape(-1, 1)),
                                           K, J, opts)
    except Exception as exc:  # the wrapper raises bare exceptions on internal failures
        log.warning("sdpa failed: %s", exc)
        return SdpSolution("numerical_failure", np.zeros(p.n), float("nan"), float("inf"), float("inf"))
    phase = str(sinfo.get("phasevalue", info.get("phasevalue", "")))
    status = {"pdOPT": "solved", "pdFEAS": "solved_inaccurate", "pFEAS": "solved_inaccurate",
              "pINF_dFEAS": "infeasible", "pUNBD": "unbounded", "pFEAS_dINF": "unbounded",
              "pdINF": "infeasible", "dUNBD": "infeasible"}.get(phase, "numerical_failure")
    xf = np.asarray(xf.todense() if sp.issparse(xf) else xf, dtype=float).ravel()
    x = np.zeros(p.n)
    np.add.at(x, src, xf * weight)
    # diagonal entries were added once, off-diagonals twice with weight 1/2
    x = x if xf.size else np.zeros(p.n)
    pres = float(sinfo.get("primalError", np.nan))
    dres = float(sinfo.get("dualError", np.nan))
    return SdpSolution(status, x, float(p.c @ x), pres, dres, time.perf_counter() - t0,
                       int(sinfo.get("iteration", 0)))


def _independent_rows(A, tol: float = 1e-10) -> np.ndarray:
    """Indices of a maximal linearly independent subset of the rows of ``A``.

    Works on the row Gram matrix ``A A^T``, whose columns are dependent
    exactly when the rows of ``A`` are.
    """
    if A.shape[0] == 0 or A.shape[1] == 0:
        return np.zeros(0, dtype=int)
    G = A @ A.T
    G = G.toarray() if sp.issparse(G) else np.asarray(G)
    _, R, piv = sla.qr(G, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    if not d.size or d[0] == 0.0:
        return np.zeros(0, dtype=int)
    return np.sort(piv[:int(np.sum(d > tol * d[0]))])


ADAPTERS = {
    "sdpa": solve_sdpa,
    "clarabel": solve_clarabel,
    "cvxpy-scs": lambda p, **kw: solve_cvxpy(p, solver="SCS", **kw),
    "cvxpy-clarabel": lambda p, **kw: solve_cvxpy(p, solver="CLARABEL", **kw),
}
DEFAULT_ADAPTER = "clarabel"
EQ_TOL = 1e-6
PSD_TOL = 1e-7


def min_block_eigs(p: SdpProblem, x: np.ndarray) -> dict:
    """Smallest eigenvalue of every PSD block at ``x``."""
    out = {}
    for blk in p.blocks:
        iu, ju = triu_colmajor(blk.size)
        X = np.zeros((blk.size, blk.size))
        X[iu, ju] = x[blk.offset:blk.offset + blk.nvars]
        X[ju, iu] = X[iu, ju]
        out[blk.name] = float(np.linalg.eigvalsh(X)[0]) if blk.size else 0.0
    return out


def is_feasible(p: SdpProblem, x: np.ndarray, eq_tol: float = EQ_TOL, psd_tol: float = PSD_TOL) -> bool:
    """Whether ``x`` satisfies the equalities, sign and PSD constraints up to tolerance."""
    if not np.all(np.isfinite(x)):
        return False
    scale = max(1.0, float(np.max(np.abs(p.b), initial=0.0)))
    if p.A.shape[0] and np.max(np.abs(p.A @ x - p.b)) > eq_tol * scale:
        return False
    if p.nonneg.size and np.min(x[p.nonneg]) < -psd_tol:
        return False
    return all(v >= -psd_tol * max(1.0, float(np.max(np.abs(x), initial=0.0)))
               for v in min_block_eigs(p, x).values())


def solve(p: SdpProblem, adapter: str = DEFAULT_ADAPTER, **kwargs) -> SdpSolution:
    """Submit ``p`` to a solver adapter and verify the returned point.

    Certificates only need feasibility: a point the solver could not polish
    is kept (as ``solved_inaccurate``) when it passes :func:`is_feasible`,
    and a reported solution that fails the check is downgraded.
    """
    try:
        fn = ADAPTERS[adapter]
    except KeyError:
        raise SolverError(f"unknown solver adapter {adapter!r}; choose from {sorted(ADAPTERS)}") from None
    log.info("solving SDP %s with %s", p.summary(), adapter)
    sol = fn(p, **kwargs)
    if p.A.shape[0] and sol.x.size:
        eq_res = float(np.max(np.abs(p.A @ sol.x - p.b)))
        sol.primal_residual = max(sol.primal_residual, eq_res) if np.isfinite(sol.primal_residual) else eq_res
    if sol.status in ("solved", "solved_inaccurate", "numerical_failure") and sol.x.size == p.n:
        ok = is_feasible(p, sol.x)
        if sol.status == "numerical_failure" and ok:
            log.warning("%s stopped early at a feasible point; keeping it", adapter)
            sol.status = "solved_inaccurate"
        elif sol.status != "numerical_failure" and not ok:
            log.warning("%s returned a point that fails the feasibility check", adapter)
            sol.status = "numerical_failure"
    return sol


# -- SDPA sparse format -------------------------------------------------------
#
# The problem is written in SDPA's dual form: maximize F0 . Y subject to
# Fi . Y = ci, Y block-diagonal PSD.  PSD blocks map one-to-one; nonnegative
# variables become diagonal LP entries and free variables a difference of two
# LP entries.  A "*" comment line records that layout for parsing back.

def _fmt(v: float) -> str:
    return repr(float(v))


def _layout(p: SdpProblem):
    """Positions of every variable inside the SDPA block structure."""
    lp_entries = []  # (variable, sign)
    for k in p.nonneg:
        lp_entries.append((int(k), 1.0))
    for k in p.free:
        lp_entries.append((int(k), 1.0))
        lp_entries.append((int(k), -1.0))
    return lp_entries


def export_sdpa(p: SdpProblem, path) -> Path:
    path = Path(path)
    lp = _layout(p)
    struct = [blk.size for blk in p.blocks] + ([-len(lp)] if lp else [])
    lines = []
    if lp or p.names:
        meta = {"n": p.n, "offsets": [blk.offset for blk in p.blocks], "names": [blk.name for blk in p.blocks],
                "lp": [[k, s] for k, s in lp]}
        lines.append("* pieh2 " + json.dumps(meta, separators=(",", ":")))
    lines.append(str(p.A.shape[0]))
    lines.append(str(len(struct)))
    lines.append(" ".join(str(v) for v in struct))
    lines.append(" ".join(_fmt(v) for v in p.b))

    # column k of the constraint matrix -> list of (blkno, i, j, factor)
    where: dict[int, list] = {}
    for bno, blk in enumerate(p.blocks, start=1):
        iu, ju = triu_colmajor(blk.size)
        for t in range(blk.nvars):
            i, j = int(iu[t]), int(ju[t])
            where.setdefault(blk.offset + t, []).append((bno, i + 1, j + 1, 1.0 if i == j else 0.5))
    lp_bno = len(p.blocks) + 1
    for pos, (k, sgn) in enumerate(lp, start=1):
        where.setdefault(k, []).append((lp_bno, pos, pos, sgn))

    entries = []
    for k in np.nonzero(p.c)[0]:
        for bno, i, j, f in where[int(k)]:
            entries.append((0, bno, i, j, -p.c[k] * f))
    A = p.A.tocsr()
    for r in range(A.shape[0]):
        lo, hi = A.indptr[r], A.indptr[r + 1]
        for k, v in zip(A.indices[lo:hi], A.data[lo:hi]):
            if v == 0.0:
                continue
            for bno, i, j, f in where[int(k)]:
                entries.append((r + 1, bno, i, j, v * f))
    for e in entries:
        lines.append(f"{e[0]} {e[1]} {e[2]} {e[3]} {_fmt(e[4])}")
    path.write_text("\n".join(lines) + "\n")
    return path


def read_sdpa(path) -> SdpProblem:
    """Parse a file written by :func:`export_sdpa` back into an SdpProblem."""
    meta = None
    body = []
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if line.startswith("* pieh2 "):
            meta = json.loads(line[len("* pieh2 "):])
            continue
        if line.startswith("*") or line.startswith('"'):
            continue
        body.append(line)
    m = int(body[0])
    nblocks = int(body[1])
    struct = [int(v) for v in body[2].replace(",", " ").split()] if nblocks else []
    bvec = np.array([float(v) for v in body[3].replace(",", " ").split()]) if m else np.zeros(0)
    psd_sizes = [v for v in struct if v > 0]
    if meta is None:
        offsets, off = [], 0
        for M in psd_sizes:
            offsets.append(off)
            off += M * (M + 1) // 2
        meta = {"n": off, "offsets": offsets, "names": [f"block{i}" for i in range(len(psd_sizes))], "lp": []}
    blocks = [PsdBlock(name, off, M) for name, off, M in zip(meta["names"], meta["offsets"], psd_sizes)]
    n = int(meta["n"])
    lp = meta["lp"]
    lp_bno = len(blocks) + 1
    c = np.zeros(n)
    rows, cols, vals = [], [], []
    for line in body[4:]:
        if not line:
            continue
        mat, bno, i, j, v = line.split()
        mat, bno, i, j, v = int(mat), int(bno), int(i), int(j), float(v)
        if bno == lp_bno and lp:
            k, sgn = lp[i - 1]
            if sgn < 0:
                continue  # the negative half of a free split repeats the positive half
            coeff = v
        else:
            blk = blocks[bno - 1]
            k = blk.index(i - 1, j - 1)
            coeff = v if i == j else v * 2.0
        if mat == 0:
            c[k] = -coeff
        else:
            rows.append(mat - 1)
            cols.append(k)
            vals.append(coeff)
    A = sp.csr_matrix((vals, (rows, cols)), shape=(m, n))
    nonneg = np.array([k for k, s in lp if s > 0 and sum(1 for kk, _ in lp if kk == k) == 1], dtype=int)
    return SdpProblem(n, A, bvec, c, blocks, nonneg)
