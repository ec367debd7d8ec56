"""Command line front end.

Exit codes: 0 success, 2 infeasible or no certificate, 3 input error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import sdp as sdpmod
from .gpde import SCHEMA_VERSION, ConversionError, PieSystem, convert_to_pie, validate_pie
from .lpi import DEFAULT_DEGREE, DEFAULT_EPS, LpiError
from .piop import PARAMS
from .sim import DEFAULT_DT, DEFAULT_N, DEFAULT_TEND, SimulationError, discretize, simulate_ic
from .synth import (
    GridGain,
    SynthesisError,
    SynthesisResult,
    SynthOptions,
    closed_loop_controller_grid,
    closed_loop_estimator_grid,
    h2_bound_dual,
    h2_bound_primal,
    h2_controller,
    h2_estimator,
    stability_lpi,
)

log = logging.getLogger(__name__)

EXIT_OK, EXIT_INFEASIBLE, EXIT_INPUT, EXIT_NUMERICAL = 0, 2, 3, 4
MAX_DEGREE = 6
REPRO_FIXTURES = {"rd": "react_diff.ini", "eb": "eb_repro.ini"}
DEGREE_COST_GROWTH = 8.0


class InputError(ValueError):
    pass


def fixture_path(name: str) -> Path:
    """Path of a shipped fixture file."""
    return Path(str(resources.files("pieh2") / "fixtures" / name))


@dataclass
class RunConfig:
    command: str
    config: Path | None
    degree: int
    eps: float
    grid: int
    dt: float
    tend: float
    out: Path
    fmt: str
    sdpa_out: Path | None
    solver: str
    dual: bool = False
    gain: Path | None = None
    example: str | None = None

    def validate(self) -> None:
        if not 0 <= self.degree <= MAX_DEGREE:
            raise InputError(f"--degree must be in [0, {MAX_DEGREE}]")
        if not self.eps > 0:
            raise InputError("--eps must be positive")
        if self.grid < 8:
            raise InputError("--grid must be at least 8")
        if not (self.dt > 0 and self.tend > self.dt):
            raise InputError("need 0 < --dt < --tend")
        if self.solver not in sdpmod.ADAPTERS:
            raise InputError(f"unknown solver {self.solver!r}; choose from {sorted(sdpmod.ADAPTERS)}")
        if self.config is not None and not self.config.is_file():
            raise InputError(f"config file not found: {self.config}")
        if self.gain is not None and not self.gain.is_file():
            raise InputError(f"gain file not found: {self.gain}")

    def synth_options(self) -> SynthOptions:
        return SynthOptions(degree=self.degree, eps=self.eps, solver=self.solver,
                            sdpa_out=str(self.sdpa_out) if self.sdpa_out else None, grid=self.grid)


# -- loading and writing ---------------------------------------------------------

def load_system(path: Path) -> tuple[PieSystem, cfgmod.PdeConfig | None]:
    """A PIE from a PDE config (``.ini``) or a serialized PIE (``.json``)."""
    if path.suffix.lower() == ".json":
        try:
            return PieSystem.from_json(path.read_text()), None
        except (KeyError, ValueError, TypeError) as exc:
            raise InputError(f"{path}: not a PIE JSON file ({exc})") from None
    cfg = cfgmod.load(path)
    return convert_to_pie(cfg.system), cfg


def _emit(run: RunConfig, stem: str, record: dict, rows: list[dict] | None = None) -> Path:
    """Write ``record`` as JSON, or ``rows`` (default: the flat scalars) as CSV."""
    run.out.mkdir(parents=True, exist_ok=True)
    if run.fmt == "json":
        path = run.out / f"{stem}.json"
        path.write_text(json.dumps({"schema_version": SCHEMA_VERSION, **record}, indent=2, default=_json_default))
        return path
    path = run.out / f"{stem}.csv"
    if rows is None:
        rows = [{k: v for k, v in record.items() if isinstance(v, (str, int, float, bool)) or v is None}]
    fields = list(dict.fromkeys(k for r in rows for k in r))
    with path.open("w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=fields)
        wr.writeheader()
        wr.writerows(rows)
    return path


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    return str(o)


def _param_rows(pie: PieSystem) -> list[dict]:
    """Nonzero PIE coefficients as table rows."""
    rows = []
    for op_name in ("T", "A", "B1", "B2", "C1", "C2"):
        op = getattr(pie, op_name)
        for p in PARAMS:
            coef = getattr(op, p).coef[..., 0]
            for r, c, i, j in zip(*np.nonzero(coef)):
                rows.append({"operator": op_name, "param": p, "row": int(r), "col": int(c),
                             "s_power": int(i), "theta_power": int(j), "value": repr(float(coef[r, c, i, j]))})
    for name in ("D11", "D12", "D21", "D22"):
        M = getattr(pie, name)
        for r, c in zip(*np.nonzero(M)):
            rows.append({"operator": name, "param": "matrix", "row": int(r), "col": int(c),
                         "s_power": 0, "theta_power": 0, "value": repr(float(M[r, c]))})
    return rows


def _status_code(status: str) -> int:
    if status in ("solved", "stable"):
        return EXIT_OK
    if status in ("infeasible", "unknown", "unbounded"):
        return EXIT_INFEASIBLE
    return EXIT_NUMERICAL


def _summary(res: SynthesisResult) -> dict:
    d = res.diagnostics
    return {"kind": res.kind, "status": res.status, "degree": res.degree, "gamma": res.gamma,
            "solver_status": d.get("solver_status"), "primal_residual": d.get("primal_residual"),
            "solve_time": d.get("solve_time"), "message": d.get("message", "")}


# -- commands --------------------------------------------------------------------

def cmd_convert(run: RunConfig) -> int:
    pie, _ = load_system(run.config)
    report = validate_pie(pie)
    run.out.mkdir(parents=True, exist_ok=True)
    pie_path = run.out / "pie.json"
    pie_path.write_text(pie.to_json(indent=1))
    path = _emit(run, "convert", {"pie_file": str(pie_path), "validation": report, "name": pie.name,
                                  "parameters": _param_rows(pie)}, _param_rows(pie))
    print(f"PIE written to {pie_path}; state dims {tuple(pie.state_dims)}, "
          f"w={pie.nw} u={pie.nu} z={pie.nz} y={pie.ny}; validation {'ok' if report['ok'] else 'FAILED'}")
    print(f"report: {path}")
    return EXIT_OK if report["ok"] else EXIT_INPUT


def cmd_h2norm(run: RunConfig) -> int:
    pie, _ = load_system(run.config)
    fn = h2_bound_dual if run.dual else h2_bound_primal
    res = fn(pie, run.synth_options())
    rec = _summary(res)
    rec["form"] = "dual" if run.dual else "primal"
    path = _emit(run, "h2norm", rec)
    if res.ok:
        print(f"H2 norm bound ({rec['form']}, degree {res.degree}): gamma = {res.gamma:.6g}")
    else:
        print(f"no certificate ({res.status}); try a larger --degree")
    print(f"report: {path}")
    return _status_code(res.status)


def cmd_stability(run: RunConfig) -> int:
    pie, _ = load_system(run.config)
    res = stability_lpi(pie, run.synth_options())
    path = _emit(run, "stability", _summary(res))
    print(f"stability certificate: {res.status} (degree {res.degree})")
    print(f"report: {path}")
    return _status_code(res.status)


def _synthesize(run: RunConfig, kind: str) -> int:
    pie, _ = load_system(run.config)
    fn = h2_estimator if kind == "estimator" else h2_controller
    res = fn(pie, run.synth_options())
    rec = _summary(res)
    if res.ok:
        run.out.mkdir(parents=True, exist_ok=True)
        gain_path = run.out / f"{kind}_gain.json"
        gain_path.write_text(json.dumps({"schema_version": SCHEMA_VERSION, "kind": kind, "gamma": res.gamma,
                                         "gain": res.gain.to_dict()}, default=_json_default))
        rec["gain_file"] = str(gain_path)
        rec["inverse_error"] = res.gain.inverse_error
        if run.fmt == "csv":
            G = res.gain.matrix
            with (run.out / f"{kind}_gain.csv").open("w", newline="") as fh:
                wr = csv.writer(fh)
                wr.writerow([f"c{j}" for j in range(G.shape[1])])
                wr.writerows([[repr(float(v)) for v in row] for row in G])
        print(f"{kind}: gamma = {res.gamma:.6g} at degree {res.degree}; gain written to {gain_path}")
    else:
        print(f"{kind}: no certificate ({res.status}) at degree {res.degree}; try a larger --degree")
    path = _emit(run, kind, rec)
    print(f"report: {path}")
    return _status_code(res.status)


def cmd_estimator(run: RunConfig) -> int:
    return _synthesize(run, "estimator")


def cmd_controller(run: RunConfig) -> int:
    return _synthesize(run, "controller")


def _load_gain(path: Path) -> tuple[str, GridGain]:
    try:
        d = json.loads(path.read_text())
        return d["kind"], GridGain.from_dict(d["gain"])
    except (KeyError, ValueError, TypeError) as exc:
        raise InputError(f"{path}: not a gain file ({exc})") from None


def simulate_loop(pie: PieSystem, kind: str | None, gain: GridGain | None, N: int, dt: float, tend: float):
    """Initial-condition response of the open loop, the controller loop or the estimator error.

    The plant starts from ``T x0 = B1 u0`` with a unit ``u0``.  For the estimator the
    observer starts at zero, so the error starts from ``-x0``.
    """
    d = discretize(pie, N)
    u0 = np.ones(pie.nw) / np.sqrt(max(pie.nw, 1))
    if kind is None:
        return simulate_ic(d, u0=u0, dt=dt, T_end=tend)
    if kind == "controller":
        return simulate_ic(closed_loop_controller_grid(d, gain), u0=u0, dt=dt, T_end=tend)
    return simulate_ic(closed_loop_estimator_grid(d, gain), ic_rhs=-(d.B1 @ u0), dt=dt, T_end=tend)


def cmd_simulate(run: RunConfig) -> int:
    pie, _ = load_system(run.config)
    kind, gain = _load_gain(run.gain) if run.gain else (None, None)
    res = simulate_loop(pie, kind, gain, run.grid, run.dt, run.tend)
    run.out.mkdir(parents=True, exist_ok=True)
    traj = res.write_csv(run.out / "trajectory.csv")
    meta = res.metrics()
    meta["loop"] = kind or "open"
    path = _emit(run, "simulate", meta)
    print(f"{meta['loop']} loop: ||z||_L2 = {res.z_l2:.6g}, h2 estimate = {res.h2_estimate:.6g}"
          + ("" if res.decaying else " (not decaying; unreliable)"))
    print(f"trajectory: {traj}; metrics: {path}")
    return EXIT_OK


def _within(value, ref, tol) -> bool:
    return value is not None and abs(value - ref) <= tol * abs(ref)


def repro_example(example: str, run: RunConfig, degrees=None, budget: float | None = None) -> dict:
    """Estimator and controller synthesis plus simulations for a shipped example.

    Reference values and tolerances come from the fixture's ``[repro]`` section.
    With several ``degrees`` the scan moves up only while gamma lies above the
    reference band (a larger degree never raises gamma) and while the next
    solve, guessed at ``DEGREE_COST_GROWTH`` times the last, fits in ``budget``.
    """
    path = fixture_path(REPRO_FIXTURES[example])
    cfg = cfgmod.load(path)
    ref = cfg.repro
    pie = convert_to_pie(cfg.system)
    start = time.perf_counter()
    rows = []
    for kind, fn in (("estimator", h2_estimator), ("controller", h2_controller)):
        target, tol = ref[f"{kind}_gamma"], ref["gamma_tolerance"]
        t0 = time.perf_counter()
        res, tried, last = None, [], 0.0
        for d in degrees or [run.degree]:
            if tried and budget is not None:
                used = time.perf_counter() - start
                if used + DEGREE_COST_GROWTH * last > budget:
                    break
            opts = run.synth_options()
            opts.degree = d
            t1 = time.perf_counter()
            try:
                res = fn(pie, opts)
            except (SynthesisError, LpiError) as exc:
                raise RuntimeError(f"stage {kind} synthesis failed: {exc}") from exc
            last = time.perf_counter() - t1
            tried.append(d)
            if res.ok and res.gamma <= target * (1.0 + tol):
                break
        row = {"example": example, "stage": kind, "degree": res.degree, "degrees_tried": tried,
               "status": res.status, "gamma": res.gamma, "paper_gamma": target,
               "gamma_ok": _within(res.gamma, target, tol), "synth_seconds": round(time.perf_counter() - t0, 2)}
        h2 = None
        if res.ok:
            t1 = time.perf_counter()
            try:
                sim = simulate_loop(pie, kind, res.gain, run.grid, run.dt, run.tend)
            except SimulationError as exc:
                raise RuntimeError(f"stage {kind} simulation failed: {exc}") from exc
            h2 = sim.h2_estimate
            row["sim_reliable"] = sim.decaying
            row["sim_seconds"] = round(time.perf_counter() - t1, 2)
        row.update({"h2_estimate": h2, "paper_h2": ref[f"{kind}_h2"],
                    "h2_ok": _within(h2, ref[f"{kind}_h2"], ref["h2_tolerance"]),
                    "bound_ok": h2 is not None and h2 <= res.gamma * (1.0 + ref["bound_slack"])})
        rows.append(row)
    return {"example": example, "fixture": str(path), "rows": rows,
            "settings": {"N": run.grid, "dt": run.dt, "T_end": run.tend, "solver": run.solver}}


def cmd_repro(run: RunConfig) -> int:
    try:
        summary = repro_example(run.example, run)
    except RuntimeError as exc:
        print(f"repro {run.example}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    path = _emit(run, f"repro_{run.example}", summary, summary["rows"])
    print(f"{'stage':<11}{'d':>3}{'gamma':>10}{'paper':>8}{'ok':>5}{'h2 sim':>10}{'paper':>8}{'ok':>5}{'h2<=g':>7}")
    for r in summary["rows"]:
        g = f"{r['gamma']:.4g}" if r["gamma"] is not None else "-"
        h = f"{r['h2_estimate']:.4g}" if r["h2_estimate"] is not None else "-"
        print(f"{r['stage']:<11}{r['degree']:>3}{g:>10}{r['paper_gamma']:>8}{_yn(r['gamma_ok']):>5}"
              f"{h:>10}{r['paper_h2']:>8}{_yn(r['h2_ok']):>5}{_yn(r['bound_ok']):>7}")
    print(f"summary: {path}")
    if any(r["status"] != "solved" for r in summary["rows"]):
        return _status_code(next(r["status"] for r in summary["rows"] if r["status"] != "solved"))
    return EXIT_OK


def _yn(flag) -> str:
    return "yes" if flag else "no"


# -- argument parsing ------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


COMMANDS = {
    "convert": (cmd_convert, "convert a PDE config to its PIE and validate it"),
    "h2norm": (cmd_h2norm, "upper-bound the H2 norm"),
    "stability": (cmd_stability, "search for a Lyapunov stability certificate"),
    "estimator": (cmd_estimator, "synthesize an H2-optimal Luenberger observer"),
    "controller": (cmd_controller, "synthesize an H2-optimal state feedback"),
    "simulate": (cmd_simulate, "simulate the initial-condition response"),
    "repro": (cmd_repro, "rerun a shipped example and compare with reference values"),
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--degree", type=int, default=None, help=f"Gram degree d (default {DEFAULT_DEGREE})")
    common.add_argument("--eps", type=float, default=None, help=f"strictness margin (default {DEFAULT_EPS})")
    common.add_argument("--grid", type=int, default=None, help=f"collocation points N (default {DEFAULT_N})")
    common.add_argument("--dt", type=float, default=None, help=f"time step (default {DEFAULT_DT})")
    common.add_argument("--tend", type=float, default=None, help=f"final time (default {DEFAULT_TEND})")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory (default ./out)")
    common.add_argument("--format", dest="fmt", choices=("csv", "json"), default="json")
    common.add_argument("--sdpa-out", type=Path, default=None, help="also export the SDP in SDPA sparse format")
    common.add_argument("--solver", default=None, help=f"SDP adapter (default {sdpmod.DEFAULT_ADAPTER})")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="pieh2", description="H2 analysis and synthesis for PDEs through their PIE form.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_text)
        if name == "repro":
            p.add_argument("example", choices=sorted(REPRO_FIXTURES))
        else:
            p.add_argument("config", type=Path, help="PDE config (.ini) or PIE file (.json)")
        if name == "h2norm":
            p.add_argument("--dual", action="store_true", help="use the dual LPI")
        if name == "simulate":
            p.add_argument("--gain", type=Path, default=None, help="gain file from estimator/controller")
    return parser


def make_run(args) -> RunConfig:
    """Merge CLI flags over the config's [solver] section over defaults."""
    settings = {}
    path = getattr(args, "config", None)
    if args.command == "repro":
        path_for_settings = fixture_path(REPRO_FIXTURES[args.example])
    else:
        path_for_settings = path
    if path_for_settings is not None and Path(path_for_settings).suffix.lower() == ".ini" \
            and Path(path_for_settings).is_file():
        settings = cfgmod.load(path_for_settings).solver

    def pick(flag, key, default):
        return flag if flag is not None else settings.get(key, default)

    run = RunConfig(
        command=args.command, config=path,
        degree=pick(args.degree, "degree", DEFAULT_DEGREE), eps=pick(args.eps, "eps", DEFAULT_EPS),
        grid=pick(args.grid, "grid", DEFAULT_N), dt=pick(args.dt, "dt", DEFAULT_DT),
        tend=pick(args.tend, "tend", DEFAULT_TEND), out=args.out, fmt=args.fmt, sdpa_out=args.sdpa_out,
        solver=pick(args.solver, "adapter", sdpmod.DEFAULT_ADAPTER), dual=getattr(args, "dual", False),
        gain=getattr(args, "gain", None), example=getattr(args, "example", None))
    run.validate()
    return run


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        run = make_run(args)
        return COMMANDS[args.command][0](run)
    except (InputError, cfgmod.ConfigError, ConversionError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (SynthesisError, LpiError, SimulationError, sdpmod.SolverError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
