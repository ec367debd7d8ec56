"""Text configuration files for polynomial-coefficient PDEs.

A config is an INI file with the sections ``domain``, ``states``,
``dynamics``, ``bcs``, ``inputs``, ``outputs`` and (optionally) ``solver``
and ``repro``.  Matrix values list rows separated by ``;`` and entries
separated by ``,``.  Polynomial entries use the grammar::

    expr   := term (("+" | "-") term)*
    term   := factor ("*" factor)*
    factor := ("+" | "-") factor | atom ("^" integer)?
    atom   := number | "s" | "theta" | "(" expr ")"

Example (a scalar reaction-diffusion equation)::

    [domain]
    a = 0
    b = 1

    [states]
    count = 1
    order = 2

    [dynamics]
    A0 = 3
    A2 = s^2 + 0.2

    [bcs]
    # columns: x(a), x_s(a), x(b), x_s(b)
    rows = 1, 0, 0, 0; 0, 0, 0, 1

    [inputs]
    Bw = 0.5*s^2 - s
    Bu = 1

    [outputs]
    Cz0 = 1; 0
    Dzu = 0; 1
    Cyb = 0, 0, 1, 0
    Dyw = 1
"""

from __future__ import annotations

import ast
import configparser
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .gpde import GpdeSystem
from .polyalg import PolyMatrix, block

SECTIONS = ("domain", "states", "dynamics", "bcs", "inputs", "outputs", "solver", "repro")
REQUIRED = ("domain", "states", "bcs")
SOLVER_KEYS = {"degree": int, "eps": float, "adapter": str, "grid": int, "dt": float, "tend": float}
KNOWN_KEYS = {
    "domain": {"a", "b"},
    "states": {"count", "order", "name"},
    "bcs": {"rows"},
    "inputs": {"bw", "bu", "disturbances", "controls"},
    "outputs": {"cz", "czb", "dzw", "dzu", "cy", "cyb", "dyw", "dyu", "regulated", "observed"},
    "solver": set(SOLVER_KEYS),
}


class ConfigError(ValueError):
    """Input error with an optional file location."""

    def __init__(self, message: str, path=None, line: int | None = None):
        where = f"{path}:{line}: " if path and line else (f"{path}: " if path else "")
        super().__init__(where + message)
        self.path = path
        self.line = line


# -- polynomial expressions ---------------------------------------------------

class _Evaluator:
    """Evaluate a parsed expression into a 1x1 PolyMatrix on ``domain``."""

    def __init__(self, domain):
        self.domain = domain

    def __call__(self, node):
        dom = self.domain
        if isinstance(node, ast.Expression):
            return self(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
            return PolyMatrix.constant([[float(node.value)]], dom)
        if isinstance(node, ast.Name):
            if node.id == "s":
                return PolyMatrix.monomial(1, 0, 1.0, dom)
            if node.id == "theta":
                return PolyMatrix.monomial(0, 1, 1.0, dom)
            raise ValueError(f"unknown identifier {node.id!r} (use s or theta)")
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.UAdd, ast.USub)):
            val = self(node.operand)
            return -val if isinstance(node.op, ast.USub) else val
        if isinstance(node, ast.BinOp):
            if isinstance(node.op, ast.Pow):
                k = node.right
                if not (isinstance(k, ast.Constant) and isinstance(k.value, int) and k.value >= 0):
                    raise ValueError("exponents must be nonnegative integer literals")
                base = self(node.left)
                out = PolyMatrix.constant([[1.0]], dom)
                for _ in range(k.value):
                    out = out @ base
                return out
            left, right = self(node.left), self(node.right)
            if isinstance(node.op, ast.Add):
                return left + right
            if isinstance(node.op, ast.Sub):
                return left - right
            if isinstance(node.op, ast.Mult):
                return left @ right
        raise ValueError(f"unsupported syntax {ast.dump(node)[:40]!r}")


def parse_poly(text: str, domain=(0.0, 1.0)) -> PolyMatrix:
    """Parse one polynomial in ``s`` and ``theta`` into a 1x1 PolyMatrix."""
    src = text.strip()
    if not src:
        raise ValueError("empty expression")
    if "**" in src or re.search(r"[^\w\s.+\-*^()]", src):
        raise ValueError(f"invalid character in {src!r}")
    try:
        tree = ast.parse(src.replace("^", "**"), mode="eval")
    except SyntaxError as exc:
        raise ValueError(f"cannot parse {src!r}: {exc.msg}") from None
    return _Evaluator(domain)(tree)


def parse_poly_matrix(text: str, domain=(0.0, 1.0), shape: tuple[int, int] | None = None) -> PolyMatrix:
    """Rows separated by ``;``, entries by ``,``."""
    rows = [[parse_poly(e, domain) for e in row.split(",")] for row in text.split(";")]
    if len({len(r) for r in rows}) != 1:
        raise ValueError("rows have different lengths")
    out = block(rows, domain)
    if shape is not None and out.shape != tuple(shape):
        raise ValueError(f"expected a {shape[0]}x{shape[1]} matrix, got {out.shape[0]}x{out.shape[1]}")
    return out


def parse_matrix(text: str, shape: tuple[int, int] | None = None) -> np.ndarray:
    """Numeric matrix with the same row/entry separators."""
    try:
        rows = [[float(e) for e in row.split(",")] for row in text.split(";")]
    except ValueError:
        raise ValueError(f"non-numeric entry in {text.strip()!r}") from None
    if len({len(r) for r in rows}) != 1:
        raise ValueError("rows have different lengths")
    M = np.array(rows, dtype=float)
    if shape is not None and M.shape != tuple(shape):
        raise ValueError(f"expected a {shape[0]}x{shape[1]} matrix, got {M.shape[0]}x{M.shape[1]}")
    return M


# -- files ----------------------------------------------------------------------

@dataclass
class PdeConfig:
    """A parsed config: the PDE, solver settings and optional reference values."""

    system: GpdeSystem
    solver: dict = field(default_factory=dict)
    repro: dict = field(default_factory=dict)
    path: Path | None = None


def _key_lines(text: str) -> dict:
    """Map ``(section, key)`` to its 1-based line number."""
    out, section = {}, None
    for no, line in enumerate(text.splitlines(), 1):
        m = re.match(r"\s*\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip().lower()
            out[(section, None)] = no
            continue
        m = re.match(r"\s*([^#;=\s][^=]*?)\s*=", line)
        if m and section:
            out[(section, m.group(1).strip().lower())] = no
    return out


def loads(text: str, path=None) -> PdeConfig:
    """Parse config text; errors carry the offending line."""
    lines = _key_lines(text)
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    try:
        cp.read_string(text, source=str(path or "<config>"))
    except configparser.Error as exc:
        raise ConfigError(str(exc).splitlines()[0], path, getattr(exc, "lineno", None)) from None

    def fail(msg, section, key=None):
        raise ConfigError(msg, path, lines.get((section, key)) or lines.get((section, None)))

    for sec in cp.sections():
        if sec not in SECTIONS:
            fail(f"unknown section [{sec}]", sec)
    for sec in REQUIRED:
        if not cp.has_section(sec):
            raise ConfigError(f"missing section [{sec}]", path)

    def get(section, key, conv, default=None):
        if not cp.has_option(section, key):
            if default is None:
                fail(f"missing key {key!r} in [{section}]", section)
            return default
        raw = cp.get(section, key)
        try:
            return conv(raw)
        except (ValueError, TypeError) as exc:
            fail(f"[{section}] {key}: {exc}", section, key)

    a = get("domain", "a", float)
    b = get("domain", "b", float)
    if not a < b:
        fail("domain needs a < b", "domain", "b")
    dom = (a, b)
    n = get("states", "count", int)
    N = get("states", "order", int)
    if n < 1:
        fail("states.count must be positive", "states", "count")
    if N not in (1, 2):
        fail("states.order must be 1 or 2", "states", "order")
    name = cp.get("states", "name", fallback="")

    for sec, known in KNOWN_KEYS.items():
        if not cp.has_section(sec):
            continue
        for key in cp.options(sec):
            base = re.sub(r"\d+$", "", key) if sec in ("dynamics", "outputs") else key
            if sec == "dynamics":
                if not re.fullmatch(r"a\d+", key) or int(key[1:]) > N:
                    fail(f"unknown dynamics key {key!r} (use A0 .. A{N})", sec, key)
            elif base not in known:
                fail(f"unknown key {key!r} in [{sec}]", sec, key)

    A = {}
    if cp.has_section("dynamics"):
        for key in cp.options("dynamics"):
            A[int(key[1:])] = get("dynamics", key, lambda t: parse_poly_matrix(t, dom, (n, n)))
    Bb = get("bcs", "rows", lambda t: parse_matrix(t, (N * n, 2 * N * n)))
    if np.linalg.matrix_rank(Bb) != N * n:
        fail("boundary rows are not independent", "bcs", "rows")

    def width(sec, key, count_key):
        if cp.has_option(sec, key):
            raw = cp.get(sec, key)
            return len(raw.split(";")[0].split(","))
        return get(sec, count_key, int, 0) if cp.has_section(sec) else 0

    nw = width("inputs", "bw", "disturbances")
    nu = width("inputs", "bu", "controls")
    sec = "inputs"
    Bw = get(sec, "bw", lambda t: parse_poly_matrix(t, dom, (n, nw)), PolyMatrix.zeros(n, nw, dom)) \
        if cp.has_section(sec) else PolyMatrix.zeros(n, nw, dom)
    Bu = get(sec, "bu", lambda t: parse_poly_matrix(t, dom, (n, nu)), PolyMatrix.zeros(n, nu, dom)) \
        if cp.has_section(sec) else PolyMatrix.zeros(n, nu, dom)

    def out_rows(tag, count_key):
        sec = "outputs"
        if not cp.has_section(sec):
            return 0
        for key in cp.options(sec):
            if key.startswith("c" + tag) or key.startswith("d" + tag):
                raw = cp.get(sec, key)
                return len(raw.split(";"))
        return get(sec, count_key, int, 0)

    nz, ny = out_rows("z", "regulated"), out_rows("y", "observed")
    kw = {}
    for tag, rows in (("z", nz), ("y", ny)):
        sec = "outputs"
        weights = {}
        if cp.has_section(sec):
            for key in cp.options(sec):
                m = re.fullmatch(rf"c{tag}(\d*)", key)
                if m:
                    i = int(m.group(1) or 0)
                    if i > N:
                        fail(f"{key}: derivative order exceeds {N}", sec, key)
                    weights[i] = get(sec, key, lambda t: parse_poly_matrix(t, dom, (rows, n)))
            kw[f"C{tag}"] = weights
            kw[f"C{tag}b"] = get(sec, f"c{tag}b", lambda t: parse_matrix(t, (rows, 2 * N * n)), np.zeros((rows, 2 * N * n)))
            kw[f"D{tag}w"] = get(sec, f"d{tag}w", lambda t: parse_matrix(t, (rows, nw)), np.zeros((rows, nw)))
            kw[f"D{tag}u"] = get(sec, f"d{tag}u", lambda t: parse_matrix(t, (rows, nu)), np.zeros((rows, nu)))
    system = GpdeSystem.create(dom, n, N, A, Bb, Bw=Bw, Bu=Bu, nw=nw, nu=nu, nz=nz, ny=ny, name=name, **kw)

    solver = {}
    if cp.has_section("solver"):
        for key, conv in SOLVER_KEYS.items():
            if cp.has_option("solver", key):
                solver[key] = get("solver", key, conv)
    repro = {}
    if cp.has_section("repro"):
        for key in cp.options("repro"):
            raw = cp.get("repro", key)
            try:
                repro[key] = [int(v) for v in raw.split(",")] if key == "degrees" else float(raw)
            except ValueError:
                fail(f"[repro] {key}: expected a number", "repro", key)
    return PdeConfig(system, solver, repro, Path(path) if path else None)


def load(path) -> PdeConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", path) from None
    return loads(text, path)
