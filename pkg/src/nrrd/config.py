"""Run configuration: a strict ``key = value`` format with ``[section]`` headers.

Values are numbers, bare or double-quoted strings, or comma-separated lists
of numbers.  ``#`` starts a comment.  Unknown sections and keys are errors, as
are repeated keys; every error carries the line (and column where useful).
"""
from __future__ import annotations

import ast
import math
import os
import re
from dataclasses import dataclass, field, fields

import numpy as np

from .core import DomainError, Grid, NRRDError, Params, SolverOptions

COMMANDS = ("eig", "steady", "evolve", "threshold1", "threshold2", "sweep", "check")
INITIAL_KINDS = ("zero", "scaled_steady", "file", "expression")
SCHEMES = ("euler", "cn")

_NAME = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_SECTION = re.compile(r"\[\s*([A-Za-z_][A-Za-z0-9_]*)\s*\]")
_NUMBER = re.compile(r"[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?|[+-]?inf")


class ConfigError(NRRDError, ValueError):
    """A configuration file is malformed or violates a constraint."""

    def __init__(self, message, line=None, column=None, key=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column}")
        prefix = (", ".join(where) + ": ") if where else ""
        if key is not None:
            prefix += f"{key}: "
        super().__init__(prefix + message)
        self.line, self.column, self.key = line, column, key


@dataclass(frozen=True)
class InitialSpec:
    kind: str = "scaled_steady"
    l1: float = 0.5
    l2: float = 0.75
    path: str = ""
    u1: str = ""
    u2: str = ""


@dataclass(frozen=True)
class RunConfig:
    command: str
    params: Params = field(default_factory=Params)
    grid: Grid = field(default_factory=lambda: Grid.interval(101))
    initial: InitialSpec = field(default_factory=InitialSpec)
    options: SolverOptions = field(default_factory=SolverOptions)
    output: str = "out"
    T_end: float = 100.0
    sample_dt: float | None = None
    stride: int = 1
    scheme: str = "euler"
    cutoff_M: float | None = None
    sweep_axis: str = "l"
    sweep_values: tuple = ()
    seed: int = 0
    check_samples: int = 10

    def __eq__(self, other):
        if not isinstance(other, RunConfig):
            return NotImplemented
        return to_text(self) == to_text(other)

    def __hash__(self):
        return hash(to_text(self))


# accepted keys per section, with their value types
_PROBLEM = {"a": float, "b": float, "alpha": float, "beta": float, "gamma": float}
_GRID = {"dim": int, "n": "ints", "x": "floats", "y": "floats"}
_INITIAL = {"kind": str, "l1": float, "l2": float, "path": str, "u1": str, "u2": str}
_SOLVER = {f.name: (int if f.name == "max_iter" else float) for f in fields(SolverOptions)}
_SOLVER.update({"scheme": str, "cutoff_M": float})
_RUN = {
    "command": str, "output": str, "T_end": float, "sample_dt": float, "stride": int,
    "sweep_axis": str, "sweep_values": "floats", "seed": int, "check_samples": int,
}
SECTIONS = {"problem": _PROBLEM, "grid": _GRID, "initial": _INITIAL, "solver": _SOLVER, "run": _RUN}


def _strip_comment(line):
    out = []
    quoted = False
    for ch in line:
        if ch == '"':
            quoted = not quoted
        if ch == "#" and not quoted:
            break
        out.append(ch)
    return "".join(out)


def _parse_number(text, kind, lineno, col, key):
    text = text.strip()
    if not _NUMBER.fullmatch(text):
        raise ConfigError(f"expected a number, got {text!r}", lineno, col, key)
    if kind is int:
        try:
            return int(text)
        except ValueError:
            value = float(text)
            if value != int(value):
                raise ConfigError(f"expected an integer, got {text!r}", lineno, col, key) from None
            return int(value)
    return float(text)


def _parse_value(raw, kind, lineno, col, key):
    text = raw.strip()
    if not text:
        raise ConfigError("missing value", lineno, col, key)
    if kind is str:
        if text.startswith('"'):
            if len(text) < 2 or not text.endswith('"') or '"' in text[1:-1]:
                raise ConfigError("unterminated or malformed string", lineno, col, key)
            return text[1:-1]
        if not re.fullmatch(r"[A-Za-z0-9_./+\-]+", text):
            raise ConfigError(f"bare string {text!r} must be quoted", lineno, col, key)
        return text
    if kind in ("ints", "floats"):
        items = text.split(",")
        if items and not items[-1].strip():
            items = items[:-1]
        base = int if kind == "ints" else float
        return tuple(_parse_number(item, base, lineno, col, key) for item in items)
    return _parse_number(text, kind, lineno, col, key)


def _tokenize(text):
    """Yield ``(section, key, value, lineno, col)`` after syntax checks."""
    section = None
    seen = {}
    sections_seen = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).rstrip()
        if not line.strip():
            continue
        indent = len(line) - len(line.lstrip())
        body = line.strip()
        if body.startswith("["):
            m = _SECTION.fullmatch(body)
            if not m:
                raise ConfigError("malformed section header", lineno, indent + 1)
            section = m.group(1)
            if section not in SECTIONS:
                raise ConfigError(f"unknown section [{section}]", lineno, indent + 1)
            if section in sections_seen:
                raise ConfigError(f"section [{section}] appears twice", lineno, indent + 1)
            sections_seen.add(section)
            yield section, None, None, lineno, indent + 1
            continue
        if "=" not in body:
            raise ConfigError("expected 'key = value'", lineno, indent + 1)
        key_text, value_text = body.split("=", 1)
        key = key_text.strip()
        # 1-based column of the first character of the value
        value_col = line.index("=") + 2 + len(value_text) - len(value_text.lstrip())
        if not _NAME.fullmatch(key):
            raise ConfigError(f"invalid key {key!r}", lineno, indent + 1)
        if section is None:
            raise ConfigError("key outside of any section", lineno, indent + 1, key)
        if key not in SECTIONS[section]:
            raise ConfigError(f"unknown key in [{section}]", lineno, indent + 1, key)
        if (section, key) in seen:
            raise ConfigError(f"duplicate key (first on line {seen[section, key]})", lineno, indent + 1, key)
        seen[section, key] = lineno
        value = _parse_value(value_text, SECTIONS[section][key], lineno, value_col, key)
        yield section, key, value, lineno, value_col


def parse_config(text: str, base_dir=None) -> RunConfig:
    """Parse and validate a run configuration.

    Relative file paths are resolved against ``base_dir`` (default: the
    current directory) and must exist.
    """
    values = {name: {} for name in SECTIONS}
    where = {}
    present = set()
    for section, key, value, lineno, col in _tokenize(text):
        present.add(section)
        if key is not None:
            values[section][key] = value
            where[key] = (lineno, col)
    for required in ("problem", "run"):
        if required not in present:
            raise ConfigError(f"missing [{required}] section")

    def fail(key, message):
        line, col = where.get(key, (None, None))
        raise ConfigError(message, line, col, key)

    try:
        params = Params(**values["problem"])
    except DomainError as exc:
        first = str(exc).split()[0]
        key = first if first in _PROBLEM else None
        fail(key, str(exc).replace(">=", "≥"))

    grid = _build_grid(values["grid"], fail)

    run = values["run"]
    if "command" not in run:
        raise ConfigError("[run] needs a command")
    if run["command"] not in COMMANDS:
        fail("command", f"must be one of {', '.join(COMMANDS)}")

    solver = dict(values["solver"])
    scheme = solver.pop("scheme", "euler")
    if scheme not in SCHEMES:
        fail("scheme", f"must be one of {', '.join(SCHEMES)}")
    cutoff = solver.pop("cutoff_M", None)
    if cutoff is not None and not cutoff > 0:
        fail("cutoff_M", "must be > 0")
    try:
        options = SolverOptions(**solver)
    except DomainError as exc:
        key = next((k for k in sorted(solver, key=len, reverse=True) if k in str(exc)), None)
        fail(key, str(exc))

    initial = InitialSpec(**values["initial"])
    if initial.kind not in INITIAL_KINDS:
        fail("kind", f"must be one of {', '.join(INITIAL_KINDS)}")
    if initial.kind == "file":
        if not initial.path:
            fail("path", "file initial condition needs a path")
        full = os.path.join(base_dir or os.getcwd(), initial.path)
        if not os.path.isfile(full):
            fail("path", f"file does not exist: {full}")
    if initial.kind == "expression":
        for key in ("u1", "u2"):
            expr = getattr(initial, key)
            if not expr:
                fail(key, "expression initial condition needs u1 and u2")
            try:
                evaluate_expression(expr, grid)
            except ConfigError as exc:
                fail(key, str(exc))
    if initial.kind == "scaled_steady" and not (initial.l1 > 0 and initial.l2 > 0):
        fail("l1", "scaling factors must be positive")

    T_end = run.get("T_end", 100.0)
    if not T_end > 0:
        fail("T_end", "must be > 0")
    sample_dt = run.get("sample_dt")
    if sample_dt is not None and not sample_dt > 0:
        fail("sample_dt", "must be > 0")
    stride = run.get("stride", 1)
    if stride < 1:
        fail("stride", "must be >= 1")
    from .experiments import SWEEP_AXES

    axis = run.get("sweep_axis", "l")
    if axis not in SWEEP_AXES:
        fail("sweep_axis", f"must be one of {', '.join(SWEEP_AXES)}")
    if run.get("check_samples", 10) < 1:
        fail("check_samples", "must be >= 1")
    output = run.get("output", "out")
    return RunConfig(
        command=run["command"], params=params, grid=grid, initial=initial, options=options,
        output=output, T_end=T_end, sample_dt=sample_dt, stride=stride, scheme=scheme,
        cutoff_M=cutoff, sweep_axis=axis, sweep_values=tuple(run.get("sweep_values", ())),
        seed=run.get("seed", 0), check_samples=run.get("check_samples", 10),
    )


def _build_grid(spec, fail):
    dim = spec.get("dim", 1)
    if dim not in (1, 2):
        fail("dim", "must be 1 or 2")
    n = spec.get("n", (101,) * dim)
    if len(n) == 1 and dim == 2:
        n = n * 2
    if len(n) != dim:
        fail("n", f"needs {dim} node count(s)")
    if any(k < 3 for k in n):
        fail("n", "need at least 3 nodes per axis")
    axes = [spec.get("x", (0.0, 1.0))]
    if dim == 2:
        axes.append(spec.get("y", (0.0, 1.0)))
    elif "y" in spec:
        fail("y", "only allowed when dim = 2")
    for name, ext in zip(("x", "y"), axes):
        if len(ext) != 2 or not (math.isfinite(ext[0]) and math.isfinite(ext[1]) and ext[1] > ext[0]):
            fail(name, "must be 'lo, hi' with finite lo < hi")
    return Grid(tuple(tuple(e) for e in axes), tuple(n))


_FUNCS = {
    name: getattr(np, name)
    for name in ("sin", "cos", "tan", "exp", "log", "sqrt", "abs", "tanh", "sinh", "cosh", "arctan")
}
_CONSTS = {"pi": math.pi, "e": math.e}
_BINOPS = {
    ast.Add: np.add, ast.Sub: np.subtract, ast.Mult: np.multiply,
    ast.Div: np.divide, ast.Pow: np.power,
}


def evaluate_expression(expr: str, grid: Grid) -> np.ndarray:
    """Evaluate an arithmetic expression in ``x`` (and ``y`` in 2D) on the grid nodes."""
    try:
        tree = ast.parse(expr, mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"bad expression {expr!r}: {exc.msg}") from None
    names = dict(_CONSTS)
    coords = grid.coords()
    names["x"] = coords[0]
    if grid.dim == 2:
        names["y"] = coords[1]

    def walk(node):
        if isinstance(node, ast.Expression):
            return walk(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name):
            if node.id not in names:
                raise ConfigError(f"unknown name {node.id!r} in expression")
            return names[node.id]
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](walk(node.left), walk(node.right))
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            v = walk(node.operand)
            return -v if isinstance(node.op, ast.USub) else v
        if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name)
                and node.func.id in _FUNCS and len(node.args) == 1 and not node.keywords):
            return _FUNCS[node.func.id](walk(node.args[0]))
        raise ConfigError(f"unsupported construct in expression {expr!r}")

    with np.errstate(all="ignore"):
        value = np.broadcast_to(np.asarray(walk(tree), dtype=float), (grid.size,)).copy()
    if not np.all(np.isfinite(value)):
        raise ConfigError(f"expression {expr!r} is not finite on the grid")
    if np.any(value < 0):
        raise ConfigError(f"expression {expr!r} is negative somewhere on the grid")
    return value


def _fmt(value):
    if isinstance(value, str):
        return f'"{value}"'
    if isinstance(value, (tuple, list)):
        return ", ".join(_fmt(v) for v in value)
    if isinstance(value, bool):
        raise TypeError("booleans are not part of the format")
    if isinstance(value, int):
        return str(value)
    return repr(float(value))


def to_text(cfg: RunConfig) -> str:
    """Canonical serialisation; ``parse_config(to_text(c))`` reproduces ``c``."""
    p, g, i, o = cfg.params, cfg.grid, cfg.initial, cfg.options
    lines = ["[problem]"]
    lines += [f"{k} = {_fmt(getattr(p, k))}" for k in _PROBLEM]
    lines += ["", "[grid]", f"dim = {g.dim}", f"n = {_fmt(tuple(g.n))}", f"x = {_fmt(g.extents[0])}"]
    if g.dim == 2:
        lines.append(f"y = {_fmt(g.extents[1])}")
    lines += ["", "[initial]"]
    lines += [f"{k} = {_fmt(getattr(i, k))}" for k in _INITIAL]
    lines += ["", "[solver]"]
    lines += [f"{f.name} = {_fmt(getattr(o, f.name))}" for f in fields(SolverOptions)]
    lines.append(f"scheme = {_fmt(cfg.scheme)}")
    if cfg.cutoff_M is not None:
        lines.append(f"cutoff_M = {_fmt(cfg.cutoff_M)}")
    lines += ["", "[run]", f"command = {_fmt(cfg.command)}", f"output = {_fmt(cfg.output)}",
              f"T_end = {_fmt(cfg.T_end)}"]
    if cfg.sample_dt is not None:
        lines.append(f"sample_dt = {_fmt(cfg.sample_dt)}")
    lines += [f"stride = {cfg.stride}", f"sweep_axis = {_fmt(cfg.sweep_axis)}"]
    if cfg.sweep_values:
        lines.append(f"sweep_values = {_fmt(tuple(float(v) for v in cfg.sweep_values))}")
    lines += [f"seed = {cfg.seed}", f"check_samples = {cfg.check_samples}"]
    return "\n".join(lines) + "\n"
