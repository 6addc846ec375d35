"""Checkpoints, CSV series and SVG plots.

Checkpoint layout (little-endian): ``b"NRRD"``, u32 version, u32 dim, one u32
node count per axis, two f64 extents per axis, f64 time, the u1 and u2 arrays
as f64 in node order, then the five f64 coefficients ``a, b, alpha, beta,
gamma``.
"""
from __future__ import annotations

import os
import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .core import FormatError, Grid, GridMismatchError, Params, StatePair
from .evolve import COLUMNS, TimeSeries

MAGIC = b"NRRD"
VERSION = 1
_PARAM_NAMES = ("a", "b", "alpha", "beta", "gamma")


@dataclass(frozen=True)
class Checkpoint:
    state: StatePair
    params: Params
    version: int = VERSION


def _expected_size(dim, n):
    size = int(np.prod(n))
    return 4 + 4 + 4 + 4 * dim + 16 * dim + 8 + 16 * size + 8 * len(_PARAM_NAMES)


def save_checkpoint(state: StatePair, path, params: Params | None = None):
    """Write ``state`` (and the run's coefficients) to ``path``."""
    params = params or Params()
    g = state.grid
    parts = [MAGIC, struct.pack("<II", VERSION, g.dim), struct.pack(f"<{g.dim}I", *g.n)]
    parts.append(struct.pack(f"<{2 * g.dim}d", *(v for ext in g.extents for v in ext)))
    parts.append(struct.pack("<d", state.t))
    parts.append(np.ascontiguousarray(state.u1, dtype="<f8").tobytes())
    parts.append(np.ascontiguousarray(state.u2, dtype="<f8").tobytes())
    parts.append(struct.pack("<5d", *(getattr(params, k) for k in _PARAM_NAMES)))
    try:
        with open(path, "wb") as fh:
            fh.write(b"".join(parts))
    except OSError as exc:
        raise OSError(f"cannot write checkpoint {path}: {exc}") from exc


def read_checkpoint(path) -> Checkpoint:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise OSError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(data) < 12:
        raise FormatError(f"{path}: truncated header ({len(data)} bytes, need at least 12)")
    if data[:4] != MAGIC:
        raise FormatError(f"{path}: not a checkpoint (bad magic {data[:4]!r})")
    version, dim = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise FormatError(f"{path}: checkpoint version {version} is not supported (expected {VERSION})")
    if dim not in (1, 2):
        raise FormatError(f"{path}: bad dimension {dim}")
    if len(data) < 12 + 4 * dim:
        raise FormatError(f"{path}: truncated header ({len(data)} bytes, need at least {12 + 4 * dim})")
    n = struct.unpack_from(f"<{dim}I", data, 12)
    expected = _expected_size(dim, n)
    if len(data) != expected:
        kind = "truncated" if len(data) < expected else "oversized"
        raise FormatError(f"{path}: {kind} checkpoint, {len(data)} bytes, expected {expected} bytes")
    off = 12 + 4 * dim
    ext = struct.unpack_from(f"<{2 * dim}d", data, off)
    off += 16 * dim
    (t,) = struct.unpack_from("<d", data, off)
    off += 8
    size = int(np.prod(n))
    u1 = np.frombuffer(data, "<f8", size, off).astype(float)
    off += 8 * size
    u2 = np.frombuffer(data, "<f8", size, off).astype(float)
    off += 8 * size
    coeffs = struct.unpack_from("<5d", data, off)
    try:
        grid = Grid(tuple((ext[2 * i], ext[2 * i + 1]) for i in range(dim)), n)
        params = Params(**dict(zip(_PARAM_NAMES, coeffs)))
        state = StatePair(grid, u1, u2, t)
    except ValueError as exc:
        raise FormatError(f"{path}: invalid checkpoint contents: {exc}") from exc
    return Checkpoint(state, params, version)


def load_checkpoint(path, grid: Grid | None = None) -> StatePair:
    """Read a state back; with ``grid`` given, the stored grid must match it."""
    state = read_checkpoint(path).state
    if grid is not None and not state.grid.same_as(grid):
        raise GridMismatchError(f"{path}: checkpoint grid {state.grid} does not match run grid {grid}")
    return state


def format_row(values):
    return ",".join(repr(float(v)) for v in values)


class SeriesWriter:
    """Streams TimeSeries rows to CSV as they are recorded."""

    def __init__(self, path):
        self.path = path
        self._fh = open(path, "w", newline="\n", encoding="ascii")
        self._fh.write(",".join(COLUMNS) + "\n")
        self._written = 0

    def __call__(self, series: TimeSeries, member=0):
        for i in range(self._written, len(series)):
            self._fh.write(format_row(series.row(i)) + "\n")
        self._written = len(series)
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_series(series: TimeSeries, path):
    with SeriesWriter(path) as w:
        w(series)


def read_series(path):
    """CSV back into a dict of float arrays keyed by column name."""
    with open(path, encoding="ascii") as fh:
        header = fh.readline().strip().split(",")
        rows = [[float(v) for v in line.split(",")] for line in fh if line.strip()]
    data = np.array(rows, dtype=float).reshape(-1, len(header))
    return {name: data[:, i] for i, name in enumerate(header)}


def _figure():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "nrrd"
    return plt


def _save(plt, fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_norms(series: TimeSeries, path):
    """Log-scale L-infinity history of both components."""
    try:
        plt = _figure()
        fig, ax = plt.subplots(figsize=(6, 4))
        t = np.asarray(series.t)
        for name in ("linf_u1", "linf_u2"):
            y = np.asarray(getattr(series, name))
            ax.semilogy(t, np.where(y > 0, y, np.nan), label=name)
        ax.set_xlabel("t")
        ax.set_ylabel("sup norm")
        ax.legend()
        _save(plt, fig, path)
    except Exception as exc:  # plots are decoration
        warnings.warn(f"could not write {path}: {exc}", RuntimeWarning, stacklevel=2)
        return False
    return True


def plot_profiles(grid: Grid, fields: dict, path, title=""):
    """Nodal profiles of the named fields (1D curves, 2D images side by side)."""
    try:
        plt = _figure()
        if grid.dim == 1:
            fig, ax = plt.subplots(figsize=(6, 4))
            for name, u in fields.items():
                ax.plot(grid.axes[0], u, label=name)
            ax.set_xlabel("x")
            ax.legend()
        else:
            fig, axes = plt.subplots(1, len(fields), figsize=(4.5 * len(fields), 4), squeeze=False)
            ext = [grid.extents[0][0], grid.extents[0][1], grid.extents[1][0], grid.extents[1][1]]
            for ax, (name, u) in zip(axes[0], fields.items()):
                im = ax.imshow(np.asarray(u).reshape(grid.shape).T, origin="lower", extent=ext)
                ax.set_title(name)
                fig.colorbar(im, ax=ax)
        if title:
            fig.suptitle(title)
        _save(plt, fig, path)
    except Exception as exc:
        warnings.warn(f"could not write {path}: {exc}", RuntimeWarning, stacklevel=2)
        return False
    return True


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path
