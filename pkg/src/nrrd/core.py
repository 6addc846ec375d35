"""Grids, parameter records, quadrature and the error types shared by every module.

Fields are plain ``numpy`` vectors holding one value per grid node.  In two
dimensions nodes are stored row-major with the x index varying slowest, so a
field reshapes to ``grid.shape`` with ``indexing="ij"`` semantics.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
import scipy.sparse as sp


class NRRDError(Exception):
    """Base class for all library errors."""


class DomainError(NRRDError, ValueError):
    """An input lies outside the admissible set (bad parameter, non-finite field, ...)."""


class ConvergenceError(NRRDError, RuntimeError):
    """An iteration hit its cap without meeting the tolerance."""


class DivergenceError(ConvergenceError):
    """An iteration left every bounded set (norm above the blow-up threshold)."""


class SolvabilityError(NRRDError, ValueError):
    """A linear system is singular for the given data."""


class StepError(NRRDError, RuntimeError):
    """A time step failed; ``dt`` is kept so the controller can retry smaller."""

    def __init__(self, message, dt):
        super().__init__(message)
        self.dt = dt


class StateError(NRRDError, RuntimeError):
    """A required intermediate result (e.g. a steady state) is missing."""


class FormatError(NRRDError, ValueError):
    """A persisted file does not follow the expected layout."""


class GridMismatchError(NRRDError, ValueError):
    """Two objects were built on different grids."""


@dataclass(frozen=True)
class Params:
    """Coefficients of the reactor system.

    ``a`` couples neutron density into temperature, ``b`` is the absorption
    rate, ``alpha`` the Robin coefficient of u1, and ``beta``/``gamma`` the
    radiation law ``d_nu u2 + beta |u2|^(gamma-2) u2 = 0`` on the boundary.
    """

    a: float = 1.0
    b: float = 1.0
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 2.0

    def __post_init__(self):
        for name in ("a", "b", "alpha", "beta", "gamma"):
            value = getattr(self, name)
            if not np.isfinite(value):
                raise DomainError(f"{name} must be finite, got {value!r}")
            object.__setattr__(self, name, float(value))
        if self.a <= 0:
            raise DomainError(f"a must be > 0, got {self.a}")
        if self.b <= 0:
            raise DomainError(f"b must be > 0, got {self.b}")
        if self.alpha < 0:
            raise DomainError(f"alpha must be >= 0, got {self.alpha}")
        if self.beta <= 0:
            raise DomainError(f"beta must be > 0, got {self.beta}")
        if self.gamma < 2:
            raise DomainError(f"gamma must be >= 2, got {self.gamma}")

    @property
    def condition_A_or_B(self) -> bool:
        """True when a positive stationary solution is guaranteed to exist."""
        if self.gamma > 2:
            return True
        return self.alpha <= 2 * self.beta

    def with_(self, **changes) -> "Params":
        return replace(self, **changes)


@dataclass(frozen=True)
class SolverOptions:
    tol_residual: float = 1e-10
    max_iter: int = 10_000
    relax_omega: float = 0.5
    newton_tol: float = 1e-12
    dt_init: float = 1e-3
    dt_min: float = 1e-13
    dt_max: float = 0.1
    blowup_threshold: float = 1e8
    decay_threshold: float = 1e-8

    def __post_init__(self):
        if not 0 < self.relax_omega <= 1:
            raise DomainError(f"relax_omega must lie in (0, 1], got {self.relax_omega}")
        if not 0 < self.dt_min <= self.dt_init <= self.dt_max:
            raise DomainError(
                f"need 0 < dt_min <= dt_init <= dt_max, got "
                f"{self.dt_min}, {self.dt_init}, {self.dt_max}"
            )
        for name in ("tol_residual", "newton_tol", "blowup_threshold", "decay_threshold"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be positive")
        if self.decay_threshold >= self.blowup_threshold:
            raise DomainError("decay_threshold must be below blowup_threshold")
        if int(self.max_iter) < 1:
            raise DomainError("max_iter must be >= 1")

    def with_(self, **changes) -> "SolverOptions":
        return replace(self, **changes)


def _trapezoid_1d(n, h):
    w = np.full(n, h)
    w[0] = w[-1] = h / 2
    return w


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform tensor-product grid on an interval or a rectangle.

    Nodes include the boundary.  ``extents`` is a tuple of ``(lo, hi)`` pairs
    and ``n`` the node count per axis.
    """

    extents: tuple
    n: tuple
    h: tuple = field(init=False)

    def __post_init__(self):
        extents = tuple((float(lo), float(hi)) for lo, hi in self.extents)
        n = tuple(int(k) for k in self.n)
        if len(extents) not in (1, 2) or len(n) != len(extents):
            raise DomainError("grid must be 1D or 2D with one node count per axis")
        for (lo, hi), k in zip(extents, n):
            if not (np.isfinite(lo) and np.isfinite(hi) and hi > lo):
                raise DomainError(f"bad extent ({lo}, {hi})")
            if k < 3:
                raise DomainError(f"need at least 3 nodes per axis, got {k}")
        object.__setattr__(self, "extents", extents)
        object.__setattr__(self, "n", n)
        object.__setattr__(
            self, "h", tuple((hi - lo) / (k - 1) for (lo, hi), k in zip(extents, n))
        )

    @classmethod
    def interval(cls, n, lo=0.0, hi=1.0):
        return cls(((lo, hi),), (n,))

    @classmethod
    def rectangle(cls, nx, ny=None, x=(0.0, 1.0), y=(0.0, 1.0)):
        return cls((tuple(x), tuple(y)), (nx, nx if ny is None else ny))

    @property
    def dim(self):
        return len(self.n)

    @property
    def shape(self):
        return self.n

    @property
    def size(self):
        return int(np.prod(self.n))

    def same_as(self, other) -> bool:
        return isinstance(other, Grid) and self.extents == other.extents and self.n == other.n

    def __eq__(self, other):
        return self.same_as(other)

    def __hash__(self):
        return hash((self.extents, self.n))

    def __repr__(self):
        return f"Grid(extents={self.extents}, n={self.n})"

    def refined(self):
        """Grid with n -> 2n - 1 per axis (every old node is kept)."""
        return Grid(self.extents, tuple(2 * k - 1 for k in self.n))

    @cached_property
    def axes(self):
        return tuple(np.linspace(lo, hi, k) for (lo, hi), k in zip(self.extents, self.n))

    def coords(self):
        """Coordinate arrays, one flat vector per axis."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return tuple(m.ravel() for m in mesh)

    def sample(self, func):
        """Evaluate ``func(*coords)`` at every node."""
        values = np.asarray(func(*self.coords()), dtype=float)
        return np.broadcast_to(values, (self.size,)).copy()

    @cached_property
    def interior_weights(self):
        ws = [_trapezoid_1d(k, h) for k, h in zip(self.n, self.h)]
        w = ws[0]
        for other in ws[1:]:
            w = np.outer(w, other).ravel()
        return w

    @cached_property
    def boundary_mask(self):
        masks = []
        for k in self.n:
            m = np.zeros(k, dtype=bool)
            m[0] = m[-1] = True
            masks.append(m)
        if self.dim == 1:
            return masks[0]
        return (masks[0][:, None] | masks[1][None, :]).ravel()

    @cached_property
    def boundary_coeff(self):
        """Ghost-node weight of the boundary flux term in each discrete row.

        A node on the x-boundary gets ``2/hx``, on the y-boundary ``2/hy``;
        corners get both.  Interior nodes get zero.
        """
        parts = []
        for k, h in zip(self.n, self.h):
            c = np.zeros(k)
            c[0] = c[-1] = 2.0 / h
            parts.append(c)
        if self.dim == 1:
            return parts[0]
        return (parts[0][:, None] + parts[1][None, :]).ravel()

    @cached_property
    def boundary_weights(self):
        """Quadrature weights for the boundary integral (zero off the boundary)."""
        return self.interior_weights * self.boundary_coeff

    @cached_property
    def measure(self):
        return float(np.prod([hi - lo for lo, hi in self.extents]))

    @cached_property
    def boundary_measure(self):
        if self.dim == 1:
            return 2.0
        (x0, x1), (y0, y1) = self.extents
        return 2.0 * ((x1 - x0) + (y1 - y0))

    @cached_property
    def neumann_laplacian(self):
        """Sparse ``-Delta_h`` with mirror ghost nodes (homogeneous Neumann closure).

        Robin and power-law closures add ``boundary_coeff * flux(u)`` on top.
        """
        mats = []
        for k, h in zip(self.n, self.h):
            main = np.full(k, 2.0)
            upper = np.full(k - 1, -1.0)
            lower = np.full(k - 1, -1.0)
            upper[0] = -2.0
            lower[-1] = -2.0
            mats.append(sp.diags([lower, main, upper], [-1, 0, 1]) / h**2)
        if self.dim == 1:
            return sp.csr_matrix(mats[0])
        ix = sp.identity(self.n[0])
        iy = sp.identity(self.n[1])
        return sp.csr_matrix(sp.kron(mats[0], iy) + sp.kron(ix, mats[1]))

    def apply_laplacian(self, u):
        """``neumann_laplacian @ u`` evaluated through neighbour differences.

        Differences of nearby values are exact in floating point, so this
        avoids the ``eps * |u| / h**2`` cancellation floor of the matrix
        product and is what residuals should use.
        """
        u = np.asarray(u, dtype=float).reshape(self.shape)
        out = np.zeros(self.shape)
        for axis, h in enumerate(self.h):
            d = np.diff(u, axis=axis)
            flux = np.zeros(self.shape)
            lead = [slice(None)] * self.dim
            trail = [slice(None)] * self.dim
            lead[axis] = slice(0, -1)
            trail[axis] = slice(1, None)
            flux[tuple(lead)] -= d
            flux[tuple(trail)] += d
            # mirror ghost nodes double the one-sided difference at both ends
            first = [slice(None)] * self.dim
            last = [slice(None)] * self.dim
            first[axis] = 0
            last[axis] = -1
            flux[tuple(first)] *= 2.0
            flux[tuple(last)] *= 2.0
            out += flux / h**2
        return out.ravel()

    def robin_laplacian(self, alpha):
        """``-Delta_h`` with the closure ``d_nu u + alpha u = 0``."""
        return sp.csr_matrix(self.neumann_laplacian + sp.diags(alpha * self.boundary_coeff))

    def check_field(self, f, name="field"):
        f = np.asarray(f, dtype=float)
        if f.shape != (self.size,):
            raise GridMismatchError(f"{name} has shape {f.shape}, grid needs ({self.size},)")
        if not np.all(np.isfinite(f)):
            raise DomainError(f"{name} contains non-finite values")
        return f


@dataclass(frozen=True, eq=False)
class StatePair:
    """The coupled pair (u1, u2) at time ``t``."""

    grid: Grid
    u1: np.ndarray
    u2: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        u1 = np.asarray(self.u1, dtype=float)
        u2 = np.asarray(self.u2, dtype=float)
        if u1.shape != (self.grid.size,) or u2.shape != (self.grid.size,):
            raise GridMismatchError("u1 and u2 must both live on the state's grid")
        if self.t < 0:
            raise DomainError(f"time must be >= 0, got {self.t}")
        object.__setattr__(self, "u1", u1)
        object.__setattr__(self, "u2", u2)
        object.__setattr__(self, "t", float(self.t))

    @classmethod
    def zeros(cls, grid, t=0.0):
        return cls(grid, np.zeros(grid.size), np.zeros(grid.size), t)

    def scaled(self, l1, l2=None):
        l2 = l1 if l2 is None else l2
        return StatePair(self.grid, l1 * self.u1, l2 * self.u2, self.t)

    def at(self, t):
        return StatePair(self.grid, self.u1, self.u2, t)

    def linf(self):
        return float(np.max(np.abs(self.u1))) + float(np.max(np.abs(self.u2)))

    def is_finite(self):
        return bool(np.all(np.isfinite(self.u1)) and np.all(np.isfinite(self.u2)))


def integrate_interior(grid: Grid, f) -> float:
    """Trapezoidal approximation of the integral of ``f`` over the domain."""
    f = grid.check_field(f)
    return float(grid.interior_weights @ f)


def integrate_boundary(grid: Grid, f) -> float:
    f = grid.check_field(f)
    return float(grid.boundary_weights @ f)


def linf_norm(grid: Grid, f) -> float:
    f = grid.check_field(f)
    return float(np.max(np.abs(f)))


def l2_norm(grid: Grid, f) -> float:
    f = grid.check_field(f)
    return float(np.sqrt(grid.interior_weights @ (f * f)))


def gradient(grid: Grid, f):
    """Centered differences inside, first-order one-sided at the boundary."""
    f = grid.check_field(f).reshape(grid.shape)
    if grid.dim == 1:
        return (np.gradient(f, grid.h[0], edge_order=1),)
    gx, gy = np.gradient(f, *grid.h, edge_order=1)
    return gx.ravel(), gy.ravel()


def h1_seminorm(grid: Grid, f) -> float:
    sq = sum(g * g for g in gradient(grid, f))
    return float(np.sqrt(grid.interior_weights @ sq))
