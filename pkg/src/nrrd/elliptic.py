"""The two elliptic solves behind the fixed-point map ``Psi``.

``v1`` solves ``-Delta v1 + b v1 = u1 u2`` with a Robin closure and ``v2``
solves ``-Delta v2 = a u1`` with the radiation law
``d_nu v2 + beta |v2|^(gamma-2) v2 = 0``.  Boundary conditions enter through
ghost-node elimination, which turns each closure into
``boundary_coeff * flux(v)`` added to the boundary rows.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import linalg
from .core import (
    ConvergenceError,
    DomainError,
    Grid,
    Params,
    SolvabilityError,
    SolverOptions,
    StatePair,
)

LEVENBERG_MU = 1e-8
NEWTON_CAP = 100


def solve_linear_robin(grid: Grid, c: float, alpha: float, f) -> np.ndarray:
    """Solve ``(-Delta_h + c) v = f`` with ``d_nu v + alpha v = 0``.

    With ``c = alpha = 0`` the problem is the pure Neumann one; it is solved
    up to constants (zero-mean representative) when ``f`` has zero mean and
    rejected otherwise.
    """
    f = grid.check_field(f, "f")
    if c < 0 or alpha < 0:
        raise DomainError("need c >= 0 and alpha >= 0")
    A = grid.robin_laplacian(alpha)
    if c == 0 and alpha == 0:
        mean = grid.interior_weights @ f
        if abs(mean) > 1e-12 * (grid.interior_weights @ np.abs(f)) and abs(mean) > 0:
            raise SolvabilityError("pure Neumann problem needs a zero-mean right-hand side")
        A = sp.lil_matrix(A)
        A[0, :] = 0.0
        A[0, 0] = 1.0
        rhs = f.copy()
        rhs[0] = 0.0
        v = linalg.solve(grid, sp.csr_matrix(A), rhs)
        return v - (grid.interior_weights @ v) / grid.measure
    if c > 0:
        A = A + c * sp.identity(grid.size)
    return linalg.solve(grid, A, f)


def _power(v, gamma):
    """``|v|^(gamma-2) v`` on nonnegative iterates (negative parts clipped to 0)."""
    if gamma == 2:
        return v
    return np.maximum(v, 0.0) ** (gamma - 1)


def _power_derivative(v, gamma):
    if gamma == 2:
        return np.ones_like(v)
    return (gamma - 1) * np.maximum(v, 0.0) ** (gamma - 2)


def nonlinear_bc_residual(grid, v, beta, gamma, f, c=0.0):
    """Nodewise residual of ``(-Delta_h + c) v = f`` with the radiation closure."""
    return (
        grid.apply_laplacian(v) + c * v + beta * grid.boundary_coeff * _power(v, gamma) - f
    )


def boundary_flux_residual(grid, v, beta, gamma, f, c=0.0):
    """Discrete ``d_nu v + beta v^(gamma-1)`` at boundary nodes.

    The boundary row divided by its ghost coefficient is the one-sided outward
    flux plus the half-cell source correction, so this is the boundary
    relation as the discretisation sees it.
    """
    mask = grid.boundary_mask
    r = nonlinear_bc_residual(grid, v, beta, gamma, f, c)
    return r[mask] / grid.boundary_coeff[mask]


@dataclass
class NewtonReport:
    iterations: int = 0
    residuals: list = field(default_factory=list)
    converged: bool = False


def _operator_scale(grid):
    return sum(4.0 / h**2 for h in grid.h)


def newton_nonlinear_bc(grid, beta, gamma, f, c=0.0, guess=None, options=None):
    """Damped Newton for the radiation-law problem; returns ``(v, NewtonReport)``."""
    options = options or SolverOptions()
    f = grid.check_field(f, "f")
    if beta <= 0 or gamma < 2 or c < 0:
        raise DomainError("need beta > 0, gamma >= 2 and c >= 0")
    report = NewtonReport()
    if not np.any(f) and (guess is None or not np.any(guess)):
        report.converged = True
        report.residuals.append(0.0)
        return np.zeros(grid.size), report

    A0 = grid.neumann_laplacian + c * sp.identity(grid.size)
    kappa = grid.boundary_coeff
    if gamma == 2:
        v = linalg.solve(grid, A0 + sp.diags(beta * kappa), f)
        report.iterations = 1
        report.residuals.append(float(np.max(np.abs(nonlinear_bc_residual(grid, v, beta, gamma, f, c)))))
        report.converged = True
        return v, report

    if guess is None:
        v = linalg.solve(grid, A0 + sp.diags(beta * kappa), f)
    else:
        v = grid.check_field(guess, "guess").copy()
    v = np.maximum(v, 0.0)
    w = grid.interior_weights
    scale = _operator_scale(grid)
    f_norm = float(np.max(np.abs(f)))
    max_newton = min(int(options.max_iter), NEWTON_CAP)

    def residual(x):
        return nonlinear_bc_residual(grid, x, beta, gamma, f, c)

    r = residual(v)
    for it in range(1, max_newton + 1):
        rnorm = float(np.max(np.abs(r)))
        report.residuals.append(rnorm)
        if rnorm <= options.newton_tol * (1.0 + f_norm + scale * np.max(np.abs(v))):
            report.iterations = it - 1
            report.converged = True
            return v, report
        damping = np.where(kappa > 0, LEVENBERG_MU, 0.0)
        J = A0 + sp.diags(beta * kappa * _power_derivative(v, gamma) + damping)
        delta = linalg.solve(grid, J, -r)
        merit = float(w @ (r * r))
        step = 1.0
        for _ in range(40):
            trial = np.maximum(v + step * delta, 0.0)
            r_trial = residual(trial)
            if w @ (r_trial * r_trial) < merit or step < 1e-10:
                break
            step *= 0.5
        small_step = np.max(np.abs(trial - v)) <= options.newton_tol * (1.0 + np.max(np.abs(trial)))
        v, r = trial, r_trial
        if small_step:
            report.residuals.append(float(np.max(np.abs(r))))
            report.iterations = it
            report.converged = True
            return v, report
    raise ConvergenceError(f"Newton for the radiation boundary condition failed after {max_newton} steps")


def solve_poisson_nonlinear_bc(grid: Grid, beta: float, gamma: float, f, options=None,
                               guess=None) -> np.ndarray:
    """Nonnegative solution of ``-Delta v = f`` with ``d_nu v + beta |v|^(gamma-2) v = 0``."""
    f = grid.check_field(f, "f")
    if np.any(f < 0):
        raise DomainError("source must be nonnegative")
    v, _ = newton_nonlinear_bc(grid, beta, gamma, f, 0.0, guess, options)
    return v


def psi_map(grid: Grid, params: Params, u: StatePair, options=None, guess=None) -> StatePair:
    """One application of the fixed-point map: ``(u1, u2) -> (v1, v2)``."""
    if not u.grid.same_as(grid):
        raise DomainError("state lives on a different grid")
    if np.any(u.u1 < 0) or np.any(u.u2 < 0):
        raise DomainError("psi_map needs a nonnegative state")
    v1 = solve_linear_robin(grid, params.b, params.alpha, u.u1 * u.u2)
    v2, _ = newton_nonlinear_bc(
        grid, params.beta, params.gamma, params.a * u.u1, 0.0,
        None if guess is None else guess.u2, options,
    )
    return StatePair(grid, np.maximum(v1, 0.0), v2, u.t)
