"""First eigenpair of the Robin Laplacian ``-Delta phi = lambda phi``, ``d_nu phi + alpha phi = 0``."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import linalg
from .core import ConvergenceError, DomainError, Grid, integrate_interior, l2_norm

NORMALIZATIONS = ("L2_unit", "L1_unit")


@dataclass(frozen=True, eq=False)
class EigenPair:
    grid: Grid
    alpha: float
    lambda1: float
    phi1: np.ndarray
    normalization: str
    iterations: int = 0

    def renormalized(self, normalization):
        return EigenPair(
            self.grid, self.alpha, self.lambda1,
            _normalize(self.grid, self.phi1, normalization), normalization, self.iterations,
        )


def _normalize(grid, phi, normalization):
    if normalization not in NORMALIZATIONS:
        raise DomainError(f"normalization must be one of {NORMALIZATIONS}, got {normalization!r}")
    phi = phi / l2_norm(grid, phi)
    if normalization == "L1_unit":
        phi = phi / integrate_interior(grid, phi)
    return phi


def principal_eigenpair(grid, A, start=None, tol=1e-12, max_iter=10_000):
    """Smallest eigenvalue of ``A = -Delta_h + diag(d)`` and its positive eigenvector.

    Shifted inverse power iteration; the shift sits below ``min(d)``, which
    bounds the spectrum from below because the Neumann part is nonnegative
    in the weighted inner product.
    """
    A = sp.csr_matrix(A)
    w = grid.interior_weights
    shift = float(np.min(A.diagonal() - grid.neumann_laplacian.diagonal())) - 1.0
    solve = linalg.factorize(grid, A - shift * sp.identity(grid.size))

    x = np.ones(grid.size) if start is None else np.array(start, dtype=float)
    if np.any(x <= 0):
        raise DomainError("start vector must be strictly positive")
    x /= np.sqrt(w @ (x * x))
    lam = float(x @ (w * (A @ x)))
    for it in range(1, max_iter + 1):
        y = solve(x)
        y /= np.sqrt(w @ (y * y))
        lam_new = float(y @ (w * (A @ y)))
        resid = np.max(np.abs(A @ y - lam_new * y)) / np.max(np.abs(y))
        step = np.max(np.abs(y - x))
        x, lam = y, lam_new
        if resid <= tol * (1.0 + abs(lam)) or (step <= 1e-15 and it > 2):
            return lam, x, it
    raise ConvergenceError(f"inverse iteration did not converge in {max_iter} steps")


def robin_eigenpair(grid: Grid, alpha: float, normalization="L2_unit", start=None,
                    max_iter=10_000) -> EigenPair:
    """Ground state of the discrete Robin Laplacian (ghost-node closure)."""
    if not alpha >= 0:
        raise DomainError(f"alpha must be >= 0, got {alpha}")
    if alpha == 0:
        phi = np.ones(grid.size)
        return EigenPair(grid, 0.0, 0.0, _normalize(grid, phi, normalization), normalization)
    lam, phi, its = principal_eigenpair(grid, grid.robin_laplacian(alpha), start, max_iter=max_iter)
    return EigenPair(grid, float(alpha), lam, _normalize(grid, phi, normalization), normalization, its)


def hopf_floor(pair: EigenPair) -> float:
    """Smallest nodal value of the eigenfunction, boundary included."""
    return float(np.min(pair.phi1))
