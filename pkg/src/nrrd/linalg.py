"""Linear solves for the discrete operators.

Every matrix handled here is ``-Delta_h`` (Neumann closure) plus a diagonal, so
``W @ A`` is symmetric with the trapezoid weights ``W``.  1D systems are
tridiagonal and go to a banded LU.  2D systems up to ``DIRECT_LIMIT`` nodes
use a sparse LU; larger ones use Jacobi-preconditioned CG on the symmetrised
system, with the sparse LU as fallback when CG stalls short of the tolerance.
"""
from __future__ import annotations

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .core import SolvabilityError

CG_RTOL = 1e-12
DIRECT_LIMIT = 40_000


def _tridiagonal_bands(A):
    A = sp.dia_matrix(A)
    n = A.shape[0]
    ab = np.zeros((3, n))
    for offset, row in zip(A.offsets, A.data):
        if offset == 1:
            ab[0, 1:] = row[1:]
        elif offset == 0:
            ab[1, :] = row
        elif offset == -1:
            ab[2, :-1] = row[:-1]
        elif np.any(row):
            raise ValueError("matrix is not tridiagonal")
    return ab


def solve(grid, A, rhs):
    """Solve ``A x = rhs`` for an operator assembled on ``grid``."""
    rhs = np.asarray(rhs, dtype=float)
    if grid.dim == 1:
        ab = _tridiagonal_bands(A)
        try:
            x = sla.solve_banded((1, 1), ab, rhs, check_finite=False)
        except sla.LinAlgError as exc:
            raise SolvabilityError(f"singular system: {exc}") from exc
        if not np.all(np.isfinite(x)):
            raise SolvabilityError("singular system")
        return x
    if grid.size <= DIRECT_LIMIT:
        return _solve_direct(A, rhs)
    return _solve_symmetrised(grid, sp.csr_matrix(A), rhs)


def _solve_direct(A, rhs):
    try:
        x = spla.splu(sp.csc_matrix(A)).solve(rhs)
    except RuntimeError as exc:
        raise SolvabilityError(f"singular system: {exc}") from exc
    if not np.all(np.isfinite(x)):
        raise SolvabilityError("singular system")
    return x


def _solve_symmetrised(grid, A, rhs):
    w = grid.interior_weights
    S = sp.csr_matrix(sp.diags(w) @ A)
    b = w * rhs
    if not np.any(b):
        return np.zeros_like(b)
    d = S.diagonal()
    if np.any(d <= 0):
        raise SolvabilityError("operator diagonal is not positive")
    precond = sp.diags(1.0 / d)
    x, info = spla.cg(S, b, rtol=CG_RTOL, atol=0.0, M=precond, maxiter=20 * grid.size)
    if info == 0 and np.linalg.norm(S @ x - b) <= 10 * CG_RTOL * np.linalg.norm(b):
        return x
    return _solve_direct(A, rhs)


def factorize(grid, A):
    """Return a callable that solves with ``A`` repeatedly (used by inverse iteration)."""
    if grid.dim == 1:
        ab = _tridiagonal_bands(A)
        return lambda r: sla.solve_banded((1, 1), ab, r, check_finite=False)
    lu = spla.splu(sp.csc_matrix(A))
    return lu.solve
