"""Positive stationary solutions and the ordered-uniqueness check.

The fixed-point map ``Psi`` defines what a steady state is:
``u`` is stationary iff ``Psi(u) = u``.  Relaxed Picard on ``Psi`` is tried
first, but the positive fixed point is repelling for every relaxation (the
linearisation is a positive operator with spectral radius above one), so
the solver falls back to an amplitude search: writing ``u1 = s * psi`` with
``psi`` the positive ground state of ``-Delta + b - u2``, a steady state is a
root of the ground-state eigenvalue as a function of ``s``.  Either route
ends with Newton on the coupled discrete system.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import brentq

from .core import (
    ConvergenceError,
    DivergenceError,
    DomainError,
    Grid,
    Params,
    SolverOptions,
    StatePair,
    l2_norm,
)
from .elliptic import _power, _power_derivative, newton_nonlinear_bc, psi_map
from .spectral import principal_eigenpair, robin_eigenpair

log = logging.getLogger(__name__)

PICARD_GATE = 1e-6
PICARD_CAP = 200
ZERO_FRACTION = 1e-3
POSITIVE_FLOOR = 1e-10
ROUNDOFF_SAFETY = 8.0
METHODS = ("picard", "picard_then_newton", "amplitude_then_newton", "newton")
CLASSIFICATIONS = ("positive", "trivial_zero", "failed")


@dataclass
class SteadyResult:
    state: StatePair
    residual: float
    iterations: int
    method: str
    classification: str
    history: list = field(default_factory=list, repr=False)

    @property
    def is_positive(self):
        return self.classification == "positive"


def _split(grid, x):
    return x[: grid.size], x[grid.size:]


def stationary_operator(grid, params, u1, u2):
    """Nodewise residual rows of the discrete stationary system."""
    F1 = grid.apply_laplacian(u1) + (params.alpha * grid.boundary_coeff + params.b - u2) * u1
    F2 = (
        grid.apply_laplacian(u2)
        + params.beta * grid.boundary_coeff * _power(u2, params.gamma)
        - params.a * u1
    )
    return F1, F2


def steady_residual(grid: Grid, params: Params, state: StatePair) -> float:
    """Max of the interior PDE residuals and the boundary-condition residuals.

    Boundary rows are divided by their ghost coefficient so they read as
    ``d_nu u + flux(u)`` (plus a half-cell source term), i.e. in flux units.
    """
    F1, F2 = stationary_operator(grid, params, state.u1, state.u2)
    inner = ~grid.boundary_mask
    kb = grid.boundary_coeff[grid.boundary_mask]
    parts = [
        np.abs(F1[inner]), np.abs(F2[inner]),
        np.abs(F1[grid.boundary_mask] / kb), np.abs(F2[grid.boundary_mask] / kb),
    ]
    return float(max(np.max(p) if p.size else 0.0 for p in parts))


def roundoff_floor(grid: Grid, state: StatePair) -> float:
    """Smallest residual a representable state can reach.

    A one-ulp change of ``u`` moves ``-Delta_h u`` by about
    ``4 eps |u| / h**2`` per axis, so residuals below this are noise.
    """
    size = max(np.max(np.abs(state.u1)), np.max(np.abs(state.u2)))
    return float(ROUNDOFF_SAFETY * np.finfo(float).eps * size * sum(4.0 / h**2 for h in grid.h))


def acceptance_tolerance(grid, state, options) -> float:
    return max(options.tol_residual, roundoff_floor(grid, state))


def _jacobian(grid, params, u1, u2):
    n = grid.size
    A_alpha = grid.robin_laplacian(params.alpha)
    A0 = grid.neumann_laplacian
    dflux = params.beta * grid.boundary_coeff * _power_derivative(u2, params.gamma)
    return sp.bmat(
        [
            [A_alpha + sp.diags(params.b - u2), -sp.diags(u1)],
            [-params.a * sp.identity(n), A0 + sp.diags(dflux)],
        ],
        format="csc",
    )


def newton_steady(grid, params, state, options=None, max_steps=50):
    """Newton on the coupled stationary system from ``state``.

    Returns ``(state, residual, steps)``.  Stops at ``tol_residual`` or when
    the update drops to roundoff.
    """
    options = options or SolverOptions()
    u1, u2 = state.u1.copy(), state.u2.copy()
    res = steady_residual(grid, params, StatePair(grid, u1, u2))
    for k in range(1, max_steps + 1):
        if res <= acceptance_tolerance(grid, StatePair(grid, u1, u2), options):
            return StatePair(grid, u1, u2), res, k - 1
        F1, F2 = stationary_operator(grid, params, u1, u2)
        J = _jacobian(grid, params, u1, u2)
        delta = spla.spsolve(J, -np.concatenate([F1, F2]))
        d1, d2 = _split(grid, delta)
        if not np.all(np.isfinite(delta)):
            raise ConvergenceError("singular Jacobian in steady Newton")
        step = 1.0
        merit = np.sum(F1**2) + np.sum(F2**2)
        for _ in range(30):
            t1, t2 = u1 + step * d1, u2 + step * d2
            G1, G2 = stationary_operator(grid, params, t1, np.maximum(t2, 0.0))
            if np.sum(G1**2) + np.sum(G2**2) < merit or step < 1e-8:
                break
            step *= 0.5
        scale = 1.0 + max(np.max(np.abs(u1)), np.max(np.abs(u2)))
        tiny = step * max(np.max(np.abs(d1)), np.max(np.abs(d2))) <= 1e-14 * scale
        u1, u2 = t1, np.maximum(t2, 0.0) if params.gamma > 2 else t2
        res = steady_residual(grid, params, StatePair(grid, u1, u2))
        if tiny:
            return StatePair(grid, u1, u2), res, k
        if max(np.max(np.abs(u1)), np.max(np.abs(u2))) > options.blowup_threshold:
            raise DivergenceError("steady Newton diverged")
    return StatePair(grid, u1, u2), res, max_steps


def _psi_residual(u, v):
    diff = max(np.max(np.abs(v.u1 - u.u1)), np.max(np.abs(v.u2 - u.u2)))
    return diff / (1.0 + max(np.max(np.abs(u.u1)), np.max(np.abs(u.u2))))


def picard(grid, params, u0, options=None, scale=1.0, max_iter=PICARD_CAP, gate=PICARD_GATE):
    """Relaxed Picard ``u <- (1-w) u + w * scale * Psi(u)``.

    ``omega`` halves when the residual grows and returns to its initial value
    after three consecutive decreases.  Returns ``(state, status, history)``
    where status is one of ``converged``, ``zero``, ``diverged``,
    ``stagnated`` or ``capped``.
    """
    options = options or SolverOptions()
    omega0 = options.relax_omega
    omega = omega0
    u = u0
    size0 = max(np.max(np.abs(u0.u1)), np.max(np.abs(u0.u2)))
    history = []
    decreases = 0
    for _ in range(max_iter):
        v = psi_map(grid, params, u, options)
        v = v.scaled(scale)
        r = _psi_residual(u, v)
        if history and r > history[-1]:
            omega *= 0.5
            decreases = 0
        else:
            decreases += 1
            if decreases >= 3:
                omega = omega0
        history.append(r)
        size = max(np.max(np.abs(u.u1)), np.max(np.abs(u.u2)))
        if size < options.decay_threshold or size < ZERO_FRACTION * size0:
            return u, "zero", history
        if r <= gate:
            return u, "converged", history
        u = StatePair(grid, (1 - omega) * u.u1 + omega * v.u1, (1 - omega) * u.u2 + omega * v.u2, u.t)
        size = max(np.max(np.abs(u.u1)), np.max(np.abs(u.u2)))
        if not np.isfinite(size) or size > options.blowup_threshold:
            return u, "diverged", history
        if omega < 1e-3:
            return u, "stagnated", history
    return u, "capped", history


def _amplitude_profile(grid, params, s, psi, options, tol=1e-13, max_inner=500):
    """Ground-state eigenvalue of ``-Delta + b - u2(s)`` with ``u1 = s * psi`` made consistent."""
    A = grid.robin_laplacian(params.alpha) + params.b * sp.identity(grid.size)
    u2 = None
    lam = None
    for _ in range(max_inner):
        u2, _ = newton_nonlinear_bc(grid, params.beta, params.gamma, params.a * s * psi,
                                    0.0, u2, options)
        lam, p, _ = principal_eigenpair(grid, A - sp.diags(u2), start=psi)
        p = p / l2_norm(grid, p)
        change = np.max(np.abs(p - psi))
        psi = p
        if change < tol:
            return lam, psi, u2
    raise ConvergenceError(f"amplitude profile did not settle at s={s}")


def amplitude_search(grid, params, options=None, s_start=1.0):
    """Find ``s`` with vanishing ground-state eigenvalue; returns a starting state for Newton."""
    options = options or SolverOptions()
    psi0 = robin_eigenpair(grid, params.alpha).phi1
    cache = {}

    def mu(s):
        if s not in cache:
            cache[s] = _amplitude_profile(grid, params, s, psi0, options)
        return cache[s][0]

    lo, hi = 0.0, max(s_start, 1e-3)
    while mu(hi) > 0:
        lo, hi = hi, 2 * hi
        if hi > options.blowup_threshold:
            raise DivergenceError("no sign change of the ground-state eigenvalue; no positive steady state found")
    s = brentq(mu, lo, hi, xtol=1e-14 * hi, rtol=4 * np.finfo(float).eps, maxiter=200)
    lam, psi, u2 = _amplitude_profile(grid, params, s, psi0, options)
    return StatePair(grid, s * psi, u2), s


def _classify(grid, state, residual, options):
    size = max(np.max(np.abs(state.u1)), np.max(np.abs(state.u2)))
    if size < options.decay_threshold:
        return "trivial_zero"
    floor = POSITIVE_FLOOR * size
    if residual <= acceptance_tolerance(grid, state, options) and state.u1.min() > floor and state.u2.min() > floor:
        return "positive"
    return "failed"


def refine_steady(grid, params, initial: StatePair, options=None) -> SteadyResult:
    """Newton on the stationary system from a user-chosen starting state."""
    options = options or SolverOptions()
    state, res, its = newton_steady(grid, params, initial, options)
    return SteadyResult(state, res, its, "newton", _classify(grid, state, res, options))


def find_positive_steady(grid: Grid, params: Params, seed_scale: float = 1.0,
                         options=None) -> SteadyResult:
    """Positive solution of the stationary system.

    Seeds ``u1 = seed_scale * phi1`` (L2-normalised Robin ground state) and
    ``u2`` from one application of ``Psi``, runs relaxed Picard up to the
    ``1e-6`` gate, and falls back to the amplitude search when Picard leaves
    the neighbourhood of the fixed point.  Newton finishes both routes.
    """
    options = options or SolverOptions()
    if seed_scale < 0:
        raise DomainError("seed_scale must be >= 0")
    if not params.condition_A_or_B:
        warnings.warn(
            "neither gamma > 2 nor (gamma = 2, alpha <= 2 beta): no positive steady state is guaranteed",
            RuntimeWarning, stacklevel=2,
        )
    if seed_scale == 0:
        zero = StatePair.zeros(grid)
        return SteadyResult(zero, 0.0, 0, "picard", "trivial_zero")

    phi = robin_eigenpair(grid, params.alpha, "L2_unit").phi1
    u1 = seed_scale * phi
    u2 = psi_map(grid, params, StatePair(grid, u1, np.zeros(grid.size)), options).u2
    seed = StatePair(grid, u1, u2)

    state, status, history = picard(grid, params, seed, options,
                                    max_iter=min(PICARD_CAP, int(options.max_iter)))
    iterations = len(history)
    if status == "converged":
        method = "picard_then_newton"
    else:
        log.info("Picard stopped (%s) after %d iterations; switching to amplitude search", status, iterations)
        try:
            state, _ = amplitude_search(grid, params, options, s_start=seed_scale)
        except ConvergenceError:
            if status == "diverged":
                raise DivergenceError("Picard diverged and the amplitude search found no root")
            raise
        method = "amplitude_then_newton"
    state, res, its = newton_steady(grid, params, state, options)
    result = SteadyResult(state, res, iterations + its, method,
                          _classify(grid, state, res, options), history)
    if result.classification == "failed" and res > acceptance_tolerance(grid, state, options):
        raise ConvergenceError(f"steady solve stalled at residual {res:.3e}")
    return result


@dataclass
class UniquenessReport:
    status: str
    deviation: float
    reason: str = ""

    @property
    def passed(self):
        return self.status == "pass"


def ordered_uniqueness_check(grid, params, s1: StatePair, s2: StatePair, tol=1e-6,
                             tol_residual=None) -> UniquenessReport:
    """Two ordered positive steady states must coincide.

    Ordering in either component (either direction, within ``tol``) makes the
    check applicable; states that are not positive steady states, or are not
    ordered, give ``not_applicable``.
    """
    options = SolverOptions() if tol_residual is None else SolverOptions(tol_residual=tol_residual)
    for name, s in (("s1", s1), ("s2", s2)):
        if steady_residual(grid, params, s) > acceptance_tolerance(grid, s, options):
            return UniquenessReport("not_applicable", float("nan"), f"{name} is not a steady state")
        if s.u1.min() <= 0 or s.u2.min() <= 0:
            return UniquenessReport("not_applicable", float("nan"), f"{name} is not positive")
    ordered = any(
        np.all(x <= y + tol) or np.all(y <= x + tol)
        for x, y in ((s1.u1, s2.u1), (s1.u2, s2.u2))
    )
    if not ordered:
        return UniquenessReport("not_applicable", float("nan"), "states are not ordered")
    dev = float(max(np.max(np.abs(s1.u1 - s2.u1)), np.max(np.abs(s1.u2 - s2.u2))))
    return UniquenessReport("pass" if dev <= tol else "fail", dev)
