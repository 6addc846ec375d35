"""Weighted functionals of the solution and the scalar bracket behind the blow-up argument.

The weight is the positive Robin ground state ``phi1``.  With the trapezoid
quadrature used here, multiplying the semi-discrete system by ``phi1`` gives
two exact balance laws,

    d/dt m1 + (b + lambda1) m1 = m12
    d/dt m2 + lambda1 m2 + (beta - alpha) b2 = a m1        (gamma = 2)

with ``m_i = int u_i phi1``, ``m12 = int u1 u2 phi1`` and ``b2`` the boundary
integral of ``u2 phi1``.  The residual functions below measure how well a
recorded time series satisfies them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .core import DomainError, Grid, integrate_boundary, integrate_interior

NEG_INF = float("-inf")
GOLDEN_TOL = 1e-10
SCAN_POINTS = 4001
LOG_S_CAP = math.log(1e150)


def weighted_mass(grid: Grid, f, phi1) -> float:
    """``int f phi1 dx`` by the trapezoid rule."""
    return integrate_interior(grid, np.asarray(f, dtype=float) * phi1)


def weighted_boundary(grid: Grid, f, p, phi1) -> float:
    """``int_{boundary} f^p phi1 dS``; ``f`` must be nonnegative on the boundary."""
    if p < 1:
        raise DomainError(f"p must be >= 1, got {p}")
    f = np.asarray(f, dtype=float)
    if np.any(f[grid.boundary_mask] < 0):
        raise DomainError("weighted_boundary needs f >= 0 on boundary nodes")
    return integrate_boundary(grid, f**p * phi1)


@dataclass(frozen=True)
class BracketParams:
    """Coefficients of ``g(s) = beta s^gamma - beta s0 s^(gamma-1) - (alpha/2) s^2 + alpha s0 s``.

    ``shift`` is ``s0 = b + lambda1``.
    """

    beta: float
    gamma: float
    alpha: float
    shift: float

    def __post_init__(self):
        if not (self.beta > 0 and self.gamma >= 2 and self.alpha >= 0 and self.shift > 0):
            raise DomainError("need beta > 0, gamma >= 2, alpha >= 0 and shift > 0")
        for name in ("beta", "gamma", "alpha", "shift"):
            if not math.isfinite(getattr(self, name)):
                raise DomainError(f"{name} must be finite")

    def g(self, s):
        s = np.asarray(s, dtype=float)
        with np.errstate(over="ignore", invalid="ignore"):
            val = (
                self.beta * s ** (self.gamma - 1) * (s - self.shift)
                - 0.5 * self.alpha * s * (s - 2 * self.shift)
            )
        return np.where(np.isnan(val), np.inf, val)

    def dg(self, s):
        b, gm, a, s0 = self.beta, self.gamma, self.alpha, self.shift
        with np.errstate(over="ignore", invalid="ignore"):
            return b * gm * s ** (gm - 1) - b * s0 * (gm - 1) * s ** (gm - 2) - a * s + a * s0


def _upper_end(bp):
    exponent = max(1.0, 1.0 / (bp.gamma - 2))
    log_s = max(0.0, exponent * math.log(2 * bp.shift)) if 2 * bp.shift > 1 else 0.0
    log_s = min(log_s, LOG_S_CAP)
    # grow until the leading term has clearly taken over
    while log_s < LOG_S_CAP and not bp.dg(math.exp(log_s)) > 0:
        log_s = min(log_s + math.log(2.0), LOG_S_CAP)
    return math.exp(log_s)


def bracket_infimum(bp: BracketParams) -> float:
    """``inf_{s >= 0} g(s)``; ``-inf`` exactly when ``gamma = 2`` and ``alpha > 2 beta``."""
    if bp.gamma == 2:
        quad = bp.beta - 0.5 * bp.alpha
        lin = bp.shift * (bp.alpha - bp.beta)
        if quad < 0:
            return NEG_INF
        if quad == 0:
            return 0.0 if lin >= 0 else NEG_INF
        return -lin * lin / (4 * quad) if lin < 0 else 0.0

    s_max = _upper_end(bp)
    s = np.unique(np.concatenate([
        np.linspace(0.0, min(1.0, s_max), SCAN_POINTS),
        np.geomspace(1e-8, s_max, SCAN_POINTS) if s_max > 1e-8 else np.zeros(0),
    ]))
    vals = bp.g(s)
    i = int(np.argmin(vals))
    best = float(vals[i])
    if 0 < i < len(s) - 1:
        x = optimize.golden(lambda x: float(bp.g(x)), brack=(s[i - 1], s[i], s[i + 1]),
                            tol=GOLDEN_TOL)
        best = min(best, float(bp.g(x)))
    return min(best, 0.0)


def _time_derivative(t, m):
    """Second-order three-point derivative at interior samples (any spacing)."""
    t = np.asarray(t, dtype=float)
    m = np.asarray(m, dtype=float)
    h1 = t[1:-1] - t[:-2]
    h2 = t[2:] - t[1:-1]
    return (h1**2 * m[2:] - h2**2 * m[:-2] + (h2**2 - h1**2) * m[1:-1]) / (h1 * h2 * (h1 + h2))


def _balance(series, params, lambda1, kind):
    if len(series.t) < 3:
        return 0.0
    t = np.asarray(series.t)
    m1 = np.asarray(series.mass_u1)
    m2 = np.asarray(series.mass_u2)
    if kind == "temperature":
        b2 = np.asarray(series.bnd_u2)
        r = _time_derivative(t, m2) + (lambda1 * m2 + (params.beta - params.alpha) * b2 - params.a * m1)[1:-1]
    else:
        m12 = np.asarray(series.mass_u1u2)
        r = _time_derivative(t, m1) + ((params.b + lambda1) * m1 - m12)[1:-1]
    return float(np.max(np.abs(r)))


def temperature_balance_residual(series, params, lambda1) -> float:
    """Worst defect of ``m2' + lambda1 m2 + (beta - alpha) b2 = a m1`` over interior samples.

    Only meaningful for the linear radiation law, so ``gamma`` must be 2.
    """
    if params.gamma != 2:
        raise DomainError("the temperature balance law needs gamma = 2")
    return _balance(series, params, lambda1, "temperature")


def neutron_balance_residual(series, params, lambda1) -> float:
    """Worst defect of ``m1' + (b + lambda1) m1 = m12`` over interior samples."""
    return _balance(series, params, lambda1, "neutron")
