"""Threshold experiments around a positive steady state, and parameter sweeps.

Data scaled below the steady state ``ubar`` should decay monotonically to
zero; data scaled above it (with ``gamma = 2`` and ``alpha <= 2 beta``) should
blow up, staying above the exponentially growing barrier
``(l1 e^{eps t} ubar1, l2 e^{eps t} ubar2)`` on the way.
"""
from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import DomainError, Grid, NRRDError, Params, SolverOptions, StateError, StatePair
from .evolve import RunOutcome, TimeSeries, evolve
from .spectral import robin_eigenpair
from .steady import SteadyResult, find_positive_steady

log = logging.getLogger(__name__)

MONOTONE_TOL = 1e-9
BOUND_TOL = 1e-9
SUBSOLUTION_RTOL = 1e-6
EXPONENT_SLACK = 1e-3
SUBSOLUTION_WINDOW = 0.9
TRANSIENT_FRACTION = 0.1
SWEEP_AXES = ("a", "b", "alpha", "beta", "gamma", "l1", "l2", "l")


@dataclass
class ThresholdReport:
    steady: SteadyResult
    l1: float
    l2: float
    outcome: RunOutcome
    series: TimeSeries
    epsilon: float | None = None
    subsolution_ok: bool | None = None
    monotone_decay_ok: bool | None = None
    bounded_ok: bool | None = None
    exponent_ok: bool | None = None
    y_monotone_ok: bool | None = None
    y_series: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def checks(self):
        names = ("subsolution_ok", "monotone_decay_ok", "bounded_ok", "exponent_ok", "y_monotone_ok")
        return {k: getattr(self, k) for k in names if getattr(self, k) is not None}

    @property
    def passed(self):
        return all(self.checks.values())


def choose_epsilon(steady: StatePair, l1, l2, a) -> float:
    """Growth rate of the lower barrier ``l e^{eps t} ubar``.

    Half the largest rate for which both barrier inequalities are strict at
    every node.
    """
    if not l2 > 1:
        raise DomainError(f"need l2 > 1, got {l2}")
    if not l1 > l2:
        raise DomainError(f"need l1 > l2, got l1={l1}, l2={l2}")
    u1, u2 = steady.u1, steady.u2
    if min(u1.min(), u2.min()) <= 0:
        raise DomainError("steady state must be strictly positive at every node")
    eps = 0.5 * min(a * (l1 - l2) * np.min(u1 / u2) / l2, (l2 - 1) * np.min(u2))
    assert np.all(a * (l2 - l1) * u1 + eps * l2 * u2 < 0)
    assert np.all(eps + (1 - l2) * u2 < 0)
    return float(eps)


def y_functional(series: TimeSeries, params: Params) -> np.ndarray:
    """``int u2 phi1`` plus, when ``beta > alpha``, ``(beta - alpha)`` times the
    time-accumulated boundary integral of ``u2 phi1`` (trapezoid in time)."""
    y = np.asarray(series.mass_u2, dtype=float)
    if params.beta > params.alpha:
        t = np.asarray(series.t)
        b2 = np.asarray(series.bnd_u2)
        acc = np.concatenate([[0.0], np.cumsum(0.5 * np.diff(t) * (b2[1:] + b2[:-1]))])
        y = y + (params.beta - params.alpha) * acc
    return y


def _steady_or_fail(grid, params, steady, options):
    if steady is None:
        try:
            steady = find_positive_steady(grid, params, options=options)
        except NRRDError as exc:
            raise StateError(f"no positive steady state available: {exc}") from exc
    if not steady.is_positive:
        raise StateError(f"steady state is {steady.classification}, not positive")
    if not steady.state.grid.same_as(grid):
        raise StateError("steady state lives on a different grid")
    return steady


def run_threshold_part1(grid: Grid, params: Params, l1, l2, options=None, *, steady=None,
                        T_end=500.0, sample_dt=None) -> ThresholdReport:
    """Evolve from ``(l1 ubar1, l2 ubar2)`` with ``0 < l1 < l2 <= 1``."""
    if not 0 < l1 < l2 <= 1:
        raise DomainError(f"need 0 < l1 < l2 <= 1, got l1={l1}, l2={l2}")
    options = options or SolverOptions()
    steady = _steady_or_fail(grid, params, steady, options)
    ubar = steady.state
    outcome, series = evolve(ubar.scaled(l1, l2), T_end, params, options,
                             sample_dt=sample_dt, keep_states=True)
    U1 = np.array([s.u1 for s in series.states])
    U2 = np.array([s.u2 for s in series.states])
    monotone = bool(np.all(np.diff(U1, axis=0) <= MONOTONE_TOL) and np.all(np.diff(U2, axis=0) <= MONOTONE_TOL))
    bounded = bool(np.all(U1 <= ubar.u1 + BOUND_TOL) and np.all(U2 <= ubar.u2 + BOUND_TOL))
    return ThresholdReport(steady, l1, l2, outcome, series, monotone_decay_ok=monotone,
                           bounded_ok=bounded, y_series=y_functional(series, params))


def run_threshold_part2(grid: Grid, params: Params, l1, l2, options=None, *, steady=None,
                        T_end=100.0, sample_dt=0.01) -> ThresholdReport:
    """Evolve from ``(l1 ubar1, l2 ubar2)`` with ``l1 > l2 > 1``, ``gamma = 2``, ``alpha <= 2 beta``."""
    if params.gamma != 2 or params.alpha > 2 * params.beta:
        raise DomainError("blow-up experiment needs gamma = 2 and alpha <= 2 beta")
    if not (l2 > 1 and l1 > l2):
        raise DomainError(f"need l1 > l2 > 1, got l1={l1}, l2={l2}")
    options = options or SolverOptions()
    steady = _steady_or_fail(grid, params, steady, options)
    ubar = steady.state
    eps = choose_epsilon(ubar, l1, l2, params.a)
    eigen = robin_eigenpair(grid, params.alpha, "L1_unit")
    outcome, series = evolve(ubar.scaled(l1, l2), T_end, params, options,
                             sample_dt=sample_dt, keep_states=True, eigen=eigen)
    horizon = SUBSOLUTION_WINDOW * (outcome.blowup_estimate if outcome.blowup_estimate is not None
                                    else outcome.t_final)
    sub_ok = True
    exp_ok = True
    base_mass = float(np.sum(grid.interior_weights * l2 * ubar.u2 * eigen.phi1))
    for s in series.states:
        if s.t > horizon:
            break
        grow = np.exp(eps * s.t)
        for u, lo in ((s.u1, l1 * grow * ubar.u1), (s.u2, l2 * grow * ubar.u2)):
            tol = SUBSOLUTION_RTOL * np.max(np.abs(u))
            if np.any(u < lo - tol):
                sub_ok = False
        mass = float(np.sum(grid.interior_weights * s.u2 * eigen.phi1))
        if np.log(mass) - np.log(base_mass) < eps * s.t - EXPONENT_SLACK:
            exp_ok = False
    y = y_functional(series, params)
    t = np.asarray(series.t)
    late = t >= TRANSIENT_FRACTION * t[-1]
    y_ok = bool(np.all(np.diff(y[late]) >= 0))
    return ThresholdReport(steady, l1, l2, outcome, series, epsilon=eps, subsolution_ok=sub_ok,
                           exponent_ok=exp_ok, y_monotone_ok=y_ok, y_series=y)


@dataclass(frozen=True)
class SweepRow:
    axis: str
    value: float
    l1: float
    l2: float
    kind: str | None
    t_final: float | None
    blowup_estimate: float | None
    peak_u1: float | None
    peak_u2: float | None
    experiment: str
    checks_ok: bool | None
    error: str = ""


def _row_setup(base_params, axis, value, l1, l2):
    if axis in ("l1", "l2"):
        return base_params, (value, l2) if axis == "l1" else (l1, value)
    if axis == "l":
        return base_params, (l1 * value, l2 * value)
    return base_params.with_(**{axis: value}), (l1, l2)


def _sweep_row(job):
    grid, base_params, axis, value, l1, l2, options, T_end, sample_dt = job
    try:
        params, (r1, r2) = _row_setup(base_params, axis, value, l1, l2)
    except NRRDError as exc:
        return SweepRow(axis, value, l1, l2, None, None, None, None, None, "none", None, str(exc))
    try:
        if 0 < r1 < r2 <= 1:
            rep = run_threshold_part1(grid, params, r1, r2, options, T_end=T_end)
            name = "part1"
        elif r1 > r2 > 1 and params.gamma == 2 and params.alpha <= 2 * params.beta:
            rep = run_threshold_part2(grid, params, r1, r2, options, T_end=T_end, sample_dt=sample_dt)
            name = "part2"
        else:
            steady = _steady_or_fail(grid, params, None, options)
            outcome, _ = evolve(steady.state.scaled(r1, r2), T_end, params, options, sample_dt=sample_dt)
            o = outcome
            return SweepRow(axis, value, r1, r2, o.kind, o.t_final, o.blowup_estimate,
                            o.peak_norms[0], o.peak_norms[1], "gap", None)
        o = rep.outcome
        return SweepRow(axis, value, r1, r2, o.kind, o.t_final, o.blowup_estimate,
                        o.peak_norms[0], o.peak_norms[1], name, rep.passed)
    except (NRRDError, ArithmeticError, ValueError) as exc:
        log.warning("sweep row %s=%r failed: %s", axis, value, exc)
        return SweepRow(axis, value, r1, r2, None, None, None, None, None, "none", None, str(exc))


def dichotomy_violations(rows):
    """Pairs (decayed, blown) where the decayed row's factors dominate the blown row's."""
    bad = []
    for d in rows:
        if d.kind != "Decayed":
            continue
        for b in rows:
            if b.kind == "BlowUp" and d.l1 >= b.l1 and d.l2 >= b.l2:
                bad.append((d.value, b.value))
    return bad


def pool_width(requested=None):
    """Worker count: ``requested``, else ``NRRD_THREADS``, else the machine's CPU count."""
    if requested is None:
        env = os.environ.get("NRRD_THREADS")
        if env:
            try:
                requested = int(env)
            except ValueError as exc:
                raise DomainError(f"NRRD_THREADS must be an integer, got {env!r}") from exc
        else:
            requested = os.cpu_count() or 1
    return max(1, int(requested))


def sweep(grid: Grid, base_params: Params, axis, values, l1, l2, options=None, *,
          T_end=100.0, sample_dt=0.01, workers=None) -> list:
    """One threshold run per value of ``axis``; rows come back in input order.

    ``axis="l"`` scales both factors, running ``(l1 * v, l2 * v)``.  A failing
    row records its error and does not stop the sweep.
    """
    if axis not in SWEEP_AXES:
        raise DomainError(f"axis must be one of {SWEEP_AXES}, got {axis!r}")
    options = options or SolverOptions()
    jobs = [(grid, base_params, axis, float(v), l1, l2, options, T_end, sample_dt) for v in values]
    if not jobs:
        return []
    width = min(pool_width(workers), len(jobs))
    if width == 1:
        return [_sweep_row(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=width) as pool:
        return list(pool.map(_sweep_row, jobs))
