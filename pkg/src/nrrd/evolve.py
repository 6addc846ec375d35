"""Time stepping for the reactor system, with optional cut-off and adaptive steps.

One step is IMEX: diffusion and absorption are implicit, the reaction
coefficient of u1 is frozen at the current temperature, and the radiation law
of u2 is solved by Newton inside the step.  Every linear system involved is an
M-matrix, so the scheme preserves nonnegativity and the ordering of data.

``scheme="cn"`` swaps in a predictor-corrector Crank-Nicolson step that is
second order in time.  It is meant for convergence studies only; the sign
guarantees belong to the default backward-Euler step.
"""
from __future__ import annotations

import functools
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import linalg
from .core import (
    ConvergenceError,
    DomainError,
    Grid,
    GridMismatchError,
    NRRDError,
    Params,
    SolverOptions,
    StatePair,
    StepError,
    integrate_boundary,
    integrate_interior,
)
from .elliptic import newton_nonlinear_bc
from .spectral import EigenPair, robin_eigenpair

log = logging.getLogger(__name__)

OUTCOMES = ("Decayed", "ConvergedToSteady", "BlowUp", "Inconclusive")
SCHEMES = ("euler", "cn")
GROWTH_LIMIT = 0.2
CALM_STEPS = 10
STEADY_RATE = 1e-10
STEADY_STEPS = 50
REACTION_GUARD = 0.5
NONNEGATIVE_SLACK = 1e-12
COLUMNS = ("t", "linf_u1", "linf_u2", "mass_u1", "mass_u2", "bnd_u2", "bnd_u2_gamma", "mass_u1u2", "dt")


def apply_cutoff(f, M):
    """Clamp ``f`` nodewise to ``[-M, M]``."""
    if not M > 0:
        raise DomainError(f"cut-off level must be positive, got {M}")
    return np.clip(f, -M, M)


@functools.lru_cache(maxsize=32)
def _robin(grid, alpha):
    return grid.robin_laplacian(alpha)


def _reaction_coefficient(u1, u2, M):
    """Frozen coefficient ``R`` with ``R * u1 = [u1]_M [u2]_M`` at the current state."""
    if M is None:
        return u2
    ratio = np.ones_like(u1)
    nz = u1 != 0
    ratio[nz] = apply_cutoff(u1[nz], M) / u1[nz]
    return apply_cutoff(u2, M) * ratio


def _solve_u1(grid, params, u1, R, dt, theta):
    if dt * (np.max(R) - params.b) >= REACTION_GUARD:
        raise StepError("reaction term too strong for this step", dt)
    L = _robin(grid, params.alpha) + sp.diags(params.b - R)
    rhs = u1 if theta == 1 else u1 - (1 - theta) * dt * (L @ u1)
    try:
        return linalg.solve(grid, sp.identity(grid.size) + theta * dt * L, rhs)
    except NRRDError as exc:
        raise StepError(f"u1 solve failed: {exc}", dt) from exc


def _flux(u, gamma):
    return u if gamma == 2 else np.maximum(u, 0.0) ** (gamma - 1)


def _solve_u2(grid, params, u2, source, dt, theta, options, guess):
    c = 1.0 / (theta * dt)
    f = c * u2 + params.a * source
    if theta != 1:
        f = f - grid.apply_laplacian(u2) - params.beta * grid.boundary_coeff * _flux(u2, params.gamma)
    try:
        v, _ = newton_nonlinear_bc(grid, params.beta, params.gamma, f, c, guess, options)
    except (ConvergenceError, NRRDError) as exc:
        raise StepError(f"u2 solve failed: {exc}", dt) from exc
    return v


def _euler(grid, params, u1, u2, dt, M, options, guess):
    v1 = _solve_u1(grid, params, u1, _reaction_coefficient(u1, u2, M), dt, 1.0)
    v2 = _solve_u2(grid, params, u2, v1, dt, 1.0, options, u2 if guess is None else guess)
    return v1, v2


def _crank_nicolson(grid, params, u1, u2, dt, M, options, guess):
    _, p2 = _euler(grid, params, u1, u2, dt, M, options, guess)
    R = _reaction_coefficient(u1, 0.5 * (u2 + p2), M)
    v1 = _solve_u1(grid, params, u1, R, dt, 0.5)
    v2 = _solve_u2(grid, params, u2, u1 + v1, dt, 0.5, options, p2)
    return v1, v2


def step(state: StatePair, dt, params: Params, options=None, cutoff_M=None,
         scheme="euler", guess=None) -> StatePair:
    """Advance ``state`` by ``dt``; inner failures raise ``StepError`` carrying ``dt``."""
    options = options or SolverOptions()
    if not dt > 0:
        raise DomainError(f"dt must be positive, got {dt}")
    if scheme not in SCHEMES:
        raise DomainError(f"scheme must be one of {SCHEMES}, got {scheme!r}")
    if min(state.u1.min(), state.u2.min()) < -NONNEGATIVE_SLACK:
        raise DomainError("step needs a nonnegative state")
    if not state.is_finite():
        raise DomainError("state is not finite")
    advance = _euler if scheme == "euler" else _crank_nicolson
    v1, v2 = advance(state.grid, params, state.u1, state.u2, dt, cutoff_M, options, guess)
    if not (np.all(np.isfinite(v1)) and np.all(np.isfinite(v2))):
        raise StepError("step produced non-finite values", dt)
    return StatePair(state.grid, v1, v2, state.t + dt)


@dataclass(frozen=True)
class RunOutcome:
    kind: str
    t_final: float
    blowup_estimate: float | None = None
    peak_norms: tuple = (0.0, 0.0)
    crossing_samples: tuple = (None, None)
    steps: int = 0
    rejected: int = 0
    message: str = ""

    def __post_init__(self):
        if self.kind not in OUTCOMES:
            raise DomainError(f"unknown outcome {self.kind!r}")


@dataclass
class TimeSeries:
    """Per-sample norms and weighted functionals (weight: L1-normalised ``phi1``)."""

    grid: Grid
    gamma: float
    eigen: EigenPair
    t: list = field(default_factory=list)
    linf_u1: list = field(default_factory=list)
    linf_u2: list = field(default_factory=list)
    mass_u1: list = field(default_factory=list)
    mass_u2: list = field(default_factory=list)
    bnd_u2: list = field(default_factory=list)
    bnd_u2_gamma: list = field(default_factory=list)
    mass_u1u2: list = field(default_factory=list)
    dt: list = field(default_factory=list)
    states: list = field(default_factory=list)
    keep_states: bool = False

    def __len__(self):
        return len(self.t)

    @property
    def lambda1(self):
        return self.eigen.lambda1

    def record(self, state: StatePair, dt):
        if self.t and not state.t > self.t[-1]:
            raise DomainError("sample times must increase strictly")
        phi = self.eigen.phi1
        g = self.grid
        self.t.append(state.t)
        self.linf_u1.append(float(np.max(np.abs(state.u1))))
        self.linf_u2.append(float(np.max(np.abs(state.u2))))
        self.mass_u1.append(integrate_interior(g, state.u1 * phi))
        self.mass_u2.append(integrate_interior(g, state.u2 * phi))
        self.bnd_u2.append(integrate_boundary(g, state.u2 * phi))
        self.bnd_u2_gamma.append(integrate_boundary(g, np.maximum(state.u2, 0.0) ** self.gamma * phi))
        self.mass_u1u2.append(integrate_interior(g, state.u1 * state.u2 * phi))
        self.dt.append(float(dt))
        if self.keep_states:
            self.states.append(state)

    def row(self, i):
        return tuple(getattr(self, name)[i] for name in COLUMNS)

    def rows(self):
        return [self.row(i) for i in range(len(self))]

    def column(self, name):
        if name not in COLUMNS:
            raise KeyError(name)
        return np.asarray(getattr(self, name))


def blowup_extrapolation(t, linf_u2):
    """Zero of the line through the last three ``(t, 1 / ||u2||)`` samples."""
    t = np.asarray(t[-3:], dtype=float)
    y = 1.0 / np.asarray(linf_u2[-3:], dtype=float)
    if len(t) < 3 or not np.all(np.isfinite(y)):
        return float(t[-1])
    slope, intercept = np.polyfit(t - t[-1], y, 1)
    if slope >= 0:
        return float(t[-1])
    return float(t[-1] + max(0.0, -intercept / slope))


def _first_crossing(values, threshold):
    idx = np.flatnonzero(np.asarray(values) > threshold)
    return int(idx[0]) if idx.size else None


class _Member:
    def __init__(self, state, series, options):
        self.state = state
        self.series = series
        self.options = options
        self.kind = None
        self.t_final = None
        self.peak = [float(np.max(np.abs(state.u1))), float(np.max(np.abs(state.u2)))]
        self.quiet = 0
        self.since_sample = 0

    def norms(self):
        return float(np.max(np.abs(self.state.u1))), float(np.max(np.abs(self.state.u2)))

    def settle(self, kind):
        if self.kind is None:
            self.kind = kind
            self.t_final = self.state.t


def _check_initial(state, options):
    if not state.is_finite():
        raise DomainError("initial data must be finite")
    if min(state.u1.min(), state.u2.min()) < -NONNEGATIVE_SLACK:
        raise DomainError("initial data must be nonnegative")


def _integrate(states, T_end, params, options, cutoff_M, scheme, sample_dt, stride,
               keep_states, eigen, callback):
    grid = states[0].grid
    for s in states:
        if not s.grid.same_as(grid):
            raise GridMismatchError("all members of a lockstep run must share one grid")
        _check_initial(s, options)
    t0 = states[0].t
    if any(s.t != t0 for s in states):
        raise DomainError("lockstep members must start at the same time")
    if not T_end >= t0:
        raise DomainError(f"T_end must be >= the initial time {t0}")
    if sample_dt is not None and not sample_dt > 0:
        raise DomainError("sample_dt must be positive")
    if int(stride) < 1:
        raise DomainError("stride must be >= 1")
    eigen = eigen or robin_eigenpair(grid, params.alpha, "L1_unit")
    if eigen.normalization != "L1_unit":
        eigen = eigen.renormalized("L1_unit")

    members = []
    for s in states:
        m = _Member(s, TimeSeries(grid, params.gamma, eigen, keep_states=keep_states), options)
        m.series.record(s, 0.0)
        if callback is not None:
            callback(m.series, len(members))
        if sum(m.norms()) <= options.decay_threshold:
            m.settle("Decayed")
        members.append(m)

    def finished():
        return all(m.kind is not None for m in members)

    dt = options.dt_init
    t = t0
    calm = 0
    steps = rejected = 0
    k_sample = 0
    message = ""
    blown = False
    while not finished() and t < T_end:
        stop = T_end
        if sample_dt is not None:
            stop = min(T_end, t0 + (k_sample + 1) * sample_dt)
        h = min(dt, stop - t)
        landing = stop - t - h <= 1e-9 * h
        if landing:
            h = stop - t
        try:
            new = [step(m.state, h, params, options, cutoff_M, scheme) for m in members]
            grew = any(
                new_norm > (1.0 + GROWTH_LIMIT) * old_norm and new_norm > options.decay_threshold
                for m, s in zip(members, new)
                for old_norm, new_norm in zip(
                    m.norms(), (np.max(np.abs(s.u1)), np.max(np.abs(s.u2))))
            )
            if grew:
                raise StepError("per-step growth above limit", h)
        except StepError as exc:
            rejected += 1
            calm = 0
            dt = h / 2
            if dt < options.dt_min:
                message = f"dt fell below dt_min ({exc})"
                break
            continue

        steps += 1
        t_new = stop if landing else t + h
        for m, s in zip(members, new):
            rate = max(np.max(np.abs(s.u1 - m.state.u1)), np.max(np.abs(s.u2 - m.state.u2))) / h
            m.state = s.at(t_new)
            n1, n2 = m.norms()
            m.peak = [max(m.peak[0], n1), max(m.peak[1], n2)]
            m.quiet = m.quiet + 1 if rate < STEADY_RATE else 0
            m.since_sample += 1
        t = t_new
        if sample_dt is not None:
            due = landing
            if landing:
                k_sample += 1
        else:
            due = members[0].since_sample >= stride

        for m in members:
            n1, n2 = m.norms()
            if n1 > options.blowup_threshold and n2 > options.blowup_threshold:
                m.settle("BlowUp")
                blown = True
            elif n1 + n2 <= options.decay_threshold:
                m.settle("Decayed")
            elif m.quiet >= STEADY_STEPS:
                m.settle("ConvergedToSteady")
        terminal = blown or finished() or t >= T_end
        if due or terminal:
            for idx, m in enumerate(members):
                m.series.record(m.state, h)
                m.since_sample = 0
                if callback is not None:
                    callback(m.series, idx)
        if blown:
            break
        calm += 1
        if not landing and calm >= CALM_STEPS:
            dt = min(2 * dt, options.dt_max)
            calm = 0

    results = []
    for idx, m in enumerate(members):
        if m.series.t[-1] < m.state.t:
            m.series.record(m.state, dt)
            if callback is not None:
                callback(m.series, idx)
        m.settle("Inconclusive")
        thr = options.blowup_threshold
        crossings = (_first_crossing(m.series.linf_u1, thr), _first_crossing(m.series.linf_u2, thr))
        estimate = None
        if m.kind == "BlowUp":
            estimate = blowup_extrapolation(m.series.t, m.series.linf_u2)
        outcome = RunOutcome(m.kind, m.t_final, estimate, tuple(m.peak), crossings, steps, rejected, message)
        log.debug("run finished: %s", outcome)
        results.append((outcome, m.series))
    return results


def evolve(state0: StatePair, T_end, params: Params, options=None, *, cutoff_M=None,
           scheme="euler", sample_dt=None, stride=1, keep_states=False, eigen=None,
           callback=None):
    """Integrate from ``state0`` to ``T_end`` or until the run is classified.

    Samples are taken every ``stride`` accepted steps, or at the uniform times
    ``t0 + k * sample_dt`` when ``sample_dt`` is given (steps are shortened to
    land on them).  The final state is always sampled.  Returns
    ``(RunOutcome, TimeSeries)``.
    """
    options = options or SolverOptions()
    [(outcome, series)] = _integrate(
        [state0], T_end, params, options, cutoff_M, scheme, sample_dt, stride,
        keep_states, eigen, callback,
    )
    return outcome, series


def evolve_lockstep(states, T_end, params: Params, options=None, *, cutoff_M=None,
                    scheme="euler", sample_dt=None, stride=1, eigen=None):
    """Integrate several initial data with one shared step sequence.

    Shared steps make the discrete comparison principle apply exactly, which
    is what ``comparison_check`` probes.  Every series keeps its states.
    """
    options = options or SolverOptions()
    return _integrate(list(states), T_end, params, options, cutoff_M, scheme, sample_dt,
                      stride, True, eigen, None)


@dataclass(frozen=True)
class ComparisonReport:
    passed: bool
    samples_checked: int
    max_violation: float
    first_violation: dict | None = None


def comparison_check(series_a: TimeSeries, series_b: TimeSeries) -> ComparisonReport:
    """Check ``A <= B + eps_c`` nodewise in both components at every shared sample.

    ``eps_c = 1e-8 (1 + ||B||_inf)``.  Both series must have been recorded with
    ``keep_states``.
    """
    if not (series_a.keep_states and series_b.keep_states):
        raise DomainError("comparison_check needs series recorded with keep_states=True")
    if not series_a.grid.same_as(series_b.grid):
        raise GridMismatchError("runs live on different grids")
    times_b = {t: i for i, t in enumerate(series_b.t)}
    checked = 0
    worst = 0.0
    first = None
    for i, t in enumerate(series_a.t):
        j = times_b.get(t)
        if j is None:
            continue
        A, B = series_a.states[i], series_b.states[j]
        eps = 1e-8 * (1.0 + max(np.max(np.abs(B.u1)), np.max(np.abs(B.u2))))
        checked += 1
        for name, x, y in (("u1", A.u1, B.u1), ("u2", A.u2, B.u2)):
            excess = x - y
            node = int(np.argmax(excess))
            worst = max(worst, float(excess[node]))
            if excess[node] > eps and first is None:
                first = {"t": t, "component": name, "node": node, "excess": float(excess[node])}
    return ComparisonReport(first is None, checked, worst, first)
