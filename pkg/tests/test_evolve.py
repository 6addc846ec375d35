import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from nrrd import (
    DomainError,
    Grid,
    Params,
    SolverOptions,
    StatePair,
    StepError,
    apply_cutoff,
    comparison_check,
    evolve,
    evolve_lockstep,
    find_positive_steady,
    l2_norm,
    step,
    steady_residual,
)
from nrrd.evolve import OUTCOMES, RunOutcome, blowup_extrapolation

# measured once: worst log-growth rate of the L2 gap was 0.767 over five
# perturbed pairs on Interval(101); frozen with headroom
GRONWALL_C = 1.0


def fixed(dt, **kw):
    return SolverOptions(dt_init=dt, dt_max=dt, **kw)


@pytest.fixture(scope="module")
def small():
    g = Grid.interval(21)
    p = Params()
    return g, p, find_positive_steady(g, p).state


# -- cut-off ------------------------------------------------------------------

def test_cutoff_leaves_small_values():
    f = np.array([-1.0, 0.0, 0.5, 1.0])
    assert np.array_equal(apply_cutoff(f, 1.0), f)


@pytest.mark.parametrize("M", [0.5, 3.0, 1e6])
def test_cutoff_clamps(M):
    assert np.all(apply_cutoff(np.full(7, 2 * M), M) == M)
    assert np.all(apply_cutoff(np.full(7, -2 * M), M) == -M)


def test_cutoff_level_must_be_positive():
    with pytest.raises(DomainError):
        apply_cutoff(np.ones(3), 0.0)


# -- single steps -------------------------------------------------------------

@pytest.mark.parametrize("scheme", ["euler", "cn"])
def test_zero_state_is_fixed(grid101, ref_params, scheme):
    s = step(StatePair.zeros(grid101), 0.05, ref_params, scheme=scheme)
    assert s.linf() == 0 and s.t == pytest.approx(0.05)


@pytest.mark.parametrize("dt", [0.1, 0.01, 1e-3])
def test_equilibrium_preserved(grid101, ref_params, ubar, dt):
    s = step(ubar, dt, ref_params)
    change = max(np.max(np.abs(s.u1 - ubar.u1)), np.max(np.abs(s.u2 - ubar.u2)))
    assert change <= 10 * dt * steady_residual(grid101, ref_params, ubar) + 1e-9


def test_step_rejects_bad_input(grid101, ref_params, ubar):
    with pytest.raises(DomainError):
        step(ubar, 0.0, ref_params)
    with pytest.raises(DomainError):
        step(ubar, 0.1, ref_params, scheme="rk4")
    with pytest.raises(DomainError):
        step(StatePair(grid101, -np.ones(grid101.size), np.ones(grid101.size)), 0.1, ref_params)


def test_strong_reaction_raises_step_error(grid101, ref_params):
    big = StatePair(grid101, np.ones(grid101.size), np.full(grid101.size, 100.0))
    with pytest.raises(StepError) as info:
        step(big, 0.1, ref_params)
    assert info.value.dt == 0.1


def test_decoupled_robin_heat_equation():
    # u1 = 0 keeps u2 on the linear Robin heat flow; the ground state decays as exp(-k^2 t)
    beta = 0.7
    p = Params(beta=beta, gamma=2.0)
    k = brentq(lambda k: k * np.tan(k / 2) - beta, 1e-6, 3.0)
    errs = []
    for n, dt in ((51, 0.01), (101, 0.005), (201, 0.0025)):
        g = Grid.interval(n)
        x = g.axes[0]
        s0 = StatePair(g, np.zeros(g.size), np.cos(k * (x - 0.5)))
        _, series = evolve(s0, 0.5, p, fixed(dt), keep_states=True)
        end = series.states[-1]
        assert end.t == pytest.approx(0.5)
        assert np.all(end.u1 == 0)
        errs.append(np.max(np.abs(end.u2 - np.exp(-k * k * 0.5) * np.cos(k * (x - 0.5)))))
    e = np.array(errs)
    assert e[0] < 5e-3
    assert np.all((e[:-1] / e[1:] > 1.6) & (e[:-1] / e[1:] < 2.4))


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), scheme=st.sampled_from(["euler", "cn"]))
def test_nonnegativity(seed, scheme):
    r = np.random.default_rng(seed)
    g = Grid.interval(21)
    p = Params(a=r.uniform(0.1, 3), b=r.uniform(0.1, 3), alpha=r.uniform(0, 3),
               beta=r.uniform(0.1, 3), gamma=float(r.choice([2.0, 2.5, 3.0])))
    u1, u2 = r.uniform(0, 2, (2, g.size))
    # some nodes exactly zero
    u1[r.random(g.size) < 0.3] = 0.0
    _, series = evolve(StatePair(g, u1, u2), 0.1, p, SolverOptions(dt_max=0.02),
                       scheme=scheme, keep_states=True)
    for s in series.states:
        assert s.u1.min() >= -1e-12 and s.u2.min() >= -1e-12


# -- whole runs ---------------------------------------------------------------

def test_zero_initial_data_decays_at_once(grid101, ref_params):
    outcome, series = evolve(StatePair.zeros(grid101), 10.0, ref_params)
    assert outcome.kind == "Decayed" and outcome.t_final == 0.0
    assert len(series) == 1


def test_outcome_kind_validated():
    assert "BlowUp" in OUTCOMES
    with pytest.raises(DomainError):
        RunOutcome("Exploded", 1.0)


def test_decay_below_steady_state(grid101, ref_params, ubar):
    outcome, series = evolve(ubar.scaled(0.5), 200.0, ref_params, keep_states=True)
    assert outcome.kind == "Decayed"
    U1 = np.array([s.u1 for s in series.states])
    U2 = np.array([s.u2 for s in series.states])
    assert np.all(np.diff(U1, axis=0) <= 1e-9) and np.all(np.diff(U2, axis=0) <= 1e-9)
    assert np.all(np.diff(series.t) > 0)


def test_blowup_above_steady_state(grid101, ref_params, ubar):
    options = SolverOptions()
    outcome, series = evolve(ubar.scaled(1.5, 1.2), 50.0, ref_params, options, sample_dt=0.01)
    assert outcome.kind == "BlowUp"
    assert min(outcome.peak_norms) >= options.blowup_threshold
    i1, i2 = outcome.crossing_samples
    assert i1 is not None and i2 is not None and abs(i1 - i2) <= 5
    assert outcome.t_final <= outcome.blowup_estimate < outcome.t_final + 0.01
    assert outcome.blowup_estimate == pytest.approx(1.165, abs=5e-3)


def test_blowup_extrapolation_line():
    # 1 / ||u2|| = 2 - t vanishes at t = 2
    t = np.array([1.0, 1.5, 1.9])
    assert blowup_extrapolation(t, 1.0 / (2.0 - t)) == pytest.approx(2.0)


def test_uniform_sampling(grid101, ref_params, ubar):
    _, series = evolve(ubar.scaled(0.5), 1.0, ref_params, sample_dt=0.1)
    assert np.allclose(series.t, np.arange(11) * 0.1, atol=1e-12)


def test_stride_sampling(grid101, ref_params, ubar):
    _, dense = evolve(ubar.scaled(0.5), 0.05, ref_params, fixed(1e-3))
    _, sparse = evolve(ubar.scaled(0.5), 0.05, ref_params, fixed(1e-3), stride=10)
    assert len(dense) == 51 and len(sparse) == 6
    assert sparse.t[-1] == pytest.approx(0.05)


def test_temporal_order(grid101, ref_params, ubar):
    s0 = ubar.scaled(0.5, 0.75)
    ref = evolve(s0, 0.5, ref_params, fixed(0.005 / 8), keep_states=True)[1].states[-1]
    errs = []
    for dt in (0.02, 0.01, 0.005):
        s = evolve(s0, 0.5, ref_params, fixed(dt), keep_states=True)[1].states[-1]
        errs.append(max(np.max(np.abs(s.u1 - ref.u1)), np.max(np.abs(s.u2 - ref.u2))))
    e = np.array(errs)
    assert np.allclose(e[:-1] / e[1:], 2.0, atol=0.3)


def test_crank_nicolson_is_second_order(grid101, ref_params, ubar):
    s0 = ubar.scaled(0.5, 0.75)
    # coarser steps are pre-asymptotic: CN only damps the stiff modes weakly
    ref = evolve(s0, 0.5, ref_params, fixed(0.005 / 16), scheme="cn", keep_states=True)[1].states[-1]
    errs = []
    for dt in (0.01, 0.005, 0.0025):
        s = evolve(s0, 0.5, ref_params, fixed(dt), scheme="cn", keep_states=True)[1].states[-1]
        errs.append(max(np.max(np.abs(s.u1 - ref.u1)), np.max(np.abs(s.u2 - ref.u2))))
    e = np.array(errs)
    assert np.all(e[:-1] / e[1:] > 3.3)
    assert e[-2] / e[-1] == pytest.approx(4.0, abs=0.5)


def test_cutoff_consistency(grid101, ref_params, ubar):
    s0 = ubar.scaled(0.8, 0.9)
    _, plain = evolve(s0, 2.0, ref_params, keep_states=True)
    _, cut = evolve(s0, 2.0, ref_params, cutoff_M=ubar.linf() + 1.0, keep_states=True)
    assert plain.t == cut.t
    for a, b in zip(plain.states, cut.states):
        assert max(np.max(np.abs(a.u1 - b.u1)), np.max(np.abs(a.u2 - b.u2))) <= 1e-12


def test_cutoff_tames_blowup(grid101, ref_params, ubar):
    outcome, _ = evolve(ubar.scaled(1.5, 1.2), 5.0, ref_params, cutoff_M=10.0)
    assert outcome.kind != "BlowUp"


# -- comparison and stability -------------------------------------------------

def test_identical_runs_compare_trivially(small):
    g, p, ub = small
    [(_, a), (_, b)] = evolve_lockstep([ub.scaled(0.7), ub.scaled(0.7)], 0.5, p)
    rep = comparison_check(a, b)
    assert rep.passed and rep.max_violation == 0 and rep.samples_checked == len(a)


def test_zero_stays_below_anything(small, rng):
    g, p, _ = small
    B = StatePair(g, *rng.uniform(0, 1, (2, g.size)))
    [(_, a), (_, b)] = evolve_lockstep([StatePair.zeros(g), B], 0.5, p)
    assert all(s.linf() == 0 for s in a.states)
    assert comparison_check(a, b).passed


def test_ordered_pairs_stay_ordered(small, rng):
    g, p, ub = small
    for _ in range(100):
        l1, l2 = rng.uniform(0.05, 0.95, 2)
        B = StatePair(g, l1 * ub.u1 * rng.uniform(0.5, 1, g.size), l2 * ub.u2 * rng.uniform(0.5, 1, g.size))
        A = StatePair(g, B.u1 * rng.uniform(0, 1, g.size), B.u2 * rng.uniform(0, 1, g.size))
        [(_, a), (_, b)] = evolve_lockstep([A, B], 0.3, p, SolverOptions(dt_max=0.05))
        assert comparison_check(a, b).passed


def test_comparison_reports_violation(small):
    g, p, ub = small
    [(_, a), (_, b)] = evolve_lockstep([ub.scaled(0.6), ub.scaled(0.5)], 0.2, p)
    rep = comparison_check(a, b)
    assert not rep.passed
    assert rep.first_violation["t"] == 0.0 and rep.max_violation > 0


def test_comparison_needs_states(small):
    g, p, ub = small
    _, a = evolve(ub.scaled(0.5), 0.1, p)
    with pytest.raises(DomainError):
        comparison_check(a, a)


def test_gronwall_bound(grid101, ref_params, ubar, rng):
    for _ in range(3):
        base = ubar.scaled(*rng.uniform(0.2, 0.9, 2))
        pert = StatePair(grid101, base.u1 + 1e-4 * rng.random(grid101.size),
                         base.u2 + 1e-4 * rng.random(grid101.size))
        [(_, a), (_, b)] = evolve_lockstep([base, pert], 0.5, ref_params, fixed(1e-3), sample_dt=0.05)
        d0 = np.hypot(l2_norm(grid101, pert.u1 - base.u1), l2_norm(grid101, pert.u2 - base.u2))
        for A, B in zip(a.states, b.states):
            d = np.hypot(l2_norm(grid101, A.u1 - B.u1), l2_norm(grid101, A.u2 - B.u2))
            assert d <= 2 * np.exp(GRONWALL_C * A.t) * d0
