import numpy as np
import pytest

from nrrd import (
    DomainError,
    Grid,
    Params,
    StateError,
    StatePair,
    SteadyResult,
    choose_epsilon,
    dichotomy_violations,
    run_threshold_part1,
    run_threshold_part2,
    sweep,
)
from nrrd.experiments import SweepRow, pool_width, y_functional

# first computed value on Interval(101), reference coefficients, l = (1.5, 1.2)
EPSILON_ANCHOR = 0.21198017607728997


@pytest.fixture(scope="module")
def part2(grid101, ref_params, ref_steady):
    return run_threshold_part2(grid101, ref_params, 1.5, 1.2, steady=ref_steady)


# -- epsilon ------------------------------------------------------------------

@pytest.mark.parametrize("l1,l2", [(1.2, 1.2), (1.5, 1.0), (1.1, 1.3), (2.0, 0.9)])
def test_epsilon_preconditions(ubar, l1, l2):
    with pytest.raises(DomainError):
        choose_epsilon(ubar, l1, l2, 1.0)


def test_epsilon_needs_positive_state(ubar):
    u1 = ubar.u1.copy()
    u1[0] = 0.0
    with pytest.raises(DomainError):
        choose_epsilon(StatePair(ubar.grid, u1, ubar.u2), 1.5, 1.2, 1.0)


def test_epsilon_anchor(ubar):
    eps = choose_epsilon(ubar, 1.5, 1.2, 1.0)
    assert eps > 0
    assert eps == pytest.approx(EPSILON_ANCHOR, rel=1e-9)


def test_epsilon_candidates_scale_with_a(ubar):
    first = lambda a: a * 0.3 * np.min(ubar.u1 / ubar.u2) / 1.2
    second = 0.2 * np.min(ubar.u2)
    for a in (0.1, 0.5, 1.0, 4.0):
        expected = 0.5 * min(first(a), second)
        assert choose_epsilon(ubar, 1.5, 1.2, a) == pytest.approx(expected, rel=1e-12)
    # the small-a regime sits on the first candidate, so doubling a doubles epsilon
    assert choose_epsilon(ubar, 1.5, 1.2, 0.2) == pytest.approx(2 * choose_epsilon(ubar, 1.5, 1.2, 0.1))


def test_epsilon_inequalities_hold(ubar):
    a, l1, l2 = 1.0, 1.5, 1.2
    eps = choose_epsilon(ubar, l1, l2, a)
    assert np.all(a * (l2 - l1) * ubar.u1 + eps * l2 * ubar.u2 < 0)
    assert np.all(eps + (1 - l2) * ubar.u2 < 0)


# -- threshold runs -----------------------------------------------------------

def test_part1_decays_monotonically(grid101, ref_params, ref_steady):
    rep = run_threshold_part1(grid101, ref_params, 0.5, 0.75, steady=ref_steady)
    assert rep.outcome.kind == "Decayed"
    assert rep.monotone_decay_ok and rep.bounded_ok and rep.passed
    assert rep.epsilon is None


def test_part1_near_threshold_stays_global(grid101, ref_params, ref_steady):
    rep = run_threshold_part1(grid101, ref_params, 0.9, 1.0, steady=ref_steady)
    assert rep.outcome.kind in ("Decayed", "ConvergedToSteady")
    assert rep.bounded_ok


@pytest.mark.parametrize("l1,l2", [(1.0, 1.0), (0.8, 0.7), (0.5, 1.2), (0.0, 0.5)])
def test_part1_preconditions(grid101, ref_params, ref_steady, l1, l2):
    with pytest.raises(DomainError):
        run_threshold_part1(grid101, ref_params, l1, l2, steady=ref_steady)


def test_missing_steady_state(grid101, ref_params):
    zero = SteadyResult(StatePair.zeros(grid101), 0.0, 0, "picard", "trivial_zero")
    with pytest.raises(StateError):
        run_threshold_part1(grid101, ref_params, 0.5, 0.75, steady=zero)


def test_steady_state_on_other_grid(ref_params, ref_steady):
    with pytest.raises(StateError):
        run_threshold_part1(Grid.interval(51), ref_params, 0.5, 0.75, steady=ref_steady)


def test_part2_blows_up_above_subsolution(part2):
    assert part2.outcome.kind == "BlowUp"
    assert part2.subsolution_ok and part2.exponent_ok and part2.y_monotone_ok
    assert part2.epsilon == pytest.approx(EPSILON_ANCHOR, rel=1e-9)
    i1, i2 = part2.outcome.crossing_samples
    assert abs(i1 - i2) <= 5


def test_part2_y_functional_uses_mass_when_beta_le_alpha(part2, ref_params):
    # beta = alpha: no boundary accumulation term
    assert np.array_equal(part2.y_series, np.asarray(part2.series.mass_u2))


def test_y_functional_adds_boundary_term(part2, ref_params):
    p = ref_params.with_(beta=2.0)
    y = y_functional(part2.series, p)
    base = np.asarray(part2.series.mass_u2)
    assert y[0] == base[0]
    assert np.all(y[1:] > base[1:])


def test_part2_on_boundary_of_condition(grid101, ref_params):
    p = ref_params.with_(alpha=2.0, beta=1.0)
    rep = run_threshold_part2(grid101, p, 1.5, 1.2)
    assert rep.outcome.kind == "BlowUp" and rep.subsolution_ok


@pytest.mark.parametrize("params,l1,l2", [
    (Params(), 1.5, 1.0),
    (Params(), 1.1, 1.2),
    (Params(gamma=3.0), 1.5, 1.2),
    (Params(alpha=3.0, beta=1.0), 1.5, 1.2),
])
def test_part2_preconditions(grid101, params, l1, l2):
    with pytest.raises(DomainError):
        run_threshold_part2(grid101, params, l1, l2)


# -- sweeps -------------------------------------------------------------------

def test_empty_sweep(grid101, ref_params):
    assert sweep(grid101, ref_params, "a", [], 0.5, 0.75) == []


def test_unknown_axis(grid101, ref_params):
    with pytest.raises(DomainError):
        sweep(grid101, ref_params, "delta", [1.0], 0.5, 0.75)


def test_below_threshold_band():
    g = Grid.interval(51)
    rows = sweep(g, Params(), "l", [0.5, 0.9], 0.9, 1.0, workers=1)
    assert [r.kind for r in rows] == ["Decayed", "Decayed"]
    assert [r.value for r in rows] == [0.5, 0.9]
    assert all(r.experiment == "part1" and r.checks_ok for r in rows)


def test_above_threshold_band_in_pool():
    g = Grid.interval(51)
    rows = sweep(g, Params(), "l", [2.0, 1.2, 1.5], 1.25, 1.0, workers=2)
    # input order survives the pool
    assert [r.value for r in rows] == [2.0, 1.2, 1.5]
    assert all(r.kind == "BlowUp" and r.experiment == "part2" for r in rows)
    assert dichotomy_violations(rows) == []


def test_sweep_reproducible():
    g = Grid.interval(31)
    a = sweep(g, Params(), "l1", [0.3, 0.6], 0.5, 0.75, workers=1)
    b = sweep(g, Params(), "l1", [0.3, 0.6], 0.5, 0.75, workers=2)
    assert a == b


def test_failing_row_is_recorded():
    g = Grid.interval(31)
    rows = sweep(g, Params(), "b", [-1.0, 1.0], 0.5, 0.75, workers=1)
    assert rows[0].kind is None and "b" in rows[0].error
    assert rows[1].kind == "Decayed"


def test_gap_band_reported_as_is():
    g = Grid.interval(31)
    [row] = sweep(g, Params(), "l", [1.0], 1.1, 1.3, workers=1, T_end=5.0)
    assert row.experiment == "gap" and row.checks_ok is None


def test_dichotomy_violation_detected():
    row = lambda v, kind, l1, l2: SweepRow("l", v, l1, l2, kind, 1.0, None, 1.0, 1.0, "x", True)
    rows = [row(1.0, "Decayed", 2.0, 2.0), row(2.0, "BlowUp", 1.5, 1.2)]
    assert dichotomy_violations(rows) == [(1.0, 2.0)]


def test_pool_width(monkeypatch):
    monkeypatch.setenv("NRRD_THREADS", "3")
    assert pool_width() == 3
    assert pool_width(5) == 5
    monkeypatch.setenv("NRRD_THREADS", "0")
    assert pool_width() == 1
    monkeypatch.setenv("NRRD_THREADS", "many")
    with pytest.raises(DomainError):
        pool_width()
    monkeypatch.delenv("NRRD_THREADS")
    assert pool_width() >= 1
