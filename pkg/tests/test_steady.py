import warnings

import numpy as np
import pytest
from scipy.integrate import solve_bvp

from conftest import BVP_U1, BVP_U2
from nrrd import (
    Grid,
    NRRDError,
    Params,
    SolverOptions,
    StatePair,
    find_positive_steady,
    ordered_uniqueness_check,
    psi_map,
    refine_steady,
    steady_residual,
)
from nrrd.steady import acceptance_tolerance, picard


def bvp_solution(params):
    a, b, al, be, gam = params.a, params.b, params.alpha, params.beta, params.gamma

    def rhs(x, y):
        u1, p1, u2, p2 = y
        return np.vstack([p1, b * u1 - u1 * u2, p2, -a * u1])

    def bc(ya, yb):
        return np.array([
            -ya[1] + al * ya[0], yb[1] + al * yb[0],
            -ya[3] + be * ya[2] ** (gam - 1), yb[3] + be * yb[2] ** (gam - 1),
        ])

    x = np.linspace(0, 1, 21)
    y = np.zeros((4, x.size))
    y[0], y[2] = 4.5, 2.6
    sol = solve_bvp(rhs, bc, x, y, tol=1e-9, max_nodes=100000)
    assert sol.status == 0
    return sol


def test_seed_zero_is_trivial(grid101, ref_params):
    r = find_positive_steady(grid101, ref_params, seed_scale=0.0)
    assert r.classification == "trivial_zero" and r.state.linf() == 0 and not r.is_positive


def test_reference_problem_positive(ref_steady):
    assert ref_steady.is_positive
    assert ref_steady.residual <= 1e-10
    assert ref_steady.state.u1.min() > 0 and ref_steady.state.u2.min() > 0


def test_picard_is_not_what_converges(ref_steady):
    # the positive fixed point repels relaxed Picard; the amplitude search finds it
    assert ref_steady.method == "amplitude_then_newton"


def test_frozen_bvp_anchors_match_live_solve(ref_params):
    sol = bvp_solution(ref_params)
    for x, v in BVP_U1.items():
        assert sol.sol(x)[0] == pytest.approx(v, abs=1e-8)
    for x, v in BVP_U2.items():
        assert sol.sol(x)[2] == pytest.approx(v, abs=1e-8)


def test_reference_state_against_anchors(ubar, grid101):
    for x, v in BVP_U1.items():
        assert ubar.u1[round(x * 100)] == pytest.approx(v, abs=2e-4)
    for x, v in BVP_U2.items():
        assert ubar.u2[round(x * 100)] == pytest.approx(v, abs=1e-4)


def test_second_order_refinement(ref_params):
    sol = bvp_solution(ref_params)
    errs = []
    for n in (51, 101, 201):
        g = Grid.interval(n)
        s = find_positive_steady(g, ref_params).state
        y = sol.sol(g.axes[0])
        errs.append(max(np.max(np.abs(s.u1 - y[0])), np.max(np.abs(s.u2 - y[2]))))
    e = np.array(errs)
    assert np.allclose(e[:-1] / e[1:], 4.0, atol=0.5)


def test_fine_grid_meets_roundoff_aware_tolerance(ref_params):
    g = Grid.interval(401)
    r = find_positive_steady(g, ref_params)
    assert r.is_positive
    assert r.residual <= acceptance_tolerance(g, r.state, SolverOptions())


@pytest.mark.parametrize("params", [
    Params(gamma=3.0),
    Params(gamma=4.5, beta=0.5),
    Params(alpha=2.0, beta=1.0),
    Params(a=2.0, b=0.5, alpha=0.3, beta=0.2, gamma=2.0),
], ids=["gamma3", "gamma4.5", "alpha=2beta", "mixed"])
def test_positive_steady_states(params):
    g = Grid.interval(101)
    r = find_positive_steady(g, params)
    assert r.is_positive
    s = r.state
    # Hopf positivity over every node, boundary included
    assert s.u1.min() > 0 and s.u2.min() > 0
    v = psi_map(g, params, s)
    assert max(np.max(np.abs(v.u1 - s.u1)), np.max(np.abs(v.u2 - s.u2))) <= 10 * max(r.residual, 1e-10)


def test_two_dimensional_steady_state():
    g = Grid.rectangle(31, 31)
    r = find_positive_steady(g, Params())
    assert r.is_positive
    u1 = r.state.u1.reshape(g.shape)
    # the reference problem is symmetric under x <-> y
    assert np.max(np.abs(u1 - u1.T)) < 1e-8


def test_zero_residual_of_zero(grid101, ref_params):
    assert steady_residual(grid101, ref_params, StatePair.zeros(grid101)) == 0


def test_scaling_breaks_stationarity(grid101, ref_params, ubar):
    assert steady_residual(grid101, ref_params, ubar.scaled(2.0)) > 1e-3


def test_condition_warning():
    g = Grid.interval(51)
    with pytest.warns(RuntimeWarning, match="no positive steady state is guaranteed"):
        try:
            find_positive_steady(g, Params(alpha=3.0, beta=1.0))
        except NRRDError:
            pass


@pytest.mark.parametrize("seed", [0.25, 0.5])
def test_small_seeds_vanish_under_scaled_map(grid101, ref_params, seed):
    # fixed points of 0.9 * Psi inside the ball of radius b/2 are zero
    u0 = StatePair(grid101, np.full(grid101.size, seed * ref_params.b),
                   np.full(grid101.size, seed * ref_params.b))
    _, status, _ = picard(grid101, ref_params, u0, scale=0.9, max_iter=500)
    assert status == "zero"


# -- ordered uniqueness --------------------------------------------------------

def test_identical_states_pass(grid101, ref_params, ubar):
    rep = ordered_uniqueness_check(grid101, ref_params, ubar, ubar)
    assert rep.passed and rep.deviation == 0


@pytest.mark.parametrize("factor", [0.5, 2.0])
def test_two_seed_uniqueness(grid101, ref_params, ubar, factor):
    seeded = find_positive_steady(grid101, ref_params, seed_scale=factor)
    refined = refine_steady(grid101, ref_params, ubar.scaled(factor))
    for r in (seeded, refined):
        assert r.is_positive
        rep = ordered_uniqueness_check(grid101, ref_params, ubar, r.state)
        assert rep.passed and rep.deviation <= 1e-6


def test_non_solution_is_not_applicable(grid101, ref_params, ubar):
    rep = ordered_uniqueness_check(grid101, ref_params, ubar, ubar.scaled(2.0))
    assert rep.status == "not_applicable" and not rep.passed


def test_unordered_states_not_applicable(grid101, ref_params, ubar):
    # a copy with the components of one node swapped in size is not comparable
    u1 = ubar.u1.copy()
    u2 = ubar.u2.copy()
    u1[10] += 1.0
    u1[20] -= 1.0
    u2[10] += 1.0
    u2[20] -= 1.0
    fake = StatePair(grid101, u1, u2)
    rep = ordered_uniqueness_check(grid101, ref_params, ubar, fake, tol_residual=1e9)
    assert rep.status == "not_applicable" and "ordered" in rep.reason
