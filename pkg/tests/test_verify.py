import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from impulsegame.grid import Grid, ValueField, canonical_grid, tolerance
from impulsegame.intervention import ImpulseGrid, canonical_impulse_grid
from impulsegame.problem import ConstantGain, CosineGain, tp0, tp1, tp2
from impulsegame.qvi import Scheme, solve
from impulsegame.verify import (DiscountedConstants, Verdict, bound_and_obstacle_check,
                                discount_transform_check, discrete_comparison, discrete_residual,
                                intervention_properties, obstacle_consistency,
                                strict_supersolution_residual)

COARSE = Grid(-4.0, 4.0, 41, 20)
RHO = 0.5


@pytest.fixture(scope="module")
def discounted():
    spec = tp1()
    ds = spec.discounted(RHO)
    sol = solve(ds, COARSE, canonical_impulse_grid(ds), Scheme(rho=RHO))
    return sol, DiscountedConstants.from_spec(spec, RHO)


def test_discounted_constants():
    c = DiscountedConstants.from_spec(tp1(), RHO)
    assert c.c_rho == pytest.approx(max(1 / RHO, math.exp(RHO) + 1))
    assert c.xi == 0.1
    with pytest.raises(ValueError):
        DiscountedConstants.from_spec(tp1(), 0.0)


def test_intervention_properties_hold_on_random_fields():
    rng = np.random.default_rng(0)
    grid = canonical_grid()
    zg = canonical_impulse_grid(tp1())
    u = ValueField(grid, rng.uniform(-1, 1, grid.size))
    w = ValueField(grid, rng.uniform(-1, 1, grid.size))
    out = intervention_properties(u, w, 0.4, zg)
    assert len(out) == 1 + 5 + 3
    assert all(v.passed for v in out), [v for v in out if not v.passed]


def test_intervention_properties_grid_mismatch():
    zg = canonical_impulse_grid(tp1())
    a = ValueField(Grid(-1.0, 1.0, 5, 1), np.zeros(5))
    b = ValueField(Grid(-2.0, 2.0, 5, 1), np.zeros(5))
    with pytest.raises(ValueError):
        intervention_properties(a, b, 0.0, zg)


def test_solution_is_its_own_zero_residual():
    spec = tp1()
    sol = solve(spec, COARSE, canonical_impulse_grid(spec))
    res = discrete_residual(sol, per_step=True)
    assert np.all(np.isnan(res[:-1, [0, -1]]))
    assert np.nanmax(np.abs(res)) <= sol.scheme.eps_pi
    assert obstacle_consistency(sol).passed


def test_supersolution_endpoints(discounted):
    sol, consts = discounted
    zero = strict_supersolution_residual(sol, 0.0, consts)
    assert abs(zero.min_residual) <= 1e-9 and zero.passed
    # a large constant: residual is min{rho c - f, K0, c - g} = K0 = xi
    one = strict_supersolution_residual(sol, 1.0, consts)
    assert one.min_residual == pytest.approx(consts.xi, abs=1e-12)
    assert one.verdict().passed


def test_supersolution_residual_grows_with_lambda(discounted):
    sol, consts = discounted
    mins = [strict_supersolution_residual(sol, lam, consts).min_residual
            for lam in (0.1, 0.25, 0.5, 0.75)]
    # grows until the obstacle term caps it at K0
    assert all(b >= a - 1e-15 for a, b in zip(mins, mins[1:]))
    assert mins[1] > mins[0]
    for lam, m in zip((0.1, 0.25, 0.5, 0.75), mins):
        assert m >= lam * consts.xi - 1e-12


def test_supersolution_needs_matching_discount(discounted):
    sol, _ = discounted
    with pytest.raises(ValueError, match="discount"):
        strict_supersolution_residual(sol, 0.5, DiscountedConstants.from_spec(tp1(), 0.3))
    with pytest.raises(ValueError):
        strict_supersolution_residual(sol, 1.5, DiscountedConstants.from_spec(tp1(), RHO))


@pytest.mark.parametrize("make", [tp0, tp2])
def test_bound_and_obstacle_constant_games(make):
    spec = make()
    sol = solve(spec, COARSE, canonical_impulse_grid(spec))
    bound, obstacle = bound_and_obstacle_check(sol, tol=1e-12)
    assert bound.passed and obstacle.passed
    # M u = u - K0 for constant u
    assert obstacle.margin == pytest.approx(0.1, abs=1e-12)


def test_bound_check_detects_a_violation():
    spec = tp1()
    sol = solve(spec, COARSE, canonical_impulse_grid(spec))
    sol.values[5, 7] = 1.5
    bound, _ = bound_and_obstacle_check(sol, tol=0.01)
    assert not bound.passed and bound.worst_node == (5, 7)
    assert bound.margin == pytest.approx(-0.5)


def test_comparison_ordered_and_contracting():
    spec = tp1()
    zg = ImpulseGrid.build(spec, radius=8.0, step=0.4)
    rep = discrete_comparison(spec, COARSE, zg, Scheme(), CosineGain(offset=-0.3), CosineGain())
    assert [v.check for v in rep.verdicts()] == ["comparison_ordered", "comparison_contraction"]
    assert all(v.passed for v in rep.verdicts())
    # shifting the terminal gain by a constant shifts the value by the same constant
    assert np.allclose(rep.u2 - rep.u1, 0.3, atol=1e-12)


def test_comparison_rejects_unordered_gains():
    spec = tp1()
    zg = ImpulseGrid.build(spec, radius=8.0, step=0.4)
    with pytest.raises(ValueError):
        discrete_comparison(spec, COARSE, zg, Scheme(), CosineGain(), ConstantGain(0.0))


def test_comparison_with_discount_skips_contraction():
    spec = tp1()
    zg = ImpulseGrid.build(spec, radius=8.0, step=0.4)
    rep = discrete_comparison(spec, COARSE, zg, Scheme(rho=0.5), CosineGain(offset=-0.3),
                              CosineGain())
    assert rep.contraction is None and rep.ordered.passed


@settings(max_examples=10, deadline=None)
@given(amp=st.floats(0.0, 1.0), off=st.floats(0.0, 0.5))
def test_comparison_property(amp, off):
    spec = tp1()
    grid = Grid(-2.0, 2.0, 11, 6)
    zg = ImpulseGrid.build(spec, radius=4.0, step=0.4)
    rep = discrete_comparison(spec, grid, zg, Scheme(), CosineGain(amplitude=amp, offset=-off),
                              CosineGain(amplitude=amp))
    assert all(v.passed for v in rep.verdicts())


def test_discount_transform_small():
    spec = tp1()
    zg = canonical_impulse_grid(spec)
    verdict, err = discount_transform_check(spec, COARSE, zg, RHO)
    assert verdict.passed
    assert err == pytest.approx(tolerance(COARSE, zg.step) - verdict.margin, abs=1e-15)


def test_verdict_dict_keys():
    v = Verdict("x", True, (1, 2), 0.5)
    assert v.to_dict() == {"check": "x", "pass": True, "worst_node": [1, 2], "margin": 0.5}
    assert Verdict("y", False, 3, -1.0).to_dict()["worst_node"] == 3
