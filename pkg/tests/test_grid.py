from fractions import Fraction

import numpy as np
import pytest

from impulsegame.grid import Grid, ValueField, canonical_grid, tolerance


def test_canonical_grid():
    g = canonical_grid()
    assert (g.nx, g.nt, g.h, g.dt) == (161, 80, 0.05, 0.0125)
    assert g.nodes.shape == (161, 1)
    assert g.boundary_mask.sum() == 2


def test_times_are_rational_and_increasing():
    g = Grid(-1.0, 1.0, 5, 6, Fraction(3, 2))
    ts = g.times
    assert all(isinstance(t, Fraction) for t in ts)
    assert ts[0] == 0 and ts[-1] == Fraction(3, 2)
    assert all(b > a for a, b in zip(ts, ts[1:]))
    assert g.time_index(Fraction(1, 2)) == 2
    with pytest.raises(ValueError):
        g.time_index(Fraction(1, 3))


@pytest.mark.parametrize("kw", [dict(nx=2), dict(nt=0), dict(xhi=-1.0), dict(d=3),
                                dict(boundary="periodic")])
def test_invalid_grids(kw):
    args = dict(xlo=-1.0, xhi=1.0, nx=5, nt=4)
    args.update(kw)
    with pytest.raises(ValueError):
        Grid(**args)


def test_interpolation_exact_on_affine_fields():
    g = Grid(-2.0, 2.0, 9, 1, d=2)
    u = ValueField(g, 3.0 * g.nodes[:, 0] - 2.0 * g.nodes[:, 1] + 1.0)
    pts = np.random.default_rng(0).uniform(-2, 2, (50, 2))
    assert np.allclose(u(pts), 3 * pts[:, 0] - 2 * pts[:, 1] + 1, atol=1e-13)


def test_interpolation_clamps_outside():
    g = Grid(0.0, 1.0, 3, 1)
    u = ValueField(g, [1.0, 2.0, 5.0])
    assert u(np.array([[-3.0], [7.0]])).tolist() == [1.0, 5.0]


def test_nearest_interior_and_node():
    g = Grid(0.0, 1.0, 5, 1, d=2)
    ni = g.nearest_interior.reshape(5, 5)
    assert ni[0, 0] == 6 and ni[4, 2] == 3 * 5 + 2
    assert g.nearest_node(np.array([[0.26, 0.74], [9.0, -9.0]])).tolist() == [1 * 5 + 3, 4 * 5]


def test_refinement():
    g = Grid(-4.0, 4.0, 21, 10)
    f = g.refine()
    assert f.is_refinement_of(g) and not g.is_refinement_of(f)
    assert np.array_equal(f.axis[::2], g.axis)


def test_round_trip_and_tolerance():
    g = Grid(-4.0, 4.0, 21, 10, Fraction(2), 1, "reflect")
    again = Grid.from_dict(g.to_dict(), Fraction(2))
    assert again.to_dict() == g.to_dict() and again.T == 2
    assert tolerance(g, 0.5, constant=1.0) == pytest.approx(g.h + g.dt + 0.5)


def test_value_field_shape_check():
    with pytest.raises(ValueError):
        ValueField(Grid(0.0, 1.0, 3, 1), [1.0, 2.0])
