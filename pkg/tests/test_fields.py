import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hetns.errors import ResolutionError
from hetns.fields import (DifferencePair, check_maximal_domination, d_h_operator, default_radii, maximal_function,
                          read_field_binary, read_field_csv, write_field_binary, write_field_csv)
from hetns.grid import PeriodicGrid

G1 = PeriodicGrid(1, 32)
G2 = PeriodicGrid(2, 8)
vals = st.floats(-5, 5, allow_nan=False, allow_infinity=False)


def test_maximal_of_constant_is_constant():
    assert np.allclose(maximal_function(G2, np.full(G2.shape, -2.5)), 2.5, atol=1e-13)


def test_radius_ladder_spans_cell_to_half():
    r = default_radii(G1)
    assert r[0] == pytest.approx(G1.spacing) and r[-1] == pytest.approx(0.5)


@settings(max_examples=40, deadline=None)
@given(arrays(float, 32, elements=vals))
def test_maximal_dominates_pointwise(f):
    assert np.all(maximal_function(G1, f) >= np.abs(f) - 1e-12)


@settings(max_examples=40, deadline=None)
@given(arrays(float, 32, elements=vals), arrays(float, 32, elements=vals))
def test_maximal_sublinear(f, g):
    lhs = maximal_function(G1, f + g)
    rhs = maximal_function(G1, f) + maximal_function(G1, g)
    assert np.all(lhs <= rhs + 1e-11)


@settings(max_examples=40, deadline=None)
@given(arrays(float, (8, 8), elements=vals), arrays(float, (8, 8), elements=vals),
       st.tuples(st.integers(0, 7), st.integers(0, 7)))
def test_difference_pair_product_rule(f, g, off):
    pf, pg, pfg = DifferencePair(G2, f, off), DifferencePair(G2, g, off), DifferencePair(G2, f * g, off)
    assert np.array_equal(pfg.delta, f * pg.delta + pf.delta * pg.shifted) or \
        np.allclose(pfg.delta, f * pg.delta + pf.delta * pg.shifted, rtol=0, atol=1e-12)
    assert np.allclose(pf.bar + pf.delta, 2 * f, atol=1e-12)


def test_d_h_needs_resolved_scale():
    u = np.sin(2 * np.pi * G1.coords[0])[None]
    with pytest.raises(ResolutionError):
        d_h_operator(G1, u, G1.spacing / 2)


def test_d_h_of_constant_gradient_magnitude():
    # u = (cos 2 pi x, sin 2 pi x) has |grad u| = 2 pi everywhere, so D_h u is the table mass times 2 pi
    g = PeriodicGrid(2, 32)
    x = g.coords[0]
    u = np.stack([np.cos(2 * np.pi * x), np.sin(2 * np.pi * x)])
    h = 0.2
    r = g.radius
    mass = np.sum(np.where(r <= h * (1 + 1e-12), 1 / np.maximum(r, g.spacing / 2), 0.0)) * g.weight / h
    assert np.allclose(d_h_operator(g, u, h), 2 * np.pi * mass, rtol=1e-12)


def test_domination_constant_field_is_degenerate():
    rep = check_maximal_domination(G1, np.ones((1, 32)))
    assert rep.degenerate and rep.passed


def test_domination_single_mode_stable():
    out = []
    for n in (128, 256):
        g = PeriodicGrid(1, n)
        rep = check_maximal_domination(g, np.sin(2 * np.pi * g.coords[0])[None])
        assert rep.passed and rep.difference_violations == 0 and rep.pair_violations == 0
        out.append((rep.difference_constant, rep.pair_constant))
    assert out[1][0] / out[0][0] == pytest.approx(1, rel=0.05)
    assert out[1][1] / out[0][1] == pytest.approx(1, rel=0.05)


def test_domination_against_tight_constants_counts_violations():
    g = PeriodicGrid(1, 64)
    u = np.sin(2 * np.pi * g.coords[0])[None]
    rep = check_maximal_domination(g, u, constants=(0.1, 0.1))
    assert rep.difference_violations > 0 and not rep.passed


@pytest.mark.parametrize("grid,comps", [(G1, 1), (G2, 1), (G2, 3)])
def test_binary_round_trip_bit_exact(tmp_path, grid, comps):
    rng = np.random.default_rng(1)
    v = rng.standard_normal((comps,) + grid.shape)
    v = v[0] if comps == 1 else v
    write_field_binary(tmp_path / "f.bin", grid, v)
    g2, back = read_field_binary(tmp_path / "f.bin")
    assert (g2.d, g2.n) == (grid.d, grid.n)
    assert back.tobytes() == np.ascontiguousarray(v).tobytes()
    raw = (tmp_path / "f.bin").read_bytes()
    assert np.frombuffer(raw[:24], "<i8").tolist() == [grid.d, grid.n, comps]


@pytest.mark.parametrize("grid", [G1, G2])
def test_csv_round_trip_bit_exact(tmp_path, grid):
    v = np.random.default_rng(2).standard_normal(grid.shape) * 1e-7
    write_field_csv(tmp_path / "f.csv", grid, v)
    _, back = read_field_csv(tmp_path / "f.csv")
    assert back.tobytes() == v.tobytes()
