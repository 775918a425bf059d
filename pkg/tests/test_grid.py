import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hetns.errors import UsageError
from hetns.grid import PeriodicGrid

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def test_spacing_weight_shape():
    g = PeriodicGrid(2, 16)
    assert g.spacing == 1 / 16
    assert g.weight == 1 / 256
    assert g.shape == (16, 16)
    assert g.outside_scope is False
    assert PeriodicGrid(1, 8).outside_scope is True


def test_bad_inputs():
    with pytest.raises(UsageError):
        PeriodicGrid(3, 16)
    with pytest.raises(UsageError):
        PeriodicGrid(1, 16, "weno")
    with pytest.raises(UsageError):
        PeriodicGrid(1, 16).check_scalar(np.zeros(15))


def test_spectral_derivative_exact_for_modes():
    g = PeriodicGrid(1, 32)
    x = g.coords[0]
    f = np.sin(2 * np.pi * 3 * x)
    assert np.allclose(g.grad(f)[0], 6 * np.pi * np.cos(6 * np.pi * x), atol=1e-11)
    assert np.allclose(g.laplacian(f), -(6 * np.pi) ** 2 * f, atol=1e-9)


@pytest.mark.parametrize("backend,order", [("fd2", 2), ("fd4", 4)])
def test_finite_difference_orders(backend, order):
    errs = []
    for n in (32, 64):
        g = PeriodicGrid(1, n, backend)
        x = g.coords[0]
        errs.append(np.max(np.abs(g.grad(np.sin(2 * np.pi * x))[0] - 2 * np.pi * np.cos(2 * np.pi * x))))
    assert np.log2(errs[0] / errs[1]) == pytest.approx(order, abs=0.1)


def test_inverse_laplacian_mean_free():
    g = PeriodicGrid(2, 16)
    x, y = g.coords
    f = np.cos(2 * np.pi * x) * np.sin(4 * np.pi * y) + 3.0
    v = g.inverse_laplacian(f)
    assert abs(g.mean(v)) < 1e-14
    assert np.allclose(g.laplacian(v), f - 3.0, atol=1e-11)


def test_shift_matches_roll():
    g = PeriodicGrid(2, 8)
    f = np.arange(64.0).reshape(8, 8)
    assert np.array_equal(g.shift(f, (1, 2)), np.roll(f, (1, 2), axis=(0, 1)))


@settings(max_examples=30, deadline=None)
@given(arrays(float, 32, elements=finite), arrays(float, 32, elements=finite))
def test_integration_by_parts_spectral(f, v):
    g = PeriodicGrid(1, 32)
    lhs = g.integrate(f * g.div(v[None]))
    rhs = -g.integrate(np.sum(g.grad(f) * v[None], axis=0))
    scale = 1 + np.max(np.abs(f)) * np.max(np.abs(v)) * 2 * np.pi * 16
    assert abs(lhs - rhs) <= 1e-10 * scale


@settings(max_examples=15, deadline=None)
@given(arrays(float, (8, 8), elements=finite), arrays(float, (2, 8, 8), elements=finite))
def test_integration_by_parts_2d(f, v):
    g = PeriodicGrid(2, 8)
    lhs = g.integrate(f * g.div(v))
    rhs = -g.integrate(np.sum(g.grad(f) * v, axis=0))
    scale = 1 + np.max(np.abs(f)) * np.max(np.abs(v)) * 100
    assert abs(lhs - rhs) <= 1e-10 * scale
