import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import integrate

from hetns.errors import ResolutionError, UsageError
from hetns.grid import PeriodicGrid
from hetns.kernels import (build_compactness_kernel, build_mollifier, bump_mass, convolve, l1_norm, log_scales,
                           raw_kernel, raw_kernel_derivative, single_kernel)

G = PeriodicGrid(1, 128)


def test_bump_mass_oracle():
    # independent oracle: 1D mass by tanh-sinh style substitution-free quad on (-1, 1)
    val, _ = integrate.quad(lambda r: np.exp(-1 / (1 - r * r)), -1, 1, epsabs=1e-14)
    assert bump_mass(1) == pytest.approx(val, rel=1e-12)
    assert bump_mass(1) == pytest.approx(0.44399381616807943, rel=1e-12)


@pytest.mark.parametrize("kind", ["plain", "log-averaged"])
def test_mollifier_unit_mass_and_support(kind):
    m = build_mollifier(G, 0.1, kind)
    assert m.mass == pytest.approx(1, abs=1e-14)
    assert np.all(m.table >= 0)
    reach = 0.1 if kind == "plain" else 0.2
    assert m.support_radius < reach


def test_mollifier_resolution_message_names_n():
    with pytest.raises(ResolutionError, match=r"n > 80"):
        build_mollifier(PeriodicGrid(1, 64), 0.05)


def test_mollifier_support_limit():
    with pytest.raises(UsageError):
        build_mollifier(G, 0.3, "log-averaged")


def test_unknown_kind():
    with pytest.raises(UsageError):
        build_mollifier(G, 0.1, "gaussian")


@settings(max_examples=30, deadline=None)
@given(arrays(float, 128, elements=st.floats(0, 10, allow_nan=False)))
def test_convolution_preserves_mass_and_positivity(f):
    m = build_mollifier(G, 0.1)
    out = m(f)
    assert G.integrate(out) == pytest.approx(G.integrate(f), abs=1e-12 * (1 + G.integrate(f)))
    assert np.all(out >= -1e-12 * (1 + np.max(f)))


def test_direct_matches_spectral():
    f = np.random.default_rng(3).standard_normal(G.shape)
    m = build_mollifier(G, 0.1, "plain")
    assert np.allclose(convolve(m, f, "direct"), convolve(m, f, "spectral"), atol=1e-12)
    g2 = PeriodicGrid(2, 16)
    k = single_kernel(g2, 0.1)
    f2 = np.random.default_rng(4).standard_normal(g2.shape)
    assert np.allclose(convolve(k, f2, "direct"), convolve(k, f2), atol=1e-12)


def test_log_scales_weights():
    rungs, w = log_scales(0.01, 1.0, 8)
    assert np.all(np.diff(rungs) > 0) and rungs[0] > 0.01 and rungs[-1] < 1
    assert w.sum() == pytest.approx(np.log(100))


def test_kernel_profile_continuity():
    for r0 in (0.5, 2 / 3):
        lo, hi = raw_kernel(np.array([r0 - 1e-9, r0 + 1e-9]), 0.05, 2, 1.0)
        assert lo == pytest.approx(hi, rel=1e-7)
    assert raw_kernel(np.array([1.0]), 0.05, 2, 1.0)[0] == 0.0


def test_kernel_derivative_matches_finite_difference():
    r = np.linspace(0.0101, 0.6899, 137)  # off the C1 breakpoints 1/2 and 2/3
    e = 1e-6
    fd = (raw_kernel(r + e, 0.03, 1, 1.0) - raw_kernel(r - e, 0.03, 1, 1.0)) / (2 * e)
    assert np.allclose(raw_kernel_derivative(r, 0.03, 1, 1.0), fd, rtol=1e-5, atol=1e-6)


def test_compactness_kernel_norms():
    K = build_compactness_kernel(PeriodicGrid(1, 1024), 1e-2)
    assert K.ladder_size == 32
    for j in range(K.ladder_size):
        assert l1_norm(*K.kernel(j)) == pytest.approx(1, abs=1e-12)
    assert K.aggregate_norm == pytest.approx(abs(np.log(1e-2)), rel=1e-12)
    assert K.resolved


def test_compactness_kernel_resolution():
    g = PeriodicGrid(1, 64)
    with pytest.raises(ResolutionError, match="n >= 200"):
        build_compactness_kernel(g, 1e-2)
    K = build_compactness_kernel(g, 1e-2, check_resolution=False)
    assert not K.resolved


def test_gradient_ratio_finite():
    K = build_compactness_kernel(PeriodicGrid(1, 512), 1e-2)
    for method in ("analytic", "spectral"):
        r = K.gradient_ratio(method)
        assert np.all(np.isfinite(r)) and np.all(r > 0)
    with pytest.raises(UsageError):
        K.gradient_ratio("magic")


def test_single_kernel_below_spacing():
    with pytest.raises(ResolutionError):
        single_kernel(G, G.spacing / 3)
