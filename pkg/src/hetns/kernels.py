"""Convolution kernels on periodic grids.

Two families live here:

* mollifiers ``L_eps`` (a C-infinity bump scaled to radius ``eps``) and the
  log-averaged mollifier, the mean of ``L_eps'`` over ``eps' in [eps, 2 eps]``
  against ``d eps' / eps'``;
* compactness kernels ``K_h``, normalized versions of ``(h + |x|)^-(d+a)``
  near the origin with an ``h``-independent tail, and their aggregate
  ``sum_j K_{h_j} * log-weight`` over a geometric ladder in ``[h0, 1]``.

Every table is indexed by periodic offset from the origin, so convolution is
``(K * f)_i = sum_j K[i - j] f_j * cell_weight``.
"""
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate

from .errors import ResolutionError, UsageError
from .grid import PeriodicGrid

MOLLIFIER_KINDS = ("plain", "log-averaged")
DEFAULT_LADDER_SIZE = 32


# -- bump profile ---------------------------------------------------------------

def _bump(r):
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    inside = r < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - r[inside] ** 2))
    return out


@lru_cache(maxsize=None)
def bump_mass(d):
    """Continuous integral of the unnormalized bump over the unit ball in ``R^d``."""
    if d == 1:
        val, _ = integrate.quad(lambda r: 2 * _bump(np.array(r)), 0, 1, epsabs=1e-14, epsrel=1e-13)
    else:
        val, _ = integrate.quad(lambda r: 2 * np.pi * r * _bump(np.array(r)), 0, 1, epsabs=1e-14, epsrel=1e-13)
    return val


def bump_profile(grid, scale):
    """``L_scale`` sampled at the grid offsets, continuous normalization."""
    return _bump(grid.radius / scale) / (bump_mass(grid.d) * scale ** grid.d)


def log_scales(lo, hi, size):
    """Midpoint rungs of a geometric ladder on ``[lo, hi]`` and their ``d s / s`` weights."""
    j = np.arange(size)
    rungs = lo * (hi / lo) ** ((j + 0.5) / size)
    return rungs, np.full(size, np.log(hi / lo) / size)


# -- convolution ----------------------------------------------------------------

def _table_of(kernel):
    if isinstance(kernel, tuple):
        return kernel
    return kernel.grid, kernel.table


def convolve(kernel, f, backend="spectral"):
    """Circular convolution of a kernel table with a scalar or vector field.

    ``kernel`` is any object with ``grid`` and ``table`` attributes or a
    ``(grid, table)`` pair.  ``backend="direct"`` performs the explicit sum.
    """
    grid, table = _table_of(kernel)
    f = np.asarray(f, dtype=float)
    if f.shape[-grid.d:] != grid.shape or f.ndim not in (grid.d, grid.d + 1):
        raise UsageError(f"field of shape {f.shape} does not live on the kernel grid {grid.shape}")
    if backend == "spectral":
        return grid.ifft(grid.fft(table) * grid.fft(f)) * grid.weight
    if backend == "direct":
        out = np.zeros_like(f)
        for idx in zip(*np.nonzero(table)):
            out += table[idx] * grid.shift(f, idx)
        return out * grid.weight
    raise UsageError(f"unknown convolution backend {backend!r}")


def l1_norm(grid, table):
    return float(np.sum(np.abs(table)) * grid.weight)


# -- mollifiers -----------------------------------------------------------------

@dataclass(frozen=True)
class Mollifier:
    grid: PeriodicGrid
    epsilon: float
    kind: str
    table: np.ndarray = field(repr=False)

    @property
    def mass(self):
        return float(np.sum(self.table) * self.grid.weight)

    @property
    def support_radius(self):
        return float(np.max(self.grid.radius[self.table > 0]))

    def __call__(self, f, backend="spectral"):
        return convolve(self, f, backend)


def build_mollifier(grid, eps, kind="log-averaged", ladder_size=DEFAULT_LADDER_SIZE):
    """Plain ``L_eps`` or the log-averaged mollifier on ``grid``.

    The table is renormalized once so that its discrete mass is exactly one.
    """
    if kind not in MOLLIFIER_KINDS:
        raise UsageError(f"unknown mollifier kind {kind!r}; choose from {MOLLIFIER_KINDS}")
    if not 0 < eps < 1:
        raise UsageError(f"eps must lie in (0, 1), got {eps}")
    if not grid.spacing < eps / 4:
        raise ResolutionError(
            f"eps={eps:g} needs grid spacing < eps/4, i.e. n > {4 / eps:g} points per axis (have n={grid.n})"
        )
    reach = eps if kind == "plain" else 2 * eps
    if reach > 0.5:
        raise UsageError(f"mollifier support radius {reach:g} exceeds half the period")
    if kind == "plain":
        table = bump_profile(grid, eps)
    else:
        rungs, w = log_scales(eps, 2 * eps, ladder_size)
        table = sum(wj * bump_profile(grid, e) for e, wj in zip(rungs, w)) / np.log(2.0)
    table = table / (np.sum(table) * grid.weight)
    return Mollifier(grid, float(eps), kind, table)


# -- compactness kernels --------------------------------------------------------

BLEND_START = 0.5
TAIL_START = 2.0 / 3.0


def _smooth_step(s):
    s = np.clip(s, 0.0, 1.0)
    return s * s * (3 - 2 * s)


def _tail_cutoff(r):
    """C-infinity cutoff: 1 up to 2/3, 0 from 1 on."""
    s = np.clip((r - TAIL_START) / (1 - TAIL_START), 0.0, 1.0)

    def psi(z):
        return np.where(z > 0, np.exp(-1.0 / np.where(z > 0, z, 1.0)), 0.0)

    return psi(1 - s) / (psi(1 - s) + psi(s))


def raw_kernel(r, h, d, a):
    """Unnormalized kernel profile as a function of ``r = |x|``."""
    r = np.asarray(r, dtype=float)
    p = d + a
    core = (h + r) ** (-p)
    tail = (1 + TAIL_START) ** (-p)
    beta = _smooth_step((r - BLEND_START) / (TAIL_START - BLEND_START))
    blended = (1 - beta) * core + beta * tail
    return np.where(r <= BLEND_START, core, np.where(r < TAIL_START, blended, tail * _tail_cutoff(r)))


def raw_kernel_derivative(r, h, d, a):
    """Radial derivative of :func:`raw_kernel`."""
    r = np.asarray(r, dtype=float)
    p = d + a
    core = (h + r) ** (-p)
    dcore = -p * (h + r) ** (-p - 1)
    tail = (1 + TAIL_START) ** (-p)
    width = TAIL_START - BLEND_START
    s = np.clip((r - BLEND_START) / width, 0.0, 1.0)
    beta = s * s * (3 - 2 * s)
    dbeta = 6 * s * (1 - s) / width
    dblend = (1 - beta) * dcore - dbeta * (core - tail)
    # beyond r = 2/3 only the 2D corners are reached (max |x| = 0.707)
    step = 1e-7
    dcut = (_tail_cutoff(r + step) - _tail_cutoff(r - step)) / (2 * step)
    return np.where(r <= BLEND_START, dcore, np.where(r < TAIL_START, dblend, tail * dcut))


@dataclass(frozen=True)
class CompactnessKernel:
    grid: PeriodicGrid
    h0: float
    a: float
    h_ladder: np.ndarray = field(repr=False)
    log_weights: np.ndarray = field(repr=False)
    tables: np.ndarray = field(repr=False)
    norms: np.ndarray = field(repr=False)
    aggregate: np.ndarray = field(repr=False)
    resolved: bool = True

    @property
    def ladder_size(self):
        return len(self.h_ladder)

    @property
    def aggregate_norm(self):
        return l1_norm(self.grid, self.aggregate)

    def table(self, j):
        return self.tables[j]

    def kernel(self, j):
        """``(grid, table)`` pair of rung ``j``, usable with :func:`convolve`."""
        return self.grid, self.tables[j]

    def aggregate_kernel(self):
        return self.grid, self.aggregate

    def gradient_ratio(self, method="spectral"):
        """Per-rung ``max_x |x| |grad K_h(x)| / K_h(x)`` over grid points.

        ``method="spectral"`` differentiates the table with the grid's
        derivative operator; ``"analytic"`` uses the exact radial derivative.
        """
        r = self.grid.radius
        out = np.empty(self.ladder_size)
        for j, h in enumerate(self.h_ladder):
            k = self.tables[j]
            if method == "spectral":
                g = np.sqrt(np.sum(self.grid.grad(k) ** 2, axis=0))
            elif method == "analytic":
                g = np.abs(raw_kernel_derivative(r, h, self.grid.d, self.a)) / self.norms[j]
            else:
                raise UsageError(f"unknown gradient method {method!r}")
            out[j] = float(np.max(np.where(k > 0, r * g / np.where(k > 0, k, 1.0), 0.0)))
        return out


def build_compactness_kernel(grid, h0, a=1.0, ladder_size=DEFAULT_LADDER_SIZE, check_resolution=True):
    """Normalized ``K_h`` tables on the midpoint geometric ladder of ``[h0, 1]`` and their aggregate.

    The aggregate is ``sum_j (|log h0| / M) K_{h_j}``, so its L1 norm equals ``|log h0|``.
    With ``check_resolution=False`` kernels below the ``h0 >= 2 dx`` threshold are
    still built and flagged through ``resolved=False``.
    """
    if not 0 < h0 < 1:
        raise UsageError(f"h0 must lie in (0, 1), got {h0}")
    if a <= 0:
        raise UsageError(f"singularity exponent a must be positive, got {a}")
    if ladder_size < 8:
        raise UsageError(f"ladder_size must be at least 8, got {ladder_size}")
    resolved = h0 >= 2 * grid.spacing * (1 - 1e-12)
    if check_resolution and not resolved:
        raise ResolutionError(
            f"h0={h0:g} needs h0 >= 2*spacing, i.e. n >= {int(np.ceil(2 / h0))} points per axis (have n={grid.n})"
        )
    hs, w = log_scales(h0, 1.0, ladder_size)
    tables = np.empty((ladder_size,) + grid.shape)
    norms = np.empty(ladder_size)
    for j, h in enumerate(hs):
        raw = raw_kernel(grid.radius, h, grid.d, a)
        norms[j] = np.sum(raw) * grid.weight
        tables[j] = raw / norms[j]
    aggregate = np.tensordot(w, tables, axes=1)
    return CompactnessKernel(grid, float(h0), float(a), hs, w, tables, norms, aggregate, resolved)


def single_kernel(grid, h, a=1.0):
    """Normalized ``K_h`` for one scale as a ``(grid, table)`` pair."""
    if h < grid.spacing * (1 - 1e-12):
        raise ResolutionError(f"h={h:g} is below the grid spacing {grid.spacing:g}")
    raw = raw_kernel(grid.radius, h, grid.d, a)
    return grid, raw / (np.sum(raw) * grid.weight)
