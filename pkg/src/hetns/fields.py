"""Field-level analysis tools: maximal function, the D_h operator, difference calculus, field I/O."""
from dataclasses import dataclass

import numpy as np

from .errors import ResolutionError, UsageError
from .grid import PeriodicGrid

__all__ = [
    "DifferencePair",
    "DominationReport",
    "check_maximal_domination",
    "circular_convolve",
    "d_h_operator",
    "default_radii",
    "maximal_function",
    "read_field_binary",
    "read_field_csv",
    "write_field_binary",
    "write_field_csv",
]


def circular_convolve(grid, table, f):
    """``sum_j table(x_i - x_j) f(x_j) * weight`` via FFT; ``table`` is indexed by offset."""
    return grid.ifft(grid.fft(table) * grid.fft(f)) * grid.weight


def default_radii(grid, count=16):
    """Geometric radius ladder from one cell (the single-cell ball) up to 1/2."""
    return grid.spacing * (0.5 / grid.spacing) ** (np.arange(count) / (count - 1))


def maximal_function(grid, f, radii=None):
    """Discrete Hardy-Littlewood maximal function of ``|f|``.

    Balls are the cells with ``|z| < r``; the first radius (one spacing)
    is the single-cell ball, so ``M f >= |f|`` holds exactly.
    """
    af = np.abs(grid.check_scalar(f))
    radii = default_radii(grid) if radii is None else np.asarray(radii, dtype=float)
    out = af.copy()
    fh = grid.fft(af)
    for r in radii:
        ball = grid.radius < r * (1 - 1e-12)
        count = int(ball.sum())
        if count <= 1:
            continue
        avg = grid.ifft(grid.fft(ball.astype(float)) * fh) / count
        np.maximum(out, avg, out=out)
    return out


def _d_h_table(grid, h):
    r = grid.radius
    inside = r <= h * (1 + 1e-12)
    reg = np.maximum(r, grid.spacing / 2) ** (grid.d - 1)
    return np.where(inside, 1.0 / reg, 0.0) / h


def d_h_operator(grid, u, h):
    """``D_h u(x) = (1/h) * sum_{|z|<=h} |grad u(x+z)| / |z|^(d-1) * weight``.

    The ``z = 0`` cell uses ``|z| = spacing/2`` in the singular weight.
    """
    if h < grid.spacing * (1 - 1e-12):
        raise ResolutionError(f"h={h:g} is below the grid spacing {grid.spacing:g}")
    g = grid.gradient_norm(u)
    # kernel is symmetric, so correlation equals convolution
    return circular_convolve(grid, _d_h_table(grid, h), g)


@dataclass(frozen=True)
class DifferencePair:
    """``delta f = f(x) - f(x - xi)`` and ``bar f = f(x) + f(x - xi)`` for a cell offset ``xi``."""

    grid: PeriodicGrid
    f: np.ndarray
    offset: tuple

    @property
    def shifted(self):
        return self.grid.shift(self.f, self.offset)

    @property
    def delta(self):
        return self.f - self.shifted

    @property
    def bar(self):
        return self.f + self.shifted


@dataclass
class DominationReport:
    difference_constant: float
    pair_constant: float
    difference_violations: int
    pair_violations: int
    degenerate: bool

    @property
    def passed(self):
        if self.degenerate:
            return True
        finite = np.isfinite(self.difference_constant) and np.isfinite(self.pair_constant)
        return bool(finite and self.difference_violations == 0 and self.pair_violations == 0)


def _unique_offsets(grid):
    """Integer offsets covering every unordered pair distance once per direction."""
    half = grid.n // 2
    rng = range(-half + 1, half + 1)
    if grid.d == 1:
        return [(k,) for k in range(1, half + 1)]
    out = []
    for a in rng:
        for b in rng:
            if (a, b) > (0, 0):
                out.append((a, b))
    return out


def check_maximal_domination(grid, u, h_ladder=None, constants=None, radii=None, rtol=1e-12):
    """Empirical constants for ``D_h u <= C M|grad u|`` and ``|u(x)-u(y)| <= C (M grad u(x) + M grad u(y)) |x-y|``.

    With ``constants=(c_diff_ref, c_pair_ref)`` the violation counts are taken against
    those values instead of the ones measured here.
    """
    u = grid.check_vector(u)
    g = grid.gradient_norm(u)
    mg = maximal_function(grid, g, radii=radii)
    scale = max(float(np.max(np.abs(u))), 1.0)
    if float(np.max(g)) <= 1e-12 * scale:
        return DominationReport(0.0, 0.0, 0, 0, degenerate=True)
    if h_ladder is None:
        h_ladder = default_radii(grid)
    floor = 1e-12 * float(np.max(mg))

    ratios = []
    for h in h_ladder:
        dh = d_h_operator(grid, u, h)
        ratios.append(np.where(mg > floor, dh / np.maximum(mg, floor), 0.0))
    ratios = np.array(ratios)
    c_diff = float(np.max(ratios))

    pair_ratios = []
    for off in _unique_offsets(grid):
        dist = np.sqrt(np.sum((np.asarray(off) * grid.spacing) ** 2))
        du = np.sqrt(np.sum((u - grid.shift(u, (0,) + off)) ** 2, axis=0))
        denom = (mg + grid.shift(mg, off)) * dist
        pair_ratios.append(np.where(denom > floor, du / np.maximum(denom, floor), np.where(du > 0, np.inf, 0.0)))
    pair_ratios = np.array(pair_ratios)
    c_pair = float(np.max(pair_ratios))

    c_diff_ref, c_pair_ref = (c_diff, c_pair) if constants is None else constants
    v_diff = int(np.sum(ratios > c_diff_ref * (1 + rtol)))
    v_pair = int(np.sum(pair_ratios > c_pair_ref * (1 + rtol)))
    return DominationReport(c_diff, c_pair, v_diff, v_pair, degenerate=False)


# -- field I/O ----------------------------------------------------------------

_HEADER = np.dtype("<i8")
_PAYLOAD = np.dtype("<f8")


def _as_components(grid, values):
    values = np.asarray(values, dtype=float)
    if values.shape == grid.shape:
        return values[None]
    if values.ndim == grid.d + 1 and values.shape[1:] == grid.shape:
        return values
    raise UsageError(f"values of shape {values.shape} do not live on grid {grid.shape}")


def write_field_binary(path, grid, values):
    """Header ``(d, n, components)`` as little-endian int64, then row-major float64 payload."""
    comp = _as_components(grid, values)
    with open(path, "wb") as fh:
        fh.write(np.array([grid.d, grid.n, comp.shape[0]], dtype=_HEADER).tobytes())
        fh.write(np.ascontiguousarray(comp, dtype=_PAYLOAD).tobytes())


def read_field_binary(path, backend="spectral"):
    with open(path, "rb") as fh:
        raw = fh.read()
    d, n, c = np.frombuffer(raw[:24], dtype=_HEADER)
    grid = PeriodicGrid(int(d), int(n), backend)
    data = np.frombuffer(raw[24:], dtype=_PAYLOAD).reshape((int(c),) + grid.shape).copy()
    return grid, (data[0] if c == 1 else data)


def write_field_csv(path, grid, values):
    """Columns ``x0[, x1], value0[, value1, ...]``, one row per grid point in row-major order."""
    comp = _as_components(grid, values)
    cols = [c.ravel() for c in grid.coords] + [v.ravel() for v in comp]
    names = [f"x{i}" for i in range(grid.d)] + [f"value{i}" for i in range(comp.shape[0])]
    np.savetxt(path, np.column_stack(cols), delimiter=",", header=",".join(names), comments="", fmt="%.17g")


def read_field_csv(path, backend="spectral"):
    with open(path) as fh:
        names = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    d = sum(1 for name in names if name.startswith("x"))
    n = int(round(data.shape[0] ** (1.0 / d)))
    grid = PeriodicGrid(d, n, backend)
    comp = data[:, d:].T.reshape((-1,) + grid.shape)
    return grid, (comp[0] if comp.shape[0] == 1 else comp)
