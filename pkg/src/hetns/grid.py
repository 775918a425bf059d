"""Uniform periodic grids on the unit torus and their differential operators.

Fields are plain numpy arrays: a scalar field has shape ``grid.shape`` and a
vector field has shape ``(grid.d,) + grid.shape``.  Every operator is a
Fourier multiplier, so the finite-difference backends are exactly the
circulant stencils they name.
"""
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import UsageError

BACKENDS = ("spectral", "fd2", "fd4")


@dataclass(frozen=True)
class PeriodicGrid:
    """``n**d`` points on ``[0, 1)**d`` with periodic wraparound.

    Parameters
    ----------
    d : int
        Dimension, 1 or 2.
    n : int
        Points per axis.
    backend : str
        ``"spectral"`` or centered finite differences ``"fd2"`` / ``"fd4"``.
    """

    d: int
    n: int
    backend: str = "spectral"

    def __post_init__(self):
        if self.d not in (1, 2):
            raise UsageError(f"d must be 1 or 2, got {self.d}")
        if self.n < 4:
            raise UsageError(f"n must be at least 4, got {self.n}")
        if self.backend not in BACKENDS:
            raise UsageError(f"unknown backend {self.backend!r}; choose from {BACKENDS}")

    @property
    def spacing(self):
        return 1.0 / self.n

    @property
    def weight(self):
        """Quadrature weight of one cell, ``spacing**d``."""
        return self.spacing ** self.d

    @property
    def shape(self):
        return (self.n,) * self.d

    @property
    def outside_scope(self):
        return self.d < 2

    @cached_property
    def coords(self):
        x = np.arange(self.n) * self.spacing
        return np.meshgrid(*([x] * self.d), indexing="ij")

    @cached_property
    def points(self):
        """Grid points, shape ``grid.shape + (d,)``."""
        return np.stack(self.coords, axis=-1)

    @cached_property
    def offsets(self):
        """Signed minimum-image offsets of every cell from the origin, shape ``(d,) + shape``."""
        j = np.arange(self.n)
        j = np.where(j > self.n // 2, j - self.n, j) * self.spacing
        return np.stack(np.meshgrid(*([j] * self.d), indexing="ij"))

    @cached_property
    def radius(self):
        """Periodic distance ``|x|`` of each cell from the origin."""
        return np.sqrt(np.sum(self.offsets ** 2, axis=0))

    # -- spectral machinery -------------------------------------------------
    @cached_property
    def wavenumbers(self):
        """Angular wavenumbers on the rfft layout, one broadcastable array per axis."""
        ks = []
        for axis in range(self.d):
            if axis == self.d - 1:
                k = 2 * np.pi * np.fft.rfftfreq(self.n, d=self.spacing)
            else:
                k = 2 * np.pi * np.fft.fftfreq(self.n, d=self.spacing)
            shape = [1] * self.d
            shape[axis] = k.size
            ks.append(k.reshape(shape))
        return ks

    def _nyquist(self, k):
        return np.isclose(np.abs(k), np.pi * self.n)

    @cached_property
    def derivative_symbols(self):
        """Multiplier of ``d/dx_i`` for each axis under the grid backend."""
        h = self.spacing
        out = []
        for k in self.wavenumbers:
            if self.backend == "spectral":
                s = 1j * k
                s = np.where(self._nyquist(k), 0.0, s)
            elif self.backend == "fd2":
                s = 1j * np.sin(k * h) / h
            else:
                s = 1j * (8 * np.sin(k * h) - np.sin(2 * k * h)) / (6 * h)
            out.append(s)
        return out

    @cached_property
    def laplacian_symbol(self):
        h = self.spacing
        total = 0.0
        for k in self.wavenumbers:
            if self.backend == "spectral":
                total = total - k ** 2
            elif self.backend == "fd2":
                total = total - (2 - 2 * np.cos(k * h)) / h ** 2
            else:
                total = total - (30 - 32 * np.cos(k * h) + 2 * np.cos(2 * k * h)) / (12 * h ** 2)
        return np.broadcast_to(total, self.spectral_shape).copy()

    @cached_property
    def spectral_shape(self):
        return self.shape[:-1] + (self.n // 2 + 1,)

    @cached_property
    def dealias_mask(self):
        """Two-thirds rule mask on the rfft layout."""
        kmax = (2.0 / 3.0) * np.pi * self.n
        mask = np.ones(self.spectral_shape, dtype=bool)
        for k in self.wavenumbers:
            mask &= np.abs(k) < kmax
        return mask

    def fft(self, f):
        return np.fft.rfftn(f, axes=tuple(range(-self.d, 0)))

    def ifft(self, fh):
        return np.fft.irfftn(fh, s=self.shape, axes=tuple(range(-self.d, 0)))

    # -- checks -------------------------------------------------------------
    def check_scalar(self, f, name="field"):
        f = np.asarray(f, dtype=float)
        if f.shape != self.shape:
            raise UsageError(f"{name} has shape {f.shape}, grid expects {self.shape}")
        return f

    def check_vector(self, v, name="vector field"):
        v = np.asarray(v, dtype=float)
        if self.d == 1 and v.shape == self.shape:
            v = v[None]
        if v.shape != (self.d,) + self.shape:
            raise UsageError(f"{name} has shape {v.shape}, grid expects {(self.d,) + self.shape}")
        return v

    # -- operators ----------------------------------------------------------
    def integrate(self, f):
        return float(np.sum(f) * self.weight)

    def mean(self, f):
        return float(np.mean(f))

    def grad(self, f):
        fh = self.fft(self.check_scalar(f))
        return np.stack([self.ifft(s * fh) for s in self.derivative_symbols])

    def div(self, v):
        v = self.check_vector(v)
        total = 0.0
        for i, s in enumerate(self.derivative_symbols):
            total = total + s * self.fft(v[i])
        return self.ifft(total)

    def laplacian(self, f):
        return self.ifft(self.laplacian_symbol * self.fft(self.check_scalar(f)))

    def inverse_laplacian(self, f):
        """Zero-mean solution ``g`` of ``lap g = f - mean(f)``."""
        fh = self.fft(self.check_scalar(f))
        sym = self.laplacian_symbol
        out = np.zeros_like(fh)
        nz = sym != 0
        out[nz] = fh[nz] / sym[nz]
        return self.ifft(out)

    def gradient_norm(self, v):
        """Pointwise Frobenius norm of the Jacobian of a vector field."""
        v = self.check_vector(v)
        sq = 0.0
        for i in range(self.d):
            sq = sq + np.sum(self.grad(v[i]) ** 2, axis=0)
        return np.sqrt(sq)

    def shift(self, f, offset):
        """``f(x - offset)`` for an integer cell offset (tuple of length d)."""
        return np.roll(f, tuple(int(o) for o in np.atleast_1d(offset)), axis=tuple(range(-self.d, 0)))
