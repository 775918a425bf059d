"""Heterogeneous pressure laws P(t, x, s), potential energies, the artificial ladder, hypothesis checks.

Points ``x`` are arrays whose leading axis holds the ``d`` coordinates, so
a law evaluates on a whole grid at once: ``law.eval(t, grid.coords_array, rho)``.
"""
from dataclasses import dataclass, field
from math import floor

import numpy as np
from scipy import integrate
from scipy.interpolate import RegularGridInterpolator

from .errors import DomainError, LadderError, QuadratureError, UsageError

QUAD_EPSABS = 1e-10
DEFAULT_S_RANGE = (1e-6, 10.0)


def _point(x, d):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    if x.shape[0] != d:
        raise UsageError(f"point has {x.shape[0]} coordinates, law expects d={d}")
    return x


def _density(s):
    s = np.asarray(s, dtype=float)
    if np.any(s < 0):
        raise DomainError("pressure evaluated at negative density")
    return s


def _zero(t, x):
    return np.zeros(np.broadcast(np.asarray(t, dtype=float), x[0]).shape)


class PressureLaw:
    """A pressure law with its declared decomposition and exponents.

    Callables take ``(t, x)`` or ``(t, x, s)`` (``q_mod``: ``(t, x, y)``)
    and must broadcast over numpy arrays.  Unset parts of the decomposition
    default to ``P0 = P`` and zero fields.
    """

    def __init__(self, eval, gamma, d, p0_eval=None, remainder_R=None, theta1=None, theta2=None,
                 theta3=None, q_mod=None, p_tilde=None, p=None, q=3.0, s0=2.0, s1=2.0,
                 gamma_bar=0.0, homogeneous=False, name="custom"):
        self._eval = eval
        self._p0 = p0_eval
        self.gamma = float(gamma)
        self.d = int(d)
        self.remainder_R = remainder_R or _zero
        self.theta1 = theta1 or _zero
        self.theta2 = theta2 or _zero
        self.theta3 = theta3 or _zero
        self.q_mod = q_mod or (lambda t, x, y: _zero(t, x) * _zero(t, y))
        self.p_tilde = p_tilde or _zero
        self.declares_p_tilde = p_tilde is not None
        self.p = self.gamma if p is None else float(p)
        self.q, self.s0, self.s1, self.gamma_bar = float(q), float(s0), float(s1), float(gamma_bar)
        self.homogeneous = homogeneous
        self.name = name

    def eval(self, t, x, s):
        return self._eval(t, _point(x, self.d), _density(s))

    def p0_eval(self, t, x, s):
        if self._p0 is None:
            return self.eval(t, x, s)
        return self._p0(t, _point(x, self.d), _density(s))

    def exponent_violations(self):
        d, g = self.d, self.gamma
        out = []
        if not g > 3 * d / (d + 2):
            out.append(f"gamma={g} must exceed 3d/(d+2)={3 * d / (d + 2):g}")
        if not self.p < g + 2 * g / d - 1:
            out.append(f"p={self.p} must be below gamma+2gamma/d-1={g + 2 * g / d - 1:g}")
        if not self.q > 2:
            out.append(f"q={self.q} must exceed 2")
        if not self.s0 > 1:
            out.append(f"s0={self.s0} must exceed 1")
        if not self.s1 > 1:
            out.append(f"s1={self.s1} must exceed 1")
        if not 0 <= self.gamma_bar <= g / 2:
            out.append(f"gamma_bar={self.gamma_bar} must lie in [0, gamma/2]")
        return out


def power_law(gamma, d, kappa=1.0):
    """``P = kappa s^gamma``, independent of ``(t, x)``."""
    kappa = float(kappa)
    return PressureLaw(lambda t, x, s: kappa * s ** gamma, gamma, d, homogeneous=True, name="power")


class VirialPressure(PressureLaw):
    """``P = s^gamma + theta(t, x) * sum_n B_n(theta) s^n`` for ``n = 0..floor(gamma/2)``.

    Declared decomposition: ``P0 = P``, ``R = 0``; with ``c_n = theta B_n(theta)``
    the modulus is ``P~ = sum_n n |c_n|`` and
    ``Q(x, y) = sum_n |c_n(x) - c_n(y)| max(1, s_max)^n``.
    """

    def __init__(self, gamma, b_coeffs, theta_field, d, s_max=DEFAULT_S_RANGE[1], **kw):
        if len(b_coeffs) != floor(gamma / 2) + 1:
            raise UsageError(f"virial law with gamma={gamma} needs {floor(gamma / 2) + 1} coefficients, got {len(b_coeffs)}")
        self.b_coeffs = list(b_coeffs)
        self.theta_field = theta_field
        self.s_max = float(s_max)
        kw.setdefault("theta1", self._theta1)
        kw.setdefault("theta2", self._theta2)
        kw.setdefault("theta3", self._theta3)
        super().__init__(self._virial, gamma, d, q_mod=self._q, p_tilde=self._p_tilde,
                         homogeneous=False, name="virial", **kw)

    def coefficients(self, t, x):
        th = np.asarray(self.theta_field(t, x), dtype=float)
        return [th * np.asarray(b(th), dtype=float) for b in self.b_coeffs]

    def _virial(self, t, x, s):
        out = s ** self.gamma
        for n, c in enumerate(self.coefficients(t, x)):
            out = out + c * s ** n
        return out

    def _theta1(self, t, x):
        return sum(np.abs(c) for c in self.coefficients(t, x))

    def _theta2(self, t, x, e=1e-6):
        up, dn = self.coefficients(t + e, x), self.coefficients(t - e, x)
        return sum(np.abs(a - b) / (2 * e) for a, b in zip(up, dn))

    def _theta3(self, t, x, e=1e-6):
        out = 0.0
        for i in range(self.d):
            shift = np.zeros((self.d,) + (1,) * (np.ndim(x) - 1))
            shift[i] = e
            up, dn = self.coefficients(t, x + shift), self.coefficients(t, x - shift)
            out = out + sum(np.abs(a - b) / (2 * e) for a, b in zip(up, dn))
        return out

    def _p_tilde(self, t, x):
        return sum(n * np.abs(c) for n, c in enumerate(self.coefficients(t, x)))

    def _q(self, t, x, y):
        cx, cy = self.coefficients(t, x), self.coefficients(t, y)
        base = max(1.0, self.s_max)
        return sum(np.abs(a - b) * base ** n for n, (a, b) in enumerate(zip(cx, cy)))


class TabulatedPressure(PressureLaw):
    """Pressure interpolated (multi-linearly) from a table on a ``(t, x..., s)`` lattice."""

    def __init__(self, axes, values, gamma, d, **kw):
        self.interp = RegularGridInterpolator(axes, values, bounds_error=False, fill_value=None)
        super().__init__(self._lookup, gamma, d, name="tabulated", **kw)

    def _lookup(self, t, x, s):
        shape = np.broadcast(np.asarray(t), *[xi for xi in x], s).shape
        cols = [np.broadcast_to(np.asarray(t, dtype=float), shape)]
        cols += [np.broadcast_to(xi, shape) for xi in x]
        cols.append(np.broadcast_to(s, shape))
        return self.interp(np.stack([c.ravel() for c in cols], axis=-1)).reshape(shape)

    @classmethod
    def from_csv(cls, path, gamma, d, **kw):
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        if data.shape[1] != d + 3:
            raise UsageError(f"tabulated pressure CSV needs {d + 3} columns (t, x..., s, P), got {data.shape[1]}")
        axes = [np.unique(data[:, i]) for i in range(d + 2)]
        values = np.full([len(a) for a in axes], np.nan)
        idx = tuple(np.searchsorted(a, data[:, i]) for i, a in enumerate(axes))
        values[idx] = data[:, -1]
        if np.isnan(values).any():
            raise UsageError("tabulated pressure CSV does not fill a complete lattice")
        return cls(axes, values, gamma, d, **kw)


# -- potential energy -----------------------------------------------------------

@dataclass(frozen=True)
class PotentialEnergyDensity:
    """``e(t, x, rho) = int_{rho_ref}^{rho} P(t, x, s) / s^2 ds`` for the full or reduced law."""

    law: PressureLaw
    rho_ref: float = 1.0
    which: str = "full"
    epsabs: float = QUAD_EPSABS

    def __post_init__(self):
        if self.rho_ref <= 0:
            raise DomainError("reference density must be positive")
        if self.which not in ("full", "reduced"):
            raise UsageError(f"which must be 'full' or 'reduced', got {self.which!r}")

    def _p(self, t, x, s):
        return self.law.eval(t, x, s) if self.which == "full" else self.law.p0_eval(t, x, s)

    def __call__(self, t, x, rho):
        return potential_energy(self, t, x, rho)

    def on_grid(self, t, x, rho):
        """Vectorized evaluation over arrays of points ``x`` (shape ``(d, ...)``) and densities."""
        rho = np.asarray(rho, dtype=float)
        if np.any(rho <= 0):
            raise DomainError("potential energy needs rho > 0")
        x = _point(x, self.law.d)
        ref = self.rho_ref
        span = rho - ref

        def integrand(tau):
            s = ref + tau * span
            return self._p(t, x, s) / s ** 2 * span

        val, err = integrate.quad_vec(integrand, 0.0, 1.0, epsabs=self.epsabs, epsrel=0.0, norm="max")
        if not err <= self.epsabs * 10:
            raise QuadratureError("vectorized potential-energy quadrature did not converge", err)
        return val


def potential_energy(pe, t, x, rho):
    if rho <= 0:
        raise DomainError("potential energy needs rho > 0")
    if rho == pe.rho_ref:
        return 0.0
    with np.errstate(all="ignore"):
        val, err, info = integrate.quad(lambda s: float(pe._p(t, x, s)) / s ** 2, pe.rho_ref, rho,
                                        epsabs=pe.epsabs, epsrel=0.0, limit=200, full_output=True)[:3]
    if err > pe.epsabs or "message" in info and not np.isfinite(val):
        raise QuadratureError("potential-energy quadrature did not converge", err)
    return float(val)


def eval_pressure(law, t, x, s):
    return law.eval(t, x, s)


# -- artificial ladder ----------------------------------------------------------

def ladder_violations(gammas, gamma=None, d=None):
    """Every ordering constraint violated by an exponent list (empty when valid)."""
    g = [float(v) for v in gammas]
    out = []
    for i, gi in enumerate(g):
        if not gi > 1:
            out.append(f"gamma_art[{i + 1}]={gi} must exceed 1")
    for i in range(len(g) - 1):
        if not g[i] > g[i + 1]:
            out.append(f"gamma_art must be strictly decreasing: gamma_art[{i + 1}]={g[i]} <= gamma_art[{i + 2}]={g[i + 1]}")
    if gamma is None or d is None or not g:
        return out
    if not g[0] > 2 * gamma:
        out.append(f"gamma_art[1]={g[0]} must exceed 2*gamma={2 * gamma:g}")
    for i in range(len(g) - 1):
        lhs = g[i + 1] + 2 * g[i + 1] / d - 1
        if not lhs > g[i]:
            out.append(f"gamma_art[{i + 2}]+2*gamma_art[{i + 2}]/d-1={lhs:g} must exceed gamma_art[{i + 1}]={g[i]}")
    top = gamma + 2 * gamma / d - 1
    if not top > g[-1]:
        out.append(f"gamma+2*gamma/d-1={top:g} must exceed gamma_art[{len(g)}]={g[-1]}")
    return out


@dataclass(frozen=True)
class ArtificialLadder:
    """``sum_i eta_i s^gamma_art_i`` with validated exponent ordering.

    Passing the physical ``gamma`` and dimension ``d`` enables the cross
    constraints against the pressure law.
    """

    etas: tuple = ()
    gammas: tuple = ()
    gamma: float = None
    d: int = None

    def __post_init__(self):
        object.__setattr__(self, "etas", tuple(float(e) for e in self.etas))
        object.__setattr__(self, "gammas", tuple(float(g) for g in self.gammas))
        if len(self.etas) != len(self.gammas):
            raise LadderError([f"{len(self.etas)} coefficients for {len(self.gammas)} exponents"])
        bad = [f"eta[{i + 1}]={e} must be >= 0" for i, e in enumerate(self.etas) if e < 0]
        bad += ladder_violations(self.gammas, self.gamma, self.d)
        if bad:
            raise LadderError(bad)

    def __len__(self):
        return len(self.etas)

    def eval(self, s):
        s = _density(s)
        out = np.zeros_like(s)
        for e, g in zip(self.etas, self.gammas):
            out = out + e * s ** g
        return out

    def derivative(self, s):
        s = _density(s)
        out = np.zeros_like(s)
        for e, g in zip(self.etas, self.gammas):
            out = out + e * g * s ** (g - 1)
        return out

    def energy_density(self, s):
        """``sum_i eta_i s^gamma_i / (gamma_i - 1)``."""
        s = _density(s)
        out = np.zeros_like(s)
        for e, g in zip(self.etas, self.gammas):
            out = out + e * s ** g / (g - 1)
        return out

    def rung_energy(self, i, s):
        e, g = self.etas[i], self.gammas[i]
        return e * _density(s) ** g / (g - 1)

    def with_eta(self, i, value):
        etas = list(self.etas)
        etas[i] = value
        return ArtificialLadder(tuple(etas), self.gammas, self.gamma, self.d)


def eval_ladder(ladder, s):
    return ladder.eval(s)


# -- hypothesis checks ----------------------------------------------------------

@dataclass
class SamplingPlan:
    """Samples for the hypothesis checks.

    ``points`` has shape ``(npts, d)``.  Pair checks run over the full
    product ``points x points x densities x densities`` at every time.
    ``grid`` and ``h_ladder`` drive the r_h sequence.
    """

    times: np.ndarray
    points: np.ndarray
    densities: np.ndarray
    grid: object = None
    h_ladder: tuple = (1e-1, 3e-2, 1e-2)
    fd_step: float = 1e-5

    @classmethod
    def regular(cls, d, n_t=3, n_x=16, n_s=16, s_range=DEFAULT_S_RANGE, t_range=(0.0, 1.0), grid=None,
                h_ladder=(1e-1, 3e-2, 1e-2)):
        axis = np.arange(n_x) / n_x
        pts = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
        lo, hi = s_range
        return cls(np.linspace(*t_range, n_t), pts, np.geomspace(lo, hi, n_s), grid, tuple(h_ladder))

    def validate(self):
        if len(self.times) == 0 or len(self.points) == 0 or len(self.densities) == 0:
            raise UsageError("sampling plan is empty")


@dataclass
class HypothesisReport:
    constants: dict
    r_h: list
    h_ladder: list
    r_h_decreasing: bool
    samples: int
    notes: list = field(default_factory=list)

    def to_dict(self):
        def num(v):
            return v if np.isfinite(v) else ("inf" if v > 0 else "-inf")

        return {
            "constants": {k: num(float(v)) for k, v in self.constants.items()},
            "P6": {"h": list(map(float, self.h_ladder)), "r_h": [float(v) for v in self.r_h],
                   "decreasing": bool(self.r_h_decreasing)},
            "samples": int(self.samples),
            "notes": list(self.notes),
        }


def _smallest_constant(excess, denom, scale=0.0):
    """Smallest ``C >= 0`` with ``excess <= C * denom`` on all samples.

    Excess below ``1e-12 * scale`` is treated as rounding noise.
    """
    excess, denom, scale = np.broadcast_arrays(np.asarray(excess, dtype=float), np.asarray(denom, dtype=float),
                                               np.asarray(scale, dtype=float))
    pos = excess > 1e-12 * np.maximum(scale, 1.0)
    if not np.any(pos):
        return 0.0
    if np.any(pos & (denom <= 0)):
        return float("inf")
    return float(np.max(excess[pos] / denom[pos]))


def _r_h(law, plan):
    from .kernels import build_compactness_kernel

    grid = plan.grid
    x = np.stack(grid.coords)
    flat = x.reshape(grid.d, -1)
    dt = (plan.times[-1] - plan.times[0]) / max(len(plan.times) - 1, 1) if len(plan.times) > 1 else 1.0
    out = []
    for h in plan.h_ladder:
        K = build_compactness_kernel(grid, h, check_resolution=False)
        kx = K.aggregate
        total = 0.0
        for t in plan.times:
            pt = np.asarray(law.p_tilde(t, x), dtype=float) * np.ones(grid.shape)
            # offsets z index the kernel; y = x - z
            for idx in np.ndindex(*grid.shape):
                y = grid.shift(x, (0,) + idx)
                diff = np.abs(pt - grid.shift(pt, idx)) ** law.s0
                qv = np.abs(law.q_mod(t, x, y)) ** law.s1
                total += kx[idx] * float(np.sum(diff + qv)) * grid.weight ** 2 * dt
        out.append(total / K.aggregate_norm)
    del flat
    return out


def check_hypotheses(law, plan):
    """Empirical smallest constants for the pressure hypotheses on a sampling plan."""
    plan.validate()
    d, g = law.d, law.gamma
    T = np.asarray(plan.times, dtype=float)
    X = np.asarray(plan.points, dtype=float).T  # (d, npts)
    S = np.asarray(plan.densities, dtype=float)
    t3 = T[:, None, None]
    x3 = X[:, None, :, None]
    s3 = S[None, None, :]
    P = law.eval(t3, x3, s3)
    P0 = law.p0_eval(t3, x3, s3)
    R = law.remainder_R(t3, x3)
    th1, th2, th3 = law.theta1(t3, x3), law.theta2(t3, x3), law.theta3(t3, x3)
    c = {}
    c["P1"] = _smallest_constant(np.abs(P - P0), R + s3 ** law.gamma_bar)

    lower = np.where(P0 + th1 > 0, s3 ** g / np.where(P0 + th1 > 0, P0 + th1, 1.0), np.where(s3 > 0, np.inf, 0.0))
    upper = _smallest_constant(P0 - th1, s3 ** law.p)
    c["P2"] = max(float(np.max(lower)), upper)

    e = plan.fd_step
    dtP0 = (law.p0_eval(t3 + e, x3, s3) - law.p0_eval(t3 - e, x3, s3)) / (2 * e)
    c["P3"] = _smallest_constant(np.abs(dtP0) - th2, s3 ** law.p)

    grad_sq = 0.0
    for i in range(d):
        shift = np.zeros((d, 1, 1, 1))
        shift[i] = e
        grad_sq = grad_sq + ((law.p0_eval(t3, x3 + shift, s3) - law.p0_eval(t3, x3 - shift, s3)) / (2 * e)) ** 2
    c["P4"] = _smallest_constant(np.sqrt(grad_sq) - th3, s3 ** (g / 2))

    c["P5"] = 0.0
    for t in T:
        xa = X[:, :, None, None, None]
        ya = X[:, None, :, None, None]
        z = S[None, None, :, None]
        w = S[None, None, None, :]
        pxz = law.eval(t, X[:, :, None], S[None, :])[:, None, :, None]
        pyw = law.eval(t, X[:, :, None], S[None, :])[None, :, None, :]
        q = law.q_mod(t, xa, ya)
        ptx = law.p_tilde(t, X)[:, None, None, None]
        pty = law.p_tilde(t, X)[None, :, None, None]
        gap = np.abs(z - w)
        excess = np.abs(pxz - pyw) - q - (ptx + pty) * gap
        denom = (z ** (g - 1) + w ** (g - 1)) * gap
        c["P5"] = max(c["P5"], _smallest_constant(excess, denom, np.maximum(np.abs(pxz), np.abs(pyw))))

    notes = []
    if plan.grid is not None:
        r = _r_h(law, plan)
        dec = all(b <= a for a, b in zip(r, r[1:]))
    else:
        r, dec = [], False
        notes.append("no grid in sampling plan: r_h sequence not computed")
    if not law.declares_p_tilde:
        notes.append("law declares no P~; P~ = 0 used")
    n = len(T) * X.shape[1] * len(S)
    return HypothesisReport(c, r, list(plan.h_ladder[: len(r)]), dec, n + len(T) * (X.shape[1] * len(S)) ** 2, notes)
