"""Compactness and energy diagnostics computed from trajectory snapshots."""
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .errors import UsageError
from .fields import d_h_operator
from .kernels import build_compactness_kernel, convolve, raw_kernel_derivative
from .pressure import PotentialEnergyDensity
from .weights import build_penalization

EXACT_LIMIT = 4096


def chi(xi, l_exp):
    return np.abs(xi) ** (1 + l_exp)


def chi_prime(xi, l_exp):
    return (1 + l_exp) * np.abs(xi) ** l_exp * np.sign(xi)


@dataclass
class CompactnessConfig:
    h0: float = 1e-2
    a: float = 1.0
    ladder_size: int = 32
    l_exp: float = 0.25
    lambda_pen: float = 1.0
    subsample: int = None
    p: float = None
    gamma_art: float = None

    def __post_init__(self):
        if not 0 < self.l_exp < 0.5:
            raise UsageError(f"l_exp must lie in (0, 1/2), got {self.l_exp}")
        if self.p is None:
            self.p = 1 + self.l_exp
        if self.gamma_art is not None and not np.isclose(self.l_exp * self.gamma_art, 1 + self.l_exp):
            raise UsageError(f"l*gamma_art={self.l_exp * self.gamma_art:g} must equal 1+l={1 + self.l_exp:g}")


def _stride(grid, requested):
    if requested:
        return int(requested)
    s = 1
    while (grid.n // s) ** grid.d > EXACT_LIMIT:
        s *= 2
    return s


def _offsets(grid):
    return list(np.ndindex(*grid.shape))


def _sub(grid, f, stride):
    sl = (Ellipsis,) + (slice(None, None, stride),) * grid.d
    return f[sl]


# -- plain criterion ----------------------------------------------------------------

@dataclass
class PlainCompactnessTable:
    h0: list
    values: np.ndarray  # (len(h0), members)
    stride: int
    resolved: list
    p: float

    def as_rows(self):
        return [(h, j, float(v)) for i, h in enumerate(self.h0) for j, v in enumerate(self.values[i])]


def plain_compactness(family, p, h0_ladder, a=1.0, ladder_size=32, subsample=None):
    """``(1/|Kagg|_1) sum_{x,y} Kagg(x - y) |rho(x) - rho(y)|^p`` per h0 and member.

    Exact for ``n^d <= 4096``; above that the ``x`` sum runs over a uniform
    stride, reported in the table.
    """
    if p < 1:
        raise UsageError("p must be at least 1")
    family = list(family)
    if not family:
        raise UsageError("empty family")
    grid = getattr(family[0], "grid", None)
    arrays = [np.asarray(getattr(f, "values", f), dtype=float) for f in family]
    if grid is None:
        from .grid import PeriodicGrid

        d = 1 if arrays[0].ndim == 1 else 2
        grid = PeriodicGrid(d, arrays[0].shape[0])
    for arr in arrays:
        if arr.shape != grid.shape:
            raise UsageError("family members do not share a grid")
    stride = _stride(grid, subsample)
    sums = np.zeros((len(arrays),) + grid.shape)
    for k, rho in enumerate(arrays):
        for off in _offsets(grid):
            diff = np.abs(rho - grid.shift(rho, off)) ** p
            sums[(k,) + off] = np.sum(_sub(grid, diff, stride)) * stride ** grid.d
    values = np.empty((len(h0_ladder), len(arrays)))
    resolved = []
    for i, h0 in enumerate(h0_ladder):
        K = build_compactness_kernel(grid, h0, a, ladder_size, check_resolution=False)
        resolved.append(K.resolved)
        for k in range(len(arrays)):
            values[i, k] = np.sum(K.aggregate * sums[k]) * grid.weight ** 2 / K.aggregate_norm
    return PlainCompactnessTable(list(h0_ladder), values, stride, resolved, p)


# -- weighted functional and its decomposition --------------------------------------

def _rung_weights(K, w):
    return np.stack([np.clip(convolve(K.kernel(j), w), 0.0, 1.0) for j in range(K.ladder_size)])


def _pair_sum(rows, f, off, grid, stride):
    """``sum_x rows_j(x) f(x) + rows_j(x - off) f(x)`` for every row ``j``."""
    a = _sub(grid, f, stride).ravel()
    b = _sub(grid, grid.shift(f, tuple(-o for o in off)), stride).ravel()
    R = rows.reshape(rows.shape[0], -1) if stride == 1 else np.stack([_sub(grid, r, stride).ravel() for r in rows])
    return (R @ a + R @ b) * stride ** grid.d


def _single_sum(rows, f, grid, stride):
    R = rows.reshape(rows.shape[0], -1) if stride == 1 else np.stack([_sub(grid, r, stride).ravel() for r in rows])
    return (R @ _sub(grid, f, stride).ravel()) * stride ** grid.d


def weighted_functional(states, weights, cfg):
    """``T(t) = sum_j lw_j sum_{x,y} K_j(x-y) (w_j(x) + w_j(y)) chi(rho(x) - rho(y))`` per snapshot."""
    if weights is None or len(weights) != len(states):
        raise UsageError("weight snapshots missing or not aligned with the trajectory")
    g = states[0].grid
    K = build_compactness_kernel(g, cfg.h0, cfg.a, cfg.ladder_size, check_resolution=False)
    stride = _stride(g, cfg.subsample)
    out = []
    for st, ws in zip(states, weights):
        wj = _rung_weights(K, ws.w)
        total = 0.0
        for off in _offsets(g):
            c = chi(st.rho - g.shift(st.rho, off), cfg.l_exp)
            kz = K.tables[(slice(None),) + off] * K.log_weights
            total += float(kz @ _pair_sum(wj, c, off, g, stride))
        out.append(total * g.weight ** 2)
    return np.array(out)


@dataclass
class TermReport:
    times: np.ndarray
    T: np.ndarray
    rates: dict  # name -> per-snapshot integrand
    integrated: dict  # name -> cumulative time integral
    gronwall_residual: np.ndarray
    stride: int
    outside_scope: bool = False

    def columns(self):
        return ["T"] + list(self.rates) + ["gronwall_residual"]


def _grad_kernel(K, grid):
    """Analytic gradient tables ``grad K_j`` for every rung, shape ``(M, d) + shape``."""
    r = grid.radius
    unit = np.where(r > 0, grid.offsets / np.where(r > 0, r, 1.0), 0.0)
    out = np.empty((K.ladder_size, grid.d) + grid.shape)
    for j, h in enumerate(K.h_ladder):
        out[j] = raw_kernel_derivative(r, h, grid.d, K.a) / K.norms[j] * unit
    return out


def decompose_terms(states, weights, cfg, law, ladder=None, solver=None, h_w=None, pen_gamma=None):
    """Integrands and cumulative integrals of ``I1..I5`` and ``D1..D3`` along snapshots.

    The Gronwall residual is ``T(t) - T(0) - sum_k I_k(t)``.
    """
    if weights is None or len(weights) != len(states):
        raise UsageError("weight snapshots missing or not aligned with the trajectory")
    g = states[0].grid
    K = build_compactness_kernel(g, cfg.h0, cfg.a, cfg.ladder_size, check_resolution=False)
    gK = _grad_kernel(K, g)
    stride = _stride(g, cfg.subsample)
    l = cfg.l_exp
    x = np.stack(g.coords)
    h_w = cfg.h0 if h_w is None else h_w
    names = ["I1", "I2", "I3", "I4", "I5", "D1", "D2", "D3"]
    rates = {n: [] for n in names}
    T = []
    for st, ws in zip(states, weights):
        rho = st.rho
        u = st.velocity()
        w = ws.w
        divu = g.div(u)
        S = solver.pressure_source(st.t, rho) if solver is not None else np.asarray(law.eval(st.t, x, np.maximum(rho, 0))) * np.ones(g.shape)
        D_eps, comps = build_penalization(st, law, cfg.lambda_pen, l, h_w, pen_gamma, S, cfg.a, with_components=True)
        p_tilde = np.asarray(law.p_tilde(st.t, x)) * np.ones(g.shape)
        calD = np.abs(divu) + np.abs(S) + np.abs(p_tilde) ** (1 + l)
        gradw = g.grad(w)
        udotgw = np.sum(u * gradw, axis=0)
        pg = law.gamma if pen_gamma is None else pen_gamma
        base1 = (comps["maximal"] + np.abs(rho) ** pg) * w
        M = K.ladder_size
        Wj = np.empty((M,) + g.shape)
        Dh = np.empty_like(Wj)
        Com = np.empty_like(Wj)
        E1 = np.empty_like(Wj)
        E2 = np.empty_like(Wj)
        for j in range(M):
            kern = K.kernel(j)
            Wj[j] = np.clip(convolve(kern, w), 0.0, 1.0)
            Dh[j] = convolve(kern, D_eps * w)
            Com[j] = np.sum(u * convolve(kern, gradw), axis=0) - convolve(kern, udotgw)
            E1[j] = cfg.lambda_pen * convolve(kern, base1)
            E2[j] = cfg.lambda_pen * convolve(kern, calD) * Wj[j]
        lad = ladder.eval(np.maximum(rho, 0.0)) if ladder is not None and len(ladder) else np.zeros(g.shape)
        acc = dict.fromkeys(names + ["T"], 0.0)
        for off in _offsets(g):
            neg = off
            drho = rho - g.shift(rho, neg)
            c = chi(drho, l)
            cp = chi_prime(drho, l)
            du = u - g.shift(u, (0,) + neg)
            bar_rho = rho + g.shift(rho, neg)
            ddiv = divu - g.shift(divu, neg)
            bdiv = divu + g.shift(divu, neg)
            kz = K.tables[(slice(None),) + off] * K.log_weights
            gz = gK[(slice(None), slice(None)) + off] * K.log_weights[:, None]
            Wc = _pair_sum(Wj, c, off, g, stride)
            acc["T"] += kz @ Wc
            acc["I1"] += sum(gz[:, i] @ _pair_sum(Wj, du[i] * c, off, g, stride) for i in range(g.d))
            acc["I2"] -= kz @ _pair_sum(Dh, c, off, g, stride)
            acc["I3"] += kz @ _pair_sum(Com, c, off, g, stride)
            acc["I4"] -= 0.5 * (kz @ _pair_sum(Wj, cp * bar_rho * ddiv, off, g, stride))
            acc["I5"] += kz @ _pair_sum(Wj, (c - 0.5 * cp * drho) * bdiv, off, g, stride)
            acc["D1"] += kz @ _single_sum(E1, c, g, stride)
            acc["D2"] += kz @ _single_sum(E2, c, g, stride)
            acc["D3"] += (1 + l) * (kz @ _pair_sum(Wj, c * (lad + g.shift(lad, neg)), off, g, stride))
        w2 = g.weight ** 2
        T.append(acc["T"] * w2)
        for n in names:
            rates[n].append(acc[n] * w2)
    times = np.array([s.t for s in states])
    rates = {k: np.array(v) for k, v in rates.items()}
    integrated = {k: _cumtrapz(v, times) for k, v in rates.items()}
    T = np.array(T)
    resid = T - T[0] - sum(integrated[f"I{k}"] for k in range(1, 6))
    return TermReport(times, T, rates, integrated, resid, stride, g.outside_scope)


def _cumtrapz(v, t):
    if len(t) < 2:
        return np.zeros_like(v)
    return np.concatenate([[0.0], integrate.cumulative_trapezoid(v, t)])


# -- integrability gain ----------------------------------------------------------------

@dataclass
class IntegrabilityGain:
    theta: float
    times: np.ndarray
    B: list = field(repr=False)
    c_theta: np.ndarray = None
    gain_density: np.ndarray = None  # int rho^theta P0 per snapshot
    gain: float = None  # time integral (or the single spatial integral)
    pairing: np.ndarray = None  # int (rho^theta - c_theta) P0 = int B . grad P0
    rho_norm_theta: float = None
    velocity_h1: float = None
    div_residual: float = None


def integrability_gain(states, law, theta, gamma0=None, p=2.0):
    """Bogovskii-type field ``B = -grad lap^-1 (rho^theta - c_theta)`` and the gain integral."""
    gamma0 = law.gamma if gamma0 is None else gamma0
    if p <= 1:
        raise UsageError("p must exceed 1")
    p_star = p / (p - 1)
    if not 0 < theta < gamma0 / p_star:
        raise UsageError(f"theta={theta} must lie in (0, gamma0/p*) = (0, {gamma0 / p_star:g})")
    states = list(states)
    g = states[0].grid
    x = np.stack(g.coords)
    Bs, cs, dens, pair, resid = [], [], [], [], 0.0
    for st in states:
        rho = np.maximum(st.rho, 0.0)
        r_th = rho ** theta
        c = g.integrate(r_th)
        B = -g.grad(g.inverse_laplacian(r_th - c))
        resid = max(resid, float(np.max(np.abs(g.div(B) + (r_th - c)))))
        P0 = np.asarray(law.p0_eval(st.t, x, rho), dtype=float) * np.ones(g.shape)
        Bs.append(B)
        cs.append(c)
        dens.append(g.integrate(r_th * P0))
        pair.append(g.integrate((r_th - c) * P0))
    times = np.array([s.t for s in states])
    dens = np.array(dens)
    gain = float(np.trapezoid(dens, times)) if len(states) > 1 else float(dens[0])
    rho_norm = max(g.integrate(np.abs(s.rho) ** gamma0) ** (1 / gamma0) for s in states) ** theta
    h1 = [g.integrate(np.sum(s.velocity() ** 2, axis=0)) + g.integrate(g.gradient_norm(s.velocity()) ** 2)
          for s in states]
    vel = float(np.sqrt(np.trapezoid(h1, times))) if len(states) > 1 else float(np.sqrt(h1[0]))
    return IntegrabilityGain(theta, times, Bs, np.array(cs), dens, gain, np.array(pair), rho_norm, vel, resid)


# -- renormalization ------------------------------------------------------------------

def renormalization_residual(states, chi_fn, dchi_fn, n_modes=4):
    """Weak norm of ``d_t chi(rho) + div(chi(rho) u) - (chi(rho) - rho chi'(rho)) div u``.

    Time derivatives are central differences between neighbouring snapshots;
    the weak norm is the l2 norm of the pairings with the Fourier modes
    ``|k_i| <= n_modes``.  Returns ``(interior times, per-time norms)``.
    """
    states = list(states)
    if len(states) < 3:
        raise UsageError("need at least three snapshots")
    g = states[0].grid
    times, norms = [], []
    for prev, cur, nxt in zip(states, states[1:], states[2:]):
        dt = nxt.t - prev.t
        rho = cur.rho
        u = cur.velocity()
        c = chi_fn(rho)
        r = (chi_fn(nxt.rho) - chi_fn(prev.rho)) / dt + g.div(c * u) - (c - rho * dchi_fn(rho)) * g.div(u)
        rh = g.fft(r) * g.weight
        sel = np.ones(g.spectral_shape, dtype=bool)
        for k in g.wavenumbers:
            sel &= np.abs(k) <= 2 * np.pi * n_modes + 1e-9
        # rfft layout: count conjugate pairs once per half-plane, which is uniform across refinements
        norms.append(float(np.sqrt(np.sum(np.abs(rh[sel]) ** 2))))
        times.append(cur.t)
    return np.array(times), np.array(norms)


# -- energy ledger --------------------------------------------------------------------

@dataclass
class EnergyLedger:
    times: np.ndarray
    kinetic: np.ndarray
    ladder: np.ndarray
    reduced_potential: np.ndarray
    dissipation: np.ndarray
    pressure_source: np.ndarray
    residual: np.ndarray  # LHS - RHS of the regularized energy inequality
    full_law_residual: np.ndarray = None

    @property
    def max_residual(self):
        return float(np.max(self.residual))

    def rows(self):
        cols = [self.times, self.kinetic, self.ladder, self.reduced_potential, self.dissipation,
                self.pressure_source, self.residual]
        return np.column_stack(cols)


def energy_ledger(traj, law=None, ladder=None, rho_ref=1.0, full_law=False, fd_step=1e-5):
    """Energy bookkeeping along a trajectory.

    Kinetic energy is ``1/2 int rho |u|^2``.  ``residual`` is
    ``kinetic + ladder + dissipation - (same at 0) - int int div u * S``;
    dissipation and source work come from the per-step trapezoid sums
    accumulated by the solver and are read at the snapshot times.
    """
    g = traj.grid
    law = law or traj.params.law
    ladder = ladder if ladder is not None else traj.params.ladder
    snaps = traj.snapshots
    times = np.array([s.t for s in snaps])
    kin = np.array([0.5 * g.integrate(s.rho * np.sum(s.velocity() ** 2, axis=0)) for s in snaps])
    lad = np.array([g.integrate(ladder.energy_density(np.maximum(s.rho, 0.0))) for s in snaps])
    idx = [int(np.argmin(np.abs(traj.times - t))) for t in times]
    diss = traj.dissipation[idx]
    work = traj.pressure_work[idx]
    resid = kin + lad + diss - kin[0] - lad[0] - work
    x = np.stack(g.coords)
    red = np.full(len(snaps), np.nan)
    thm = None
    if full_law:
        pe0 = PotentialEnergyDensity(law, rho_ref, "reduced")
        pe = PotentialEnergyDensity(law, rho_ref, "full")
        src = []
        for k, s in enumerate(snaps):
            rho = s.rho
            red[k] = g.integrate(rho * pe0.on_grid(s.t, x, rho))
            u = s.velocity()
            e_t = (pe0.on_grid(s.t + fd_step, x, rho) - pe0.on_grid(s.t - fd_step, x, rho)) / (2 * fd_step)
            grad_e = 0.0
            for i in range(g.d):
                sh = np.zeros_like(x)
                sh[i] = fd_step
                grad_e = grad_e + u[i] * (pe0.on_grid(s.t, x + sh, rho) - pe0.on_grid(s.t, x - sh, rho)) / (2 * fd_step)
            diffP = np.asarray(law.eval(s.t, x, rho)) - np.asarray(law.p0_eval(s.t, x, rho))
            src.append(g.integrate(g.div(u) * diffP) + g.integrate(rho * (e_t + grad_e)))
        e_full0 = g.integrate(snaps[0].rho * pe.on_grid(snaps[0].t, x, snaps[0].rho))
        lhs = kin + red + diss
        thm = lhs - (kin[0] + e_full0) - _cumtrapz(np.array(src), times)
    return EnergyLedger(times, kin, lad, red, diss, work, resid, thm)


# -- kernel-averaged increments of D_h u ------------------------------------------------------

def kernel_difference_quantity(grid, u, h0, a=1.0, ladder_size=32):
    """``sum_z Kagg(z) ||D_|z| u - D_|z| u(. - z)||_2 dz / |log h0|^(1/2)`` over offsets with ``|z| >= dx``."""
    u = grid.check_vector(u)
    K = build_compactness_kernel(grid, h0, a, ladder_size, check_resolution=False)
    cache = {}
    total = 0.0
    for off in _offsets(grid):
        r = float(grid.radius[off])
        if r < grid.spacing * (1 - 1e-12):
            continue
        key = round(r / grid.spacing, 9)
        if key not in cache:
            cache[key] = d_h_operator(grid, u, r)
        Dh = cache[key]
        diff = Dh - grid.shift(Dh, off)
        total += K.aggregate[off] * np.sqrt(np.sum(diff ** 2) * grid.weight)
    return total * grid.weight / np.sqrt(abs(np.log(h0)))
