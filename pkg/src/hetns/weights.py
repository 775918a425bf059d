"""Penalized transport weight ``w``: ``w_t + u . grad w = -D w``, ``w(0) = 1``."""
from dataclasses import dataclass, field

import numpy as np

from .errors import SchemeError, UsageError
from .fields import maximal_function
from .kernels import convolve, single_kernel

SLACK = 1e-12
W_FLOOR = 1e-300


@dataclass
class WeightState:
    w: np.ndarray
    t: float
    lambda_pen: float
    l_exp: float
    h_w: float
    components: dict = field(default_factory=dict, repr=False)


def build_penalization(state, law, lambda_pen, l_exp, h_w, pen_gamma=None, source=None, a=1.0,
                       with_components=False):
    """``lambda * (M|grad u| + |rho|^pen_gamma + K_{h_w} * (|div u| + |S| + |P~|^(1+l)))``.

    ``source`` is the (mollified) pressure field ``S``; it defaults to the raw
    pressure.  ``pen_gamma`` defaults to the law's ``gamma``.
    """
    g = state.grid
    x = np.stack(g.coords)
    u = state.velocity()
    rho = np.maximum(state.rho, 0.0)
    pen_gamma = law.gamma if pen_gamma is None else pen_gamma
    if source is None:
        source = np.asarray(law.eval(state.t, x, rho), dtype=float) * np.ones(g.shape)
    p_tilde = np.asarray(law.p_tilde(state.t, x), dtype=float) * np.ones(g.shape)
    comps = {
        "maximal": maximal_function(g, g.gradient_norm(u)),
        "density": np.abs(rho) ** pen_gamma,
        "smoothed": convolve(single_kernel(g, h_w, a), np.abs(g.div(u)) + np.abs(source)
                             + np.abs(p_tilde) ** (1 + l_exp)),
    }
    # FFT convolution of a nonnegative field can leave -1e-17 noise
    comps["smoothed"] = np.maximum(comps["smoothed"], 0.0)
    D = lambda_pen * (comps["maximal"] + comps["density"] + comps["smoothed"])
    return (D, comps) if with_components else D


def periodic_interp(grid, f, disp):
    """Multilinear periodic interpolation of ``f`` at ``x - disp`` (``disp`` in length units).

    Written as ``f0 + s (f1 - f0)`` per axis so constant fields are reproduced exactly.
    """
    out = f
    for axis in range(grid.d):
        pos = -disp[axis] / grid.spacing
        base = np.floor(pos)
        s = pos - base
        idx = np.indices(grid.shape)
        i0 = (idx[axis] + base.astype(int)) % grid.n
        i1 = (i0 + 1) % grid.n
        sel0 = list(idx)
        sel1 = list(idx)
        sel0[axis] = i0
        sel1[axis] = i1
        f0 = out[tuple(sel0)]
        f1 = out[tuple(sel1)]
        out = f0 + s * (f1 - f0)
    return out


class WeightEvolver:
    """Semi-Lagrangian weight transport with exact-exponential damping.

    Per step ``w_new(x) = w(x_dep) * exp(-int D dt)`` where the damping
    integral follows the characteristic by Simpson's rule.  ``penalty`` may
    override the penalization with a callable ``state -> D``.
    """

    def __init__(self, law, lambda_pen=1.0, l_exp=0.25, h_w=0.05, pen_gamma=None, a=1.0, solver=None,
                 penalty=None):
        if not 0 < l_exp < 0.5:
            raise UsageError(f"l_exp must lie in (0, 1/2), got {l_exp}")
        if lambda_pen < 0:
            raise UsageError("lambda_pen must be nonnegative")
        self.law, self.lambda_pen, self.l_exp, self.h_w = law, float(lambda_pen), float(l_exp), float(h_w)
        self.pen_gamma, self.a, self.solver, self.penalty = pen_gamma, a, solver, penalty
        self.w = None
        self.t = None
        self.max_excursion = 0.0
        self._D = None
        self._comps = {}

    def penalization(self, state):
        if self.penalty is not None:
            return np.asarray(self.penalty(state), dtype=float) * np.ones(state.grid.shape), {}
        if self.lambda_pen == 0:
            return np.zeros(state.grid.shape), {}
        src = self.solver.pressure_source(state.t, state.rho) if self.solver is not None else None
        return build_penalization(state, self.law, self.lambda_pen, self.l_exp, self.h_w, self.pen_gamma, src,
                                  self.a, with_components=True)

    def start(self, state, w0=None):
        self.w = np.ones(state.grid.shape) if w0 is None else np.array(w0, dtype=float)
        self.t = state.t
        self._D, self._comps = self.penalization(state)

    def advance(self, cur, nxt, dt):
        g = cur.grid
        D0, D1 = self._D, None
        D1, comps = self.penalization(nxt)
        ubar = 0.5 * (cur.velocity() + nxt.velocity())
        dep = periodic_interp(g, self.w, dt * ubar)
        Dmid = periodic_interp(g, 0.5 * (D0 + D1), 0.5 * dt * ubar)
        Ddep = periodic_interp(g, D0, dt * ubar)
        damp = np.exp(-dt * (Ddep + 4 * Dmid + D1) / 6)
        w = dep * damp
        lo, hi = float(np.min(w)), float(np.max(w))
        self.max_excursion = max(self.max_excursion, -lo, hi - 1, 0.0)
        if lo < -SLACK or hi > 1 + SLACK:
            raise SchemeError(f"weight left [0, 1] beyond slack: range [{lo:.3e}, {hi:.3e}] at t={nxt.t:.6e}")
        self.w = np.clip(w, 0.0, 1.0)
        self.t = nxt.t
        self._D, self._comps = D1, comps

    def snapshot(self):
        return WeightState(self.w.copy(), self.t, self.lambda_pen, self.l_exp, self.h_w, dict(self._comps))


def evolve_weight(evolver, cur, nxt, dt):
    evolver.advance(cur, nxt, dt)
    return evolver.snapshot()


@dataclass
class PairWeight:
    """Marginal tables ``w_h = K_h * w``; ``W(x, y) = w_h(x) + w_h(y)``."""

    w_h: np.ndarray

    @classmethod
    def from_weight(cls, kernel, w):
        return cls(np.clip(convolve(kernel, w), 0.0, 1.0))

    def pair(self, offset, grid):
        """``W(x, x - offset)`` as a field in ``x``."""
        return self.w_h + grid.shift(self.w_h, offset)


def weight_monitors(ws, state, eta_thr, h=None, a=1.0):
    """``int rho |log w|`` and ``int rho 1{K_h * w <= eta_thr}`` with empirical constants."""
    g = state.grid
    rho = np.maximum(state.rho, 0.0)
    floored = ws.w < W_FLOOR
    logw = np.abs(np.log(np.maximum(ws.w, W_FLOOR)))
    m1 = g.integrate(rho * logw)
    wh = convolve(single_kernel(g, h or ws.h_w, a), ws.w)
    m2 = g.integrate(rho * (wh <= eta_thr))
    lam = ws.lambda_pen
    return {
        "t": ws.t,
        "rho_log_w": m1,
        "rho_low_weight": m2,
        "const_log": m1 / (1 + lam),
        "const_low": m2 * abs(np.log(eta_thr)) / (1 + lam),
        "floored_cells": int(np.sum(floored)),
    }


def commutator_quantity(states, weights, law, h0, l_exp, a=1.0, ladder_size=16, source=None, q=2.0):
    """``int_h0^1 int_t || K_h*(Dw) - (K_h*D) w_h ||_q dt dh/h / |log h0|`` with
    ``D = |div u| + |S| + |P~|^(1+l)``."""
    from .kernels import build_compactness_kernel

    g = states[0].grid
    K = build_compactness_kernel(g, h0, a, ladder_size, check_resolution=False)
    x = np.stack(g.coords)
    times = np.array([s.t for s in states])
    per_t = []
    for st, ws in zip(states, weights):
        rho = np.maximum(st.rho, 0.0)
        S = source(st) if source is not None else np.asarray(law.eval(st.t, x, rho)) * np.ones(g.shape)
        Dc = np.abs(g.div(st.velocity())) + np.abs(S) + np.abs(law.p_tilde(st.t, x)) ** (1 + l_exp)
        total = 0.0
        for j in range(K.ladder_size):
            kern = K.kernel(j)
            diff = convolve(kern, Dc * ws.w) - convolve(kern, Dc) * convolve(kern, ws.w)
            total += K.log_weights[j] * (np.sum(np.abs(diff) ** q) * g.weight) ** (1 / q)
        per_t.append(total)
    per_t = np.array(per_t)
    integral = float(np.trapezoid(per_t, times)) if len(times) > 1 else float(per_t[0])
    return integral / abs(np.log(h0))
