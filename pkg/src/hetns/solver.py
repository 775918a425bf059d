"""Pseudospectral IMEX integrator for the regularized barotropic system.

State variables are density ``rho`` and momentum ``m = rho u`` on a periodic
grid.  Per step the scheme solves

    rho_t = -div m
    m_t   = -div(m (x) u) + lap u - grad(P_art(rho) + S)

with ``S = Lmoll * P(t, x, rho)`` (or a frozen source during the fixed-point
iteration).  The stiff part ``lap m / rho_bar`` is implicit; the remainder
``lap u - lap m / rho_bar`` together with transport and pressure is explicit,
so the split is exact for constant density.  Time stepping is the two-stage
ARS(2,2,2) IMEX Runge-Kutta pair, which is stiffly accurate and second order.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DivergenceError, StepSizeError, UsageError
from .kernels import build_mollifier, convolve
from .pressure import ArtificialLadder

RHO_FLOOR = 1e-10
_G = 1.0 - 1.0 / np.sqrt(2.0)
_DELTA = 1.0 - 1.0 / (2.0 * _G)
STAGE_OFFSETS = (0.0, _G)


@dataclass
class SimParams:
    law: object
    ladder: ArtificialLadder = field(default_factory=ArtificialLadder)
    eps: float = None
    mollifier_kind: str = "log-averaged"
    cfl: float = 0.5
    rho_floor: float = RHO_FLOOR
    dealias: bool = True
    regularize_initial: bool = True


@dataclass
class SimState:
    grid: object
    rho: np.ndarray
    m: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.rho = self.grid.check_scalar(self.rho, "rho")
        self.m = self.grid.check_vector(self.m, "momentum")

    def velocity(self, floor=RHO_FLOOR):
        return velocity(self.rho, self.m, floor)

    @property
    def mass(self):
        return self.grid.integrate(self.rho)

    def copy(self):
        return SimState(self.grid, self.rho.copy(), self.m.copy(), self.t)


def velocity(rho, m, floor=RHO_FLOOR):
    live = rho > floor
    return np.where(live, m / np.where(live, rho, 1.0), 0.0)


class DirectSource:
    """In-loop pressure source ``Lmoll * P(t, x, rho)``."""

    def __init__(self, solver):
        self.solver = solver

    def value(self, step, stage, t, rho):
        return self.solver.pressure_source(t, rho)


class FrozenSource:
    """Source prescribed per (step, stage), as in the fixed-point iteration."""

    def __init__(self, table):
        self.table = table

    def value(self, step, stage, t, rho):
        step = min(step, len(self.table) - 1)
        return self.table[step][stage]


@dataclass
class Trajectory:
    """Snapshots at output times plus per-step energy bookkeeping."""

    grid: object
    params: SimParams
    snapshots: list
    times: np.ndarray
    dissipation: np.ndarray
    pressure_work: np.ndarray
    steps: int
    dt_history: list = field(default_factory=list, repr=False)
    weights: list = None
    stage_rho: list = None

    @property
    def final(self):
        return self.snapshots[-1]

    def mass_drift(self):
        m0 = self.snapshots[0].mass
        return max(abs(s.mass - m0) for s in self.snapshots) / abs(m0)


class Solver:
    def __init__(self, grid, params):
        self.grid = grid
        self.params = params
        self.mollifier = None
        if params.eps is not None:
            self.mollifier = build_mollifier(grid, params.eps, params.mollifier_kind)
        self.x = np.stack(grid.coords)

    # -- physics pieces -------------------------------------------------------
    def pressure(self, t, rho):
        return np.asarray(self.params.law.eval(t, self.x, np.maximum(rho, 0.0)), dtype=float) * np.ones(self.grid.shape)

    def pressure_source(self, t, rho):
        P = self.pressure(t, rho)
        if self.mollifier is None:
            return P
        return convolve(self.mollifier, P)

    def sound_speed(self, t, rho):
        rho = np.maximum(rho, 0.0)
        c2 = self.params.ladder.derivative(rho)
        e = 1e-6 * np.maximum(rho, 1.0)
        lo = np.maximum(rho - e, 0.0)
        dP = (self.pressure(t, rho + e) - self.pressure(t, lo)) / (rho + e - lo)
        return float(np.sqrt(np.max(np.maximum(c2 + dP, 0.0))))

    def max_dt(self, state):
        """``cfl * min(dx / (max|u| + c_s), dx^2 / 2)``."""
        dx = self.grid.spacing
        u = state.velocity(self.params.rho_floor)
        speed = float(np.max(np.sqrt(np.sum(u ** 2, axis=0)))) + self.sound_speed(state.t, state.rho)
        adv = dx / speed if speed > 0 else np.inf
        return self.params.cfl * min(adv, dx * dx / 2)

    def initial_state(self, rho0, u0=None, m0=None, t=0.0):
        """Build the initial state; with a mollifier scale, ``rho0`` is smoothed by the plain
        bump at that scale and rescaled to its original mass."""
        g = self.grid
        rho0 = g.check_scalar(rho0, "rho0")
        if self.params.eps is not None and self.params.regularize_initial:
            mass = np.sum(rho0)
            smooth = build_mollifier(g, self.params.eps, "plain")(rho0)
            rho0 = smooth * (mass / np.sum(smooth)) if np.sum(smooth) != 0 else smooth
        if m0 is None:
            u0 = np.zeros((g.d,) + g.shape) if u0 is None else g.check_vector(u0, "u0")
            m0 = rho0 * u0
        return SimState(g, rho0, m0, t)

    def _explicit(self, t, rho, m, S, rho_bar, blame):
        g = self.grid
        u = velocity(rho, m, self.params.rho_floor)
        cont = -g.div(m)
        conv = np.stack([-g.div(m[i] * u) for i in range(g.d)])
        visc = np.stack([g.laplacian(u[i]) - g.laplacian(m[i]) / rho_bar for i in range(g.d)])
        p_art = self.params.ladder.eval(np.maximum(rho, 0.0))
        force = -g.grad(p_art + S)
        for name, val in (("continuity", cont), ("convection", conv), ("viscous", visc),
                          ("artificial_pressure", p_art), ("pressure_source", S)):
            blame[name] = blame.get(name, True) and bool(np.all(np.isfinite(val)))
        fm = conv + visc + force
        if self.params.dealias:
            mask = g.dealias_mask
            fm = np.stack([g.ifft(g.fft(c) * mask) for c in fm])
        return cont, fm

    def _implicit_solve(self, rhs, coef):
        g = self.grid
        sym = 1.0 - coef * g.laplacian_symbol
        return np.stack([g.ifft(g.fft(c) / sym) for c in rhs])

    def _lap_over(self, m, rho_bar):
        return np.stack([self.grid.laplacian(c) for c in m]) / rho_bar

    def _power(self, rho, m, S):
        """``(int |grad u|^2, int div u * S)`` at one time level."""
        g = self.grid
        u = velocity(rho, m, self.params.rho_floor)
        return float(np.sum(g.gradient_norm(u) ** 2) * g.weight), g.integrate(g.div(u) * S)

    # -- stepping -------------------------------------------------------------
    def step(self, state, dt, source=None, step_index=0, check_cfl=True, record=None):
        """Advance one IMEX step; returns the new state.

        ``record`` (a dict) receives stage densities and the energy powers at
        both ends of the step.
        """
        if dt <= 0:
            raise UsageError(f"dt must be positive, got {dt}")
        if check_cfl:
            dt_max = self.max_dt(state)
            if dt > dt_max * (1 + 1e-12):
                raise StepSizeError(dt, dt_max)
        source = source or DirectSource(self)
        t, rho, m = state.t, state.rho, state.m
        rho_bar = float(np.mean(rho)) or 1.0
        blame = {}
        S1 = source.value(step_index, 0, t, rho)
        f1r, f1m = self._explicit(t, rho, m, S1, rho_bar, blame)
        rho2 = rho + dt * _G * f1r
        m2 = self._implicit_solve(m + dt * _G * f1m, dt * _G / rho_bar)
        t2 = t + _G * dt
        S2 = source.value(step_index, 1, t2, rho2)
        f2r, f2m = self._explicit(t2, rho2, m2, S2, rho_bar, blame)
        rho3 = rho + dt * (_DELTA * f1r + (1 - _DELTA) * f2r)
        rhs = m + dt * ((1 - _G) * self._lap_over(m2, rho_bar) + _DELTA * f1m + (1 - _DELTA) * f2m)
        m3 = self._implicit_solve(rhs, dt * _G / rho_bar)
        if not (np.all(np.isfinite(rho3)) and np.all(np.isfinite(m3))):
            # finite explicit terms leave the implicit solve as the culprit
            blame["implicit_solve"] = not all(blame.values())
            raise DivergenceError(t + dt, blame)
        new = SimState(self.grid, rho3, m3, t + dt)
        if record is not None:
            record["stage_rho"] = (rho, rho2)
            record["stage_t"] = (t, t2)
            record["start_power"] = self._power(rho, m, S1)
            S_end = source.value(step_index + 1, 0, new.t, rho3)
            record["end_power"] = self._power(rho3, m3, S_end)
        return new

    def run(self, state, t_end, dt=None, output_times=None, source=None, weights=None,
            keep_stages=False, check_cfl=True):
        """Integrate to ``t_end``.

        With ``dt`` given the step is fixed (a CFL violation raises); otherwise it
        is chosen adaptively as the CFL bound, shortened to land on output times.
        ``weights`` (a :class:`hetns.weights.WeightEvolver`) is advanced in lock step.
        """
        if output_times is None:
            output_times = [t_end]
        outs = sorted(set(float(v) for v in output_times if v > state.t + 1e-14) | {float(t_end)})
        snaps = [state.copy()]
        wsnaps = None
        if weights is not None:
            weights.start(state)
            wsnaps = [weights.snapshot()]
        times, diss, work = [state.t], [0.0], [0.0]
        stages = [] if keep_stages else None
        dts = []
        cur = state
        k = 0
        for target in outs:
            while cur.t < target - 1e-12 * max(1.0, abs(target)):
                remaining = target - cur.t
                if dt is None:
                    h = min(self.max_dt(cur), remaining)
                else:
                    h = dt if remaining > dt * (1 + 1e-9) else remaining
                rec = {}
                nxt = self.step(cur, h, source=source, step_index=k, check_cfl=check_cfl and dt is not None, record=rec)
                if weights is not None:
                    weights.advance(cur, nxt, h)
                (d0, w0), (d1, w1) = rec["start_power"], rec["end_power"]
                times.append(nxt.t)
                diss.append(diss[-1] + 0.5 * h * (d0 + d1))
                work.append(work[-1] + 0.5 * h * (w0 + w1))
                if stages is not None:
                    stages.append((rec["stage_t"], rec["stage_rho"]))
                dts.append(h)
                cur = nxt
                k += 1
            cur.t = target if abs(cur.t - target) < 1e-9 else cur.t
            snaps.append(cur.copy())
            if weights is not None:
                wsnaps.append(weights.snapshot())
        return Trajectory(self.grid, self.params, snaps, np.array(times), np.array(diss), np.array(work),
                          k, dts, wsnaps, stages)


def step(solver, state, dt, **kw):
    return solver.step(state, dt, **kw)


# -- effective viscous flux ---------------------------------------------------------

@dataclass
class ViscousFlux:
    route_a: np.ndarray
    route_b: np.ndarray

    @property
    def discrepancy(self):
        return float(np.max(np.abs(self.route_a - self.route_b)))


def effective_viscous_flux(solver, state, previous):
    """Effective viscous flux two ways.

    (a) ``div u - P_art(rho) - Lmoll * P`` with its spatial mean removed;
    (b) ``lap^-1 div(d_t m + div(rho u (x) u))`` with ``d_t m`` the backward
    difference between ``previous`` and ``state``.
    """
    g = solver.grid
    u = state.velocity(solver.params.rho_floor)
    a = g.div(u) - solver.params.ladder.eval(np.maximum(state.rho, 0.0)) - solver.pressure_source(state.t, state.rho)
    a = a - np.mean(a)
    if previous is None:
        b = np.full(g.shape, np.nan)
    else:
        dt = state.t - previous.t
        if dt <= 0:
            raise UsageError("previous state must be strictly earlier")
        dtm = (state.m - previous.m) / dt
        flux = np.stack([dtm[i] + g.div(state.m[i] * u) for i in range(g.d)])
        b = g.inverse_laplacian(g.div(flux))
        b = b - np.mean(b)
    return ViscousFlux(a, b)


# -- fixed point --------------------------------------------------------------------

@dataclass
class FixedPointTrace:
    residuals: list
    converged: bool
    iterations: int
    iterates: list = field(default_factory=list, repr=False)

    @property
    def monotone_decreases(self):
        r = self.residuals
        return sum(1 for a, b in zip(r, r[1:]) if b < a)


def _source_table(solver, stages):
    return [[solver.pressure_source(t, r) for t, r in zip(ts, rs)] for ts, rs in stages]


def fixed_point_solve(solver, initial, horizon, tol, max_iter=20, dt=None, keep_iterates=False):
    """Picard iteration on the pressure source.

    Starting from ``S_0 = 0``, each iterate solves the system with the source
    frozen per (step, stage), then sets ``S_{k+1} = Lmoll * P(t, x, rho_k)`` on
    the stage densities.  Non-convergence is reported in the trace.
    """
    if tol <= 0:
        raise UsageError("tol must be positive")
    if dt is None:
        dt = 0.5 * solver.max_dt(initial)
    nsteps = max(int(np.ceil(horizon / dt - 1e-9)), 1)
    dt = horizon / nsteps
    g = solver.grid
    S = [[np.zeros(g.shape), np.zeros(g.shape)] for _ in range(nsteps)]
    residuals, iterates = [], []
    converged = False
    traj = None
    for k in range(max_iter):
        traj = solver.run(initial, initial.t + horizon, dt=dt, source=FrozenSource(S), keep_stages=True)
        S_new = _source_table(solver, traj.stage_rho)
        sq = sum(np.sum((a - b) ** 2) for row_a, row_b in zip(S_new, S) for a, b in zip(row_a, row_b))
        res = float(np.sqrt(sq * g.weight * dt / 2))
        residuals.append(res)
        if keep_iterates:
            iterates.append(S_new)
        S = S_new
        if res < tol:
            converged = True
            break
    return traj, FixedPointTrace(residuals, converged, len(residuals), iterates)


# -- cascade ------------------------------------------------------------------------

@dataclass
class CascadeRun:
    label: str
    eps: float
    etas: tuple
    final_rho: np.ndarray = None
    mass_drift: float = None
    ladder_energy: list = None
    error: str = None


@dataclass
class CascadeReport:
    eps_runs: list
    eta_runs: list
    eps_l1: list
    eps_lp: list
    eta_l1: list
    eta_lp: list
    compactness: dict
    p: float

    def eps_distances_decreasing(self):
        return _strictly_decreasing(self.eps_l1)

    def ladder_energy_trend(self, rung=0):
        runs = [r for r in self.eta_runs if r.error is None and r.label.startswith(f"eta{rung + 1}")]
        return [r.ladder_energy[rung] for r in runs]


def _strictly_decreasing(v):
    v = [x for x in v if x is not None]
    return len(v) >= 2 and all(b < a for a, b in zip(v, v[1:]))


def _distance(grid, a, b, p):
    if a is None or b is None:
        return None
    return float((np.sum(np.abs(a - b) ** p) * grid.weight) ** (1.0 / p))


def cascade_run(grid, law, ladder, rho0, u0, t_end, eps_ladder, eta_ladders, p=2.0, dt=None,
                h0_ladder=(1e-1, 1e-2), cfl=0.5, a=1.0, workers=1):
    """Run the eps-ladder at fixed eta, then send each eta_i to zero in order.

    ``eta_ladders[i]`` lists the values taken by ``eta_i`` while earlier rungs
    are already zero and later rungs keep their base value.  The eta stage runs
    without pressure mollification.  Independent runs are spread over
    ``workers`` threads; results keep ladder order.
    """
    from .diagnostics import plain_compactness

    eps_ladder = list(eps_ladder)
    if any(b >= a for a, b in zip(eps_ladder, eps_ladder[1:])):
        raise UsageError("eps ladder must be strictly decreasing")

    def one(label, eps, lad):
        run = CascadeRun(label, eps, lad.etas)
        try:
            s = Solver(grid, SimParams(law, lad, eps, cfl=cfl))
            traj = s.run(s.initial_state(rho0, u0), t_end, dt=dt)
            run.final_rho = traj.final.rho
            run.mass_drift = traj.mass_drift()
            run.ladder_energy = [grid.integrate(lad.rung_energy(i, np.maximum(traj.final.rho, 0.0)))
                                 for i in range(len(lad))]
        except Exception as exc:  # recorded, the cascade carries on
            run.error = f"{type(exc).__name__}: {exc}"
        return run

    jobs = [(f"eps={e:g}", e, ladder) for e in eps_ladder]
    etas = list(ladder.etas)
    for i, values in enumerate(eta_ladders):
        for v in values:
            etas[i] = float(v)
            jobs.append((f"eta{i + 1}={v:g}", None, replace(ladder, etas=tuple(etas))))
        etas[i] = 0.0
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(lambda job: one(*job), jobs))
    else:
        runs = [one(*job) for job in jobs]
    eps_runs, eta_runs = runs[:len(eps_ladder)], runs[len(eps_ladder):]

    def pairs(runs, q):
        return [_distance(grid, a.final_rho, b.final_rho, q) for a, b in zip(runs, runs[1:])]

    family = [r.final_rho for r in eps_runs + eta_runs if r.final_rho is not None]
    comp = plain_compactness(family, p, h0_ladder, a=a) if family else {}
    return CascadeReport(eps_runs, eta_runs, pairs(eps_runs, 1.0), pairs(eps_runs, p),
                         pairs(eta_runs, 1.0), pairs(eta_runs, p), comp, p)


__all__ = [
    "CascadeReport", "DirectSource", "FixedPointTrace", "FrozenSource", "SimParams", "SimState", "Solver",
    "Trajectory", "ViscousFlux", "cascade_run", "effective_viscous_flux", "fixed_point_solve", "step",
    "velocity",
]
