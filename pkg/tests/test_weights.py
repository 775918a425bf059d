import numpy as np
import pytest
from scipy import integrate

from hetns.errors import SchemeError, UsageError
from hetns.grid import PeriodicGrid
from hetns.pressure import ArtificialLadder, power_law
from hetns.solver import SimParams, SimState, Solver
from hetns.weights import (PairWeight, WeightEvolver, build_penalization, commutator_quantity, periodic_interp,
                           weight_monitors)
from hetns.kernels import single_kernel

LAW = power_law(2.2, 1)


def uniform_flow(grid, c, t):
    return SimState(grid, np.ones(grid.shape), np.full((grid.d,) + grid.shape, c), t)


def drive(evolver, grid, c, dt, steps):
    cur = uniform_flow(grid, c, 0.0)
    evolver.start(cur)
    for k in range(steps):
        nxt = uniform_flow(grid, c, (k + 1) * dt)
        evolver.advance(cur, nxt, dt)
        cur = nxt
    return evolver.snapshot()


def test_interp_reproduces_constants_exactly():
    g = PeriodicGrid(2, 16)
    f = np.full(g.shape, 0.7310585786300049)
    disp = np.random.default_rng(0).uniform(-0.3, 0.3, (2,) + g.shape)
    assert np.array_equal(periodic_interp(g, f, disp), f)


def test_interp_integer_shift_is_roll():
    g = PeriodicGrid(1, 32)
    f = np.random.default_rng(1).standard_normal(32)
    assert np.allclose(periodic_interp(g, f, np.full((1, 32), 3 * g.spacing)), np.roll(f, 3), atol=1e-15)


def test_constant_damping_analytic():
    g = PeriodicGrid(1, 64)
    ev = WeightEvolver(LAW, penalty=lambda s: 2.0)
    ws = drive(ev, g, 0.3, 1e-3, 250)
    assert np.max(np.abs(ws.w - np.exp(-2.0 * 0.25))) < 1e-8


def test_characteristics_oracle():
    # u = c, D = g(x) frozen: w(t, x) = exp(-int_0^t g(x - c s) ds), integral by adaptive quadrature
    n, c, dt, steps = 512, 0.37, 1e-2, 50
    grid = PeriodicGrid(1, n)
    x = grid.coords[0]
    g = lambda y: 1 + 0.5 * np.sin(2 * np.pi * y)  # noqa: E731
    ev = WeightEvolver(LAW, penalty=lambda s: g(s.grid.coords[0]))
    ws = drive(ev, grid, c, dt, steps)
    t = dt * steps
    integral, _ = integrate.quad_vec(lambda s: g(x - c * s), 0.0, t, epsabs=1e-13, epsrel=0)
    assert np.max(np.abs(ws.w - np.exp(-integral))) < 1e-4


def test_weight_monotone_along_characteristics():
    # integer Courant number: departure points are grid points, so monotonicity is exact
    grid = PeriodicGrid(1, 64)
    ev = WeightEvolver(LAW, penalty=lambda s: 1 + np.cos(2 * np.pi * s.grid.coords[0]))
    cur = uniform_flow(grid, 2 * grid.spacing / 0.01, 0.0)
    ev.start(cur)
    prev = ev.w.copy()
    for k in range(20):
        nxt = uniform_flow(grid, cur.m[0, 0], (k + 1) * 0.01)
        ev.advance(cur, nxt, 0.01)
        assert np.all(ev.w <= np.roll(prev, 2) + 1e-15)
        prev, cur = ev.w.copy(), nxt


def test_lambda_zero_gives_unit_weight_exactly():
    g = PeriodicGrid(1, 64)
    x = g.coords[0]
    s = Solver(g, SimParams(LAW, ArtificialLadder((0.1,), (5.0,), 2.2, 1), eps=0.1))
    st = s.initial_state(1 + 0.3 * np.sin(2 * np.pi * x), 0.2 * np.cos(2 * np.pi * x))
    ev = WeightEvolver(LAW, lambda_pen=0.0, solver=s)
    tr = s.run(st, 0.005, weights=ev)
    assert all(np.array_equal(w.w, np.ones(64)) for w in tr.weights)


def test_weight_bounds_along_flow():
    g = PeriodicGrid(1, 64)
    x = g.coords[0]
    s = Solver(g, SimParams(LAW, ArtificialLadder((0.1,), (5.0,), 2.2, 1), eps=0.1))
    st = s.initial_state(1 + 0.3 * np.sin(2 * np.pi * x), 0.2 * np.cos(2 * np.pi * x))
    ev = WeightEvolver(LAW, lambda_pen=1.0, h_w=0.05, solver=s)
    tr = s.run(st, 0.01, output_times=[0.005], weights=ev)
    assert ev.max_excursion <= 1e-12
    for w in tr.weights:
        assert np.all((w.w >= 0) & (w.w <= 1))
    assert np.all(np.diff([w.w.mean() for w in tr.weights]) < 0)


def test_negative_penalty_leaves_range():
    g = PeriodicGrid(1, 16)
    ev = WeightEvolver(LAW, penalty=lambda s: -1.0)
    with pytest.raises(SchemeError):
        drive(ev, g, 0.0, 1e-2, 2)


def test_parameter_checks():
    with pytest.raises(UsageError):
        WeightEvolver(LAW, l_exp=0.5)
    with pytest.raises(UsageError):
        WeightEvolver(LAW, lambda_pen=-1)


def test_penalization_components():
    g = PeriodicGrid(1, 64)
    x = g.coords[0]
    st = SimState(g, 1 + 0.3 * np.sin(2 * np.pi * x), (0.1 * np.cos(2 * np.pi * x))[None])
    D, comps = build_penalization(st, LAW, 2.0, 0.25, 0.05, with_components=True)
    assert np.allclose(D, 2.0 * (comps["maximal"] + comps["density"] + comps["smoothed"]))
    assert np.allclose(comps["density"], st.rho ** 2.2)
    assert all(np.all(v >= 0) for v in comps.values())


def test_monitors_and_pairs():
    g = PeriodicGrid(1, 64)
    st = uniform_flow(g, 0.0, 0.0)
    ev = WeightEvolver(LAW, penalty=lambda s: 1.0)
    ws = drive(ev, g, 0.0, 0.01, 10)
    m = weight_monitors(ws, st, 0.5, h=0.05)
    assert m["rho_log_w"] == pytest.approx(0.1, rel=1e-12)
    assert m["rho_low_weight"] == 0.0 and m["floored_cells"] == 0
    pw = PairWeight.from_weight(single_kernel(g, 0.05), ws.w)
    assert np.allclose(pw.pair((3,), g), 2 * np.exp(-0.1))


def test_commutator_vanishes_for_constant_weight():
    g = PeriodicGrid(1, 64)
    x = g.coords[0]
    st = SimState(g, 1 + 0.3 * np.sin(2 * np.pi * x), (0.1 * np.cos(2 * np.pi * x))[None], 0.0)
    ev = WeightEvolver(LAW, penalty=lambda s: 0.0)
    ev.start(st)
    ws = ev.snapshot()
    assert commutator_quantity([st], [ws], LAW, 0.05, 0.25, ladder_size=8) < 1e-12


def _flow(n=64):
    g = PeriodicGrid(1, n)
    x = g.coords[0]
    s = Solver(g, SimParams(LAW, ArtificialLadder((0.1,), (5.0,), 2.2, 1), eps=0.1))
    return g, s, s.initial_state(1 + 0.3 * np.sin(2 * np.pi * x), 0.2 * np.cos(2 * np.pi * x))


def test_penalization_linear_in_lambda():
    g, s, st = _flow()
    a = build_penalization(st, LAW, 1.0, 0.25, 0.05)
    b = build_penalization(st, LAW, 2.0, 0.25, 0.05)
    assert np.allclose(b, 2 * a, rtol=1e-14)


def test_penalization_zero_state():
    g = PeriodicGrid(1, 32)
    st = SimState(g, np.zeros(32), np.zeros((1, 32)))
    assert np.array_equal(build_penalization(st, LAW, 1.0, 0.25, 0.1), np.zeros(32))


def test_penalization_term_oracles():
    # single mode u and rho, homogeneous P: brute-force maximal average, power and direct convolution
    g = PeriodicGrid(1, 32)
    x = g.coords[0]
    rho = 1 + 0.2 * np.sin(2 * np.pi * x)
    u = 0.1 * np.cos(2 * np.pi * x)
    st = SimState(g, rho, rho * u)
    _, comps = build_penalization(st, LAW, 1.0, 0.25, 0.1, with_components=True)
    du = np.abs(g.grad(u)[0])
    brute = np.abs(du).copy()
    for r in g.spacing * (0.5 / g.spacing) ** (np.arange(16) / 15):
        idx = [k for k in range(-16, 17) if abs(k) * g.spacing < r * (1 - 1e-12)]
        if len(idx) > 1:
            avg = np.mean([np.roll(du, k) for k in idx], axis=0)
            brute = np.maximum(brute, avg)
    assert np.allclose(comps["maximal"], brute, atol=1e-12)
    assert np.allclose(comps["density"], rho ** 2.2, rtol=1e-14)
    grid, table = single_kernel(g, 0.1)
    field = np.abs(g.grad(u)[0]) + rho ** 2.2
    direct = np.array([sum(table[(i - j) % 32] * field[j] for j in range(32)) * g.weight for i in range(32)])
    assert np.allclose(comps["smoothed"], direct, atol=1e-12)


def test_log_weight_monitor_scales_with_lambda():
    g, s, st = _flow()
    vals = []
    for lam in (1.0, 2.0, 4.0):
        ev = WeightEvolver(LAW, lambda_pen=lam, h_w=0.05, solver=s)
        tr = s.run(st, 0.01, weights=ev)
        vals.append(weight_monitors(tr.weights[-1], tr.final, 0.1, 0.05)["rho_log_w"] / lam)
    assert max(vals) / min(vals) <= 1.5


def test_commutator_decreases_with_h0():
    g, s, st = _flow(128)
    ev = WeightEvolver(LAW, lambda_pen=1.0, h_w=0.05, solver=s)
    tr = s.run(st, 0.005, output_times=[0.0025], weights=ev)
    src = lambda z: s.pressure_source(z.t, z.rho)  # noqa: E731
    q = [commutator_quantity(tr.snapshots, tr.weights, LAW, h0, 0.25, ladder_size=16, source=src)
         for h0 in (1e-1, 1e-2, 1e-3)]
    assert q[0] > q[1] > q[2]
