import numpy as np
import pytest

from hetns.errors import DivergenceError, ResolutionError, StepSizeError, UsageError
from hetns.grid import PeriodicGrid
from hetns.pressure import ArtificialLadder, power_law
from hetns.solver import (FrozenSource, SimParams, SimState, Solver, cascade_run, effective_viscous_flux,
                          fixed_point_solve, step, velocity)

LAW = power_law(2.2, 1)
LADDER = ArtificialLadder((0.1,), (5.0,), 2.2, 1)


def setup(n=64, eps=0.1, law=LAW, ladder=LADDER, amp=0.3, uamp=0.2, d=1):
    g = PeriodicGrid(d, n)
    x = g.coords[0]
    s = Solver(g, SimParams(law, ladder, eps))
    u0 = np.zeros((d,) + g.shape)
    u0[0] = uamp * np.cos(2 * np.pi * x)
    return g, s, s.initial_state(1 + amp * np.sin(2 * np.pi * x), u0)


def test_velocity_floor():
    rho = np.array([0.0, 1e-12, 2.0])
    assert np.array_equal(velocity(rho, np.array([[1.0, 1.0, 1.0]])), np.array([[0.0, 0.0, 0.5]]))


def test_mass_conserved_and_positive_2d():
    # in d = 2 a single rung cannot satisfy the ordering constraints; (5, 3.2) does for gamma = 2.2
    g, s, st = setup(n=32, d=2, eps=0.2, amp=0.5, law=power_law(2.2, 2),
                     ladder=ArtificialLadder((0.1, 0.1), (5.0, 3.2), 2.2, 2))
    tr = s.run(st, 0.005, output_times=[0.0025])
    assert tr.mass_drift() <= 1e-12
    assert min(float(sn.rho.min()) for sn in tr.snapshots) > 0


def test_initial_mollification_keeps_mass():
    g, s, st = setup()
    x = g.coords[0]
    raw = 1 + 0.3 * np.sin(2 * np.pi * x)
    assert st.mass == pytest.approx(g.integrate(raw), rel=1e-14)
    assert not np.allclose(st.rho, raw)


def test_cfl_bound_enforced():
    g, s, st = setup()
    with pytest.raises(StepSizeError):
        s.step(st, 2 * s.max_dt(st))
    with pytest.raises(UsageError):
        s.step(st, 0.0)


def test_divergence_blame():
    g, s, st = setup(eps=None)
    st.m[0, 3] = np.nan
    with pytest.raises(DivergenceError) as err:
        step(s, st, 1e-6, check_cfl=False)
    assert err.value.blame["convection"] is False


def test_second_order_in_time():
    g, s, st = setup(n=32, eps=None)
    T = 0.004
    finals = [s.run(st, T, dt=T / k).final.rho for k in (20, 40, 80)]
    e1, e2 = np.max(np.abs(finals[0] - finals[1])), np.max(np.abs(finals[1] - finals[2]))
    assert np.log2(e1 / e2) == pytest.approx(2, abs=0.25)


def test_frozen_source_reproduces_direct_run():
    g, s, st = setup()
    dt = 0.5 * s.max_dt(st)
    direct = s.run(st, 20 * dt, dt=dt, keep_stages=True)
    table = [[s.pressure_source(t, r) for t, r in zip(ts, rs)] for ts, rs in direct.stage_rho]
    frozen = s.run(st, 20 * dt, dt=dt, source=FrozenSource(table))
    assert np.max(np.abs(frozen.final.rho - direct.final.rho)) < 1e-14


def test_fixed_point_zero_pressure_one_iteration():
    g, s, st = setup(law=power_law(2.2, 1, kappa=0.0))
    traj, trace = fixed_point_solve(s, st, 0.01, 1e-10)
    assert trace.converged and trace.iterations == 1 and trace.residuals == [0.0]


def test_fixed_point_non_convergence_is_data():
    g, s, st = setup()
    _, trace = fixed_point_solve(s, st, 0.01, 1e-14, max_iter=2)
    assert not trace.converged and trace.iterations == 2


def test_effective_viscous_flux_routes_agree_roughly():
    g, s, st = setup(n=64)
    dt = 0.25 * g.spacing ** 2 / 2
    prev = s.run(st, 0.002, dt=dt).final
    F = effective_viscous_flux(s, s.step(prev, dt), prev)
    assert abs(F.route_a.mean()) < 1e-14 and abs(F.route_b.mean()) < 1e-14
    assert F.discrepancy < 1e-2 * np.max(np.abs(F.route_a))
    assert np.all(np.isnan(effective_viscous_flux(s, prev, None).route_b))


def test_unresolved_mollifier():
    with pytest.raises(ResolutionError, match="n > 80"):
        Solver(PeriodicGrid(1, 64), SimParams(LAW, LADDER, eps=0.05))


def test_cascade_records_errors_and_continues():
    g = PeriodicGrid(1, 64)
    x = g.coords[0]
    rep = cascade_run(g, LAW, LADDER, 1 + 0.3 * np.sin(2 * np.pi * x), 0.2 * np.cos(2 * np.pi * x), 0.002,
                      [0.2, 0.1, 0.05], [[0.1, 0.0]])
    assert "ResolutionError" in rep.eps_runs[2].error
    assert rep.eps_runs[0].error is None and rep.eta_runs[-1].error is None
    assert rep.eps_l1[1] is None
    assert rep.ladder_energy_trend(0)[-1] == 0.0
    with pytest.raises(UsageError):
        cascade_run(g, LAW, LADDER, x * 0 + 1, None, 0.001, [0.1, 0.2], [])


def test_equilibrium_exactly_steady_2d():
    g = PeriodicGrid(2, 16)
    s = Solver(g, SimParams(power_law(2.0, 2), ArtificialLadder((0.1,), (5.0,))))
    st = SimState(g, np.ones(g.shape), np.zeros((2,) + g.shape))
    tr = s.run(st, 50 * s.max_dt(st), dt=s.max_dt(st))
    assert np.max(np.abs(tr.final.rho - 1)) < 1e-14 and np.max(np.abs(tr.final.m)) < 1e-14
