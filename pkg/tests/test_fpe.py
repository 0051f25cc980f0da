import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hypocert import CflViolation, DiagonalModel, NonPositiveDensity, PowerSeries, compute_functionals
from hypocert.fpe import FokkerPlanckSolver, mixture_density, run_decay_experiment, step, write_trace_csv
from hypocert.grid import DensityField, Grid, equilibrium
from hypocert.model import quadratic_potential
from models import const_model, variable_model

RNG = np.random.default_rng(5)


def _ou_1d():
    return DiagonalModel(quadratic_potential([[1.0]]), [PowerSeries([(1.0, 0)])])


def _bumped(solver, amp=0.3):
    P = solver.grid.points()
    h = 1 + amp * np.exp(-((P[..., 0] - 1) ** 2 + (P[..., 1] - 0.5) ** 2))
    return h / solver.grid.integrate(solver.pi * h)


# ---------------------------------------------------------------------------
# time stepping

def test_equilibrium_is_a_fixed_point():
    m = const_model()
    solver = FokkerPlanckSolver(m, Grid.make((-5, -5), (5, 5), 31))
    h = np.ones(solver.grid.shape)
    worst = 0.0
    for _ in range(1000):
        h = solver.step_h(h, solver.max_dt)
        worst = max(worst, float(np.abs(h - 1).max()))
    assert worst < 1e-9


def test_equilibrium_fixed_point_periodic_variable_friction():
    m = variable_model()
    p = equilibrium(m, Grid.make((0.5, 0.5), (1, 1), 24, periodic=True))
    solver = FokkerPlanckSolver(m, p.grid)
    q = p
    for _ in range(50):
        q = solver.step(q, solver.max_dt)
    assert np.abs(q.values - p.values).max() < 1e-10 * p.values.max()


def test_mass_conserved():
    m = const_model()
    solver = FokkerPlanckSolver(m, Grid.make((-5, -5), (5, 5), 41))
    p = DensityField(solver.grid, solver.pi * _bumped(solver))
    for _ in range(200):
        p = solver.step(p, solver.max_dt)
        assert abs(p.mass() - 1) < 1e-8
    assert p.time == pytest.approx(200 * solver.max_dt)


def test_module_step_builds_solver():
    m = const_model()
    g = Grid.make((-5, -5), (5, 5), 21)
    p = mixture_density(m, g)
    q = step(m, p, 1e-3)
    assert q.time == pytest.approx(1e-3) and abs(q.mass() - 1) < 1e-12


def test_reversible_kl_monotone_and_converges():
    m = _ou_1d()
    g = Grid.make((-7,), (7,), 141)
    solver = FokkerPlanckSolver(m, g)
    x = g.points()[..., 0]
    h = DensityField(g, np.exp(-(x - 1) ** 2 / 0.5)).normalized().values / solver.pi
    kl = []
    for _ in range(3000):
        kl.append(compute_functionals(m, DensityField(g, solver.pi * h), solver)[1])
        h = solver.step_h(h, solver.max_dt)
    assert np.all(np.diff(kl) <= 1e-14)
    assert kl[-1] < 1e-4 * kl[0]


def _rk4_reference(solver, h, T, n=200):
    dt = T / n
    for _ in range(n):
        k1 = solver.rhs(h)
        k2 = solver.rhs(h + 0.5 * dt * k1)
        k3 = solver.rhs(h + 0.5 * dt * k2)
        k4 = solver.rhs(h + dt * k3)
        h = h + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return h / solver.grid.integrate(solver.pi * h)


def test_single_step_error_is_third_order_locally():
    solver = FokkerPlanckSolver(const_model(), Grid.make((-5, -5), (5, 5), 41))
    h0 = _bumped(solver)
    errs = []
    for dt in (solver.max_dt, solver.max_dt / 2, solver.max_dt / 4):
        errs.append(np.abs(solver.step_h(h0, dt) - _rk4_reference(solver, h0, dt)).max())
    assert errs[0] / errs[1] > 6 and errs[1] / errs[2] > 6


def test_cfl_violation():
    solver = FokkerPlanckSolver(const_model(), Grid.make((-5, -5), (5, 5), 21))
    with pytest.raises(CflViolation):
        solver.step_h(np.ones(solver.grid.shape), 2 * solver.max_dt)


def test_solver_rejects_high_dimension():
    with pytest.raises(ValueError):
        FokkerPlanckSolver(const_model(), Grid.make((0,) * 4, (1,) * 4, 3))


# ---------------------------------------------------------------------------
# functionals

def test_functionals_vanish_at_equilibrium():
    m = const_model()
    I, KL, L1 = compute_functionals(m, equilibrium(m, Grid.make((-5, -5), (5, 5), 41)))
    assert I < 1e-25 and KL < 1e-15 and L1 < 1e-15


def test_functionals_reject_zero_density():
    g = Grid.make((-2, -2), (2, 2), 9)
    vals = np.ones(g.shape)
    vals[4, 4] = 0.0
    with pytest.raises(NonPositiveDensity):
        compute_functionals(const_model(), DensityField(g, vals))


def _phi_density(grid, pi, eps):
    P = grid.points()
    phi = np.sin(P[..., 0]) * np.cos(0.5 * P[..., 1])
    phi = phi - grid.integrate(phi * pi)                  # keep the mass at one
    return DensityField(grid, pi * (1 + eps * phi)), phi


def test_kl_is_quadratic_in_perturbation():
    m = const_model()
    g = Grid.make((-6, -6), (6, 6), 61)
    pi = equilibrium(m, g).values
    kls = []
    for eps in (0.02, 0.01):
        p, phi = _phi_density(g, pi, eps)
        kls.append(compute_functionals(m, p)[1])
        assert kls[-1] == pytest.approx(0.5 * eps ** 2 * g.integrate(phi ** 2 * pi), rel=2 * eps)
    assert kls[0] / kls[1] == pytest.approx(4.0, rel=0.02)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 0.8), st.floats(-2, 2), st.floats(-2, 2), st.floats(0.3, 1.5))
def test_pinsker(weight, cx, cy, width):
    m = const_model()
    g = Grid.make((-5, -5), (5, 5), 31)
    p = mixture_density(m, g, weight, (cx, cy), width)
    _, KL, L1 = compute_functionals(m, p)
    assert L1 <= np.sqrt(2 * KL) + 1e-12
    assert min(KL, L1) >= 0


# ---------------------------------------------------------------------------
# decay experiments

def test_decay_from_equilibrium_is_trivial():
    m = const_model()
    g = Grid.make((-5, -5), (5, 5), 21)
    trace = run_decay_experiment(m, equilibrium(m, g), 1.0, lam=0.0975, samples=0)
    assert max(trace.I_az) < 1e-25 and max(trace.KL) < 1e-15
    assert trace.verdicts["A"] and trace.verdicts["B"] and trace.verdicts["C"]


def test_decay_requires_positive_rate():
    m = const_model()
    p = equilibrium(m, Grid.make((-5, -5), (5, 5), 21))
    with pytest.raises(ValueError):
        run_decay_experiment(m, p, 1.0, lam=0.0)
    with pytest.raises(ValueError):
        run_decay_experiment(m, p, 1.0)


def test_trace_invariants(decay_benchmark):
    trace = decay_benchmark.run()
    I, KL, L1 = (np.asarray(v) for v in (trace.I_az, trace.KL, trace.L1))
    assert np.all(I >= 0) and np.all(KL >= 0) and np.all(L1 >= 0)
    assert np.all((KL > 1e-14) == (L1 > 1e-7))
    assert trace.times[0] == 0.0 and trace.times[-1] == pytest.approx(20.0)


def test_trace_csv(decay_benchmark, tmp_path):
    trace = decay_benchmark.run()
    write_trace_csv(trace, tmp_path / "t.csv")
    with open(tmp_path / "t.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "I_az", "KL", "L1", "envelope_I", "envelope_KL", "envelope_L1", "pass"]
    body = np.array([[float(v) for v in r] for r in rows[1:]])
    assert np.array_equal(body[:, 1], np.asarray(trace.I_az))
    assert np.array_equal(body[:, 0], np.asarray(trace.times))


def test_fitted_exponent_stable_under_grid_refinement(decay_benchmark):
    coarse = decay_benchmark.run(41)
    fine = decay_benchmark.run(81)
    assert abs(fine.fitted["I_az"] - coarse.fitted["I_az"]) < 0.03 * fine.fitted["I_az"]
