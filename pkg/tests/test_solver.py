import numpy as np
import pytest

from periporo import fracture
from periporo.fracture import FractureParams
from periporo.solver import (BoundaryConditions, DisplacementBC, NewtonDivergence, Simulation, StepRejected,
                             TimeIntegration, newmark_kinematics, undrained_pressure_predictors)

from support import clay, patch, pulled_patch


def cracked_patch(p0=-5e4):
    """5x5 patch with one bond pair broken between two fracture points."""
    sim = pulled_patch(5, 5, rate=1e-6, dt=1.0, p0=p0)
    hood = sim.hood
    b = int(np.flatnonzero((hood.owner == 12) & (hood.neighbor == 13))[0])
    hood.break_bonds(np.arange(hood.n_bonds) == b)
    hood.refresh()
    sim.state.is_fracture[[12, 13]] = True
    sim.state.pf[[12, 13]] = p0 + np.array([2e3, -1e3])
    sim.invalidate()
    sim._hold_detached()
    assert sim.gamma().sum() == 2
    return sim


def test_mechanical_tangent_matches_finite_differences(rng):
    sim = cracked_patch()
    n = sim.cloud.n_points * 2
    du = 1e-7 * rng.normal(size=n)
    sim.state.v = 1e-8 * rng.normal(size=(n // 2, 2))
    A = sim.mechanical_tangent(du).toarray()
    h = 1e-10
    fd = np.empty_like(A)
    for k in range(n):
        e = np.zeros(n)
        e[k] = h
        fd[:, k] = (sim.mechanical_residual(du + e) - sim.mechanical_residual(du - e)) / (2 * h)
    assert np.max(np.abs(fd - A)) <= 1e-6 * np.max(np.abs(A))


def test_fluid_jacobian_matches_finite_differences(rng):
    sim = cracked_patch()
    n = sim.cloud.n_points
    v = 1e-8 * rng.normal(size=(n, 2))
    Y = sim.hood.xi + 1e-6 * rng.normal(size=sim.hood.xi.shape)
    Y[sim.gamma()] = sim.hood.xi[sim.gamma()] * 1.01
    system = sim.fluid_system(1.0, v, sim.state.porosity, Y)
    fidx = system[1]
    x = np.concatenate([-5e4 + 3e3 * rng.normal(size=n), -5e4 + 3e3 * rng.normal(size=fidx.size)])
    _, J = sim.fluid_residual(x, system, jacobian=True)
    J = J.toarray()
    fd = np.empty_like(J)
    for k in range(x.size):
        h = 1e-3
        e = np.zeros(x.size)
        e[k] = h
        fd[:, k] = (sim.fluid_residual(x + e, system) - sim.fluid_residual(x - e, system)) / (2 * h)
    assert np.max(np.abs(fd - J)) <= 1e-6 * np.max(np.abs(J))


def test_newmark_recovers_constant_velocity():
    # [DERIVED] du = v dt with a_n = 0 reproduces v and zero acceleration for any beta1 = beta2
    v0 = np.array([[2e-3, -1e-3]])
    u, v, a = newmark_kinematics(v0 * 0.1, np.zeros((1, 2)), v0, np.zeros((1, 2)), 0.1, 0.6, 0.6)
    assert np.allclose(v, v0, rtol=1e-14) and np.allclose(a, 0.0, atol=1e-15)
    assert np.allclose(u, v0 * 0.1)


def test_newmark_trapezoidal_exact_for_constant_acceleration():
    # [DERIVED] beta1 = beta2 = 1/2: du = v dt + a dt^2 / 2 gives v + a dt and a back
    v0, a0, dt = np.array([1.0]), np.array([3.0]), 0.2
    _, v, a = newmark_kinematics(v0 * dt + 0.5 * a0 * dt**2, np.zeros(1), v0, a0, dt, 0.5, 0.5)
    assert v == pytest.approx(v0 + a0 * dt, rel=1e-14)
    assert a == pytest.approx(a0, rel=1e-14)


def test_undrained_predictor_sign():
    sim = pulled_patch(4, 4)
    n = sim.cloud.n_points
    expand = np.full(n, 1e-6)
    pt, pft, pdot, _ = undrained_pressure_predictors(sim, expand)
    # dilation at constant water mass raises the suction
    assert np.all(pt < sim.state.p) and np.all(pdot < 0)
    pt2, *_ = undrained_pressure_predictors(sim, -expand)
    assert np.all(pt2 > sim.state.p)
    assert np.allclose(pt - sim.state.p, -(pt2 - sim.state.p))


def test_non_positive_step_rejected():
    sim = pulled_patch(4, 4)
    with pytest.raises(ValueError):
        sim.advance(0.0)
    with pytest.raises(ValueError):
        sim.advance(-1.0)
    assert any("dt" in m for m in TimeIntegration(dt=0.0, t_final=1.0).problems())


def test_unloaded_stress_free_body_stays_put():
    hood = patch(5, 5)
    bcs = BoundaryConditions([DisplacementBC("ymin", 0), DisplacementBC("ymin", 1)])
    sim = Simulation(hood, clay(), FractureParams(critical_energy=1.0), TimeIntegration(1.0, 10.0), bcs)
    for _ in range(3):
        s = sim.advance()
        assert s.iterations[0] == 0
    assert np.all(s.u == 0) and np.all(s.p == 0) and np.all(s.damage == 0)


def test_linear_regime_converges_in_two_iterations():
    # dry-side small strain: stiffness barely depends on the iterate
    sim = pulled_patch(6, 6, rate=1e-9, dt=1.0)
    for _ in range(3):
        s = sim.advance()
        assert s.iterations[0] <= 2


def test_water_volume_conserved_with_fixed_skeleton():
    hood = patch(8, 8)
    hood.cloud.tags["all"] = np.ones(hood.cloud.n_points, bool)
    bcs = BoundaryConditions([DisplacementBC("all", 0), DisplacementBC("all", 1)])
    sim = Simulation(hood, clay(permeability=1e-12), FractureParams(critical_energy=np.inf),
                     TimeIntegration(1.0, 100.0), bcs, initial_pressure=-5e4)
    x = hood.cloud.positions
    sim.state.p = -5e4 - 4e4 * (x[:, 0] > 4e-3)
    w0 = sim.water_content()
    spread0 = np.ptp(sim.state.p)
    for _ in range(100):
        sim.advance()
    assert abs(sim.water_content() - w0) <= 1e-9 * w0
    assert np.ptp(sim.state.p) < spread0


def test_internal_forces_balance(rng):
    # with inertia scaled away the assembled forces sum to zero per component
    sim = cracked_patch()
    n = sim.cloud.n_points
    du = 1e-6 * rng.normal(size=2 * n)
    R = sim.mechanical_residual(du, dt=1e9).reshape(n, 2)
    scale = np.abs(R).max()
    assert scale > 0
    assert np.all(np.abs(R.sum(axis=0)) <= 1e-9 * scale)


def test_energy_increment_ignores_pore_pressure():
    # bond energies come from the effective force state only: same kinematics, different suction
    sim = pulled_patch(6, 6, rate=1e-6, p0=-5e4)
    du, res, _, _ = sim.mechanical_stage(1.0)
    sim.commit_fracture(du, res)
    other = pulled_patch(6, 6, rate=1e-6, p0=-2e5)
    res2 = other._mechanics(du, 1.0, other.predictor_terms(1.0), False)
    assert not np.allclose(res2["pt"], res["pt"])
    other.commit_fracture(du, res2)
    assert np.allclose(other.hood.energy, sim.hood.energy, rtol=1e-12, atol=0)


def test_failed_step_rolls_back_and_reports():
    sim = pulled_patch(5, 5, rate=1e-6, max_iter=0, max_halvings=2)
    before = sim.state.copy()
    with pytest.raises(StepRejected) as info:
        sim.advance()
    assert len(info.value.history) == 3
    assert np.array_equal(sim.state.u, before.u) and sim.state.t == 0.0


def test_bond_breaks_under_pull_and_dissipation_is_recorded():
    sim = pulled_patch(6, 6, rate=2e-6, dt=1.0)
    sim.frac = FractureParams(critical_energy=1.0)
    for _ in range(5):
        sim.advance()
        if not sim.hood.intact.all():
            break
    assert not sim.hood.intact.all()
    broken = ~sim.hood.intact
    expected = 0.5 * np.sum(sim.hood.energy[broken] * sim.V[sim.hood.neighbor[broken]] * sim.V[sim.hood.owner[broken]])
    assert sim.total_dissipated() == pytest.approx(expected, rel=1e-12)
    assert np.all(sim.state.damage == fracture.compute_damage(sim.hood))


def test_newton_divergence_is_a_runtime_error():
    assert issubclass(NewtonDivergence, RuntimeError)
