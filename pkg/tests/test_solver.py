from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import simpson
from scipy.optimize import fsolve

from fisherstefan.mesh import MeshSpec, build_mesh
from fisherstefan.solver import (
    InitialCondition, ProblemConfig, State, StepperParams, build_stencils, make_initial_state,
    mass, run, step,
)

UNIFORM5 = build_mesh(MeshSpec(5, 0.25))
DEFAULT = build_mesh(MeshSpec())


def extinction_run(kappa, alpha, n_nodes=1001, lam=0.0, **kw):
    mesh = build_mesh(MeshSpec(n_nodes, 1e-6))
    cfg = ProblemConfig(kappa, lam, InitialCondition.step(alpha), t_end=kw.pop("t_end", 200.0))
    return run(cfg, mesh, StepperParams(**kw), sample_every=10), mesh


@pytest.fixture(scope="module")
def kappa_half_run():
    return extinction_run(-0.5, 1.0)


# ------------------------------------------------------------ initial data and mass

def test_step_initial_state(default_mesh):
    st_ = make_initial_state(default_mesh, InitialCondition.step(0.5))
    assert st_.s == 1.0 and st_.t == 0.0
    assert np.all(st_.u[:-1] == 0.5) and st_.u[-1] == 0.0
    assert mass(st_, default_mesh) == pytest.approx(0.5 * (1 - 1e-6 / 2), abs=1e-12)


def test_ramp_initial_state(default_mesh):
    st_ = make_initial_state(default_mesh, InitialCondition.ramp(0.5))
    np.testing.assert_allclose(st_.u, 1.0 - default_mesh.nodes, atol=1e-15)
    assert mass(st_, default_mesh) == pytest.approx(0.5, abs=1e-12)


def test_zero_tabulated_mass(default_mesh):
    ic = InitialCondition.tabulated(np.zeros(default_mesh.n_nodes), default_mesh.nodes)
    assert ic.initial_mass() == 0.0
    assert mass(make_initial_state(default_mesh, ic), default_mesh) == 0.0


def test_mass_of_triangle_scaled_by_s(default_mesh):
    y = default_mesh.nodes
    assert mass(State(u=1.0 - y, s=2.0, t=0.0), default_mesh) == pytest.approx(1.0, abs=1e-6)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=4, max_size=4), st.floats(0.1, 5.0))
def test_mass_matches_refined_quadrature(coef, s):
    y = np.asarray(DEFAULT.nodes)
    u = sum(a * np.cos((k + 0.5) * np.pi * y) for k, a in enumerate(coef))
    fine = np.concatenate([np.linspace(a, b, 11)[:-1] for a, b in zip(y[:-1], y[1:])] + [[1.0]])
    oracle = s * simpson(np.interp(fine, y, u), x=fine)
    assert mass(State(u=u, s=s, t=0.0), DEFAULT) == pytest.approx(oracle, abs=1e-6)


@pytest.mark.parametrize("make", [lambda: InitialCondition.step(0.0), lambda: InitialCondition.step(1.2),
                                  lambda: InitialCondition.ramp(0.6), lambda: InitialCondition.ramp(0.0)])
def test_initial_condition_bounds(make):
    with pytest.raises(ValueError):
        make()


def test_tabulated_must_vanish_at_front():
    with pytest.raises(ValueError):
        InitialCondition.tabulated([0.5, 0.5], [0.0, 1.0])


@pytest.mark.parametrize("kw", [dict(kappa=0.0, lam=1.0, t_end=1.0), dict(kappa=-1.0, lam=-1.0, t_end=1.0),
                                dict(kappa=-1.0, lam=1.0, t_end=0.0)])
def test_problem_config_rejects(kw):
    with pytest.raises(ValueError):
        ProblemConfig(ic=InitialCondition.step(1.0), **kw)


@pytest.mark.parametrize("kw", [dict(dt=0.0), dict(newton_tol=-1.0), dict(newton_max_iters=1)])
def test_stepper_params_rejects(kw):
    with pytest.raises(ValueError):
        StepperParams(**kw)


# ------------------------------------------------------------ one step against a dense oracle

def oracle_step(u_old, s_old, dt, kappa, lam):
    """Backward-Euler step on the uniform 5-node mesh, residual written from scratch."""
    h = 0.25
    y = np.linspace(0.0, 1.0, 5)

    def F(z):
        u, s = z[:5], z[5]
        r = np.empty(6)
        r[0] = u[1] - u[0]
        for i in range(1, 4):
            uyy = (u[i - 1] - 2 * u[i] + u[i + 1]) / h**2
            uy = (u[i + 1] - u[i - 1]) / (2 * h)
            sdot = (s - s_old) / dt
            r[i] = (u[i] - u_old[i]) / dt - uyy / s_old**2 - y[i] / s_old * sdot * uy - lam * u[i] * (1 - u[i])
        r[4] = u[4]
        flux = (u[2] - 4 * u[3] + 3 * u[4]) / (2 * h)
        r[5] = s - s_old + dt * kappa / s_old * flux
        return r

    z = fsolve(F, np.append(u_old, s_old), xtol=1e-13)
    assert np.max(np.abs(F(z))) < 1e-12
    return z[:5], z[5]


@pytest.mark.parametrize("kappa,lam,dt", [(-0.7, 2.0, 0.01), (-1.3, 0.0, 0.002), (0.8, 5.0, 0.05)])
def test_single_step_matches_dense_oracle(kappa, lam, dt):
    y = UNIFORM5.nodes
    u_old = 0.8 * np.cos(0.5 * np.pi * y)
    u_old[-1] = 0.0
    state = State(u=u_old, s=1.3, t=0.0)
    cfg = ProblemConfig(kappa, lam, InitialCondition.step(1.0), t_end=1.0)
    new, iters = step(state, UNIFORM5, cfg, StepperParams(dt=dt, newton_tol=1e-13))
    u_ref, s_ref = oracle_step(u_old, 1.3, dt, kappa, lam)
    assert iters >= 2
    np.testing.assert_allclose(new.u, u_ref, atol=1e-10)
    assert new.s == pytest.approx(s_ref, abs=1e-10)


def test_stencils_exact_on_quadratics(default_mesh):
    st_ = build_stencils(default_mesh)
    y = st_.y
    q = 3 * y**2 - y + 2
    i = slice(1, -1)
    d1 = st_.d1[0, i] * q[:-2] + st_.d1[1, i] * q[1:-1] + st_.d1[2, i] * q[2:]
    d2 = st_.d2[0, i] * q[:-2] + st_.d2[1, i] * q[1:-1] + st_.d2[2, i] * q[2:]
    # exact up to rounding, which the stencils amplify by 1/h and 1/h^2
    hm, hp = np.diff(y)[:-1], np.diff(y)[1:]
    eps = 8 * np.finfo(float).eps * np.abs(q).max()
    assert np.all(np.abs(d1 - (6 * y[i] - 1)) <= eps / np.minimum(hm, hp))
    assert np.all(np.abs(d2 - 6.0) <= eps / (hm * hp))
    assert st_.back @ q[-3:] == pytest.approx(5.0, rel=1e-8)


# ------------------------------------------------------------ runs

@settings(max_examples=10, deadline=None)
@given(st.floats(-3.0, -0.01), st.floats(0.0, 10.0))
def test_zero_is_fixed_point(kappa, lam):
    mesh = build_mesh(MeshSpec(101, 1e-4))
    ic = InitialCondition.tabulated(np.zeros(101), mesh.nodes)
    tr = run(ProblemConfig(kappa, lam, ic, t_end=0.005), mesh, StepperParams())
    assert np.all(tr.s == 1.0) and np.all(tr.M == 0.0)
    assert np.all(tr.final.u == 0.0)


def test_boundary_rows_exact():
    mesh = build_mesh(MeshSpec(201, 1e-5))
    cfg = ProblemConfig(-0.6, 3.0, InitialCondition.step(0.8), t_end=0.05)
    tr = run(cfg, mesh, StepperParams(), snapshot_times=np.linspace(0.005, 0.05, 10))
    assert len(tr.snapshots) == 10
    for sn in tr.snapshots + (tr.final,):
        assert sn.u[0] == sn.u[1]
        assert sn.u[-1] == 0.0
        assert sn.u.min() >= -0.05 and sn.u.max() <= 1.05


def test_extinction_kappa_half(kappa_half_run):
    tr, _ = kappa_half_run
    assert tr.termination.kind == "MassVanished"
    assert tr.s[-1] == pytest.approx(0.5, abs=1e-2)


def test_conservation_identity(kappa_half_run):
    tr, _ = kappa_half_run
    q = 1.0 + 1.0 / -0.5
    assert np.max(np.abs(tr.s - 0.5 * (tr.M - q))) < 5e-3


def test_comparison_monotone_in_alpha():
    s_e = [extinction_run(-0.5, a, n_nodes=251)[0].s[-1] for a in (0.4, 0.7, 1.0)]
    assert s_e[0] > s_e[1] > s_e[2]


def test_time_step_halving():
    s = []
    for dt in (1e-4, 5e-5):
        tr, _ = extinction_run(-0.5, 1.0, n_nodes=501, dt=dt, t_end=0.5)
        s.append(tr.s[-1])
    assert abs(s[0] - s[1]) / abs(s[1]) < 1e-3


def test_run_is_deterministic():
    a, _ = extinction_run(-0.75, 0.5, n_nodes=251, t_end=0.3)
    b, _ = extinction_run(-0.75, 0.5, n_nodes=251, t_end=0.3)
    for f in ("t", "s", "dsdt", "M"):
        assert np.array_equal(getattr(a, f), getattr(b, f), equal_nan=True)


def test_sampling_and_backward_difference():
    mesh = build_mesh(MeshSpec(101, 1e-4))
    cfg = ProblemConfig(-0.5, 0.0, InitialCondition.step(1.0), t_end=0.0105)
    dt = 1e-3
    every = run(cfg, mesh, StepperParams(dt=dt))
    sparse = run(cfg, mesh, StepperParams(dt=dt), sample_every=4)
    assert len(every) == 12  # initial sample plus 11 steps
    np.testing.assert_allclose(every.dsdt[1:], np.diff(every.s) / dt, rtol=1e-12)
    assert np.isnan(every.dsdt[0])
    np.testing.assert_array_equal(sparse.t, every.t[[0, 4, 8, 11]])
    assert np.all(np.diff(every.t) > 0)


def test_rescaled_trace_units():
    mesh = build_mesh(MeshSpec(101, 1e-4))
    cfg = ProblemConfig(-0.98, 100.0**2, InitialCondition.step(0.5), t_end=1e-4)
    tr = run(cfg, mesh, StepperParams(dt=1e-6), snapshot_times=[5e-5])
    big = tr.rescaled(100.0)
    np.testing.assert_allclose(big.t, tr.t * 1e4)
    np.testing.assert_allclose(big.s, tr.s * 100)
    np.testing.assert_allclose(big.dsdt[1:], tr.dsdt[1:] / 100)
    assert big.snapshots[0].s == pytest.approx(tr.snapshots[0].s * 100)
    assert big.termination.t == pytest.approx(tr.termination.t * 1e4)
    assert big.scale == 100.0


def test_newton_failure_becomes_event():
    # superheated enough that the very first step has no solution at this dt
    mesh = build_mesh(MeshSpec(201, 1e-5))
    cfg = ProblemConfig(-1.25, 0.0, InitialCondition.step(1.0), t_end=1.0)
    tr = run(cfg, mesh, StepperParams())
    assert tr.termination.kind == "NewtonFailed"
    assert tr.retries == 1


def test_interface_reaching_first_node():
    # on a coarse uniform mesh the front passes the last cell before extinction
    mesh = build_mesh(MeshSpec(5, 0.25))
    cfg = ProblemConfig(-0.99, 0.0, InitialCondition.step(1.0), t_end=50.0)
    tr = run(cfg, mesh, StepperParams(dt=1e-3))
    assert tr.termination.kind == "InterfaceHitOrigin"
    assert tr.s[-1] <= 0.25


def test_speed_threshold_not_tripped_by_initial_jump():
    # the step profile gives a large first-step speed; the run must continue past it
    mesh = build_mesh(MeshSpec())
    cfg = ProblemConfig(-0.98, 1e6, InitialCondition.step(0.5), t_end=2e-8, blowup_speed_threshold=1e4)
    tr = run(cfg, mesh, StepperParams(dt=1e-10))
    assert abs(tr.dsdt[1]) > cfg.speed_limit(1e-10)
    assert tr.termination.kind == "ReachedTEnd"


def test_stencil_fault_breaks_conservation():
    mesh = build_mesh(MeshSpec(251, 1e-6))
    cfg = ProblemConfig(-0.5, 0.0, InitialCondition.step(1.0), t_end=200.0)
    tr = run(cfg, mesh, StepperParams(), sample_every=10, stencil_perturbation=1e-5)
    bad = tr.termination.kind != "MassVanished" or np.max(np.abs(tr.s - 0.5 * (tr.M + 1.0))) > 5e-3
    assert bad
