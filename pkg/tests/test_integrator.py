import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bergerwave import GridSpec, ModelParams, NonlinearitySpec, build_operators, rhs, simulate, step, total_energy
from bergerwave.diagnostics import y_norm
from bergerwave.exceptions import ConfigurationError, SimulationError, StiffnessWarning
from bergerwave.integrator import TimeStepper, Trajectory
from bergerwave.states import random_direction, random_state_in_WR, zero_state

odd = NonlinearitySpec.odd_polynomial
GRID = GridSpec(12)


def _ops(p, grid=GRID):
    return build_operators(grid, mu=p.mu, gamma=p.gamma)


def test_rhs_zero_state():
    p = ModelParams()
    ops = _ops(p)
    for d in rhs(zero_state(ops), p, ops):
        assert not np.any(d)


def test_rhs_kappa_zero_decouples(rng):
    p = ModelParams(kappa=0.0)
    ops = _ops(p)
    s = random_direction(ops, rng)
    s2 = s.copy()
    s2.v, s2.vt, s2.theta = 3 * s.v + 1, -s.vt, s.theta + 2
    np.testing.assert_array_equal(rhs(s, p, ops)[1], rhs(s2, p, ops)[1])
    s3 = s.copy()
    s3.z, s3.zt = s.z + 1, 5 * s.zt
    np.testing.assert_array_equal(rhs(s, p, ops)[3], rhs(s3, p, ops)[3])


@given(seed=st.integers(0, 2**32 - 1), kappa=st.floats(0, 1), alpha=st.floats(0.1, 5), beta=st.floats(0.1, 5))
def test_coupling_power_balance(seed, kappa, alpha, beta):
    ops = build_operators(GRID)
    r = np.random.default_rng(seed)
    zt, vt = r.standard_normal(ops.n_wave), r.standard_normal(ops.n_beam)
    a = beta * alpha * kappa * ops.ip_wave(ops.flux_int @ vt, zt)
    b = alpha * beta * kappa * ops.ip_beam(ops.trace_int @ zt, vt)
    assert abs(a - b) <= 1e-12 * max(1.0, abs(a))


def test_step_fixed_point():
    p = ModelParams()
    ops = _ops(p)
    new, rep = step(zero_state(ops), 0.01, p, ops)
    assert not np.any(new.as_array()) and rep.energy_residual == 0.0


def test_conservative_limit_energy_identity():
    p = ModelParams(f_spec=odd(0.0), g_spec=odd(0.0), kappa=0.0, Q=0.0, gamma=0.5)
    ops = _ops(p)
    s = zero_state(ops)
    xb = ops.grid.beam_coordinates()
    s.v = 1e-3 * np.sin(np.pi * xb)
    s.zt = np.cos(np.pi * ops.grid.wave_coordinates()[0])
    tr = simulate(s, p, ops, 0.01, 10.0, save_every=100, tol=1e-12)
    E = np.array(tr.energy_steps)
    assert len(tr.reports) == 1000
    assert np.max(np.abs(tr.energy_residuals)) <= 10 * 1e-12 * (1 + abs(E[0]))
    # chamber energy is exactly conserved: no damping and no coupling
    assert tr.ledgers[-1].D_wave_accum == 0.0


@pytest.mark.parametrize("gamma", [0.0, 0.5, 1.0])
@pytest.mark.parametrize("kappa", [0.0, 0.5, 1.0])
def test_energy_identity_and_dissipation_signs(gamma, kappa):
    p = ModelParams(gamma=gamma, kappa=kappa)
    ops = _ops(p)
    s0 = random_state_in_WR(p, ops, 10.0, np.random.default_rng(4))
    tol = 1e-12
    tr = simulate(s0, p, ops, 0.02, 2.0, save_every=10, tol=tol)
    E = np.array(tr.energy_steps)
    for r, e in zip(tr.reports, E[:-1]):
        assert abs(r.energy_residual) <= 10 * tol * (1 + abs(e))
        assert r.dissipation_wave >= -10 * tol and r.dissipation_heat >= -10 * tol
    assert np.all(np.diff(E) <= 1e-10)
    led = tr.ledgers
    assert all(b.D_wave_accum >= a.D_wave_accum and b.D_heat_accum >= a.D_heat_accum for a, b in zip(led, led[1:]))


def test_kappa_zero_separate_ledgers():
    p = ModelParams(kappa=0.0)
    ops = _ops(p)
    s0 = random_state_in_WR(p, ops, 10.0, np.random.default_rng(9))
    tr = simulate(s0, p, ops, 0.02, 4.0, save_every=5)
    wave = np.array([p.beta * (L.Ez0 + L.Pi) for L in tr.ledgers])
    plate = np.array([p.alpha * (L.Ev0 + L.Phi + L.Etheta) for L in tr.ledgers])
    assert np.all(np.diff(wave) <= 1e-9) and np.all(np.diff(plate) <= 1e-9)


def test_gamma_uniform_energy_bound():
    ratios = []
    s0 = random_state_in_WR(ModelParams(gamma=0.0), _ops(ModelParams(gamma=0.0)), 10.0, np.random.default_rng(2))
    for gamma in (0.0, 0.5, 1.0):
        p = ModelParams(gamma=gamma)
        ops = _ops(p)
        tr = simulate(s0, p, ops, 0.05, 5.0, save_every=5)
        Ep = np.array([L.E_plus for L in tr.ledgers])
        ratios.append(np.max(Ep) / (1 + Ep[0]))
    # E(t) <= C (1 + E(0)) with one C for every gamma
    assert max(ratios) <= 3.0
    assert max(ratios) / min(ratios) <= 1.25


def test_second_order_in_dt():
    p = ModelParams()
    ops = _ops(p, GridSpec(8))
    s0 = random_state_in_WR(p, ops, 5.0, np.random.default_rng(0))
    T = 0.4

    def final(dt):
        return simulate(s0, p, ops, dt, T, save_every=10**6, tol=1e-13).final_state

    ref = final(0.0025)
    e1 = y_norm(final(0.02), ref, p, ops)
    e2 = y_norm(final(0.01), ref, p, ops)
    assert 3.0 < e1 / e2 < 5.5


def test_mu_invariance_short():
    s0 = random_state_in_WR(ModelParams(), _ops(ModelParams()), 10.0, np.random.default_rng(5))
    out = []
    for mu in (0.5, 2.0):
        p = ModelParams(mu=mu)
        out.append(simulate(s0, p, _ops(p), 0.05, 0.5, save_every=100, tol=1e-12).final_state)
    p = ModelParams()
    assert y_norm(out[0], out[1], p, _ops(p)) <= 10 * 1e-12 * 100


def test_simulate_validation():
    p = ModelParams()
    ops = _ops(p)
    s = zero_state(ops)
    with pytest.raises(ConfigurationError):
        simulate(s, p, ops, 0.03, 0.1)
    with pytest.raises(ConfigurationError):
        simulate(s, p, ops, 0.01, -1.0)
    with pytest.raises(ConfigurationError):
        simulate(s, p.replace(mu=2.0), ops, 0.01, 0.1)
    bad = s.copy()
    bad.z = np.full_like(bad.z, np.nan)
    with pytest.raises(ConfigurationError):
        simulate(bad, p, ops, 0.01, 0.1)


def test_simulation_error_keeps_partial_trajectory():
    p = ModelParams()
    ops = _ops(p)
    s0 = random_state_in_WR(p, ops, 10.0, np.random.default_rng(1)).scaled(3.0)
    with pytest.raises(SimulationError) as info:
        simulate(s0, p, ops, 0.5, 5.0, max_iter=1, tol=1e-14)
    tr = info.value.trajectory
    assert isinstance(tr, Trajectory) and tr.error and len(tr.states) >= 1


def test_stiffness_warning():
    p = ModelParams()
    ops = _ops(p, GridSpec(64))
    with pytest.warns(StiffnessWarning):
        TimeStepper(p, ops, 1e-2)


def test_trajectory_csv(tmp_path):
    p = ModelParams()
    ops = _ops(p)
    s0 = random_state_in_WR(p, ops, 10.0, np.random.default_rng(3))
    tr = simulate(s0, p, ops, 0.05, 1.0, save_every=4)
    path = tmp_path / "e.csv"
    tr.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0].split(",") == list(Trajectory.CSV_COLUMNS)
    assert len(lines) == 1 + len(tr.times) == 7
    first = dict(zip(lines[0].split(","), lines[1].split(",")))
    assert float(first["E_total"]) == total_energy(s0, p, ops).E_total
