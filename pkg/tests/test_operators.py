import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bergerwave import GridSpec, build_operators, flux_inject, neumann_map_solve, trace
from bergerwave.exceptions import ConfigurationError
from bergerwave.operators import beam_eigenvalue

# first discrete Dirichlet eigenvalue at h0 = 1/64 via the half-angle form 4/h0^2 sin^2(pi h0 / 2)
LAMBDA_H_64 = 9.86762276722776


def test_grid_invariants():
    g = GridSpec(16, 12)
    assert g.hx == 1 / 16 and g.hy == 1 / 12 and g.h0 == 1 / 16 and g.n0 == 16
    assert g.n_wave == 17 * 13 and g.n_beam == 15


@pytest.mark.parametrize("kw", [dict(nx=4), dict(nx=16, ny=6), dict(nx=16, n0=32), dict(nx=8.5)])
def test_grid_rejects_bad_counts(kw):
    with pytest.raises(ConfigurationError):
        GridSpec(**kw)


@pytest.mark.parametrize("mu,gamma", [(0.0, 0.0), (-1.0, 0.0), (1.0, 1.5), (1.0, -0.1)])
def test_build_rejects_bad_inputs(mu, gamma):
    with pytest.raises(ConfigurationError):
        build_operators(GridSpec(8), mu=mu, gamma=gamma)


def test_constant_field_neumann():
    ops = build_operators(GridSpec(16, 20), mu=0.5)
    np.testing.assert_allclose(ops.A_wave @ np.full(ops.n_wave, 3.0), 1.5, rtol=0, atol=1e-12)


def test_beam_mode_eigenvalue():
    ops = build_operators(GridSpec(64))
    j = np.arange(1, 64)
    v = np.sin(np.pi * j / 64)
    lam = beam_eigenvalue(1, ops.h0)
    assert lam == pytest.approx(LAMBDA_H_64, abs=1e-12)
    np.testing.assert_allclose(ops.A_beam @ v, lam * v, atol=1e-10)
    assert abs(lam - np.pi**2) < 3e-3


@pytest.mark.parametrize("k", [1, 2, 3])
def test_beam_eigenvalues_closed_form(k):
    ops = build_operators(GridSpec(32))
    ev = np.sort(np.linalg.eigvalsh(ops.A_beam.toarray()))
    assert ev[k - 1] == pytest.approx(2 / ops.h0**2 * (1 - np.cos(k * np.pi * ops.h0)), rel=1e-10)


def test_spectral_bounds():
    ops = build_operators(GridSpec(16), mu=0.7)
    sw = np.sqrt(ops.w_wave)
    S = (ops.A_wave.multiply(sw[:, None]).multiply(1 / sw[None, :])).toarray()
    assert np.min(np.linalg.eigvals(S).real) >= 0.7 - 1e-10
    assert np.min(np.linalg.eigvalsh(ops.A_beam.toarray())) >= np.pi**2 * (1 - ops.h0**2)


def test_m_gamma_identity_at_zero(rng):
    ops = build_operators(GridSpec(16), gamma=0.0)
    w = rng.standard_normal(ops.n_beam)
    np.testing.assert_array_equal(ops.M_gamma @ w, w)


@given(seed=st.integers(0, 2**32 - 1))
def test_operators_symmetric(seed):
    ops = build_operators(GridSpec(12, 10), mu=1.3, gamma=0.4)
    r = np.random.default_rng(seed)
    x, y = r.standard_normal((2, ops.n_wave))
    lhs, rhs = ops.ip_wave(ops.A_wave @ x, y), ops.ip_wave(x, ops.A_wave @ y)
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs)) * 10
    a, b = r.standard_normal((2, ops.n_beam))
    for M in (ops.A_beam, ops.M_gamma, ops.A_beam2):
        l2, r2 = ops.ip_beam(M @ a, b), ops.ip_beam(a, M @ b)
        assert abs(l2 - r2) <= 1e-12 * max(1.0, abs(l2), np.linalg.norm(M @ a) * np.linalg.norm(b))


def test_trace_examples():
    ops = build_operators(GridSpec(16, 8))
    x, y = ops.grid.wave_coordinates()
    np.testing.assert_allclose(trace(np.full(ops.n_wave, 2.5), ops), 2.5)
    np.testing.assert_allclose(trace(y, ops), 0.0)
    j = np.arange(17)
    np.testing.assert_allclose(trace(np.sin(np.pi * x) * np.cos(np.pi * y), ops), np.sin(np.pi * j / 16), atol=1e-15)


def test_flux_zero_and_mass():
    ops = build_operators(GridSpec(64))
    assert not np.any(flux_inject(np.zeros(65), ops))
    mass = ops.ip_wave(flux_inject(np.ones(65), ops), np.ones(ops.n_wave))
    assert mass == pytest.approx(1.0, abs=1e-13)


def test_adjointness_100_pairs(rng):
    ops = build_operators(GridSpec(24, 16))
    worst = 0.0
    for _ in range(100):
        phi = rng.standard_normal(25)
        w = rng.standard_normal(ops.n_wave)
        lhs = ops.ip_wave(flux_inject(phi, ops), w)
        rhs = ops.ip_wall(phi, trace(w, ops))
        scale = np.sqrt(ops.ip_wall(phi, phi) * ops.ip_wave(w, w))
        worst = max(worst, abs(lhs - rhs) / scale)
    assert worst <= 1e-12


def test_flux_accepts_interior_field(ops16, rng):
    phi = rng.standard_normal(ops16.n_beam)
    full = np.concatenate(([0.0], phi, [0.0]))
    np.testing.assert_array_equal(flux_inject(phi, ops16), flux_inject(full, ops16))
    with pytest.raises(ConfigurationError):
        flux_inject(np.ones(5), ops16)


def test_neumann_map_zero():
    ops = build_operators(GridSpec(16))
    assert not np.any(neumann_map_solve(np.zeros(17), ops))


def _manufactured_error(n, mu):
    ops = build_operators(GridSpec(n), mu=mu)
    x, y = ops.grid.wave_coordinates()
    r = np.sqrt(mu)
    exact = np.cosh(r * (1 - y)) / (r * np.sinh(r))
    psi = neumann_map_solve(np.ones(n + 1), ops)
    return np.max(np.abs(psi - exact))


def test_neumann_map_manufactured_second_order():
    e = [_manufactured_error(n, 1.0) for n in (16, 32, 64)]
    assert e[2] < 2e-4
    assert 3.5 < e[0] / e[1] < 4.5 and 3.5 < e[1] / e[2] < 4.5


def test_neumann_map_weak_form(rng):
    ops = build_operators(GridSpec(16), mu=2.0)
    phi = rng.standard_normal(17)
    psi = neumann_map_solve(phi, ops)
    for _ in range(5):
        w = rng.standard_normal(ops.n_wave)
        assert ops.ip_wave(ops.A_wave @ psi, w) == pytest.approx(ops.ip_wall(phi, trace(w, ops)), rel=1e-10, abs=1e-12)


def test_modal_bases_orthonormal(ops16):
    _, basis = ops16.beam_modes()
    G = ops16.h0 * basis.T @ basis
    np.testing.assert_allclose(G, np.eye(ops16.n_beam), atol=1e-12)
    nu = ops16.wave_eigenvalues()
    assert nu[0] == pytest.approx(ops16.mu) and np.all(np.diff(nu) >= -1e-12)
