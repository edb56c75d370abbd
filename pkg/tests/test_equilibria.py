import numpy as np
import pytest

from bergerwave import GridSpec, ModelParams, NonlinearitySpec, build_operators, enumerate_equilibria, simulate
from bergerwave.equilibria import (
    buckled_amplitude,
    equilibria_from_json,
    equilibria_summary,
    equilibria_to_json,
    plate_residual,
    solve_plate_stationary,
    solve_wave_stationary,
    wave_residual,
)
from bergerwave.operators import beam_eigenvalue

odd = NonlinearitySpec.odd_polynomial


@pytest.fixture(scope="module")
def ops():
    return build_operators(GridSpec(16))


def test_constant_chamber_roots(ops):
    p = ModelParams()
    roots = sorted(float(np.mean(solve_wave_stationary(np.full(ops.n_wave, r), p, ops).field)) for r in (-1.2, 0.1, 1.3))
    np.testing.assert_allclose(roots, [-1, 0, 1], atol=1e-10)


def test_guess_converges_to_nearby_root(ops):
    p = ModelParams()
    sol = solve_wave_stationary(np.full(ops.n_wave, 0.9), p, ops)
    np.testing.assert_allclose(sol.field, 1.0, atol=1e-10)
    assert wave_residual(sol.field, p, ops) <= 1e-10


def test_monotone_f_has_only_zero(ops):
    p = ModelParams(f_spec=odd(1.0, 1.0))
    eqs = enumerate_equilibria(p, ops, n_starts=4)
    assert {e.label.split("|")[0] for e in eqs} == {"z~+0.0000"}
    assert all(np.max(np.abs(e.z_star)) < 1e-9 for e in eqs)


def test_buckled_amplitude_exact():
    # at Q = 2 lambda_h the discrete one-mode branch has amplitude sqrt(2)
    g = GridSpec(32)
    ops = build_operators(g)
    lam = beam_eigenvalue(1, g.h0)
    p = ModelParams(Q=2 * lam)
    phi = np.sin(np.pi * g.beam_coordinates())
    assert plate_residual(np.sqrt(2) * phi, p, ops) <= 1e-10
    sol = solve_plate_stationary(1.2 * phi, p, ops, tol=1e-12)
    amp = ops.ip_beam(sol.field, phi) / ops.ip_beam(phi, phi)
    assert abs(amp - np.sqrt(2)) <= 1e-8
    assert buckled_amplitude(2 * lam, lam) == pytest.approx(np.sqrt(2), abs=1e-14)


def test_buckled_amplitude_second_order_in_h():
    # fixed Q = 2 pi^2: continuum amplitude is sqrt(2), discrete error is O(h^2)
    errs = []
    for n in (32, 64, 128):
        g = GridSpec(n, 8, n)
        ops = build_operators(g)
        p = ModelParams()
        phi = np.sin(np.pi * g.beam_coordinates())
        sol = solve_plate_stationary(1.4 * phi, p, ops, tol=1e-11)
        errs.append(abs(ops.ip_beam(sol.field, phi) / ops.ip_beam(phi, phi) - np.sqrt(2)))
    assert 3.8 < errs[0] / errs[1] < 4.2
    assert 3.8 < errs[1] / errs[2] < 4.2


def test_subcritical_Q_flat_beam(ops):
    p = ModelParams(Q=0.5 * np.pi**2)
    eqs = enumerate_equilibria(p, ops, n_starts=4)
    assert all(np.max(np.abs(e.v_star)) < 1e-9 for e in eqs)
    assert len(eqs) == 3


def test_default_parameters_give_nine(ops):
    eqs = enumerate_equilibria(ModelParams(), ops)
    assert len(eqs) == 9
    s = equilibria_summary(eqs, ModelParams(), ops)
    assert s["max_residual_wave"] <= 1e-10 and s["max_residual_plate"] <= 1e-10
    assert len(set(s["labels"])) == 9


def test_independent_of_gamma_kappa():
    base = None
    for gamma in (0.0, 1.0):
        for kappa in (0.0, 1.0):
            p = ModelParams(gamma=gamma, kappa=kappa)
            ops = build_operators(GridSpec(12), gamma=gamma)
            eqs = enumerate_equilibria(p, ops)
            flat = np.concatenate([np.r_[e.z_star, e.v_star] for e in eqs])
            if base is None:
                base = flat
            else:
                np.testing.assert_array_equal(flat, base)


def test_large_load_unique_beam_state(ops):
    p = ModelParams(p0=500.0)
    eqs = enumerate_equilibria(p, ops)
    assert len({tuple(np.round(e.v_star, 8)) for e in eqs}) == 1


def test_equilibria_are_fixed_points():
    p = ModelParams()
    ops = build_operators(GridSpec(12), gamma=p.gamma)
    for e in enumerate_equilibria(p, ops)[:3]:
        tr = simulate(e.as_state(), p, ops, 0.05, 1.0, save_every=20, tol=1e-12)
        fin = tr.final_state
        assert np.max(np.abs(fin.z - e.z_star)) < 1e-8
        assert np.max(np.abs(fin.v - e.v_star)) < 1e-8


def test_json_roundtrip(tmp_path, ops):
    eqs = enumerate_equilibria(ModelParams(), ops, n_starts=2)
    path = tmp_path / "eq.json"
    equilibria_to_json(eqs, path)
    back = equilibria_from_json(path)
    assert [e.label for e in back] == [e.label for e in eqs]
    for a, b in zip(eqs, back):
        np.testing.assert_array_equal(a.z_star, b.z_star)
        np.testing.assert_array_equal(a.v_star, b.v_star)
