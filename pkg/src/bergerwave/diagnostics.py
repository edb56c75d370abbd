"""Attractor diagnostics: distances, difference functionals, fits, dimension.

Trajectory generation for samples goes through joblib; each job rebuilds its
own operators from the grid so nothing unpicklable crosses process lines.
"""
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from joblib import Parallel, delayed
from scipy.integrate import cumulative_trapezoid
from scipy.optimize import linprog
from scipy.spatial.distance import cdist

from .equilibria import Equilibrium
from .estimators import BoxCountingDimension, ModalProjector, StabilizabilityEstimator
from .exceptions import ConfigurationError, DegenerateFitError
from .integrator import simulate
from .model import eval_F1, eval_F2, first_bound_quantity
from .operators import build_operators
from .states import SimState, random_state_in_WR

__all__ = [
    "y_norm",
    "h_norm",
    "dist_to_equilibria",
    "fractional_norms",
    "attractor_sample",
    "run_trajectories",
    "DiffDiagnostics",
    "difference_functionals",
    "StabilizabilityResult",
    "stabilizability_fit",
    "DimensionEstimate",
    "fractal_dimension",
    "semidistance",
    "semicontinuity_experiment",
    "uniform_bound_sup",
]


def _check_pair(a, b):
    for f in ("z", "zt", "v", "vt", "theta"):
        if getattr(a, f).shape != getattr(b, f).shape:
            raise ConfigurationError(f"grid mismatch in field {f}: {getattr(a, f).shape} vs {getattr(b, f).shape}")


def _y_sq(d, params, ops):
    Av = ops.A_beam @ d.v
    wave = ops.ip_wave(ops.A_wave @ d.z, d.z) + ops.ip_wave(d.zt, d.zt)
    beam = ops.ip_beam(Av, Av) + ops.ip_beam(ops.M_gamma @ d.vt, d.vt) + ops.ip_beam(d.theta, d.theta)
    return params.beta * wave + params.alpha * beam


def y_norm(state_a, state_b, params, ops):
    """Weighted energy-norm distance; ``M_gamma`` comes from ``ops``."""
    _check_pair(state_a, state_b)
    return float(np.sqrt(max(_y_sq(state_a - state_b, params, ops), 0.0)))


def h_norm(state_a, state_b, ops):
    """Beam-only distance ``(||A dv||^2 + ||dv_t||^2 + ||dtheta||^2)^{1/2}``."""
    _check_pair(state_a, state_b)
    d = state_a - state_b
    Av = ops.A_beam @ d.v
    return float(np.sqrt(ops.ip_beam(Av, Av) + ops.ip_beam(d.vt, d.vt) + ops.ip_beam(d.theta, d.theta)))


def dist_to_equilibria(state, equilibria, params, ops):
    if len(equilibria) == 0:
        raise ConfigurationError("equilibrium list is empty")
    return min(y_norm(state, e.as_state() if isinstance(e, Equilibrium) else e, params, ops) for e in equilibria)


def fractional_norms(z, v, ops, delta=0.25):
    """Spectral ``||z||^2_{1-delta}`` (chamber) and ``||v||^2_{2-delta}`` (beam)."""
    if not 0.0 < delta < 1.0:
        raise ConfigurationError(f"delta must lie in (0, 1), got {delta}")
    nu = ops.wave_eigenvalues()
    lam, _ = ops.beam_modes()
    cz = ops.wave_coefficients(z)
    cv = ops.beam_coefficients(v)
    return float(np.sum(nu ** (1.0 - delta) * cz**2)), float(np.sum(lam ** (2.0 - delta) * cv**2))


# -- trajectory generation ---------------------------------------------------


def _run_job(state0, params, grid, dt, T, save_every, tol):
    ops = build_operators(grid, mu=params.mu, gamma=params.gamma)
    return simulate(state0, params, ops, dt, T, save_every=save_every, tol=tol)


def run_trajectories(initial_states, params, grid, dt, T, save_every=1, tol=1e-10, n_jobs=1):
    """Simulate independent trajectories, optionally in parallel (order preserved)."""
    if n_jobs == 1:
        return [_run_job(s, params, grid, dt, T, save_every, tol) for s in initial_states]
    return Parallel(n_jobs=n_jobs)(delayed(_run_job)(s, params, grid, dt, T, save_every, tol) for s in initial_states)


def _steps(interval, dt, what):
    n = int(round(interval / dt))
    if n < 1 or abs(n * dt - interval) > 1e-9 * max(1.0, interval):
        raise ConfigurationError(f"{what} = {interval} must be a positive multiple of dt = {dt}")
    return n


def draw_initial_states(params, ops, n, R, seed):
    rng = np.random.default_rng(seed)
    return [random_state_in_WR(params, ops, R, rng) for _ in range(n)]


def attractor_sample(
    params,
    ops,
    n_trajectories,
    T_burn,
    T_sample,
    R=10.0,
    dt=0.05,
    sample_every=0.5,
    seed=0,
    tol=1e-10,
    n_jobs=1,
    initial_states=None,
    return_trajectories=False,
):
    """Post-burn-in states from trajectories started in the sublevel set ``E <= R``.

    States are taken every ``sample_every`` time units on ``[T_burn, T_burn + T_sample]``.
    ``initial_states`` overrides the random draw (used to share starts across parameters).
    """
    if not T_burn > 0:
        raise ConfigurationError(f"T_burn must be positive, got {T_burn}")
    if T_sample < 0:
        raise ConfigurationError(f"T_sample must be non-negative, got {T_sample}")
    every = _steps(sample_every, dt, "sample_every")
    _steps(T_burn, dt, "T_burn")
    if initial_states is None:
        initial_states = draw_initial_states(params, ops, n_trajectories, R, seed)
    T = T_burn + T_sample
    trajs = run_trajectories(initial_states, params, ops.grid, dt, T, save_every=every, tol=tol, n_jobs=n_jobs)
    eps = 1e-9 * max(1.0, T)
    sample = [s for tr in trajs for s in tr.states if s.t >= T_burn - eps]
    return (sample, trajs) if return_trajectories else sample


def uniform_bound_sup(sample, params, ops):
    """Largest value of the uniform-bound quantity over a sample."""
    return max(first_bound_quantity(s, params, ops) for s in sample)


# -- difference functionals --------------------------------------------------


def _aligned(traj_1, traj_2):
    t1, t2 = np.asarray(traj_1.times), np.asarray(traj_2.times)
    if t1.shape != t2.shape or not np.allclose(t1, t2, rtol=0.0, atol=1e-9 * max(1.0, float(np.max(np.abs(t1))))):
        raise ConfigurationError("trajectories are stored on misaligned time grids")
    if len(t1) < 2:
        raise ConfigurationError("need at least two stored times")
    return t1 - t1[0]


def _lp_min_sum(cols, lhs):
    """Smallest-sum non-negative constants with ``cols @ c >= lhs`` (row-scaled)."""
    scale = np.where(lhs > 0, lhs, 1.0)
    A = cols / scale[:, None]
    b = lhs / scale
    colmax = np.max(A, axis=0)
    colmax[colmax <= 0] = 1.0
    res = linprog(np.ones(A.shape[1]), A_ub=-(A / colmax), b_ub=-b, bounds=[(0, None)] * A.shape[1], method="highs")
    if not res.success:
        return None
    return res.x / colmax


@dataclass
class DiffDiagnostics:
    """Functionals of the difference of two trajectories on their shared time grid."""

    times: np.ndarray
    E0_series: np.ndarray
    G_series: np.ndarray
    H_series: np.ndarray
    Psi_series: np.ndarray
    lot_series: np.ndarray
    D_series: np.ndarray
    Psi_T: float
    main_lhs: np.ndarray
    main_terms: np.ndarray
    main_constants: tuple = (np.nan, np.nan, np.nan)
    main_ratio: float = np.nan
    main_feasible: bool = False
    main_T0: float = np.nan
    C1_fit: float = np.nan
    omega_fit: float = np.nan
    C2_fit: float = np.nan
    fit_report: dict = field(default_factory=dict)

    COLUMNS = ("t", "E0", "G", "H", "Psi", "lot", "D")

    def rows(self):
        cols = (self.times, self.E0_series, self.G_series, self.H_series, self.Psi_series, self.lot_series, self.D_series)
        return [tuple(float(c[i]) for c in cols) for i in range(len(self.times))]


def difference_functionals(traj_1, traj_2, params, ops, delta=0.25, T0=None, fit=True):
    """Evaluate ``E0``, ``G``, ``H``, ``Psi_T`` and ``lot`` for ``traj_1 - traj_2``.

    Time integrals use the trapezoidal rule on the stored series.  The main
    inequality ``T E0(T) + int E0 <= c0 [..] + c1 [H + Psi] + c2 int(|z|^2 + |v|^2)``
    is fitted over horizons ``T >= T0`` (default: last three quarters of the
    run) by a linear program for the smallest ``c0 + c1 + c2``.
    """
    t = _aligned(traj_1, traj_2)
    a, b = params.alpha, params.beta
    n = len(t)
    E0 = np.empty(n)
    G_int = np.empty(n)
    H_int = np.empty(n)
    heat = np.empty(n)
    zt2 = np.empty(n)
    low = np.empty(n)
    f1 = np.empty(n)
    f2 = np.empty(n)
    lot = np.empty(n)
    for i, (s1, s2) in enumerate(zip(traj_1.states, traj_2.states)):
        d = s1 - s2
        E0[i] = 0.5 * _y_sq(d, params, ops)
        dg = params.g_spec(s1.zt) - params.g_spec(s2.zt)
        G_int[i] = ops.ip_wave(dg, d.zt)
        H_int[i] = abs(ops.ip_wave(dg, d.z))
        heat[i] = ops.ip_beam(ops.A_beam @ d.theta, d.theta)
        zt2[i] = ops.ip_wave(d.zt, d.zt)
        low[i] = ops.ip_wave(d.z, d.z) + ops.ip_beam(d.v, d.v)
        f1[i] = ops.ip_wave(eval_F1(s1.z, params) - eval_F1(s2.z, params), d.zt)
        f2[i] = ops.ip_beam(eval_F2(s1.v, params, ops) - eval_F2(s2.v, params, ops), d.vt)
        lot[i] = sum(fractional_norms(d.z, d.v, ops, delta))
    lot = np.maximum.accumulate(lot)

    def cum(y):
        return cumulative_trapezoid(y, t, initial=0.0)

    G = cum(G_int)
    H = cum(H_int)
    # int_0^T int_t^T phi dtau dt = int_0^T tau phi(tau) dtau
    Psi = b * (np.abs(cum(f1)) + np.abs(cum(t * f1))) + a * (np.abs(cum(f2)) + np.abs(cum(t * f2)))
    lhs = t * E0 + cum(E0)
    terms = np.column_stack((cum(zt2) + a * cum(heat) + b * G, H + Psi, cum(low)))
    diag = DiffDiagnostics(t, E0, G, H, Psi, lot, 2.0 * E0, float(Psi[-1]), lhs, terms)
    if not fit:
        return diag

    T0 = t[-1] / 4.0 if T0 is None else float(T0)
    win = (t >= T0) & (t > 0)
    diag.main_T0 = T0
    if win.any() and np.any(lhs[win] > 0):
        c = _lp_min_sum(terms[win], lhs[win])
        if c is not None:
            c = np.maximum(c, 1e-6 * max(float(np.max(c)), 1.0)) * (1.0 + 1e-9)
            rhs = terms[win] @ c
            pos = lhs[win] > 0
            diag.main_constants = tuple(float(x) for x in c)
            diag.main_ratio = float(np.min(rhs[pos] / lhs[win][pos]))
            diag.main_feasible = bool(np.all(rhs >= lhs[win]))
    if diag.D_series[0] > 0:
        res = _fit_stabilizability(t, diag.D_series, lot)
        diag.C1_fit, diag.omega_fit, diag.C2_fit, diag.fit_report = res
    return diag


# -- stabilizability ---------------------------------------------------------


class StabilizabilityResult(NamedTuple):
    C1: float
    omega: float
    C2: float
    report: dict


def _fit_stabilizability(t, D, lot, margin=1e-9):
    est = StabilizabilityEstimator(margin=margin).fit(np.column_stack((t, lot)), D)
    report = {
        "valid": est.valid_,
        "omega_positive": est.omega_ > 0,
        "n_violations": est.n_violations_,
        "lp_success": est.lp_success_,
        "omega_at_bound": est.omega_at_bound_,
        "lsq_slope": est.lsq_slope_,
        "d0": est.d0_,
        "n_points": int(len(t)),
        "min_slack": float(np.min(est.slack_)),
        "C2_lot_over_d0": float(est.C2_ * np.max(lot) / est.d0_),
    }
    return est.C1_, est.omega_, est.C2_, report


def stabilizability_fit(traj_1, traj_2, params, ops, delta=0.25):
    """Fit ``||S_t y1 - S_t y2||^2 <= C1 e^{-omega t} ||y1 - y2||^2 + C2 lot_t``.

    ``omega`` and ``(C1, C2)`` minimise the total slack of the bound subject
    to covering every stored time (see :class:`StabilizabilityEstimator`);
    the plain log-space slope is reported alongside.  Raises :class:`DegenerateFitError`
    when the initial states coincide.
    """
    t = _aligned(traj_1, traj_2)
    d0 = y_norm(traj_1.states[0], traj_2.states[0], params, ops) ** 2
    if d0 == 0.0:
        raise DegenerateFitError("initial states are identical; the fit is degenerate")
    D = np.empty(len(t))
    lot = np.empty(len(t))
    for i, (s1, s2) in enumerate(zip(traj_1.states, traj_2.states)):
        d = s1 - s2
        D[i] = _y_sq(d, params, ops)
        lot[i] = sum(fractional_norms(d.z, d.v, ops, delta))
    lot = np.maximum.accumulate(lot)
    return StabilizabilityResult(*_fit_stabilizability(t, D, lot))


# -- dimension ---------------------------------------------------------------


@dataclass
class DimensionEstimate:
    epsilons: np.ndarray
    counts: np.ndarray
    slope: float
    slope_stderr: float
    window: np.ndarray
    projection: list

    def rows(self):
        return [
            (float(e), int(c), bool(w)) for e, c, w in zip(self.epsilons, self.counts, self.window)
        ]


def fractal_dimension(sample, projection_dim, params, ops, saturation=0.1, min_level=1, min_samples=100):
    """Box-counting dimension of a sample projected on the leading energy-weighted modes."""
    if isinstance(sample, SimState):
        sample = [sample]
    n = sample.shape[0] if isinstance(sample, np.ndarray) else len(sample)
    if n < min_samples:
        raise ConfigurationError(f"sample too small: {n} < {min_samples}")
    proj = ModalProjector(ops=ops, params=params, n_components=projection_dim).fit()
    X = proj.transform(sample)
    box = BoxCountingDimension(saturation=saturation, min_level=min_level).fit(X)
    return DimensionEstimate(box.epsilons_, box.counts_, box.slope_, box.slope_stderr_, box.window_, proj.describe())


# -- semi-continuity ---------------------------------------------------------


def _min_dist_sq(X, Y, chunk=512):
    out = np.empty(X.shape[0])
    for i in range(0, X.shape[0], chunk):
        out[i:i + chunk] = np.min(cdist(X[i:i + chunk], Y, "sqeuclidean"), axis=1)
    return out


def semidistance(X, Y):
    """One-sided Hausdorff semidistance ``sup_x min_y |x - y|`` between coordinate clouds."""
    return float(np.sqrt(np.max(_min_dist_sq(X, Y))))


def product_semidistance(X_wave, X_plate, Y_wave, Y_plate):
    """Semidistance of ``(x_w, x_p)`` pairs to the product ``{y_w} x {y_p}``.

    The squared distance splits, so the nearest product point is the pair of
    separate nearest neighbours.
    """
    d = np.zeros(X_wave.shape[0])
    for A, B in ((X_wave, Y_wave), (X_plate, Y_plate)):
        if A.shape[1]:
            d += _min_dist_sq(A, B)
    return float(np.sqrt(np.max(d)))


def semicontinuity_experiment(
    lambda_list,
    lambda_0,
    params,
    ops,
    n_trajectories=8,
    T_burn=5.0,
    T_sample=10.0,
    R=10.0,
    dt=0.05,
    sample_every=0.5,
    seed=0,
    tol=1e-10,
    norm="Y",
    n_jobs=1,
):
    """Semidistances of parameter-perturbed attractor samples to the ``lambda_0`` sample.

    All samples start from the same initial states (drawn at ``lambda_0``).
    Distances use the ``Y_{gamma_0}`` norm (``norm="Y"``) or the beam-only
    norm (``norm="H"``).  When ``kappa_0 = 0`` each row also reports the
    distance to the product of the chamber and beam parts of the base sample.
    Returns a list of dict rows in the order of ``lambda_list``.
    """
    gamma0, kappa0 = (float(x) for x in lambda_0)
    if norm not in ("Y", "H"):
        raise ConfigurationError(f"norm must be 'Y' or 'H', got {norm!r}")
    p0 = params.replace(gamma=gamma0, kappa=kappa0)
    ops0 = build_operators(ops.grid, mu=params.mu, gamma=gamma0)
    starts = draw_initial_states(p0, ops0, n_trajectories, R, seed)
    kw = dict(R=R, dt=dt, sample_every=sample_every, tol=tol, n_jobs=n_jobs, initial_states=starts)

    proj = ModalProjector(ops=ops0, params=p0, norm=norm).fit()
    base = proj.transform(attractor_sample(p0, ops0, n_trajectories, T_burn, T_sample, **kw))
    wave_cols = np.isin(proj.fields_, (0, 1))
    product = kappa0 == 0.0

    rows = []
    for gamma, kappa in lambda_list:
        gamma, kappa = float(gamma), float(kappa)
        if (gamma, kappa) == (gamma0, kappa0):
            X = base
        else:
            p = params.replace(gamma=gamma, kappa=kappa)
            o = build_operators(ops.grid, mu=params.mu, gamma=gamma)
            X = proj.transform(attractor_sample(p, o, n_trajectories, T_burn, T_sample, **kw))
        row = {"gamma": gamma, "kappa": kappa, "n_samples": int(X.shape[0]), "semidistance": semidistance(X, base)}
        if product:
            row["semidistance_product"] = product_semidistance(
                X[:, wave_cols], X[:, ~wave_cols], base[:, wave_cols], base[:, ~wave_cols]
            )
        rows.append(row)
    return rows
