"""Energy-consistent time stepping of the coupled chamber/beam/heat system.

One step of size ``dt`` is the implicit midpoint rule in which the two
potential forces are replaced by discrete gradients:

* chamber: the pointwise divided difference of the antiderivative of
  ``f(s) - mu s`` between ``z_n`` and ``z_{n+1}``;
* beam: ``-(Q - (S_{n+1} + S_n)/2) A (v_{n+1} + v_n)/2 - p0`` with
  ``S = ||A^{1/2} v||^2``, which reproduces the quartic potential exactly.

Damping is evaluated at the midpoint velocity.  The unknowns are the
midpoint velocities and temperature; the resulting nonlinear system is
solved by Newton's method with a chord-type reuse of the LU factors.  With
this construction

    E(n+1) - E(n) + dt [beta (g(w), w) + alpha ||A^{1/2} theta||^2] = 0

holds up to the nonlinear solver tolerance, which is what
:attr:`StepReport.energy_residual` measures.
"""
import csv
import warnings
from dataclasses import dataclass, field, asdict

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .exceptions import ConfigurationError, SimulationError, StepError, StiffnessWarning
from .model import EnergyLedger, bounds_or_nan, eval_F1, eval_F2, total_energy
from .states import SimState, check_state

__all__ = ["StepReport", "Trajectory", "TimeStepper", "rhs", "step", "simulate"]

STIFFNESS_LIMIT = 1e4


@dataclass
class StepReport:
    newton_iters: int
    newton_residual: float
    energy_residual: float
    dissipation_wave: float
    dissipation_heat: float
    refactored: bool = False


def _check_consistency(params, ops):
    if abs(params.mu - ops.mu) > 0 or abs(params.gamma - ops.gamma) > 0:
        raise ConfigurationError(
            f"operators were built with mu={ops.mu}, gamma={ops.gamma} but params have "
            f"mu={params.mu}, gamma={params.gamma}"
        )


def _m_lu(ops):
    if "m_lu" not in ops._cache:
        ops._cache["m_lu"] = spla.splu(ops.M_gamma.tocsc())
    return ops._cache["m_lu"]


def rhs(state, params, ops):
    """Time derivatives ``(z_t, z_tt, v_t, v_tt, theta_t)`` of the semi-discrete system."""
    _check_consistency(params, ops)
    z, zt, v, vt, th = state.z, state.zt, state.v, state.vt, state.theta
    ak = params.alpha * params.kappa
    bk = params.beta * params.kappa
    ztt = -(ops.A_wave @ z) + ak * (ops.flux_int @ vt) - params.g_spec(zt) - eval_F1(z, params)
    Ab = ops.A_beam
    force = -(ops.A_beam2 @ v) - bk * (ops.trace_int @ zt) + Ab @ th - eval_F2(v, params, ops)
    vtt = _m_lu(ops).solve(force)
    tht = -(Ab @ th) - Ab @ vt
    if not (np.all(np.isfinite(vtt))):
        raise StepError("inertia solve failed")
    return zt.copy(), ztt, vt.copy(), vtt, tht


class TimeStepper:
    """Reusable solver state for one ``(params, ops, dt)`` combination.

    Keeps the static part of the Newton matrix and the most recent LU
    factors; the factors are reused across iterations and steps while the
    observed contraction stays below ``reuse_ratio``.
    """

    def __init__(self, params, ops, dt, tol=1e-12, max_iter=40, reuse_ratio=0.2):
        _check_consistency(params, ops)
        if not dt > 0:
            raise ConfigurationError(f"dt must be positive, got {dt}")
        if not tol > 0:
            raise ConfigurationError(f"tol must be positive, got {tol}")
        self.params, self.ops, self.dt, self.tol = params, ops, float(dt), float(tol)
        self.max_iter = max_iter
        self.reuse_ratio = reuse_ratio
        self.bounds = bounds_or_nan(params)
        self.p0 = params.load(ops.n_beam)
        self._lu = None
        self.n_factorizations = 0

        stiff = self.dt * ops.beam_max_eigenvalue**2
        if stiff > STIFFNESS_LIMIT:
            msg = (
                f"dt * lambda_max^2 = {stiff:.3g} exceeds {STIFFNESS_LIMIT:g}; "
                "the scheme stays stable but Newton conditioning degrades"
            )
            warnings.warn(msg, StiffnessWarning, stacklevel=2)

        nw, nb = ops.n_wave, ops.n_beam
        self.nw, self.nb = nw, nb
        dt = self.dt
        ak = params.alpha * params.kappa
        bk = params.beta * params.kappa
        I_w = sp.identity(nw, format="csr")
        I_b = sp.identity(nb, format="csr")
        Ab = ops.A_beam
        J0 = sp.bmat(
            [
                [2.0 / dt * I_w + 0.5 * dt * ops.A_wave, -ak * ops.flux_int, None],
                [bk * ops.trace_int, 2.0 / dt * ops.M_gamma + 0.5 * dt * ops.A_beam2, -Ab],
                [None, Ab, 2.0 / dt * I_b + Ab],
            ],
            format="coo",
        )
        self._J0 = (J0.row, J0.col, J0.data)
        self._diag_idx = np.arange(nw)
        bi, bj = np.meshgrid(np.arange(nb), np.arange(nb), indexing="ij")
        self._blk_rows = (nw + bi).ravel()
        self._blk_cols = (nw + bj).ravel()
        self._n = nw + 2 * nb

    # -- nonlinear system in the midpoint unknowns --------------------------

    def _split(self, x):
        nw, nb = self.nw, self.nb
        return x[:nw], x[nw:nw + nb], x[nw + nb:]

    def _residual(self, x, s):
        p, ops, dt = self.params, self.ops, self.dt
        w_hat, u_hat, th_hat = self._split(x)
        z_new = s.z + dt * w_hat
        z_mid = s.z + 0.5 * dt * w_hat
        v_new = s.v + dt * u_hat
        v_mid = s.v + 0.5 * dt * u_hat
        dg, _ = p.f_spec.antiderivative_divided_difference(s.z, z_new)
        Rw = (
            (2.0 / dt) * (w_hat - s.zt)
            + ops.A_wave @ z_mid
            - p.alpha * p.kappa * (ops.flux_int @ u_hat)
            + p.g_spec(w_hat)
            + dg
            - p.mu * z_mid
        )
        Ab = ops.A_beam
        Av_mid = Ab @ v_mid
        S_old = ops.ip_beam(Ab @ s.v, s.v)
        S_new = ops.ip_beam(Ab @ v_new, v_new)
        Ru = (
            (2.0 / dt) * (ops.M_gamma @ (u_hat - s.vt))
            + Ab @ Av_mid
            + p.beta * p.kappa * (ops.trace_int @ w_hat)
            - Ab @ th_hat
            - (p.Q - 0.5 * (S_new + S_old)) * Av_mid
            - self.p0
        )
        Rt = (2.0 / dt) * (th_hat - s.theta) + Ab @ (th_hat + u_hat)
        return np.concatenate((Rw, Ru, Rt))

    def _norm(self, r):
        """Weighted norm of ``dt * r`` (velocity-increment units)."""
        rw, ru, rt = self._split(r)
        p, ops, dt = self.params, self.ops, self.dt
        val = p.beta * ops.ip_wave(rw, rw) + p.alpha * (ops.ip_beam(ru, ru) + ops.ip_beam(rt, rt))
        return dt * np.sqrt(val)

    def _factor(self, x, s):
        p, ops, dt = self.params, self.ops, self.dt
        w_hat, u_hat, _ = self._split(x)
        z_new = s.z + dt * w_hat
        _, ddg = p.f_spec.antiderivative_divided_difference(s.z, z_new)
        diag = p.g_spec.derivative(w_hat) + dt * ddg - 0.5 * dt * p.mu
        v_new = s.v + dt * u_hat
        v_mid = s.v + 0.5 * dt * u_hat
        Ab = ops.A_beam
        S_old = ops.ip_beam(Ab @ s.v, s.v)
        S_new = ops.ip_beam(Ab @ v_new, v_new)
        block = -(p.Q - 0.5 * (S_new + S_old)) * 0.5 * dt * Ab.toarray()
        block += dt * ops.h0 * np.outer(Ab @ v_mid, Ab @ v_new)
        r0, c0, d0 = self._J0
        rows = np.concatenate((r0, self._diag_idx, self._blk_rows))
        cols = np.concatenate((c0, self._diag_idx, self._blk_cols))
        data = np.concatenate((d0, diag, block.ravel()))
        J = sp.csc_matrix((data, (rows, cols)), shape=(self._n, self._n))
        self._lu = spla.splu(J)
        self.n_factorizations += 1

    def _x_norm(self, x):
        return self._norm(x)

    # -- public ----------------------------------------------------------------

    def step(self, state, energy_before=None):
        """Advance ``state`` by one step; returns ``(new_state, StepReport)``."""
        p, ops, dt, tol = self.params, self.ops, self.dt, self.tol
        s = state
        x = np.concatenate((s.zt, s.vt, s.theta))
        R = self._residual(x, s)
        r = self._norm(R)
        history = [r]
        refactored = False
        force_factor = self._lu is None
        it = 0
        while r > tol:
            if it >= self.max_iter:
                raise StepError(
                    f"Newton did not converge in {self.max_iter} iterations at t={s.t:.6g} "
                    f"(residual history {['%.2e' % h for h in history[-5:]]}); "
                    "dt may be too large for the problem stiffness",
                    residual=r,
                    iterations=it,
                )
            if force_factor:
                self._factor(x, s)
                refactored = True
                force_factor = False
            dx = self._lu.solve(-R)
            x = x + dx
            it += 1
            R_new = self._residual(x, s)
            r_new = self._norm(R_new)
            history.append(r_new)
            if not np.isfinite(r_new):
                raise StepError(f"Newton produced non-finite residual at t={s.t:.6g}", residual=r_new, iterations=it)
            if r_new > self.reuse_ratio * r:
                force_factor = True
            R, r = R_new, r_new
            # floating-point floor: correction at rounding level
            if self._norm(dx) <= 1e-3 * tol and r_new <= 1e3 * tol:
                break
            if self._norm(dx) <= 64 * np.finfo(float).eps * (1.0 + self._x_norm(x)):
                break

        w_hat, u_hat, th_hat = self._split(x)
        new = SimState(
            s.t + dt,
            s.z + dt * w_hat,
            2.0 * w_hat - s.zt,
            s.v + dt * u_hat,
            2.0 * u_hat - s.vt,
            2.0 * th_hat - s.theta,
        )
        if energy_before is None:
            energy_before = total_energy(s, p, ops, bounds=self.bounds).E_total
        e_after = total_energy(new, p, ops, bounds=self.bounds).E_total
        d_wave = dt * ops.ip_wave(p.g_spec(w_hat), w_hat)
        d_heat = dt * ops.ip_beam(ops.A_beam @ th_hat, th_hat)
        e_res = e_after - energy_before + p.beta * d_wave + p.alpha * d_heat
        report = StepReport(it, r, e_res, d_wave, d_heat, refactored)
        return new, report, e_after


def step(state, dt, params, ops, tol=1e-12, stepper=None):
    """One energy-consistent step; returns ``(SimState, StepReport)``."""
    check_state(state, ops)
    if stepper is None:
        stepper = TimeStepper(params, ops, dt, tol=tol)
    new, report, _ = stepper.step(state)
    return new, report


@dataclass
class Trajectory:
    """Saved states and energy ledgers of one run.

    ``energy_steps`` and ``reports`` hold every step; ``states`` and
    ``ledgers`` only the saved times in ``times``.
    """

    params: object
    dt: float
    times: list = field(default_factory=list)
    states: list = field(default_factory=list)
    ledgers: list = field(default_factory=list)
    reports: list = field(default_factory=list)
    energy_steps: list = field(default_factory=list)
    error: str = None

    CSV_COLUMNS = ("t",) + EnergyLedger.FIELDS + (
        "newton_iters", "newton_residual", "energy_residual", "max_abs_energy_residual",
    )

    @property
    def energy(self):
        return np.array([led.E_total for led in self.ledgers])

    @property
    def energy_residuals(self):
        return np.array([r.energy_residual for r in self.reports])

    @property
    def final_state(self):
        return self.states[-1]

    def rows(self):
        save_every = self._save_every
        out = []
        for k, (t, led) in enumerate(zip(self.times, self.ledgers)):
            row = {"t": t}
            row.update(led.as_dict())
            if k == 0 or not self.reports:
                row.update(newton_iters=0, newton_residual=0.0, energy_residual=0.0, max_abs_energy_residual=0.0)
            else:
                lo, hi = (k - 1) * save_every, min(k * save_every, len(self.reports))
                chunk = self.reports[lo:hi]
                last = chunk[-1]
                row.update(
                    newton_iters=last.newton_iters,
                    newton_residual=last.newton_residual,
                    energy_residual=last.energy_residual,
                    max_abs_energy_residual=max(abs(r.energy_residual) for r in chunk),
                )
            out.append(row)
        return out

    _save_every: int = 1

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=self.CSV_COLUMNS)
            writer.writeheader()
            for row in self.rows():
                writer.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in row.items()})


def simulate(state0, params, ops, dt, T, save_every=1, tol=1e-12, max_iter=40, stepper=None):
    """Integrate from ``state0`` over ``[t0, t0 + T]``.

    Returns a :class:`Trajectory`.  On a step failure a
    :class:`SimulationError` is raised whose ``trajectory`` attribute holds
    everything computed so far.
    """
    check_state(state0, ops)
    if not T > 0:
        raise ConfigurationError(f"T must be positive, got {T}")
    n_steps = int(round(T / dt))
    if n_steps < 1 or abs(n_steps * dt - T) > 1e-9 * max(T, 1.0):
        raise ConfigurationError(f"T = {T} is not an integer multiple of dt = {dt}")
    if save_every < 1:
        raise ConfigurationError("save_every must be >= 1")
    if stepper is None:
        stepper = TimeStepper(params, ops, dt, tol=tol, max_iter=max_iter)
    bounds = stepper.bounds

    traj = Trajectory(params=params, dt=dt)
    traj._save_every = save_every
    led = total_energy(state0, params, ops, bounds=bounds)
    traj.times.append(state0.t)
    traj.states.append(state0.copy())
    traj.ledgers.append(led)
    traj.energy_steps.append(led.E_total)

    state, energy = state0, led.E_total
    d_wave = d_heat = 0.0
    for n in range(1, n_steps + 1):
        try:
            state, report, energy = stepper.step(state, energy_before=energy)
        except StepError as exc:
            traj.error = str(exc)
            raise SimulationError(f"step {n} failed: {exc}", trajectory=traj) from exc
        d_wave += report.dissipation_wave
        d_heat += report.dissipation_heat
        traj.reports.append(report)
        traj.energy_steps.append(energy)
        if n % save_every == 0 or n == n_steps:
            led = total_energy(state, params, ops, d_wave, d_heat, bounds=bounds)
            traj.times.append(state.t)
            traj.states.append(state.copy())
            traj.ledgers.append(led)
    return traj
