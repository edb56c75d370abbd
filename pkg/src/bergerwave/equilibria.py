"""Stationary states ``(z*, 0, v*, 0, 0)`` and their enumeration.

The chamber problem is ``-Delta z + f(z) = 0`` with Neumann conditions and
the beam problem ``A^2 v - (Q - ||A^{1/2} v||^2) A v = p0`` with hinged
ends.  Neither involves gamma or kappa.  The beam problem is solved in the
preconditioned form ``A v - (Q - S) v - A^{-1} p0 = 0``, which has the same
solutions and avoids the rounding floor of ``A^2`` on fine grids.
"""
import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import eigvalsh

from .exceptions import ConvergenceError
from .model import eval_F1
from .states import SimState

__all__ = [
    "Equilibrium",
    "StationarySolution",
    "solve_wave_stationary",
    "solve_plate_stationary",
    "plate_residual",
    "wave_residual",
    "enumerate_equilibria",
    "equilibria_summary",
    "equilibria_to_json",
    "equilibria_from_json",
    "buckled_amplitude",
]


@dataclass
class StationarySolution:
    field: np.ndarray
    residual: float
    iterations: int


@dataclass
class Equilibrium:
    z_star: np.ndarray
    v_star: np.ndarray
    residual_wave: float
    residual_plate: float
    label: str
    min_eig_wave: float = np.nan
    min_eig_plate: float = np.nan
    extra: dict = field(default_factory=dict)

    def as_state(self, t=0.0):
        nw, nb = self.z_star.size, self.v_star.size
        return SimState(t, self.z_star.copy(), np.zeros(nw), self.v_star.copy(), np.zeros(nb), np.zeros(nb))

    def to_dict(self):
        return {
            "label": self.label,
            "residual_wave": self.residual_wave,
            "residual_plate": self.residual_plate,
            "min_eig_wave": self.min_eig_wave,
            "min_eig_plate": self.min_eig_plate,
            "z_star": self.z_star.tolist(),
            "v_star": self.v_star.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            np.asarray(d["z_star"], dtype=float),
            np.asarray(d["v_star"], dtype=float),
            d["residual_wave"],
            d["residual_plate"],
            d["label"],
            d.get("min_eig_wave", np.nan),
            d.get("min_eig_plate", np.nan),
        )


def wave_residual(z, params, ops):
    """W-norm of ``A z + F1(z)``."""
    return ops.norm_wave(ops.A_wave @ z + eval_F1(z, params))


def _plate_G(v, params, ops):
    Ab = ops.A_beam
    S = ops.ip_beam(Ab @ v, v)
    rhs = _beam_solve(ops, params.load(ops.n_beam))
    return Ab @ v - (params.Q - S) * v - rhs, S


def _beam_solve(ops, b):
    if "beam_lu" not in ops._cache:
        ops._cache["beam_lu"] = spla.splu(ops.A_beam.tocsc())
    return ops._cache["beam_lu"].solve(b)


def plate_residual(v, params, ops):
    """``||A^{-1}(A^2 v + F2-type terms - p0)||_h``: the beam equation residual in the D(A)'-scaled norm."""
    G, _ = _plate_G(v, params, ops)
    return ops.norm_beam(G)


def solve_wave_stationary(guess, params, ops, tol=1e-10, max_iter=60):
    """Newton with backtracking for ``A z + F1(z) = 0``."""
    z = np.array(guess, dtype=float, copy=True)
    A = ops.A_wave

    def resid(zz):
        return A @ zz + eval_F1(zz, params)

    R = resid(z)
    r = ops.norm_wave(R)
    for it in range(max_iter):
        if r <= tol:
            return StationarySolution(z, r, it)
        J = (A + sp.diags(params.f_spec.derivative(z) - params.mu)).tocsc()
        dz = spla.spsolve(J, -R)
        lam = 1.0
        while lam > 1e-4:
            z_try = z + lam * dz
            R_try = resid(z_try)
            r_try = ops.norm_wave(R_try)
            if np.isfinite(r_try) and r_try < (1 - 1e-4 * lam) * r:
                break
            lam *= 0.5
        else:
            if np.linalg.norm(dz) <= 1e-12 * (1.0 + np.linalg.norm(z)):
                return StationarySolution(z, r, it)
            raise ConvergenceError(f"wave Newton stalled at residual {r:.3e}", residual=r, iterations=it)
        z, R, r = z_try, R_try, r_try
    if r <= tol:
        return StationarySolution(z, r, max_iter)
    raise ConvergenceError(f"wave Newton did not converge (residual {r:.3e})", residual=r, iterations=max_iter)


def solve_plate_stationary(guess, params, ops, tol=1e-10, max_iter=80):
    """Newton with backtracking for the hinged Berger beam equilibrium."""
    v = np.array(guess, dtype=float, copy=True)
    Ab = ops.A_beam.toarray()
    I = np.eye(ops.n_beam)
    G, S = _plate_G(v, params, ops)
    r = ops.norm_beam(G)
    for it in range(max_iter):
        if r <= tol:
            return StationarySolution(v, r, it)
        J = Ab - (params.Q - S) * I + 2.0 * ops.h0 * np.outer(v, Ab @ v)
        dv = np.linalg.solve(J, -G)
        lam = 1.0
        while lam > 1e-4:
            v_try = v + lam * dv
            G_try, S_try = _plate_G(v_try, params, ops)
            r_try = ops.norm_beam(G_try)
            if np.isfinite(r_try) and r_try < (1 - 1e-4 * lam) * r:
                break
            lam *= 0.5
        else:
            if np.linalg.norm(dv) <= 1e-12 * (1.0 + np.linalg.norm(v)):
                return StationarySolution(v, r, it)
            raise ConvergenceError(f"plate Newton stalled at residual {r:.3e}", residual=r, iterations=it)
        v, G, S, r = v_try, G_try, S_try, r_try
    if r <= tol:
        return StationarySolution(v, r, max_iter)
    raise ConvergenceError(f"plate Newton did not converge (residual {r:.3e})", residual=r, iterations=max_iter)


def buckled_amplitude(Q, lam):
    """One-mode amplitude ``sqrt(2 (Q - lam) / lam)`` (0 below threshold)."""
    return np.sqrt(max(2.0 * (Q - lam) / lam, 0.0))


def _wave_min_eig(z, params, ops):
    """Smallest eigenvalue of the chamber Hessian ``-Delta + f'(z)`` (W-symmetrised)."""
    H = ops.L_wave + sp.diags(params.f_spec.derivative(z))
    sw = np.sqrt(ops.w_wave)
    Hs = sp.diags(sw) @ H @ sp.diags(1.0 / sw)
    Hs = 0.5 * (Hs + Hs.T)
    if ops.n_wave <= 1200:
        return float(eigvalsh(Hs.toarray())[0])
    diag = Hs.diagonal()
    off = np.asarray(abs(Hs).sum(axis=1)).ravel() - np.abs(diag)
    shift = float(np.min(diag - off)) - 1.0
    val = spla.eigsh(Hs.tocsc(), k=1, sigma=shift, which="LM", return_eigenvectors=False)
    return float(val[0])


def _plate_min_eig(v, params, ops):
    Ab = ops.A_beam.toarray()
    S = ops.ip_beam(Ab @ v, v)
    H = Ab @ Ab - (params.Q - S) * Ab + 2.0 * ops.h0 * np.outer(Ab @ v, Ab @ v)
    return float(eigvalsh(0.5 * (H + H.T))[0])


def _dedupe(fields, dist, tol):
    kept = []
    for f in fields:
        if all(dist(f, g) > tol for g in kept):
            kept.append(f)
    return kept


def enumerate_equilibria(params, ops, n_starts=8, tol=1e-10, seed=0, dedupe_tol=1e-6):
    """Multi-start Newton over both stationary problems; returns the product set.

    Seeds: constant chamber fields at the real roots of f, scaled beam sine
    modes at the one-mode amplitudes, zero, and ``n_starts`` random smooth
    fields for each subproblem.  Components are deduplicated by their
    Y-norm contribution and combined into all products.
    """
    if n_starts < 1:
        raise ValueError("n_starts must be >= 1")
    rng = np.random.default_rng(seed)
    x, y = ops.grid.wave_coordinates()
    xb = ops.grid.beam_coordinates()
    lam, _ = ops.beam_modes()

    wave_seeds = [np.full(ops.n_wave, r) for r in params.f_spec.real_roots()]
    for _ in range(n_starts):
        c = rng.uniform(-1.5, 1.5, size=3)
        wave_seeds.append(c[0] + c[1] * np.cos(np.pi * x) + c[2] * np.cos(np.pi * y))
    plate_seeds = [np.zeros(ops.n_beam)]
    for k in range(1, min(ops.n_beam, 6) + 1):
        a = buckled_amplitude(params.Q, lam[k - 1])
        if a > 0:
            for sgn in (1.0, -1.0):
                plate_seeds.append(sgn * a * np.sin(k * np.pi * xb))
    for _ in range(n_starts):
        coeffs = rng.standard_normal(3)
        plate_seeds.append(sum(c * np.sin((k + 1) * np.pi * xb) for k, c in enumerate(coeffs)))

    waves, plates = [], []
    for s in wave_seeds:
        try:
            waves.append(solve_wave_stationary(s, params, ops, tol=tol))
        except ConvergenceError:
            continue
    for s in plate_seeds:
        try:
            plates.append(solve_plate_stationary(s, params, ops, tol=tol))
        except ConvergenceError:
            continue

    def wdist(a, b):
        d = a.field - b.field
        return np.sqrt(params.beta * ops.ip_wave(ops.A_wave @ d, d))

    def pdist(a, b):
        d = ops.A_beam @ (a.field - b.field)
        return np.sqrt(params.alpha * ops.ip_beam(d, d))

    waves = _dedupe(waves, wdist, dedupe_tol)
    plates = _dedupe(plates, pdist, dedupe_tol)
    waves.sort(key=lambda s: float(np.mean(s.field)))
    phi1 = np.sin(np.pi * xb)
    plates.sort(key=lambda s: (round(float(ops.ip_beam(s.field, s.field)), 8), float(ops.ip_beam(s.field, phi1))))

    out = []
    for w in waves:
        ew = _wave_min_eig(w.field, params, ops)
        for pl in plates:
            amp = ops.ip_beam(pl.field, phi1) / ops.ip_beam(phi1, phi1)
            label = f"z~{np.mean(w.field):+.4f}|v~{amp:+.4f}"
            out.append(
                Equilibrium(
                    w.field.copy(), pl.field.copy(), w.residual, pl.residual, label,
                    min_eig_wave=ew, min_eig_plate=_plate_min_eig(pl.field, params, ops),
                )
            )
    return out


def equilibria_summary(equilibria, params, ops):
    """Counts, residuals and the largest Y-norm over the set."""
    from .diagnostics import y_norm
    from .states import zero_state

    zero = zero_state(ops)
    norms = [y_norm(e.as_state(), zero, params, ops) for e in equilibria]
    return {
        "count": len(equilibria),
        "max_y_norm": float(max(norms)) if norms else 0.0,
        "max_residual_wave": float(max((e.residual_wave for e in equilibria), default=0.0)),
        "max_residual_plate": float(max((e.residual_plate for e in equilibria), default=0.0)),
        "labels": [e.label for e in equilibria],
    }


def equilibria_to_json(equilibria, path):
    with open(path, "w") as fh:
        json.dump([e.to_dict() for e in equilibria], fh)


def equilibria_from_json(path):
    with open(path) as fh:
        return [Equilibrium.from_dict(d) for d in json.load(fh)]
