"""Simulation state, validation helpers and initial-data generators."""
import json
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigurationError

__all__ = [
    "SimState",
    "check_state",
    "zero_state",
    "mode_state",
    "random_direction",
    "random_state_in_WR",
    "state_from_array",
]

FIELDS = ("z", "zt", "v", "vt", "theta")


@dataclass
class SimState:
    """Five-field state ``(z, z_t, v, v_t, theta)`` at time ``t``.

    Chamber fields are flattened over the (nx + 1) x (ny + 1) nodes; beam
    fields live on the interior beam nodes, so the hinged/Dirichlet end
    values are implicit zeros.
    """

    t: float
    z: np.ndarray
    zt: np.ndarray
    v: np.ndarray
    vt: np.ndarray
    theta: np.ndarray

    def copy(self):
        return SimState(self.t, *(getattr(self, f).copy() for f in FIELDS))

    def __sub__(self, other):
        return SimState(self.t, *(getattr(self, f) - getattr(other, f) for f in FIELDS))

    def scaled(self, factor):
        return SimState(self.t, *(factor * getattr(self, f) for f in FIELDS))

    def as_array(self):
        return np.concatenate([getattr(self, f) for f in FIELDS])

    def to_dict(self):
        out = {"t": float(self.t)}
        out.update({f: getattr(self, f).tolist() for f in FIELDS})
        return out

    @classmethod
    def from_dict(cls, data):
        return cls(float(data["t"]), *(np.asarray(data[f], dtype=float) for f in FIELDS))

    def save_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save_npz(self, path):
        np.savez(path, t=self.t, **{f: getattr(self, f) for f in FIELDS})

    @classmethod
    def load_npz(cls, path):
        data = np.load(path)
        return cls(float(data["t"]), *(data[f] for f in FIELDS))


def check_state(state, ops):
    """Shape and finiteness checks against the grid of ``ops``."""
    nw, nb = ops.n_wave, ops.n_beam
    expected = {"z": nw, "zt": nw, "v": nb, "vt": nb, "theta": nb}
    for name, n in expected.items():
        arr = getattr(state, name)
        if not isinstance(arr, np.ndarray) or arr.shape != (n,):
            raise ConfigurationError(f"state.{name} must have shape ({n},), got {np.shape(arr)}")
        if not np.all(np.isfinite(arr)):
            raise ConfigurationError(f"state.{name} contains non-finite values")
    return state


def state_from_array(arr, ops, t=0.0):
    nw, nb = ops.n_wave, ops.n_beam
    arr = np.asarray(arr, dtype=float)
    cuts = np.cumsum([nw, nw, nb, nb])
    return SimState(t, *np.split(arr, cuts))


def zero_state(ops, t=0.0):
    nw, nb = ops.n_wave, ops.n_beam
    return SimState(t, np.zeros(nw), np.zeros(nw), np.zeros(nb), np.zeros(nb), np.zeros(nb))


def mode_state(ops, z=0.0, zt=0.0, v=0.0, vt=0.0, theta=0.0, beam_mode=1):
    """Constant chamber fields and single-sine beam fields with given amplitudes."""
    xb = ops.grid.beam_coordinates()
    phi = np.sin(beam_mode * np.pi * xb)
    nw = ops.n_wave
    return SimState(
        0.0,
        np.full(nw, float(z)),
        np.full(nw, float(zt)),
        v * phi,
        vt * phi,
        theta * phi,
    )


def random_direction(ops, rng, n_modes=4, decay=1.0):
    """Smooth random state built from a few low cosine/sine modes.

    Coefficients decay like ``k^-decay``; the chamber uses products of
    cosines (compatible with the Neumann condition).
    """
    x, y = ops.grid.wave_coordinates()
    xb = ops.grid.beam_coordinates()

    def wave_field():
        out = np.zeros_like(x)
        for p in range(n_modes):
            for q in range(n_modes):
                amp = rng.standard_normal() / (1.0 + p + q) ** decay
                out += amp * np.cos(p * np.pi * x) * np.cos(q * np.pi * y)
        return out

    def beam_field(scale):
        out = np.zeros_like(xb)
        for k in range(1, n_modes + 1):
            out += scale * rng.standard_normal() / k ** (decay + 1) * np.sin(k * np.pi * xb)
        return out

    return SimState(0.0, wave_field(), wave_field(), beam_field(1.0), beam_field(3.0), beam_field(1.0))


def random_state_in_WR(params, ops, R, rng, n_modes=4, max_tries=50):
    """Random smooth state with total energy at most ``R``.

    A random direction is scaled by ``u * s_max`` where ``s_max`` is the
    largest scale keeping the energy below ``R`` along that ray and ``u`` is
    uniform in (0.2, 1).  Requires ``R`` above the energy of the zero state.
    """
    from .model import bounds_or_nan, total_energy

    bounds = bounds_or_nan(params)

    def energy(s, d):
        return total_energy(d.scaled(s), params, ops, bounds=bounds).E_total

    if energy(0.0, zero_state(ops)) > R:
        raise ConfigurationError(f"R = {R} lies below the energy of the zero state")
    for _ in range(max_tries):
        d = random_direction(ops, rng, n_modes=n_modes)
        lo, hi = 0.0, 1.0
        while energy(hi, d) <= R:
            lo, hi = hi, 2.0 * hi
            if hi > 1e6:
                break
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if energy(mid, d) <= R:
                lo = mid
            else:
                hi = mid
        s = lo * rng.uniform(0.2, 1.0)
        if lo > 0 and energy(s, d) <= R:
            return d.scaled(s)
    raise ConfigurationError("could not draw a state inside W_R")
