"""Finite-difference operators on the chamber [0, 1]^2 and the beam [0, 1].

The chamber is discretised with a vertex-centred grid of (nx + 1) x (ny + 1)
nodes, stored flattened in C order with ``index = i * (ny + 1) + j`` where
``i`` runs along x and ``j`` along y.  The elastic wall is the bottom edge
y = 0 and shares its nodes with the beam grid.  Beam fields (displacement,
velocity, temperature) live on the n0 - 1 interior beam nodes; the hinged
end conditions are built into the operators.

Inner products:

* chamber: tensor trapezoidal weights, ``(a, b)_h = sum(w * a * b)``
* wall (all n0 + 1 nodes): trapezoidal weights
* beam interior: uniform weight h0
"""
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import eigh

from .exceptions import ConfigurationError, SolverError

__all__ = [
    "GridSpec",
    "DiscreteOperators",
    "build_operators",
    "trace",
    "flux_inject",
    "neumann_map_solve",
    "beam_eigenvalue",
]


@dataclass(frozen=True)
class GridSpec:
    """Cell counts of the chamber and beam grids.

    ``n0`` defaults to ``nx``; the beam and the bottom row of the chamber
    must share nodes.
    """

    nx: int = 32
    ny: int = None
    n0: int = None

    def __post_init__(self):
        if self.ny is None:
            object.__setattr__(self, "ny", self.nx)
        if self.n0 is None:
            object.__setattr__(self, "n0", self.nx)
        for name in ("nx", "ny", "n0"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or isinstance(value, bool):
                raise ConfigurationError(f"grid.{name} must be an integer, got {value!r}")
            if value < 8:
                raise ConfigurationError(f"grid.{name} must be >= 8, got {value}")
        if self.n0 != self.nx:
            raise ConfigurationError(
                f"grid.n0 ({self.n0}) must equal grid.nx ({self.nx}) so the wall shares nodes"
            )

    @property
    def hx(self):
        return 1.0 / self.nx

    @property
    def hy(self):
        return 1.0 / self.ny

    @property
    def h0(self):
        return 1.0 / self.n0

    @property
    def n_wave(self):
        return (self.nx + 1) * (self.ny + 1)

    @property
    def n_beam(self):
        return self.n0 - 1

    @property
    def wave_shape(self):
        return (self.nx + 1, self.ny + 1)

    def wave_coordinates(self):
        """Return flattened (x, y) node coordinates of the chamber grid."""
        x = np.linspace(0.0, 1.0, self.nx + 1)
        y = np.linspace(0.0, 1.0, self.ny + 1)
        X, Y = np.meshgrid(x, y, indexing="ij")
        return X.ravel(), Y.ravel()

    def beam_coordinates(self):
        """Interior beam node coordinates."""
        return np.arange(1, self.n0) * self.h0

    def wall_coordinates(self):
        """All wall node coordinates, endpoints included."""
        return np.arange(self.n0 + 1) * self.h0


def _trapezoid_weights(n, h):
    w = np.full(n + 1, h)
    w[0] = w[-1] = 0.5 * h
    return w


def _neumann_second_difference(n, h):
    """Ghost-node Neumann matrix for -d^2/dx^2 on n + 1 nodes."""
    main = np.full(n + 1, 2.0)
    upper = np.full(n, -1.0)
    lower = np.full(n, -1.0)
    # reflected ghost node doubles the inward neighbour
    upper[0] = -2.0
    lower[-1] = -2.0
    return sp.diags([lower, main, upper], [-1, 0, 1], format="csr") / h**2


def _dirichlet_second_difference(n, h):
    """Three-point -d^2/dx^2 on the n - 1 interior nodes."""
    m = n - 1
    return sp.diags(
        [np.full(m - 1, -1.0), np.full(m, 2.0), np.full(m - 1, -1.0)],
        [-1, 0, 1],
        format="csr",
    ) / h**2


def beam_eigenvalue(k, h0):
    """Closed-form k-th eigenvalue of the discrete Dirichlet beam operator."""
    return 2.0 / h0**2 * (1.0 - np.cos(k * np.pi * h0))


@dataclass(eq=False)
class DiscreteOperators:
    """Assembled operators; treat as immutable after :func:`build_operators`.

    Attributes
    ----------
    A_wave : sparse matrix
        -Delta_h + mu I with homogeneous Neumann conditions on the whole boundary.
    L_wave : sparse matrix
        -Delta_h alone (``A_wave - mu I``).
    A_beam : sparse matrix
        Dirichlet -d^2/dx^2 on interior beam nodes.
    M_gamma : sparse matrix
        ``I + gamma * A_beam``.
    trace_B : sparse matrix, shape (n0 + 1, n_wave)
        Restriction of a chamber field to the wall nodes.
    flux_BT : sparse matrix, shape (n_wave, n0 + 1)
        Load vector of a wall flux density, exactly adjoint to ``trace_B``.
    """

    grid: GridSpec
    mu: float
    gamma: float
    A_wave: sp.csr_matrix
    L_wave: sp.csr_matrix
    A_beam: sp.csr_matrix
    A_beam2: sp.csr_matrix
    M_gamma: sp.csr_matrix
    trace_B: sp.csr_matrix
    flux_BT: sp.csr_matrix
    w_wave: np.ndarray
    w_wall: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def h0(self):
        return self.grid.h0

    @property
    def n_wave(self):
        return self.grid.n_wave

    @property
    def n_beam(self):
        return self.grid.n_beam

    # interior-node coupling blocks used by the time stepper
    @property
    def trace_int(self):
        if "trace_int" not in self._cache:
            self._cache["trace_int"] = self.trace_B[1:-1].tocsr()
        return self._cache["trace_int"]

    @property
    def flux_int(self):
        if "flux_int" not in self._cache:
            self._cache["flux_int"] = self.flux_BT[:, 1:-1].tocsr()
        return self._cache["flux_int"]

    def ip_wave(self, a, b):
        return float(np.dot(self.w_wave * a, b))

    def ip_beam(self, a, b):
        return float(self.h0 * np.dot(a, b))

    def ip_wall(self, a, b):
        return float(np.dot(self.w_wall * a, b))

    def norm_wave(self, a):
        return np.sqrt(self.ip_wave(a, a))

    def norm_beam(self, a):
        return np.sqrt(self.ip_beam(a, a))

    def trace(self, z):
        return trace(z, self)

    def flux_inject(self, phi):
        return flux_inject(phi, self)

    @property
    def beam_max_eigenvalue(self):
        return beam_eigenvalue(self.grid.n0 - 1, self.h0)

    def wave_lu(self):
        """Cached sparse LU factorisation of ``A_wave``."""
        if "wave_lu" not in self._cache:
            self._cache["wave_lu"] = spla.splu(self.A_wave.tocsc())
        return self._cache["wave_lu"]

    def wave_modes(self):
        """W-orthonormal eigenbasis of ``A_wave`` as 1-D factors.

        Returns ``(nu, Phi_x, Phi_y, order)`` where the 2-D eigenvalue for
        the pair (p, q) is ``nu[p, q]`` and ``order`` lists flattened pairs
        by increasing eigenvalue.
        """
        if "wave_modes" not in self._cache:
            g = self.grid
            factors = []
            for n, h in ((g.nx, g.hx), (g.ny, g.hy)):
                w1 = _trapezoid_weights(n, h)
                K1 = (sp.diags(w1) @ _neumann_second_difference(n, h)).toarray()
                K1 = 0.5 * (K1 + K1.T)
                lam, vec = eigh(K1, np.diag(w1))
                lam[0] = 0.0 if abs(lam[0]) < 1e-9 else lam[0]
                factors.append((lam, vec))
            (lx, px), (ly, py) = factors
            nu = self.mu + lx[:, None] + ly[None, :]
            order = np.argsort(nu.ravel(), kind="stable")
            self._cache["wave_modes"] = (nu, px, py, order)
        return self._cache["wave_modes"]

    def wave_coefficients(self, z):
        """Modal coefficients of a chamber field, flattened in eigenvalue order."""
        nu, px, py, order = self.wave_modes()
        g = self.grid
        wx = _trapezoid_weights(g.nx, g.hx)
        wy = _trapezoid_weights(g.ny, g.hy)
        Z = np.asarray(z).reshape(g.wave_shape)
        C = px.T @ (wx[:, None] * Z * wy[None, :]) @ py
        return C.ravel()[order]

    def wave_eigenvalues(self):
        nu, _, _, order = self.wave_modes()
        return nu.ravel()[order]

    def beam_modes(self):
        """h0-orthonormal sine basis (columns) and eigenvalues of ``A_beam``."""
        if "beam_modes" not in self._cache:
            n0 = self.grid.n0
            j = np.arange(1, n0)
            k = np.arange(1, n0)
            basis = np.sqrt(2.0) * np.sin(np.pi * np.outer(j, k) * self.h0)
            self._cache["beam_modes"] = (beam_eigenvalue(k, self.h0), basis)
        return self._cache["beam_modes"]

    def beam_coefficients(self, v):
        lam, basis = self.beam_modes()
        return self.h0 * (basis.T @ np.asarray(v))


def build_operators(grid, mu=1.0, gamma=0.0):
    """Assemble all chamber, beam and coupling operators.

    Parameters
    ----------
    grid : GridSpec
    mu : float
        Positive shift making the Neumann operator invertible.
    gamma : float
        Rotational inertia in [0, 1].
    """
    if not isinstance(grid, GridSpec):
        raise ConfigurationError("grid must be a GridSpec")
    if not np.isfinite(mu) or mu <= 0:
        raise ConfigurationError(f"mu must be positive, got {mu}")
    if not 0.0 <= gamma <= 1.0:
        raise ConfigurationError(f"gamma must lie in [0, 1], got {gamma}")

    nx, ny, n0 = grid.nx, grid.ny, grid.n0
    Dx = _neumann_second_difference(nx, grid.hx)
    Dy = _neumann_second_difference(ny, grid.hy)
    L = (sp.kron(Dx, sp.identity(ny + 1)) + sp.kron(sp.identity(nx + 1), Dy)).tocsr()
    A_wave = (L + mu * sp.identity(grid.n_wave)).tocsr()

    wx = _trapezoid_weights(nx, grid.hx)
    wy = _trapezoid_weights(ny, grid.hy)
    w_wave = np.outer(wx, wy).ravel()
    w_wall = _trapezoid_weights(n0, grid.h0)

    A_beam = _dirichlet_second_difference(n0, grid.h0)
    A_beam2 = (A_beam @ A_beam).tocsr()
    M_gamma = (sp.identity(n0 - 1) + gamma * A_beam).tocsr()

    rows = np.arange(nx + 1)
    cols = rows * (ny + 1)
    trace_B = sp.csr_matrix(
        (np.ones(nx + 1), (rows, cols)), shape=(nx + 1, grid.n_wave)
    )
    # W^{-1} T^T W_wall: the weighted adjoint of the restriction
    flux_BT = sp.csr_matrix(
        (w_wall / w_wave[cols], (cols, rows)), shape=(grid.n_wave, nx + 1)
    )

    return DiscreteOperators(
        grid=grid,
        mu=float(mu),
        gamma=float(gamma),
        A_wave=A_wave,
        L_wave=L,
        A_beam=A_beam,
        A_beam2=A_beam2,
        M_gamma=M_gamma,
        trace_B=trace_B,
        flux_BT=flux_BT,
        w_wave=w_wave,
        w_wall=w_wall,
    )


def trace(z, ops):
    """Bottom-row values of a chamber field (all n0 + 1 wall nodes)."""
    z = np.asarray(z, dtype=float)
    if z.shape != (ops.n_wave,):
        raise ConfigurationError(f"chamber field must have shape ({ops.n_wave},), got {z.shape}")
    return ops.trace_B @ z


def flux_inject(phi, ops):
    """Chamber load vector imposing the Neumann flux ``phi`` on the wall.

    ``phi`` may be given on all n0 + 1 wall nodes or on the n0 - 1 interior
    beam nodes (ends are then taken as zero).
    """
    phi = np.asarray(phi, dtype=float)
    n0 = ops.grid.n0
    if phi.shape == (n0 - 1,):
        phi = np.concatenate(([0.0], phi, [0.0]))
    if phi.shape != (n0 + 1,):
        raise ConfigurationError(
            f"wall field must have shape ({n0 + 1},) or ({n0 - 1},), got {phi.shape}"
        )
    return ops.flux_BT @ phi


def neumann_map_solve(phi, ops):
    """Solve ``A_wave psi = flux_inject(phi)`` (discrete Neumann map).

    Only used for testing; the simulator couples through the trace/flux pair.
    """
    rhs = flux_inject(phi, ops)
    psi = ops.wave_lu().solve(rhs)
    resid = np.linalg.norm(ops.A_wave @ psi - rhs)
    scale = max(np.linalg.norm(rhs), 1.0)
    if not np.all(np.isfinite(psi)) or resid > 1e-8 * scale:
        raise SolverError(f"Neumann map solve failed: residual {resid:.3e}", residual=resid)
    return psi
