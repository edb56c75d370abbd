"""Estimator-style building blocks for the attractor diagnostics.

These follow the scikit-learn conventions (``__init__`` only stores
parameters, ``fit`` returns ``self``, learned attributes end in ``_``) so they
compose with pipelines and ``get_params``/``set_params``/``clone``.
"""
import numpy as np
from scipy.optimize import linprog, minimize_scalar
from scipy.stats import linregress
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .exceptions import ConfigurationError, DegenerateFitError
from .states import SimState

__all__ = ["ModalProjector", "BoxCountingDimension", "StabilizabilityEstimator"]


class ModalProjector(TransformerMixin, BaseEstimator):
    """Map states to modal coordinates whose Euclidean norm is a state norm.

    With ``norm="Y"`` the squared Euclidean length of the full coordinate
    vector equals the weighted energy norm

        beta (||A^{1/2} z||^2 + ||z_t||^2) + alpha (||A v||^2 + ||M^{1/2} v_t||^2 + ||theta||^2)

    and with ``norm="H"`` only the beam block is kept, weighted as
    ``||A v||^2 + ||v_t||^2 + ||theta||^2``.  Coordinates are ordered by mode
    level (lowest chamber and beam modes first, fields interleaved), so the
    leading ``n_components`` form a fixed low-mode projection.

    Parameters
    ----------
    ops : DiscreteOperators
    params : ModelParams
    n_components : int or None
        Keep only the leading coordinates; ``None`` keeps all.
    norm : {"Y", "H"}
    """

    def __init__(self, ops=None, params=None, n_components=None, norm="Y"):
        self.ops = ops
        self.params = params
        self.n_components = n_components
        self.norm = norm

    def fit(self, X=None, y=None):
        if self.ops is None or self.params is None:
            raise ConfigurationError("ModalProjector needs ops and params")
        if self.norm not in ("Y", "H"):
            raise ConfigurationError(f"norm must be 'Y' or 'H', got {self.norm!r}")
        ops, p = self.ops, self.params
        nu = ops.wave_eigenvalues()
        lam, _ = ops.beam_modes()
        nw, nb = nu.size, lam.size
        # (field, mode index, weight); fields: 0 z, 1 zt, 2 v, 3 vt, 4 theta
        entries = []
        for k in range(max(nw, nb)):
            if self.norm == "Y" and k < nw:
                entries.append((0, k, np.sqrt(p.beta * nu[k])))
                entries.append((1, k, np.sqrt(p.beta)))
            if k < nb:
                if self.norm == "Y":
                    entries += [
                        (2, k, np.sqrt(p.alpha) * lam[k]),
                        (3, k, np.sqrt(p.alpha * (1.0 + ops.gamma * lam[k]))),
                        (4, k, np.sqrt(p.alpha)),
                    ]
                else:
                    entries += [(2, k, lam[k]), (3, k, 1.0), (4, k, 1.0)]
        if self.n_components is not None:
            if self.n_components < 1:
                raise ConfigurationError("n_components must be positive")
            entries = entries[: self.n_components]
        self.fields_ = np.array([e[0] for e in entries])
        self.modes_ = np.array([e[1] for e in entries])
        self.weights_ = np.array([e[2] for e in entries])
        self.n_features_out_ = len(entries)
        return self

    def _field_matrices(self, X):
        """Stack the five fields of ``X`` (states or flat state rows) as 2-D arrays."""
        ops = self.ops
        if isinstance(X, SimState):
            X = [X]
        if isinstance(X, np.ndarray):
            X = check_array(X)
            cuts = np.cumsum([ops.n_wave, ops.n_wave, ops.n_beam, ops.n_beam])
            return np.split(X, cuts, axis=1)
        states = list(X)
        return [np.array([getattr(s, f) for s in states]) for f in ("z", "zt", "v", "vt", "theta")]

    def _wave_batch(self, Z):
        ops = self.ops
        _, px, py, order = ops.wave_modes()
        Zw = (Z * ops.w_wave).reshape((Z.shape[0],) + ops.grid.wave_shape)
        C = np.matmul(px.T, Zw) @ py
        return C.reshape(Z.shape[0], -1)[:, order]

    def transform(self, X):
        check_is_fitted(self, "weights_")
        ops = self.ops
        Z, Zt, V, Vt, Th = self._field_matrices(X)
        _, basis = ops.beam_modes()
        beam = [ops.h0 * (B @ basis) for B in (V, Vt, Th)]
        coeffs = [None, None] + beam
        if self.norm == "Y":
            coeffs[0], coeffs[1] = self._wave_batch(Z), self._wave_batch(Zt)
        out = np.empty((Z.shape[0], self.n_features_out_))
        for f in range(5):
            sel = self.fields_ == f
            if sel.any():
                out[:, sel] = coeffs[f][:, self.modes_[sel]]
        return out * self.weights_

    def describe(self):
        check_is_fitted(self, "weights_")
        names = ("z", "zt", "v", "vt", "theta")
        return [f"{names[f]}[{m}]" for f, m in zip(self.fields_, self.modes_)]


class BoxCountingDimension(BaseEstimator):
    """Box-counting (fractal) dimension of a point cloud.

    Boxes of a dyadic ladder, anchored at the lower corner of the bounding
    box, are counted at levels ``k = 0, 1, ...`` (side ``span * 2**-k``).
    The ladder stops once the count exceeds ``saturation * n_samples``;
    the slope of ``log N`` against ``log(1/eps)`` is fitted over the levels
    ``>= min_level`` that are not saturated.

    Attributes
    ----------
    epsilons_ : ndarray
        Half box sides (covering sets of diameter ``2 eps`` in each coordinate).
    counts_ : ndarray
    window_ : ndarray of bool
        Levels used in the fit.
    slope_, slope_stderr_, intercept_ : float
    """

    def __init__(self, saturation=0.1, min_level=1, max_level=40):
        self.saturation = saturation
        self.min_level = min_level
        self.max_level = max_level

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_samples=2)
        n = X.shape[0]
        lo = X.min(axis=0)
        span = float(np.max(X.max(axis=0) - lo))
        if span <= 0.0:
            self.epsilons_ = np.array([0.0])
            self.counts_ = np.array([1])
            self.window_ = np.array([False])
            self.slope_, self.slope_stderr_, self.intercept_ = 0.0, 0.0, 0.0
            return self
        U = (X - lo) / span
        eps, counts = [], []
        for k in range(self.max_level + 1):
            m = 2**k
            idx = np.minimum(np.floor(U * m).astype(np.int64), m - 1)
            count = np.unique(idx, axis=0).shape[0]
            eps.append(0.5 * span / m)
            counts.append(count)
            if count > self.saturation * n:
                break
        self.epsilons_ = np.array(eps)
        self.counts_ = np.array(counts)
        levels = np.arange(len(counts))
        self.window_ = (levels >= self.min_level) & (self.counts_ <= self.saturation * n)
        if self.window_.sum() < 2:
            self.slope_, self.slope_stderr_, self.intercept_ = 0.0, np.inf, 0.0
            return self
        fit = linregress(np.log(1.0 / self.epsilons_[self.window_]), np.log(self.counts_[self.window_]))
        self.slope_ = max(float(fit.slope), 0.0)
        self.slope_stderr_ = float(fit.stderr)
        self.intercept_ = float(fit.intercept)
        return self


class StabilizabilityEstimator(RegressorMixin, BaseEstimator):
    """Fit ``D(t) <= C1 exp(-omega t) d0 + C2 lot(t)``.

    ``X`` has columns ``(t, lot)`` and ``y`` is the squared distance ``D(t)``
    between two trajectories; ``d0 = D(t_min)``.  For a fixed ``omega`` the
    constants ``(C1, C2) >= 0`` come from a linear program: cover every
    sample and minimise the mean bound, i.e. the total slack.

    ``omega`` is chosen by ``method``:

    * ``"slack"`` (default): minimise the LP slack over ``omega`` in
      ``omega_range / span`` (log grid, then bounded refinement);
    * ``"lsq"``: negative least-squares slope of ``log(D / d0)`` against ``t``.

    A fixed ``omega`` overrides both.  The plain log-slope is always reported
    as ``lsq_slope_``.  A relative ``margin`` absorbs LP round-off.
    """

    def __init__(self, omega=None, method="slack", omega_range=(1e-2, 1e3), margin=1e-9):
        self.omega = omega
        self.method = method
        self.omega_range = omega_range
        self.margin = margin

    def _lp(self, omega, t, lot_s, ys):
        expo = np.exp(-omega * (t - t[0]))
        A = np.column_stack((expo, lot_s))
        res = linprog(A.mean(axis=0), A_ub=-A, b_ub=-ys, bounds=[(0, None), (0, None)], method="highs")
        if not res.success:
            return None, np.inf
        return res.x, float(res.fun)

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        if self.method not in ("slack", "lsq"):
            raise ConfigurationError(f"method must be 'slack' or 'lsq', got {self.method!r}")
        t, lot = X[:, 0], X[:, 1]
        order = np.argsort(t, kind="stable")
        t, lot, y = t[order], lot[order], y[order]
        d0 = float(y[0])
        if d0 <= 0.0:
            raise DegenerateFitError("initial distance is zero: identical initial states")
        if np.any(y < 0) or np.any(lot < 0):
            raise ConfigurationError("distances and lot values must be non-negative")
        pos = y > 0
        if pos.sum() >= 2 and np.ptp(t[pos]) > 0:
            self.lsq_slope_ = float(linregress(t[pos], np.log(y[pos] / d0)).slope)
        else:
            self.lsq_slope_ = 0.0

        lot_max = float(lot.max())
        lot_s = lot / lot_max if lot_max > 0 else lot
        ys = y / d0
        span = max(float(t[-1] - t[0]), 1e-12)
        lo, hi = (w / span for w in self.omega_range)
        if self.omega is not None:
            omega = float(self.omega)
        elif self.method == "lsq":
            omega = -self.lsq_slope_
        else:
            grid = np.geomspace(lo, hi, 41)
            vals = [self._lp(w, t, lot_s, ys)[1] for w in grid]
            k = int(np.argmin(vals))
            a, b = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
            omega = grid[k]
            if b > a:
                r = minimize_scalar(
                    lambda u: self._lp(np.exp(u), t, lot_s, ys)[1],
                    bounds=(np.log(a), np.log(b)),
                    method="bounded",
                    options={"xatol": 1e-6},
                )
                if r.fun <= vals[k]:
                    omega = float(np.exp(r.x))
        self.omega_at_bound_ = bool(self.omega is None and self.method == "slack" and omega >= hi * (1 - 1e-6))

        x, _ = self._lp(omega, t, lot_s, ys)
        self.lp_success_ = x is not None
        expo = np.exp(-omega * (t - t[0]))
        if x is not None:
            c1, c2s = x
        else:
            c1, c2s = float(np.max(ys / expo)), 0.0
        # undo the LP feasibility tolerance: the bound must cover every sample
        fitted = c1 * expo + c2s * lot_s
        with np.errstate(divide="ignore", invalid="ignore"):
            short = np.where(fitted > 0, ys / fitted, np.where(ys > 0, np.inf, 0.0))
        scale = max(1.0, float(np.max(short))) * (1.0 + self.margin)
        self.C1_ = float(c1 * scale)
        self.C2_ = float(c2s * scale * d0 / lot_max) if lot_max > 0 else 0.0
        self.omega_ = float(omega)
        self.d0_ = d0
        self.t0_ = float(t[0])
        self.slack_ = self._bound(t, lot) - y
        self.n_violations_ = int(np.sum(self.slack_ < 0))
        self.valid_ = bool(self.omega_ > 0 and self.n_violations_ == 0 and self.lp_success_)
        return self

    def _bound(self, t, lot):
        return self.C1_ * np.exp(-self.omega_ * (t - self.t0_)) * self.d0_ + self.C2_ * lot

    def predict(self, X):
        if not hasattr(self, "C1_"):
            raise NotFittedError("StabilizabilityEstimator is not fitted")
        X = check_array(X)
        return self._bound(X[:, 0], X[:, 1])
