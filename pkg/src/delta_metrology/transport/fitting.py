"""Parameter estimation for the weak-localization models.

The perpendicular fit is a damped Gauss-Newton (Levenberg-Marquardt)
minimisation in (ln L, ln L_phi) with analytic derivatives, restarted from
a log-spaced grid of initial values.  Parallel and tilt fits have one
parameter each: a log-grid scan brackets the minimum and Newton steps on the
normal equation refine it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..core import Measurement
from ..errors import DomainError, FitError, InsufficientDataError
from .. import kernels
from .models import (SIGMA_0, WlParams, combine_orientations, combine_orientations_dp,
                     delta_sigma_parallel, delta_sigma_perp, elastic_field, geometric_split,
                     phase_field)

ORIENTATIONS = ("perpendicular", "parallel", "tilt")
QUANTITIES = ("delta_sigma", "R_xy")
MIN_POINTS = 5

L_GRID_NM = tuple(np.geomspace(1.0, 50.0, 6))
L_PHI_GRID_NM = tuple(np.geomspace(10.0, 500.0, 6))


@dataclass(frozen=True, eq=False)
class MagnetoTrace:
    """One magnetotransport sweep.

    ``field`` holds |B| in T.  For a tilt trace ``angle`` is either a single
    angle (field sweep at fixed tilt) or one angle per point (angle sweep at
    fixed |B|), in degrees from the layer plane.  ``value`` is a sheet
    conductance change in S (quantity "delta_sigma") or a transverse
    resistance in ohm (quantity "R_xy").
    """

    orientation: str
    field: np.ndarray
    value: np.ndarray
    error: Optional[np.ndarray] = None
    quantity: str = "delta_sigma"
    temperature: Optional[float] = None  # K
    angle: Optional[object] = None

    def __post_init__(self):
        if self.orientation not in ORIENTATIONS:
            raise DomainError(f"orientation must be one of {ORIENTATIONS}")
        if self.quantity not in QUANTITIES:
            raise DomainError(f"quantity must be one of {QUANTITIES}")
        b = np.array(self.field, dtype=float).ravel()
        v = np.array(self.value, dtype=float).ravel()
        if b.size != v.size:
            raise DomainError("field and value arrays differ in length")
        if not (np.all(np.isfinite(b)) and np.all(np.isfinite(v))):
            raise DomainError("field and value must be finite")
        object.__setattr__(self, "field", b)
        object.__setattr__(self, "value", v)
        if self.error is not None:
            e = np.array(self.error, dtype=float).ravel()
            if e.size != v.size or not np.all(e > 0):
                raise DomainError("errors must be positive, one per point")
            object.__setattr__(self, "error", e)
        if self.orientation == "tilt":
            if self.angle is None:
                raise DomainError("tilt trace needs an angle")
            a = np.array(self.angle, dtype=float)
            if a.ndim and a.size != v.size:
                raise DomainError("need one angle per point or a single angle")
            if np.any((a < 0) | (a > 90)):
                raise DomainError("angle must lie in [0, 90] degrees")
            object.__setattr__(self, "angle", float(a) if a.ndim == 0 else a.ravel())

    def __len__(self):
        return self.value.size

    @property
    def angles(self):
        if self.angle is None:
            return None
        return np.broadcast_to(np.asarray(self.angle, dtype=float), self.value.shape)

    def weights(self):
        return np.ones_like(self.value) if self.error is None else 1.0 / self.error


def _require(trace, orientation, quantity="delta_sigma"):
    if trace.orientation != orientation:
        raise DomainError(f"expected a {orientation} trace, got {trace.orientation}")
    if trace.quantity != quantity:
        raise DomainError(f"expected quantity {quantity}, got {trace.quantity}")
    if len(trace) < MIN_POINTS:
        raise InsufficientDataError(f"need at least {MIN_POINTS} points, got {len(trace)}")


def _cov_and_scale(jac, resid, has_errors, n_par):
    """Parameter covariance inv(J^T J), scaled by the reduced chi^2 when the
    data carry no per-point errors."""
    dof = resid.size - n_par
    chi2 = float(resid @ resid)
    try:
        cov = np.linalg.inv(jac.T @ jac)
    except np.linalg.LinAlgError:
        cov = np.full((n_par, n_par), np.inf)
    if not has_errors and dof > 0:
        cov = cov * (chi2 / dof)
    return cov, chi2, dof


# --------------------------------------------------------------------------
# perpendicular field: L, L_phi
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PerpFit:
    L: Measurement  # nm
    L_phi: Measurement  # nm
    covariance: np.ndarray  # nm^2, order (L, L_phi)
    chi2: float
    dof: int
    iterations: int
    starts: int
    valid: bool  # L_phi > L at the optimum
    warnings: tuple = ()

    @property
    def reduced_chi2(self):
        return self.chi2 / self.dof if self.dof > 0 else math.nan

    @property
    def correlation(self):
        c = self.covariance
        return float(c[0, 1] / math.sqrt(c[0, 0] * c[1, 1]))

    def params(self) -> WlParams:
        return WlParams(L=self.L, L_phi=self.L_phi)


def perp_residuals(log_params, field, value, weights):
    """Weighted residuals (model - data) and their Jacobian in (ln L, ln L_phi).

    ``field`` must be a validated contiguous float array (see ``fit_perp``).
    """
    L, L_phi = np.exp(log_params)
    f, d_l, d_phi = kernels.hln(field, phase_field(L_phi), elastic_field(L))
    sw = SIGMA_0 * weights
    r = SIGMA_0 * f * weights - value * weights
    jac = np.empty((field.size, 2))
    jac[:, 0] = d_l * sw
    jac[:, 1] = d_phi * sw
    return r, jac


def _damped_solve(h, g, lam):
    """Solve (h + lam diag(h)) s = -g for one or two unknowns."""
    if h.shape[0] == 1:
        return np.array([-g[0] / (h[0, 0] * (1.0 + lam) + 1e-300)])
    a = h[0, 0] * (1.0 + lam) + 1e-300
    d = h[1, 1] * (1.0 + lam) + 1e-300
    b = h[0, 1]
    det = a * d - b * b
    return np.array([-(d * g[0] - b * g[1]) / det, -(a * g[1] - b * g[0]) / det])


# search box for both lengths (nm); a parameter that ends on it is reported
LENGTH_BOUNDS_NM = (1e-3, 1e7)


def _levenberg_marquardt(x0, field, value, weights, rtol, max_iter,
                         bounds=LENGTH_BOUNDS_NM, ftol=1e-13, max_step=1.0):
    """Box-constrained LM in log parameters.  Returns (x, cost, iterations,
    converged, at_bound mask)."""
    lo, hi = math.log(bounds[0]), math.log(bounds[1])
    x = np.clip(np.array(x0, dtype=float), lo, hi)
    r, jac = perp_residuals(x, field, value, weights)
    cost = float(r @ r)
    lam = 1e-3
    n = x.size
    stalled = 0
    for it in range(1, max_iter + 1):
        g = jac.T @ r
        h = jac.T @ jac
        # parameters pinned on a bound with the gradient pointing outwards
        # are held fixed for this iteration
        pinned = ((x <= lo) & (g > 0)) | ((x >= hi) & (g < 0))
        free = ~pinned
        if not np.any(free):
            return x, cost, it, True, pinned
        hf = h[np.ix_(free, free)]
        gf = g[free]
        while True:
            step = np.zeros(n)
            step[free] = _damped_solve(hf, gf, lam)
            if not np.all(np.isfinite(step)):
                return x, cost, it, False, pinned
            # trust region in log space: at most a factor e^max_step per iteration
            big = np.max(np.abs(step))
            if big > max_step:
                step *= max_step / big
            trial = np.clip(x + step, lo, hi)
            rt, jt = perp_residuals(trial, field, value, weights)
            ct = float(rt @ rt)
            if ct <= cost:
                lam = max(lam / 3.0, 1e-12)
                break
            lam *= 4.0
            if lam > 1e12:
                # no descent direction left: stationary
                return x, cost, it, True, (x <= lo) | (x >= hi)
        moved = np.max(np.abs(trial - x))
        gain = cost - ct
        x, r, jac, cost = trial, rt, jt, ct
        # ln-parameter steps are relative steps in L and L_phi
        if moved < rtol:
            return x, cost, it, True, (x <= lo) | (x >= hi)
        # flat valley (a parameter the data do not constrain): the cost has
        # stopped decreasing at rounding level for several iterations
        stalled = stalled + 1 if gain <= ftol * cost else 0
        if stalled >= 5:
            return x, cost, it, True, (x <= lo) | (x >= hi)
    return x, cost, max_iter, False, (x <= lo) | (x >= hi)


def fit_perp(trace: MagnetoTrace, L_grid=L_GRID_NM, L_phi_grid=L_PHI_GRID_NM,
             rtol=1e-10, max_iter=200) -> PerpFit:
    """Weighted least squares of the perpendicular-field lineshape for
    (L, L_phi).  Uniform weights unless the trace carries errors; then the
    covariance is not rescaled by the reduced chi^2.
    """
    _require(trace, "perpendicular")
    if np.any(trace.field < 0):
        raise DomainError("field magnitudes must be >= 0")
    b = np.ascontiguousarray(trace.field)
    y, w = trace.value, trace.weights()
    positive = b[b > 0]
    if positive.size < 2 or positive.max() < 10 * positive.min():
        raise FitError("perpendicular fit needs fields spanning at least a factor of 10",
                       {"B_min": float(positive.min()) if positive.size else None,
                        "B_max": float(positive.max()) if positive.size else None})
    best = None
    n_starts = 0
    failures = 0
    for L0 in L_grid:
        for P0 in L_phi_grid:
            if P0 <= L0:
                continue
            n_starts += 1
            x, cost, its, ok, edge = _levenberg_marquardt(np.log([L0, P0]), b, y, w, rtol,
                                                          max_iter)
            if not ok:
                failures += 1
                continue
            if best is None or cost < best[1]:
                best = (x, cost, its, edge)
    if best is None:
        raise FitError("perpendicular fit did not converge from any start",
                       {"starts": n_starts, "max_iter": max_iter, "rtol": rtol})
    x, cost, its, edge = best
    r, jac = perp_residuals(x, b, y, w)
    cov_ln, chi2, dof = _cov_and_scale(jac, r, trace.error is not None, 2)
    L, L_phi = np.exp(x)
    scale = np.array([L, L_phi])
    cov = cov_ln * np.outer(scale, scale)
    valid = bool(L_phi > L)
    warnings = [] if valid else ["L_phi <= L at the optimum: outside the weak-localization regime"]
    for name, hit in zip(("L", "L_phi"), edge):
        if hit:
            warnings.append(f"{name} ended on the search bound {LENGTH_BOUNDS_NM} nm: "
                            "not constrained by the data")
    warnings = tuple(warnings)
    return PerpFit(Measurement(float(L), float(math.sqrt(cov[0, 0]))),
                   Measurement(float(L_phi), float(math.sqrt(cov[1, 1]))),
                   cov, chi2, dof, its, n_starts, valid, warnings)


# --------------------------------------------------------------------------
# one-parameter fits
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ScalarFit:
    value: Measurement
    chi2: float
    dof: int
    flags: tuple = ()

    @property
    def reduced_chi2(self):
        return self.chi2 / self.dof if self.dof > 0 else math.nan


def _scalar_fit(model, grid, y, w, has_errors, lower=0.0, max_iter=100, rtol=1e-12):
    """Minimise sum(w^2 (model(q)[0] - y)^2) over a scalar q >= lower.

    ``model(q)`` returns (prediction, d prediction / dq).  The grid brackets
    the minimum; Gauss-Newton steps with step halving refine it.
    """
    def cost(q):
        m, _ = model(q)
        r = (m - y) * w
        return float(r @ r)

    costs = [cost(q) for q in grid]
    q = float(grid[int(np.argmin(costs))])
    c = min(costs)
    for _ in range(max_iter):
        m, d = model(q)
        r = (m - y) * w
        jw = d * w
        h = float(jw @ jw)
        if h <= 0:
            break
        step = -float(jw @ r) / h
        accepted = False
        for _ in range(40):
            trial = max(q + step, lower)
            ct = cost(trial)
            if ct <= c:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        moved = abs(trial - q)
        q, c = trial, ct
        if moved <= rtol * max(abs(q), 1e-300):
            break
    m, d = model(q)
    r = (m - y) * w
    jw = d * w
    h = float(jw @ jw)
    dof = y.size - 1
    var = 1.0 / h if h > 0 else math.inf
    if not has_errors and dof > 0:
        var *= float(r @ r) / dof
    return q, math.sqrt(var), float(r @ r), dof


def fit_parallel(trace: MagnetoTrace) -> ScalarFit:
    """gamma (T^-2) from an in-plane sweep of sigma_0 ln(1 + gamma B^2)."""
    _require(trace, "parallel")
    order = np.lexsort((trace.value, trace.field))  # fixed order: permutation invariant
    b, y, w = trace.field[order], trace.value[order], trace.weights()[order]
    if np.all(y == 0):
        return ScalarFit(Measurement(0.0, math.inf), 0.0, y.size - 1,
                         ("null response: gamma = 0 with unbounded relative error",))
    nz = b > 0
    if not np.any(nz):
        raise FitError("parallel fit needs at least one non-zero field")
    # closed-form per-point estimates; their median seeds a log bracket
    est = np.expm1(y[nz] / SIGMA_0) / b[nz] ** 2
    g0 = float(np.median(est))
    g0 = g0 if g0 > 0 else float(np.max(np.abs(est))) or 1e-3
    grid = np.concatenate(([0.0], g0 * np.geomspace(1e-3, 1e3, 61)))
    b2 = b * b

    def model(g):
        return SIGMA_0 * np.log1p(g * b2), SIGMA_0 * b2 / (1.0 + g * b2)

    g, err, chi2, dof = _scalar_fit(model, grid, y, w, trace.error is not None)
    flags = ("gamma at the lower bound 0",) if g == 0 else ()
    return ScalarFit(Measurement(g, err), chi2, dof, flags)


def fit_tilt(trace: MagnetoTrace, L_nm, L_phi_nm, gamma, split=geometric_split,
             p_grid=tuple(np.geomspace(0.1, 50.0, 121))) -> ScalarFit:
    """Tilt exponent p from an angle sweep at fixed |B| with the
    perpendicular and parallel parameters held fixed."""
    _require(trace, "tilt")
    angles = trace.angles
    b, y, w = trace.field, trace.value, trace.weights()
    b_perp, b_par = split(b, angles)
    perp = np.atleast_1d(delta_sigma_perp(b_perp, L_nm, L_phi_nm))
    par = np.atleast_1d(delta_sigma_parallel(b_par, gamma))
    # p only matters where both orientations contribute
    informative = (perp > 0) & (par > 0)
    if np.unique(angles).size < 2 or not np.any(informative):
        raise FitError("degenerate tilt sweep: the data do not depend on p",
                       {"angles": sorted(set(np.round(angles, 9).tolist()))})

    def model(p):
        return combine_orientations(perp, par, p), combine_orientations_dp(perp, par, p)

    p, err, chi2, dof = _scalar_fit(model, np.asarray(p_grid), y, w, trace.error is not None,
                                    lower=1e-6)
    return ScalarFit(Measurement(p, err), chi2, dof)
