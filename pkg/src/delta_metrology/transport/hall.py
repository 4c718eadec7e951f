"""Hall analysis, layer thickness from the in-plane response, run comparison."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from ..core import CONSTANTS, Measurement, as_measurement
from ..errors import DomainError, HallSignError
from .fitting import MagnetoTrace, _require
from .models import NM, WlParams

CM2 = 1e-4  # m^2 per cm^2


@dataclass(frozen=True)
class HallResult:
    n: Measurement  # cm^-2
    mu: Measurement  # cm^2 / (V s)
    L: Measurement  # nm
    sigma_sheet: Measurement  # S per square, zero field
    slope: Measurement  # ohm / T
    intercept: Measurement  # ohm
    reduced_chi2: float = math.nan
    residual_rms: float = math.nan  # ohm

    def __post_init__(self):
        for name in ("n", "mu"):
            if not getattr(self, name).value > 0:
                raise DomainError(f"HallResult.{name} must be positive")


def _linear_fit(x, y, w):
    """Weighted straight line y = a + s x; returns (a, s, cov, resid)."""
    design = np.column_stack((np.ones_like(x), x)) * w[:, None]
    coef, *_ = np.linalg.lstsq(design, y * w, rcond=None)
    resid = (y - (coef[0] + coef[1] * x)) * w
    cov = np.linalg.inv(design.T @ design)
    return coef[0], coef[1], cov, resid


def mean_free_path(n_cm2, mu_cm2):
    """L = hbar sqrt(2 pi n) mu / e in nm (n in cm^-2, mu in cm^2/Vs)."""
    n = n_cm2 / CM2
    mu = mu_cm2 * CM2
    return CONSTANTS.hbar * math.sqrt(2.0 * math.pi * n) * mu / CONSTANTS.e / NM


def mobility_from_mean_free_path(L_nm, n_cm2):
    """Inverse of ``mean_free_path``: mu in cm^2/Vs."""
    n = n_cm2 / CM2
    mu = L_nm * NM * CONSTANTS.e / (CONSTANTS.hbar * math.sqrt(2.0 * math.pi * n))
    return mu / CM2


def hall_slope(n_cm2):
    """R_xy slope 1 / (n e) in ohm / T."""
    return 1.0 / (n_cm2 / CM2 * CONSTANTS.e)


def hall_analysis(trace: MagnetoTrace, sigma_sheet) -> HallResult:
    """Carrier density, mobility and mean free path from R_xy(B).

    The slope comes from a weighted linear regression (uniform weights
    without per-point errors; then its error is scaled by the residual
    scatter).  ``sigma_sheet`` is the zero-field sheet conductance in S.
    """
    _require(trace, "perpendicular", "R_xy")
    if np.unique(trace.field).size < 2:
        raise DomainError("Hall regression needs at least two distinct fields")
    sig = as_measurement(sigma_sheet)
    if not sig.value > 0:
        raise DomainError("sheet conductance must be positive")
    a, s, cov, resid = _linear_fit(trace.field, trace.value, trace.weights())
    a, s = float(a), float(s)
    dof = len(trace) - 2
    chi2 = float(resid @ resid)
    red = chi2 / dof if dof > 0 else math.nan
    if trace.error is None and dof > 0:
        cov = cov * red
    s_err, a_err = math.sqrt(cov[1, 1]), math.sqrt(cov[0, 0])
    if not s > 0:
        raise HallSignError(
            f"Hall slope {s:.4g} ohm/T is not positive: check carrier sign or contact wiring",
            {"slope_ohm_per_T": float(s), "slope_error": s_err})
    rel_s = s_err / s
    n_cm2 = 1.0 / (s * CONSTANTS.e) * CM2
    mu_cm2 = sig.value / (n_cm2 / CM2 * CONSTANTS.e) / CM2
    mu_rel = math.hypot(rel_s, sig.rel)  # mu ~ sigma / n ~ sigma * s
    L_nm = mean_free_path(n_cm2, mu_cm2)
    # L ~ sqrt(n) mu ~ sigma * s^(1/2)
    L_rel = math.hypot(sig.rel, 0.5 * rel_s)
    rms = float(np.sqrt(np.mean((trace.value - (a + s * trace.field)) ** 2)))
    return HallResult(
        n=Measurement(n_cm2, n_cm2 * rel_s),
        mu=Measurement(mu_cm2, mu_cm2 * mu_rel),
        L=Measurement(L_nm, L_nm * L_rel),
        sigma_sheet=sig,
        slope=Measurement(float(s), s_err),
        intercept=Measurement(float(a), a_err),
        reduced_chi2=red,
        residual_rms=rms,
    )


# --------------------------------------------------------------------------
# thickness
# --------------------------------------------------------------------------
# t = (1/4pi)^(1/4) [ (hbar / (e L_phi))^2 sqrt(n) L gamma ]^(1/2), in SI:
#   hbar / (e L_phi)        [J s / (C m)] = [T m]
#   sqrt(n) L gamma         [m^-1 m T^-2] = [T^-2]
#   product                 [m^2]  ->  t in m
_THICKNESS_PREFACTOR = (1.0 / (4.0 * math.pi)) ** 0.25
# exponents of (L_phi, n, L, gamma) in t
THICKNESS_EXPONENTS = (-1.0, 0.25, 0.5, 0.5)


def _thickness_si(L_phi_m, L_m, n_m2, gamma):
    flux = CONSTANTS.hbar / (CONSTANTS.e * L_phi_m)
    return _THICKNESS_PREFACTOR * math.sqrt(flux**2 * math.sqrt(n_m2) * L_m * gamma)


def thickness(L_phi, L, n, gamma) -> Measurement:
    """Layer thickness (nm) from the in-plane coefficient gamma (T^-2).

    L_phi, L in nm, n in cm^-2.  Each input may carry an error (Measurement
    or (value, error)); relative errors are combined in quadrature with the
    power-law exponents of the formula.
    """
    args = [as_measurement(v) for v in (L_phi, n, L, gamma)]
    lphi, dens, lmfp, gam = args
    if not (lphi.value > 0 and dens.value > 0 and lmfp.value > 0):
        raise DomainError("L_phi, L and n must be positive")
    if gam.value < 0:
        raise DomainError("gamma must be >= 0")
    t_m = _thickness_si(lphi.value * NM, lmfp.value * NM, dens.value / CM2, gam.value)
    t_nm = t_m / NM
    if t_nm == 0:
        return Measurement(0.0, 0.0)
    rel = math.sqrt(sum((k * m.rel) ** 2 for k, m in zip(THICKNESS_EXPONENTS, args)))
    return Measurement(t_nm, t_nm * rel)


def gamma_from_thickness(t_nm, L_phi, L, n):
    """Inverse of ``thickness``: the gamma (T^-2) that yields ``t_nm``."""
    if t_nm < 0 or not (L_phi > 0 and L > 0 and n > 0):
        raise DomainError("need t >= 0 and positive L_phi, L, n")
    flux = CONSTANTS.hbar / (CONSTANTS.e * L_phi * NM)
    t_m = t_nm * NM
    return (t_m / _THICKNESS_PREFACTOR) ** 2 / (flux**2 * math.sqrt(n / CM2) * L * NM)


# --------------------------------------------------------------------------
# before / after comparison
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class RunSummary:
    hall: Optional[HallResult] = None
    wl: Optional[WlParams] = None

    def quantity(self, name) -> Optional[Measurement]:
        if name in ("n", "mu"):
            return getattr(self.hall, name) if self.hall is not None else None
        if name == "L":
            if self.wl is not None and self.wl.L is not None:
                return self.wl.L
            return self.hall.L if self.hall is not None else None
        return getattr(self.wl, name) if self.wl is not None else None


COMPARED = (("n", "cm^-2"), ("mu", "cm^2/(V s)"), ("L", "nm"), ("L_phi", "nm"),
            ("gamma", "T^-2"), ("p", "1"), ("t", "nm"))


@dataclass(frozen=True)
class QuantityComparison:
    name: str
    unit: str
    before: Measurement
    after: Measurement
    difference: float
    combined_error: float
    z: float
    consistent: bool


@dataclass(frozen=True)
class ComparisonReport:
    k: float
    entries: tuple
    gaps: tuple  # quantities missing from one or both runs
    thickness_difference_angstrom: Optional[float] = None
    thickness_precision_angstrom: float = 0.2

    @property
    def consistent(self):
        return all(e.consistent for e in self.entries)

    def entry(self, name) -> QuantityComparison:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    @property
    def z_scores(self):
        return {e.name: e.z for e in self.entries}

    def verdict(self):
        bad = [e.name for e in self.entries if not e.consistent]
        state = "unchanged" if not bad else "changed: " + ", ".join(bad)
        gaps = f" (missing: {', '.join(self.gaps)})" if self.gaps else ""
        return f"{state} within {self.k:g} sigma{gaps}"


def _summary(run) -> RunSummary:
    if isinstance(run, RunSummary):
        return run
    if isinstance(run, Mapping):
        return RunSummary(run.get("hall"), run.get("wl"))
    raise DomainError("runs must be RunSummary or mappings with 'hall' / 'wl'")


def compare_runs(before, after, k=2.0) -> ComparisonReport:
    """Per-quantity difference, combined standard error, |z| and a
    within-k-sigma verdict.  Quantities missing from either run are listed
    as gaps rather than failing the comparison."""
    if not k > 0:
        raise DomainError("k must be positive")
    b_run, a_run = _summary(before), _summary(after)
    entries, gaps = [], []
    for name, unit in COMPARED:
        b, a = b_run.quantity(name), a_run.quantity(name)
        if b is None or a is None:
            gaps.append(name)
            continue
        diff = a.value - b.value
        err = math.hypot(a.error, b.error)
        if err > 0:
            z = abs(diff) / err
        else:
            z = 0.0 if diff == 0 else math.inf
        entries.append(QuantityComparison(name, unit, b, a, diff, err, z, z < k))
    dt = None
    if "t" not in gaps:
        dt = abs(a_run.quantity("t").value - b_run.quantity("t").value) * 10.0
    return ComparisonReport(float(k), tuple(entries), tuple(gaps), dt)
