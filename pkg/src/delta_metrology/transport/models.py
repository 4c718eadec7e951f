"""Weak-localization magnetoconductance of a two-dimensional conductor.

All conductances are sheet values in siemens.  Lengths enter in nm and
fields in tesla; everything is converted to SI internally.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .. import kernels
from ..core import CONSTANTS, Measurement
from ..errors import DomainError

NM = 1e-9

# e^2 / (2 pi^2 hbar), the weak-localization conductance prefactor
SIGMA_0 = CONSTANTS.e**2 / (2.0 * math.pi**2 * CONSTANTS.hbar)


def _poles(x):
    return (x <= 0) & (x == np.floor(x))


def digamma(x):
    """psi(x) for real x; raises DomainError at 0, -1, -2, ..."""
    arr = np.asarray(x, dtype=float)
    if np.any(_poles(arr)):
        raise DomainError("digamma has poles at non-positive integers")
    out = kernels.psi(np.atleast_1d(arr).ravel()).reshape(arr.shape)
    return float(out) if out.ndim == 0 else out


def trigamma(x):
    arr = np.asarray(x, dtype=float)
    if np.any(_poles(arr)):
        raise DomainError("trigamma has poles at non-positive integers")
    out = kernels.trigamma(np.atleast_1d(arr).ravel()).reshape(arr.shape)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class CharacteristicFields:
    B_phi: float  # T, phase breaking
    B_L: float  # T, elastic
    sigma_0: float = SIGMA_0  # S

    @property
    def log_ratio(self):
        """ln(B_L / B_phi) = ln(2 L_phi^2 / L^2), the high-field limit in sigma_0."""
        return math.log(self.B_L / self.B_phi)


def phase_field(L_phi_nm):
    return CONSTANTS.hbar / (4.0 * CONSTANTS.e * (L_phi_nm * NM) ** 2)


def elastic_field(L_nm):
    return CONSTANTS.hbar / (2.0 * CONSTANTS.e * (L_nm * NM) ** 2)


def characteristic_fields(L_nm, L_phi_nm) -> CharacteristicFields:
    if not (L_nm > 0 and L_phi_nm > 0):
        raise DomainError("mean free path and coherence length must be positive")
    return CharacteristicFields(phase_field(L_phi_nm), elastic_field(L_nm))


def _field_array(B):
    b = np.asarray(B, dtype=float)
    if np.any(~np.isfinite(b)):
        raise DomainError("fields must be finite")
    if np.any(b < 0):
        raise DomainError("field magnitudes must be >= 0")
    return b


def _shaped(values, like):
    out = values.reshape(like.shape)
    return float(out) if out.ndim == 0 else out


def hln_reduced(B, L_nm, L_phi_nm):
    """Perpendicular magnetoconductance in units of sigma_0 together with its
    derivatives with respect to ln L and ln L_phi (arrays over B)."""
    fields = characteristic_fields(L_nm, L_phi_nm)
    b = np.ascontiguousarray(np.atleast_1d(_field_array(B)).ravel())
    return kernels.hln(b, fields.B_phi, fields.B_L)


def delta_sigma_perp(B_perp, L_nm, L_phi_nm):
    """Conductance change (S) for a field normal to the layer.

    psi(1/2 + B_phi/B) - psi(1/2 + B_L/B) + ln(2 L_phi^2 / L^2), times
    sigma_0; the B -> 0 limit is 0 and B -> inf gives sigma_0 ln(2 L_phi^2/L^2).
    """
    b = _field_array(B_perp)
    f, _, _ = hln_reduced(b, L_nm, L_phi_nm)
    return _shaped(SIGMA_0 * f, b)


def delta_sigma_parallel(B_par, gamma):
    """sigma_0 ln(1 + gamma B^2) for an in-plane field (gamma in T^-2)."""
    if gamma < 0:
        raise DomainError("gamma must be >= 0")
    b = _field_array(B_par)
    return _shaped(SIGMA_0 * np.log1p(gamma * np.atleast_1d(b) ** 2), b)


def geometric_split(B, angle_deg):
    """Out-of-plane and in-plane components of a field tilted ``angle_deg``
    away from the layer plane: (B sin a, B cos a)."""
    ang = np.asarray(angle_deg, dtype=float)
    a = np.radians(ang)
    # exact zeros at the endpoints so 0 and 90 degrees reduce to one orientation
    s = np.where(ang == 0.0, 0.0, np.where(ang == 90.0, 1.0, np.abs(np.sin(a))))
    c = np.where(ang == 90.0, 0.0, np.where(ang == 0.0, 1.0, np.abs(np.cos(a))))
    return B * s, B * c


def delta_sigma_tilt(B, angle_deg, L_nm, L_phi_nm, gamma, p,
                     split: Callable = geometric_split):
    """Tilted-field conductance change combining both orientations,
    (perp(B_perp)^p + par(B_par)^p)^(1/p).

    ``angle_deg`` is measured from the layer plane (0 = in-plane, 90 =
    normal).  ``split`` maps (B, angle) to the (B_perp, B_par) pair that
    feeds the two single-orientation responses.
    """
    if not p > 0:
        raise DomainError("tilt exponent p must be positive")
    b = _field_array(B)
    ang = np.asarray(angle_deg, dtype=float)
    if np.any((ang < 0) | (ang > 90)):
        raise DomainError("angle must lie in [0, 90] degrees")
    b, ang = np.broadcast_arrays(b, ang)
    b_perp, b_par = split(b, ang)
    perp = np.atleast_1d(delta_sigma_perp(b_perp, L_nm, L_phi_nm))
    par = np.atleast_1d(delta_sigma_parallel(b_par, gamma))
    return _shaped(combine_orientations(perp, par, p), b)


def combine_orientations(perp, par, p):
    """(perp^p + par^p)^(1/p); when one component is exactly zero the other
    is returned unchanged (including a rounding-level negative value)."""
    perp_in = np.asarray(perp, dtype=float)
    par_in = np.asarray(par, dtype=float)
    perp, par = np.abs(perp_in), np.abs(par_in)
    big = np.maximum(perp, par)
    safe = np.where(big > 0, big, 1.0)
    # factor out the larger term so p up to ~1e3 cannot overflow
    inner = (perp / safe) ** p + (par / safe) ** p
    out = np.where(big > 0, safe * inner ** (1.0 / p), 0.0)
    out = np.where(par_in == 0.0, perp_in, out)
    return np.where(perp_in == 0.0, par_in, out)


def combine_orientations_dp(perp, par, p):
    """d/dp of ``combine_orientations``."""
    perp = np.abs(np.asarray(perp, dtype=float))
    par = np.abs(np.asarray(par, dtype=float))
    big = np.maximum(perp, par)
    safe = np.where(big > 0, big, 1.0)
    u = perp / safe
    v = par / safe
    with np.errstate(divide="ignore", invalid="ignore"):
        up = u**p
        vp = v**p
        s = up + vp
        ulog = np.where(u > 0, up * np.log(np.where(u > 0, u, 1.0)), 0.0)
        vlog = np.where(v > 0, vp * np.log(np.where(v > 0, v, 1.0)), 0.0)
        dlog = -np.log(s) / p**2 + (ulog + vlog) / (p * s)
    m = safe * s ** (1.0 / p)
    return np.where(big > 0, m * dlog, 0.0)


@dataclass(frozen=True)
class WlParams:
    """Weak-localization parameter set; lengths in nm, gamma in T^-2."""

    L: Optional[Measurement] = None
    L_phi: Optional[Measurement] = None
    gamma: Optional[Measurement] = None
    p: Optional[Measurement] = None
    t: Optional[Measurement] = None

    def __post_init__(self):
        for name in ("L", "L_phi", "gamma", "p", "t"):
            m = getattr(self, name)
            if m is not None and not isinstance(m, Measurement):
                value, error = (m, 0.0) if np.ndim(m) == 0 else m
                m = Measurement(float(value), float(error))
                object.__setattr__(self, name, m)
            if m is None:
                continue
            strict = name in ("L", "L_phi", "p")
            if (m.value <= 0 if strict else m.value < 0) or not m.error >= 0:
                raise DomainError(f"WlParams.{name} = {m} violates its sign constraint")

    @property
    def valid(self):
        """Weak localization needs L_phi > L; None when either is missing."""
        if self.L is None or self.L_phi is None:
            return None
        return self.L_phi.value > self.L.value
