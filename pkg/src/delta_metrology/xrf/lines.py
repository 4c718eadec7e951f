"""Emission-line data and element templates.

Line energies are Bearden/Deslattes values in keV; relative intensities are
shares of the element's total emission (they sum to <= 1 per element).
Mass attenuation coefficients are total mu/rho at 11.88 keV in cm^2/g.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping

from ..core import CONSTANTS
from ..errors import ConfigError


@dataclass(frozen=True)
class EmissionLine:
    label: str
    energy: float  # keV
    relative_intensity: float
    edge_energy: float  # keV, absorption edge that feeds this line
    transmission: float = 1.0  # air/window/dead-layer losses on the way out

    def __post_init__(self):
        if not 0 < self.relative_intensity <= 1:
            raise ConfigError(f"line {self.label}: relative_intensity must be in (0, 1]")
        if not self.energy > 0 or not self.edge_energy > self.energy:
            raise ConfigError(f"line {self.label}: need 0 < energy < edge_energy")
        if not 0 <= self.transmission <= 1:
            raise ConfigError(f"line {self.label}: transmission must be in [0, 1]")

    def excited_by(self, beam_energy):
        return self.edge_energy <= beam_energy


@dataclass(frozen=True)
class ElementTemplate:
    """Lines of one element plus its effective fluorescence cross-section.

    ``sensitivity`` is in cm^2: fluorescence photons emitted into 4 pi per
    incident photon per (atom / cm^2) of areal density.  The spot area drops
    out, so expected counts are ``density * sensitivity * flux * dwell *
    Omega / 4 pi`` times each line's share.
    """

    symbol: str
    lines: tuple
    sensitivity: float
    mass_attenuation: float = float("nan")
    molar_mass: float = float("nan")
    fluorescence_yield: float = float("nan")

    def __post_init__(self):
        object.__setattr__(self, "lines", tuple(self.lines))
        if not self.lines:
            raise ConfigError(f"{self.symbol}: template needs at least one line")
        if not self.sensitivity > 0:
            raise ConfigError(f"{self.symbol}: sensitivity must be positive")
        total = sum(line.relative_intensity for line in self.lines)
        if total > 1 + 1e-9:
            raise ConfigError(f"{self.symbol}: relative intensities sum to {total:.4f} > 1")

    def excited_lines(self, beam_energy):
        return [line for line in self.lines if line.excited_by(beam_energy)]

    def detected_fraction(self, beam_energy):
        """Sum of share x transmission over the lines the beam can excite."""
        return sum(l.relative_intensity * l.transmission for l in self.excited_lines(beam_energy))

    def with_sensitivity(self, sensitivity):
        return replace(self, sensitivity=float(sensitivity))

    def with_transmission(self, transmission, labels=None):
        """Copy with ``transmission`` applied to the named lines (all if None)."""
        lines = tuple(
            replace(l, transmission=float(transmission))
            if labels is None or l.label in labels else l
            for l in self.lines
        )
        return replace(self, lines=lines)


def sensitivity_from_attenuation(mass_attenuation, molar_mass, fluorescence_yield):
    """Per-atom cross-section (cm^2) times fluorescence yield."""
    return mass_attenuation * molar_mass / CONSTANTS.avogadro * fluorescence_yield


# symbol: (molar mass g/mol, mu/rho @ 11.88 keV cm^2/g, fluorescence yield,
#          [(label, energy keV, share, edge keV), ...])
_TABLE = {
    "Al": (26.9815, 14.76, 0.033, [
        ("Ka", 1.4864, 0.888, 1.5596),
        ("Kb", 1.5570, 0.112, 1.5596),
    ]),
    "Si": (28.0855, 20.48, 0.043, [
        ("Ka", 1.7396, 0.887, 1.8389),
        ("Kb", 1.8370, 0.113, 1.8389),
    ]),
    "Ar": (39.948, 38.72, 0.109, [
        ("Ka1", 2.9575, 0.588, 3.2059),
        ("Ka2", 2.9553, 0.295, 3.2059),
        ("Kb", 3.1901, 0.117, 3.2059),
    ]),
    "Fe": (55.845, 107.3, 0.351, [
        ("Ka1", 6.4052, 0.581, 7.1120),
        ("Ka2", 6.3921, 0.294, 7.1120),
        ("Kb", 7.0593, 0.125, 7.1120),
    ]),
    "As": (74.9216, 178.8, 0.549, [
        ("Ka1", 10.5434, 0.573, 11.8667),
        ("Ka2", 10.5079, 0.294, 11.8667),
        ("Kb1", 11.7258, 0.087, 11.8667),
        ("Kb3", 11.7208, 0.046, 11.8667),
    ]),
    "Au": (196.96657, 76.46, 0.026, [
        ("Ma", 2.1229, 0.200, 2.2057),
        ("Mb", 2.2047, 0.120, 2.2911),
        ("La1", 9.7133, 0.300, 11.9187),
        ("La2", 9.6280, 0.034, 11.9187),
        ("Lb1", 11.4423, 0.170, 13.7336),
        ("Lb2", 11.5847, 0.070, 11.9187),
        ("Lg1", 13.3817, 0.035, 13.7336),
        ("Ll", 8.4938, 0.015, 11.9187),
    ]),
}


def _build(symbol):
    molar, mu_rho, fyield, rows = _TABLE[symbol]
    lines = tuple(EmissionLine(lab, e, share, edge) for lab, e, share, edge in rows)
    return ElementTemplate(
        symbol=symbol,
        lines=lines,
        sensitivity=sensitivity_from_attenuation(mu_rho, molar, fyield),
        mass_attenuation=mu_rho,
        molar_mass=molar,
        fluorescence_yield=fyield,
    )


DEFAULT_ELEMENTS = tuple(_TABLE)


def default_templates(symbols=None) -> dict:
    """Templates from the embedded table, keyed by element symbol."""
    symbols = DEFAULT_ELEMENTS if symbols is None else symbols
    out = {}
    for s in symbols:
        if s not in _TABLE:
            raise ConfigError(f"no embedded line data for element {s!r}")
        out[s] = _build(s)
    return out


def merge_templates(base: Mapping, override: Mapping) -> dict:
    merged = dict(base)
    merged.update(override)
    return merged
