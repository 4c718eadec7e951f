"""Shared domain types, physical constants and unit conversions.

Units at API boundaries: energies in keV, beam sizes in um, detector
distance in cm, detector area in mm^2, areal densities in cm^-2.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DomainError, RangeError


@dataclass(frozen=True)
class PhysicalConstants:
    """CODATA 2018 values (SI unless noted)."""

    e: float = 1.602176634e-19  # C
    hbar: float = 1.054571817e-34  # J s
    m_e_c2: float = 510.99895000  # keV
    avogadro: float = 6.02214076e23  # 1/mol
    kev_to_joule: float = 1.602176634e-16

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not value > 0:
                raise DomainError(f"constant {name} must be positive")


CONSTANTS = PhysicalConstants()


@dataclass(frozen=True)
class Measurement:
    """A value with a one-sigma standard error."""

    value: float
    error: float = 0.0

    @property
    def rel(self):
        if self.value == 0:
            return math.inf if self.error else 0.0
        return abs(self.error / self.value)

    def __iter__(self):
        yield self.value
        yield self.error

    def __str__(self):
        return f"{self.value:.6g} +/- {self.error:.2g}"


def as_measurement(x) -> Measurement:
    """Accept a Measurement, a (value, error) pair or a bare number."""
    if isinstance(x, Measurement):
        return x
    if np.ndim(x) == 0:
        return Measurement(float(x), 0.0)
    value, error = x
    return Measurement(float(value), float(error))


def _positive(name, value):
    if not (value > 0 and math.isfinite(value)):
        raise ConfigError(f"{name} must be positive and finite, got {value!r}")


@dataclass(frozen=True)
class BeamConfig:
    photon_energy: float = 11.88  # keV
    flux: float = 1e10  # photons/s
    spot_width: float = 1.0  # um
    spot_height: float = 1.0  # um
    energy_resolution: float = 1e-4  # dE/E
    dwell: float = 0.2  # s

    def __post_init__(self):
        _positive("photon_energy", self.photon_energy)
        _positive("flux", self.flux)
        _positive("spot_width", self.spot_width)
        _positive("spot_height", self.spot_height)
        _positive("dwell", self.dwell)
        if not 0 < self.energy_resolution < 1:
            raise ConfigError("energy_resolution must lie in (0, 1)")

    @property
    def spot_area_um2(self):
        return self.spot_width * self.spot_height

    @property
    def photons_per_dwell(self):
        return self.flux * self.dwell


@dataclass(frozen=True)
class DetectorConfig:
    distance_d: float = 2.0  # cm
    active_area: float = 50.0  # mm^2
    energy_bins: int = 2048
    bin_width: float = 0.01  # keV
    noise_fwhm: float = 0.06  # keV
    fano_factor: float = 0.115
    pair_energy: float = 0.00385  # keV per electron-hole pair in Si
    first_edge: float = 0.0  # keV

    def __post_init__(self):
        _positive("distance_d", self.distance_d)
        _positive("active_area", self.active_area)
        _positive("bin_width", self.bin_width)
        if int(self.energy_bins) != self.energy_bins or self.energy_bins < 2:
            raise ConfigError("energy_bins must be an integer >= 2")
        if self.noise_fwhm < 0 or self.fano_factor < 0 or self.pair_energy < 0:
            raise ConfigError("detector noise terms must be non-negative")

    @property
    def radius_mm(self):
        return math.sqrt(self.active_area / math.pi)

    @property
    def solid_angle(self):
        """Acceptance in sr: 2 pi (1 - d / sqrt(d^2 + r^2))."""
        d = self.distance_d
        r = self.radius_mm / 10.0
        return 2.0 * math.pi * (1.0 - d / math.hypot(d, r))

    @property
    def solid_angle_fraction(self):
        return self.solid_angle / (4.0 * math.pi)

    def bin_edges(self):
        return self.first_edge + self.bin_width * np.arange(self.energy_bins + 1)

    def fwhm(self, energy):
        """Energy resolution (keV FWHM) of the detector at ``energy`` keV."""
        energy = np.asarray(energy, dtype=float)
        stat = 2.355**2 * self.fano_factor * self.pair_energy * energy
        return np.sqrt(self.noise_fwhm**2 + stat)

    def sigma(self, energy):
        return self.fwhm(energy) / (2.0 * math.sqrt(2.0 * math.log(2.0)))


def _frozen(a):
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Binned energy-dispersive spectrum (edges in keV, counts per bin)."""

    bin_edges: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        edges = _frozen(self.bin_edges)
        counts = _frozen(self.counts)
        if edges.ndim != 1 or counts.ndim != 1 or edges.size != counts.size + 1:
            raise DomainError("Spectrum needs len(bin_edges) == len(counts) + 1")
        if counts.size < 1:
            raise DomainError("Spectrum must have at least one bin")
        if not np.all(np.diff(edges) > 0):
            raise DomainError("bin_edges must be strictly increasing")
        if not np.all(np.isfinite(counts)) or np.any(counts < 0):
            raise DomainError("counts must be finite and non-negative")
        object.__setattr__(self, "bin_edges", edges)
        object.__setattr__(self, "counts", counts)

    @classmethod
    def zeros(cls, detector: DetectorConfig):
        return cls(detector.bin_edges(), np.zeros(detector.energy_bins))

    @property
    def centers(self):
        return 0.5 * (self.bin_edges[1:] + self.bin_edges[:-1])

    @property
    def n_bins(self):
        return self.counts.size

    @property
    def total(self):
        return float(self.counts.sum())

    def __add__(self, other):
        if not isinstance(other, Spectrum):
            return NotImplemented
        if not np.array_equal(self.bin_edges, other.bin_edges):
            raise DomainError("cannot add spectra with different binning")
        return Spectrum(self.bin_edges, self.counts + other.counts)

    def scaled(self, k):
        return Spectrum(self.bin_edges, self.counts * k)

    def __eq__(self, other):
        if not isinstance(other, Spectrum):
            return NotImplemented
        return np.array_equal(self.bin_edges, other.bin_edges) and np.array_equal(
            self.counts, other.counts
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class ScanGrid:
    """Raster of spectra sharing one energy axis.

    ``counts`` has shape (ny, nx, n_bins); pixel index k = iy * nx + ix.
    """

    nx: int
    ny: int
    pitch_x: float  # um
    pitch_y: float  # um
    bin_edges: np.ndarray
    counts: np.ndarray
    beam: BeamConfig
    detector: DetectorConfig
    origin: tuple = (0.0, 0.0)  # um, position of pixel (0, 0)
    seed: Optional[int] = None

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ConfigError("scan needs nx, ny >= 1")
        _positive("pitch_x", self.pitch_x)
        _positive("pitch_y", self.pitch_y)
        edges = _frozen(self.bin_edges)
        counts = _frozen(self.counts)
        if counts.shape != (self.ny, self.nx, edges.size - 1):
            raise DomainError(
                f"counts shape {counts.shape} does not match "
                f"({self.ny}, {self.nx}, {edges.size - 1})"
            )
        if np.any(counts < 0):
            raise DomainError("counts must be non-negative")
        object.__setattr__(self, "bin_edges", edges)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))

    @property
    def pixels(self):
        return [
            Spectrum(self.bin_edges, self.counts[iy, ix])
            for iy in range(self.ny)
            for ix in range(self.nx)
        ]

    def pixel(self, ix, iy):
        if not (0 <= ix < self.nx and 0 <= iy < self.ny):
            raise RangeError(f"pixel ({ix}, {iy}) outside {self.nx}x{self.ny} grid")
        return Spectrum(self.bin_edges, self.counts[iy, ix])

    def position(self, ix, iy):
        return (self.origin[0] + ix * self.pitch_x, self.origin[1] + iy * self.pitch_y)

    def x_positions(self):
        return self.origin[0] + self.pitch_x * np.arange(self.nx)

    def y_positions(self):
        return self.origin[1] + self.pitch_y * np.arange(self.ny)

    def summed(self, mask=None):
        c = self.counts if mask is None else self.counts[np.asarray(mask, bool)]
        return Spectrum(self.bin_edges, c.reshape(-1, c.shape[-1]).sum(axis=0))

    def fingerprint(self):
        return conditions_fingerprint(self.beam, self.detector)


@dataclass(frozen=True)
class ExternalReference:
    """Densities (cm^-2) and thickness (nm) measured by other techniques."""

    n_stm: Optional[Measurement] = None
    n_sims: Optional[Measurement] = None
    t_sims: Optional[Measurement] = None

    def __post_init__(self):
        for name in ("n_stm", "n_sims", "t_sims"):
            m = getattr(self, name)
            if m is None:
                continue
            if not isinstance(m, Measurement):
                m = Measurement(*m)
                object.__setattr__(self, name, m)
            if not m.value > 0 or m.error < 0:
                raise DomainError(f"{name} needs value > 0 and error >= 0")


def conditions_fingerprint(beam: BeamConfig, detector: DetectorConfig) -> str:
    """Stable short hash of the illumination and detection conditions."""
    payload = json.dumps(
        {"beam": asdict(beam), "detector": asdict(detector)}, sort_keys=True
    )
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def channel_to_energy(channel_index: int, detector: DetectorConfig) -> float:
    """Bin-centre energy (keV) of a detector channel."""
    i = int(channel_index)
    if i != channel_index or not 0 <= i < detector.energy_bins:
        raise RangeError(
            f"channel {channel_index} outside [0, {detector.energy_bins})"
        )
    return detector.first_edge + (i + 0.5) * detector.bin_width


# factor that turns a value in the given unit into cm^-2
_AREAL_TO_CM2 = {
    "cm-2": 1.0,
    "m-2": 1e-4,
    "mm-2": 1e2,
    "um-2": 1e8,
    "nm-2": 1e14,
}
_ALIASES = {"cm^-2": "cm-2", "m^-2": "m-2", "mm^-2": "mm-2", "um^-2": "um-2",
            "μm-2": "um-2", "μm^-2": "um-2", "nm^-2": "nm-2"}


def _unit(tag):
    tag = _ALIASES.get(tag, tag)
    if tag not in _AREAL_TO_CM2:
        raise ConfigError(f"unknown areal-density unit {tag!r}")
    return tag


def areal_density_convert(value, target, source="cm-2"):
    """Convert an areal density between cm^-2, m^-2, mm^-2, um^-2 and nm^-2."""
    src, dst = _unit(source), _unit(target)
    v = np.asarray(value, dtype=float)
    if np.any(v < 0):
        raise DomainError("areal density must be non-negative")
    out = v * (_AREAL_TO_CM2[src] / _AREAL_TO_CM2[dst])
    return float(out) if out.ndim == 0 else out


def as_pitch(pitch) -> tuple:
    if isinstance(pitch, Sequence) or isinstance(pitch, np.ndarray):
        px, py = (float(pitch[0]), float(pitch[1]))
    else:
        px = py = float(pitch)
    return px, py
