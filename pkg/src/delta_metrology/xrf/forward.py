"""Forward model: expected and Poisson-sampled spectra for a device layout."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import shapely

from .. import kernels
from ..core import CONSTANTS, BeamConfig, DetectorConfig, ScanGrid, Spectrum, as_pitch
from ..errors import ConfigError, DomainError, RangeError
from .lines import ElementTemplate, default_templates


def compton_energy(photon_energy, scatter_angle):
    """Compton-scattered photon energy (keV) for a scatter angle in degrees."""
    cos_t = math.cos(math.radians(scatter_angle))
    return photon_energy / (1.0 + photon_energy / CONSTANTS.m_e_c2 * (1.0 - cos_t))


def line_shape(energies, areas, detector: DetectorConfig, edges=None):
    """Bin-integrated Gaussians with the detector's energy-dependent width."""
    edges = detector.bin_edges() if edges is None else edges
    energies = np.atleast_1d(np.asarray(energies, dtype=float))
    if energies.size == 0:
        return np.zeros(edges.size - 1)
    return kernels.render_lines(edges, energies, areas, detector.sigma(energies))


def element_scale(template: ElementTemplate, density, beam: BeamConfig,
                  detector: DetectorConfig):
    """Counts emitted into the detector per unit line share."""
    return (density * template.sensitivity * beam.flux * beam.dwell
            * detector.solid_angle_fraction)


def synth_element_peaks(template: ElementTemplate, density, beam: BeamConfig,
                        detector: DetectorConfig) -> Spectrum:
    """Noise-free spectrum of one element at the given areal density (cm^-2).

    Lines whose absorption edge lies above the beam energy contribute nothing.
    """
    if density < 0:
        raise DomainError("density must be non-negative")
    scale = element_scale(template, density, beam, detector)
    lines = template.excited_lines(beam.photon_energy)
    energies = [l.energy for l in lines]
    areas = [scale * l.relative_intensity * l.transmission for l in lines]
    return Spectrum(detector.bin_edges(), line_shape(energies, areas, detector))


def synth_scatter_peaks(beam: BeamConfig, elastic_amp, compton_amp, scatter_angle,
                        detector: DetectorConfig) -> Spectrum:
    if elastic_amp < 0 or compton_amp < 0:
        raise DomainError("scatter amplitudes must be non-negative")
    if not 0 < scatter_angle < 180:
        raise DomainError("scatter_angle must lie in (0, 180) degrees")
    e0 = beam.photon_energy
    centers = [e0, compton_energy(e0, scatter_angle)]
    counts = line_shape(centers, [elastic_amp, compton_amp], detector)
    return Spectrum(detector.bin_edges(), counts)


@dataclass(frozen=True)
class Substrate:
    """Scatter and continuum response of the sample per incident photon.

    ``continuum`` holds polynomial coefficients in powers of E (keV) giving
    detected counts per keV per incident photon; negative values are clipped.
    """

    elastic_yield: float = 0.0
    compton_yield: float = 0.0
    scatter_angle: float = 90.0
    continuum: tuple = ()

    def __post_init__(self):
        if self.elastic_yield < 0 or self.compton_yield < 0:
            raise ConfigError("scatter yields must be non-negative")
        if not 0 < self.scatter_angle < 180:
            raise ConfigError("scatter_angle must lie in (0, 180)")
        object.__setattr__(self, "continuum", tuple(float(c) for c in self.continuum))

    def expected(self, beam: BeamConfig, detector: DetectorConfig):
        photons = beam.flux * beam.dwell
        out = synth_scatter_peaks(
            beam, self.elastic_yield * photons, self.compton_yield * photons,
            self.scatter_angle, detector,
        ).counts.copy()
        if self.continuum:
            edges = detector.bin_edges()
            centers = 0.5 * (edges[1:] + edges[:-1])
            per_kev = np.polynomial.polynomial.polyval(centers, self.continuum)
            out += np.clip(per_kev, 0.0, None) * np.diff(edges) * photons
        return out


@dataclass(frozen=True)
class Region:
    """Polygon (um coordinates) of constant areal density of one element."""

    element: str
    density: float  # cm^-2
    vertices: tuple
    name: str = ""

    def __post_init__(self):
        if self.density < 0:
            raise ConfigError(f"region {self.name or self.element}: density must be >= 0")
        verts = tuple((float(x), float(y)) for x, y in self.vertices)
        if len(verts) < 3:
            raise ConfigError("region polygon needs at least three vertices")
        object.__setattr__(self, "vertices", verts)

    @property
    def polygon(self):
        return shapely.Polygon(self.vertices)

    @classmethod
    def rect(cls, element, density, x0, y0, x1, y1, name=""):
        return cls(element, density, ((x0, y0), (x1, y0), (x1, y1), (x0, y1)), name)


@dataclass(frozen=True, eq=False)
class DeviceLayout:
    """Areal-density map: constant-density polygons over a uniform background.

    Overlapping regions add.  ``bounds`` is (xmin, ymin, xmax, ymax) in um.
    """

    regions: tuple
    bounds: tuple
    background: Mapping = field(default_factory=dict)
    templates: Mapping = field(default_factory=dict)
    substrate: Substrate = Substrate()

    def __post_init__(self):
        object.__setattr__(self, "regions", tuple(self.regions))
        object.__setattr__(self, "bounds", tuple(float(b) for b in self.bounds))
        object.__setattr__(self, "background", dict(self.background))
        xmin, ymin, xmax, ymax = self.bounds
        if not (xmax > xmin and ymax > ymin):
            raise ConfigError("layout bounds must have positive extent")
        for el, d in self.background.items():
            if d < 0:
                raise ConfigError(f"background density of {el} must be >= 0")
        box = shapely.box(*self.bounds)
        for r in self.regions:
            if not r.polygon.buffer(-1e-9).within(box):
                raise ConfigError(f"region {r.name or r.element} extends outside the layout bounds")
        templates = dict(self.templates)
        missing = [el for el in self.elements if el not in templates]
        if missing:
            templates.update(default_templates(missing))
        object.__setattr__(self, "templates", templates)

    @property
    def elements(self):
        seen = []
        for el in [r.element for r in self.regions] + list(self.background):
            if el not in seen:
                seen.append(el)
        return seen

    def contains(self, x, y):
        xmin, ymin, xmax, ymax = self.bounds
        return xmin <= x <= xmax and ymin <= y <= ymax

    def spot_densities(self, xs, ys, spot_width, spot_height):
        """Spot-averaged density of each element at spot centres (xs, ys).

        The spot is a uniform rectangle; returns {element: array}.
        """
        xs = np.atleast_1d(np.asarray(xs, dtype=float))
        ys = np.atleast_1d(np.asarray(ys, dtype=float))
        hw, hh = 0.5 * spot_width, 0.5 * spot_height
        boxes = shapely.box(xs - hw, ys - hh, xs + hw, ys + hh)
        spot_area = spot_width * spot_height
        out = {el: np.full(xs.shape, float(self.background.get(el, 0.0)))
               for el in self.elements}
        for r in self.regions:
            if r.density == 0:
                continue
            overlap = shapely.area(shapely.intersection(boxes, r.polygon))
            out[r.element] = out[r.element] + r.density * overlap / spot_area
        return out


def unit_templates(layout: DeviceLayout, beam: BeamConfig, detector: DetectorConfig):
    """Expected counts per bin for 1 cm^-2 of each layout element."""
    return {
        el: synth_element_peaks(layout.templates[el], 1.0, beam, detector).counts
        for el in layout.elements
    }


def _check_position(layout, x, y):
    if not layout.contains(x, y):
        raise RangeError(f"position ({x}, {y}) um outside layout bounds {layout.bounds}")


def expected_pixel(layout: DeviceLayout, position, beam: BeamConfig,
                   detector: DetectorConfig) -> np.ndarray:
    x, y = position
    _check_position(layout, x, y)
    dens = layout.spot_densities(x, y, beam.spot_width, beam.spot_height)
    units = unit_templates(layout, beam, detector)
    out = layout.substrate.expected(beam, detector)
    for el, d in dens.items():
        out = out + d[0] * units[el]
    return out


def simulate_pixel(layout: DeviceLayout, position, beam: BeamConfig,
                   detector: DetectorConfig, seed) -> Spectrum:
    """Poisson-sampled spectrum at one beam position.

    ``seed`` is anything ``numpy.random.default_rng`` accepts; scans use
    ``(seed, iy, ix)`` per pixel.
    """
    lam = expected_pixel(layout, position, beam, detector)
    rng = np.random.default_rng(seed)
    return Spectrum(detector.bin_edges(), rng.poisson(lam).astype(float))


def simulate_scan(layout: DeviceLayout, beam: BeamConfig, detector: DetectorConfig,
                  nx, ny, pitch, seed, origin=None, noise=True) -> ScanGrid:
    """Raster of ``simulate_pixel`` results on a regular lattice.

    Pixel (ix, iy) sits at ``origin + (ix * pitch_x, iy * pitch_y)``; origin
    defaults to the lower-left corner of the layout bounds.
    """
    nx, ny = int(nx), int(ny)
    if nx < 1 or ny < 1:
        raise ConfigError("scan needs nx, ny >= 1")
    px, py = as_pitch(pitch)
    if origin is None:
        origin = (layout.bounds[0], layout.bounds[1])
    x0, y0 = float(origin[0]), float(origin[1])
    xs = x0 + px * np.arange(nx)
    ys = y0 + py * np.arange(ny)
    for x, y in ((xs[0], ys[0]), (xs[-1], ys[-1])):
        _check_position(layout, x, y)
    gx, gy = np.meshgrid(xs, ys)
    dens = layout.spot_densities(gx.ravel(), gy.ravel(), beam.spot_width, beam.spot_height)
    units = unit_templates(layout, beam, detector)
    base = layout.substrate.expected(beam, detector)
    lam = np.tile(base, (nx * ny, 1))
    for el, d in dens.items():
        lam += d[:, None] * units[el][None, :]
    if noise:
        counts = np.empty_like(lam)
        for k in range(nx * ny):
            iy, ix = divmod(k, nx)
            counts[k] = np.random.default_rng((seed, iy, ix)).poisson(lam[k])
    else:
        counts = lam
    return ScanGrid(
        nx=nx, ny=ny, pitch_x=px, pitch_y=py, bin_edges=detector.bin_edges(),
        counts=counts.reshape(ny, nx, -1), beam=beam, detector=detector,
        origin=(x0, y0), seed=seed,
    )


@dataclass(frozen=True)
class DoseReport:
    fluence: float  # photons / nm^2, one dwell
    energy_density: float  # J / nm^3
    dose: float  # Gy
    photons_absorbed_per_atom: float
    accumulated_fluence: float  # photons / nm^2 including raster overlap
    overlap_factor: float

    def __post_init__(self):
        for k, v in self.__dict__.items():
            if not v >= 0:
                raise DomainError(f"{k} must be non-negative")


def dose_report(beam: BeamConfig, dwell_per_pixel, absorption, atom_cross_section,
                mass_density=2.329, pitch=None) -> DoseReport:
    """Exposure bookkeeping for one dwell.

    absorption: linear absorption coefficient of the host (1/um);
    atom_cross_section: effective per-atom absorption cross-section (nm^2);
    mass_density: host density (g/cm^3).  energy_density = fluence * E * mu
    and dose = energy_density / mass density.  With ``pitch`` (um) the
    accumulated fluence counts every raster position whose spot covers a point.
    """
    if dwell_per_pixel < 0:
        raise DomainError("dwell must be non-negative")
    for name, v in (("absorption", absorption), ("atom_cross_section", atom_cross_section),
                    ("mass_density", mass_density)):
        if not v > 0:
            raise DomainError(f"{name} must be positive")
    spot_nm2 = beam.spot_area_um2 * 1e6
    fluence = beam.flux * dwell_per_pixel / spot_nm2
    photon_j = beam.photon_energy * CONSTANTS.kev_to_joule
    energy_density = fluence * photon_j * absorption * 1e-3  # 1/um -> 1/nm
    dose = energy_density * 1e27 / (mass_density * 1e3)  # J/m^3 over kg/m^3
    overlap = 1.0
    if pitch is not None:
        px, py = as_pitch(pitch)
        overlap = max(1.0, beam.spot_width / px) * max(1.0, beam.spot_height / py)
    return DoseReport(
        fluence=fluence,
        energy_density=energy_density,
        dose=dose,
        photons_absorbed_per_atom=fluence * atom_cross_section,
        accumulated_fluence=fluence * overlap,
        overlap_factor=overlap,
    )
