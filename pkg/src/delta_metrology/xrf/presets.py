"""Beamline, detector and device presets for the two As Hall-bar devices.

Geometry (um): a 200 x 20 Hall bar along x at y = 50..70 inside a
240 x 120 field, three Hall-lead pairs (6 um wide) at x = 70, 120, 170 and
two current leads at the bar ends, each lead ending in an Al contact pad
that also carries a trace of Fe.  Ar (air path), Si (substrate) and Au
(sample holder) are uniform backgrounds.
"""
from __future__ import annotations

from ..core import BeamConfig, DetectorConfig
from ..errors import ConfigError
from .forward import DeviceLayout, Region, Substrate
from .lines import default_templates

BOUNDS = (0.0, 0.0, 240.0, 120.0)
BAR = (20.0, 50.0, 220.0, 70.0)  # x0, y0, x1, y1
HALL_LEADS_X = (70.0, 120.0, 170.0)
LEAD_WIDTH = 6.0
PAD = 16.0

AL_PAD_DENSITY = 6.0e15
FE_PAD_DENSITY = 1.0e13
DEVICE1_AS = 1.4e14
DEVICE2_AS = 5.6e12

# Effective As K-shell sensitivity (cm^2).  Tabulated photoabsorption times
# K fluorescence yield gives ~1.0e-20; the traces of both devices (SNR ~7 at
# 1e10 ph/s, ~2 at 1e11 ph/s with a flux-proportional background) need
# ~58 detected As counts per 200 ms pixel on device 1, i.e. ~2.1e-20.
AS_EFFECTIVE_SENSITIVITY = 2.15e-20

# Fraction of low-energy fluorescence surviving the air/He path, detector
# window and dead layer.
LOW_ENERGY_TRANSMISSION = {"Al": 0.05, "Si": 0.08, "Au": 0.15, "Ar": 0.5}

BACKGROUND = {"Si": 1.5e19, "Ar": 2.0e16, "Au": 2.0e15}

# detected scatter counts per incident photon and continuum in counts/keV
# per incident photon (polynomial in E / keV)
SUBSTRATE = Substrate(
    elastic_yield=6.0e-7,
    compton_yield=4.0e-7,
    scatter_angle=90.0,
    continuum=(3.0e-9, 6.0e-10),
)


def device_detector() -> DetectorConfig:
    """SDD with 50 mm^2 active area at 2 cm (Omega ~ 0.04 pi)."""
    return DetectorConfig(distance_d=2.0, active_area=50.0, energy_bins=2048,
                          bin_width=0.01, noise_fwhm=0.06, fano_factor=0.115,
                          pair_energy=0.00385)


def device_beam(device=1, dwell=0.2) -> BeamConfig:
    """11.88 keV beam: 1x1 um at 1e10 ph/s (device 1) or 3x1 um at 1e11 ph/s
    (device 2, 3 um along x)."""
    if device == 1:
        return BeamConfig(11.88, 1e10, 1.0, 1.0, 1e-4, dwell)
    if device == 2:
        return BeamConfig(11.88, 1e11, 3.0, 1.0, 1e-4, dwell)
    raise ConfigError(f"unknown device {device!r} (1 or 2)")


def device_templates(symbols=("As", "Fe", "Al", "Ar", "Au", "Si")) -> dict:
    base = default_templates(symbols)
    out = {}
    for sym, t in base.items():
        if sym in LOW_ENERGY_TRANSMISSION:
            if sym == "Au":
                t = t.with_transmission(LOW_ENERGY_TRANSMISSION[sym], labels=("Ma", "Mb"))
            else:
                t = t.with_transmission(LOW_ENERGY_TRANSMISSION[sym])
        if sym == "As":
            t = t.with_sensitivity(AS_EFFECTIVE_SENSITIVITY)
        out[sym] = t
    return out


def _pad(cx, cy, name):
    h = PAD / 2
    return [
        Region.rect("Al", AL_PAD_DENSITY, cx - h, cy - h, cx + h, cy + h, name + "-Al"),
        Region.rect("Fe", FE_PAD_DENSITY, cx - h, cy - h, cx + h, cy + h, name + "-Fe"),
    ]


def hall_bar_regions(as_density):
    x0, y0, x1, y1 = BAR
    regions = [Region.rect("As", as_density, x0, y0, x1, y1, "bar")]
    hw = LEAD_WIDTH / 2
    pad_low, pad_high = 14.0, 106.0
    for i, x in enumerate(HALL_LEADS_X):
        regions.append(Region.rect("As", as_density, x - hw, pad_low, x + hw, y0, f"lead{i}-s"))
        regions.append(Region.rect("As", as_density, x - hw, y1, x + hw, pad_high, f"lead{i}-n"))
        regions += _pad(x, pad_low, f"pad{i}-s")
        regions += _pad(x, pad_high, f"pad{i}-n")
    # current leads at the bar ends
    yc = 0.5 * (y0 + y1)
    regions.append(Region.rect("As", as_density, 8.0, yc - hw, x0, yc + hw, "source"))
    regions.append(Region.rect("As", as_density, x1, yc - hw, 232.0, yc + hw, "drain"))
    regions += _pad(9.0, yc, "pad-source")
    regions += _pad(231.0, yc, "pad-drain")
    return regions


def hall_bar_layout(as_density=DEVICE1_AS, templates=None, background=None,
                    substrate=SUBSTRATE) -> DeviceLayout:
    templates = device_templates() if templates is None else templates
    background = dict(BACKGROUND if background is None else background)
    return DeviceLayout(regions=tuple(hall_bar_regions(as_density)), bounds=BOUNDS,
                        background=background, templates=templates, substrate=substrate)


def reference_layout(as_density=1.0e15, templates=None, substrate=SUBSTRATE,
                     size=20.0) -> DeviceLayout:
    """Uniform As film of known areal density (calibration standard)."""
    templates = device_templates() if templates is None else templates
    background = dict(BACKGROUND)
    background["As"] = as_density
    return DeviceLayout(regions=(), bounds=(0.0, 0.0, size, size), background=background,
                        templates=templates, substrate=substrate)


def bar_interior(margin=2.0):
    """Rectangle (x0, y0, x1, y1) inside the bar, clear of edges and leads by
    ``margin`` um in y (leads only join at the bar edges)."""
    x0, y0, x1, y1 = BAR
    return (x0 + margin, y0 + margin, x1 - margin, y1 - margin)
