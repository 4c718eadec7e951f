"""Run configuration: one TOML file, units spelled out in every key name.

Example::

    seed = 7
    device = 1                      # 1 or 2: picks beam and As density presets

    [beam]
    dwell_s = 0.2
    flux_ph_per_s = 1e10

    [scan]
    nx = 80
    ny = 40
    pitch_um = 3.0

    [analysis]
    weighting = "model"

Every key left out falls back to a default, and the defaults that were used
are kept in ``RunConfig.defaults`` so reports can echo them.
"""
from __future__ import annotations

import hashlib
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from ..core import BeamConfig, DetectorConfig, Measurement
from ..errors import ConfigError, DomainError
from ..transport.fitting import L_GRID_NM, L_PHI_GRID_NM
from ..xrf import presets
from ..xrf.analysis import WEIGHTINGS, ScatterModel
from ..xrf.forward import DeviceLayout, Region
from ..xrf.lines import merge_templates

LAYOUT_PRESETS = ("hall_bar", "reference", "custom")


def _num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _float(v):
    if not _num(v):
        raise TypeError("expected a number")
    return float(v)


def _int(v):
    if not isinstance(v, int) or isinstance(v, bool):
        raise TypeError("expected an integer")
    return v


def _bool(v):
    if not isinstance(v, bool):
        raise TypeError("expected true or false")
    return v


def _str(v):
    if not isinstance(v, str):
        raise TypeError("expected a string")
    return v


def _floats(n=None):
    def conv(v):
        if not isinstance(v, list) or not all(_num(x) for x in v):
            raise TypeError("expected a list of numbers")
        if n is not None and len(v) != n:
            raise TypeError(f"expected {n} numbers")
        return tuple(float(x) for x in v)
    return conv


def _strs(v):
    if not isinstance(v, list) or not all(isinstance(x, str) for x in v):
        raise TypeError("expected a list of strings")
    return tuple(v)


def _table(v):
    if not isinstance(v, dict) or not all(_num(x) for x in v.values()):
        raise TypeError("expected a table of numbers")
    return {k: float(x) for k, x in v.items()}


def _regions(v):
    if not isinstance(v, list):
        raise TypeError("expected an array of tables")
    out = []
    for i, r in enumerate(v):
        extra = set(r) - {"element", "density_cm2", "rect_um", "vertices_um", "name"}
        if extra:
            raise TypeError(f"region {i}: unknown keys {sorted(extra)}")
        try:
            el, dens = _str(r["element"]), _float(r["density_cm2"])
        except KeyError as exc:
            raise TypeError(f"region {i}: missing {exc}") from None
        name = r.get("name", f"region{i}")
        if "rect_um" in r:
            out.append(Region.rect(el, dens, *_floats(4)(r["rect_um"]), name=name))
        elif "vertices_um" in r:
            out.append(Region(el, dens, tuple(_floats(2)(p) for p in r["vertices_um"]), name))
        else:
            raise TypeError(f"region {i}: give rect_um or vertices_um")
    return tuple(out)


# Defaults may depend on the device number; callables receive it.
_BEAM_KEYS = {
    "photon_energy_keV": ("photon_energy", _float),
    "flux_ph_per_s": ("flux", _float),
    "spot_width_um": ("spot_width", _float),
    "spot_height_um": ("spot_height", _float),
    "energy_resolution": ("energy_resolution", _float),
    "dwell_s": ("dwell", _float),
}
_DETECTOR_KEYS = {
    "distance_cm": ("distance_d", _float),
    "active_area_mm2": ("active_area", _float),
    "energy_bins": ("energy_bins", _int),
    "bin_width_keV": ("bin_width", _float),
    "noise_fwhm_keV": ("noise_fwhm", _float),
    "fano_factor": ("fano_factor", _float),
    "pair_energy_keV": ("pair_energy", _float),
    "first_edge_keV": ("first_edge", _float),
}

SCHEMA = {
    "layout": {
        "preset": (_str, "hall_bar"),
        "as_density_cm2": (_float, lambda dev: presets.DEVICE1_AS if dev == 1 else presets.DEVICE2_AS),
        "bounds_um": (_floats(4), presets.BOUNDS),
        "background_cm2": (_table, dict(presets.BACKGROUND)),
        "regions": (_regions, ()),
    },
    "scan": {
        "nx": (_int, 80),
        "ny": (_int, 40),
        "pitch_um": (_float, 3.0),
        "pitch_x_um": (_float, None),
        "pitch_y_um": (_float, None),
        "origin_um": (_floats(2), (1.5, 1.5)),
        "noise": (_bool, True),
    },
    "elements": {
        "table": (_str, None),
        "fit": (_strs, None),
    },
    "analysis": {
        "element": (_str, "As"),
        "background_order": (_int, 2),
        "weighting": (_str, "model"),
        "fit_scatter": (_bool, True),
        "scatter_angle_deg": (_float, 90.0),
        "window_keV": (_floats(2), None),
        "region_um": (_floats(4), None),
    },
    "reference": {
        "scan": (_str, None),
        "density_cm2": (_float, 1.0e15),
        "density_error_cm2": (_float, 0.0),
        "nx": (_int, 10),
        "ny": (_int, 10),
        "pitch_um": (_float, 1.0),
        "origin_um": (_floats(2), (5.0, 5.0)),
        "seed": (_int, 99),
    },
    "fit": {
        "L_grid_nm": (_floats(), tuple(float(v) for v in L_GRID_NM)),
        "L_phi_grid_nm": (_floats(), tuple(float(v) for v in L_PHI_GRID_NM)),
        "rtol": (_float, 1e-10),
        "max_iter": (_int, 200),
    },
    "snr": {
        "seeds": (_int, 20),
        "on_y_um": (_float, 60.0),
        "off_y_um": (_float, 85.0),
        "x_start_um": (_float, 80.0),
        "length_um": (_float, 30.0),
        "pitch_um": (_float, 0.5),
    },
    "transport": {
        "sigma_sheet_S": (_float, None),
        "sigma_sheet_error_S": (_float, 0.0),
        "n_cm2": (_float, None),
        "n_error_cm2": (_float, 0.0),
    },
    "external": {
        "n_stm_cm2": (_float, None),
        "n_stm_error_cm2": (_float, 0.0),
        "n_sims_cm2": (_float, None),
        "n_sims_error_cm2": (_float, 0.0),
        "t_sims_nm": (_float, None),
        "t_sims_error_nm": (_float, 0.0),
    },
}
SECTIONS = ("beam", "detector") + tuple(SCHEMA)
TOP_LEVEL = {"seed": (_int, 0), "device": (_int, 1), "output_dir": (_str, "out")}


@dataclass
class RunConfig:
    seed: int = 0
    device: int = 1
    output_dir: str = "out"
    beam: BeamConfig = None
    detector: DetectorConfig = None
    sections: dict = field(default_factory=dict)
    defaults: dict = field(default_factory=dict)  # "section.key" -> value used
    path: Optional[str] = None
    sha256: Optional[str] = None

    def __getitem__(self, section):
        return self.sections[section]

    @property
    def templates(self):
        base = presets.device_templates()
        table = self["elements"]["table"]
        if table is not None:
            from .formats import load_element_table
            base = merge_templates(base, load_element_table(self._resolve(table)))
        return base

    @property
    def fit_templates(self):
        """Templates entering the decomposition (all known ones by default)."""
        templates = self.templates
        chosen = self["elements"]["fit"]
        if chosen is None:
            return templates
        missing = [s for s in chosen if s not in templates]
        if missing:
            raise ConfigError(f"elements.fit names unknown elements {missing}")
        return {s: templates[s] for s in chosen}

    @property
    def scatter(self) -> Optional[ScatterModel]:
        a = self["analysis"]
        return ScatterModel(True, a["scatter_angle_deg"]) if a["fit_scatter"] else None

    @property
    def pitch(self):
        s = self["scan"]
        return (s["pitch_x_um"] or s["pitch_um"], s["pitch_y_um"] or s["pitch_um"])

    def layout(self, as_density=None) -> DeviceLayout:
        lay = self["layout"]
        density = lay["as_density_cm2"] if as_density is None else as_density
        templates = self.templates
        if lay["preset"] == "hall_bar":
            return presets.hall_bar_layout(density, templates, lay["background_cm2"])
        if lay["preset"] == "reference":
            return presets.reference_layout(density, templates)
        return DeviceLayout(lay["regions"], lay["bounds_um"], lay["background_cm2"],
                            templates, presets.SUBSTRATE)

    def region(self):
        """Analysis region (x0, y0, x1, y1) in um, or None for the whole map."""
        r = self["analysis"]["region_um"]
        if r is None and self["layout"]["preset"] == "hall_bar":
            return presets.bar_interior()
        return r

    def measurement(self, section, key, error_key):
        v = self[section][key]
        return None if v is None else Measurement(v, self[section][error_key])

    def _resolve(self, p):
        base = Path(self.path).parent if self.path else Path.cwd()
        q = Path(p)
        return q if q.is_absolute() else base / q

    def echo(self):
        """Resolved settings for reports (every value JSON-serializable)."""
        out = {"seed": self.seed, "device": self.device}
        out["beam"] = {k: getattr(self.beam, a) for k, (a, _) in _BEAM_KEYS.items()}
        out["detector"] = {k: getattr(self.detector, a) for k, (a, _) in _DETECTOR_KEYS.items()}
        for name, sec in self.sections.items():
            out[name] = {k: _jsonable(v) for k, v in sec.items()}
        return out


def _jsonable(v):
    if isinstance(v, tuple):
        return [_jsonable(x) for x in v]
    if isinstance(v, Region):
        return {"element": v.element, "density_cm2": v.density, "name": v.name,
                "vertices_um": [list(p) for p in v.vertices]}
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in sorted(v.items())}
    return v


def _convert(section, key, conv, raw):
    try:
        return conv(raw)
    except (TypeError, ValueError, ConfigError, DomainError) as exc:
        where = f"{section}.{key}" if section else key
        raise ConfigError(f"{where}: {exc}") from None


def _dataclass_section(doc, name, keys, preset, defaults):
    raw = doc.get(name, {})
    unknown = set(raw) - set(keys)
    if unknown:
        raise ConfigError(f"[{name}] unknown keys {sorted(unknown)}; allowed: {sorted(keys)}")
    kwargs = {}
    for key, (attr, conv) in keys.items():
        if key in raw:
            kwargs[attr] = _convert(name, key, conv, raw[key])
        else:
            kwargs[attr] = getattr(preset, attr)
            defaults[f"{name}.{key}"] = kwargs[attr]
    try:
        return type(preset)(**kwargs)
    except (ConfigError, DomainError) as exc:
        raise ConfigError(f"[{name}] {exc}") from None


def build_config(doc: dict, path=None, sha256=None, overrides=None) -> RunConfig:
    """Validate a parsed TOML document.  ``overrides`` (e.g. from the command
    line) replace top-level values such as the seed."""
    doc = dict(doc)
    for k, v in (overrides or {}).items():
        if v is not None:
            doc[k] = v
    unknown = set(doc) - set(TOP_LEVEL) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown top-level keys or sections {sorted(unknown)}")
    for name in SECTIONS:
        if name in doc and not isinstance(doc[name], dict):
            raise ConfigError(f"[{name}] must be a table")
    defaults = {}
    top = {}
    for key, (conv, default) in TOP_LEVEL.items():
        if key in doc:
            top[key] = _convert(None, key, conv, doc[key])
        else:
            top[key] = default
            defaults[key] = default
    if top["device"] not in (1, 2):
        raise ConfigError("device must be 1 or 2")
    beam = _dataclass_section(doc, "beam", _BEAM_KEYS, presets.device_beam(top["device"]),
                              defaults)
    detector = _dataclass_section(doc, "detector", _DETECTOR_KEYS, presets.device_detector(),
                                  defaults)
    sections = {}
    for name, keys in SCHEMA.items():
        raw = doc.get(name, {})
        unknown = set(raw) - set(keys)
        if unknown:
            raise ConfigError(f"[{name}] unknown keys {sorted(unknown)}; allowed: {sorted(keys)}")
        sec = {}
        for key, (conv, default) in keys.items():
            if key in raw:
                sec[key] = _convert(name, key, conv, raw[key])
            else:
                sec[key] = default(top["device"]) if callable(default) else default
                if default is not None:
                    defaults[f"{name}.{key}"] = _jsonable(sec[key])
        sections[name] = sec
    cfg = RunConfig(top["seed"], top["device"], top["output_dir"], beam, detector, sections,
                    defaults, None if path is None else str(path), sha256)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig):
    lay, an, sc = cfg["layout"], cfg["analysis"], cfg["scan"]
    if lay["preset"] not in LAYOUT_PRESETS:
        raise ConfigError(f"layout.preset must be one of {LAYOUT_PRESETS}")
    if lay["preset"] == "custom" and not lay["regions"]:
        raise ConfigError("layout.preset = 'custom' needs [[layout.regions]]")
    if an["weighting"] not in WEIGHTINGS:
        raise ConfigError(f"analysis.weighting must be one of {WEIGHTINGS}")
    if an["background_order"] < 0:
        raise ConfigError("analysis.background_order must be >= 0")
    if sc["nx"] < 1 or sc["ny"] < 1 or min(cfg.pitch) <= 0:
        raise ConfigError("scan needs nx, ny >= 1 and positive pitch")
    if cfg["snr"]["seeds"] < 1:
        raise ConfigError("snr.seeds must be >= 1")
    fit = cfg["fit"]
    if not fit["L_grid_nm"] or not fit["L_phi_grid_nm"]:
        raise ConfigError("fit start grids must not be empty")
    if any(not v > 0 for v in fit["L_grid_nm"] + fit["L_phi_grid_nm"]):
        raise ConfigError("fit start grids must be positive")
    if not (fit["rtol"] > 0 and fit["max_iter"] > 0):
        raise ConfigError("fit.rtol and fit.max_iter must be positive")
    for sec, key in (("elements", "table"), ("reference", "scan")):
        p = cfg[sec][key]
        if p is not None and not cfg._resolve(p).exists():
            raise ConfigError(f"{sec}.{key}: path {p!r} does not exist")
    for sec in ("transport", "external", "reference"):
        for key, v in cfg[sec].items():
            if _num(v) and (not math.isfinite(v) or v < 0):
                raise ConfigError(f"{sec}.{key} must be finite and >= 0")


def load_config(path=None, overrides=None) -> RunConfig:
    """Read and validate a TOML run file; ``None`` gives all defaults."""
    if path is None:
        return build_config({}, overrides=overrides)
    p = Path(path)
    try:
        raw = p.read_bytes()
    except FileNotFoundError:
        raise ConfigError(f"config file {p} not found") from None
    try:
        doc = tomllib.loads(raw.decode("utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"{p}: {exc}") from None
    return build_config(doc, p, hashlib.sha256(raw).hexdigest(), overrides)
