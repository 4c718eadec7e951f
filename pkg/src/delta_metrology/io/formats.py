"""Text and binary file formats: spectra, transport sweeps, scans, maps,
element tables.

Spectrum CSV::

    # delta-metrology spectrum
    # bin_edges_keV=0.0 0.01 0.02 ...      (optional, exact edges)
    energy_keV,counts
    0.005,0.0
    ...

Without the edges line, bin edges are rebuilt from uniformly spaced centres.

Transport CSV::

    # orientation=tilt angle_deg=35 quantity=delta_sigma temperature_K=1.5
    B_T,value,error
    0.01,1.2e-9,1e-11

``quantity`` is ``delta_sigma`` (S) or ``R_xy`` (ohm).  An angle sweep at
fixed |B| uses ``# orientation=tilt sweep=angle field_T=9`` and an
``angle_deg`` first column.

Packed scan (``.dmscan``)::

    8 bytes   magic b"DMSCAN\\x00\\x01"
    4 bytes   uint32 little-endian header length H
    H bytes   UTF-8 JSON header (dimensions, pitch, origin, beam, detector, seed)
    then      float64 LE bin edges (n_bins + 1), counts (ny * nx * n_bins, row-major)
"""
from __future__ import annotations

import json
import math
import re
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from ..core import BeamConfig, DetectorConfig, ScanGrid, Spectrum
from ..errors import ConfigError, DomainError, InsufficientDataError, ParseError
from ..transport.fitting import MIN_POINTS, MagnetoTrace
from ..xrf.lines import ElementTemplate, EmissionLine, sensitivity_from_attenuation

PACKED_MAGIC = b"DMSCAN\x00\x01"
_HEADER_TOKEN = re.compile(r"([A-Za-z_][A-Za-z0-9_]*)\s*=\s*(\S+)")


def _fmt(x):
    return repr(float(x))


def _read_lines(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ParseError("file not found", path) from None
    return path, text.splitlines()


def _header_tokens(line):
    return dict(_HEADER_TOKEN.findall(line.lstrip("#")))


def _rows(path, lines, min_cols, max_cols):
    """Numeric rows with their 1-based line numbers; '#' comments and one
    optional non-numeric column-name line are skipped."""
    rows = []
    seen_names = False
    width = None
    for num, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in re.split(r"[,\s]+", line) if p.strip()]
        try:
            values = [float(p) for p in parts]
        except ValueError:
            if not rows and not seen_names:
                seen_names = True
                continue
            raise ParseError(f"non-numeric value in row {line!r}", path, num) from None
        if not min_cols <= len(values) <= max_cols:
            raise ParseError(f"expected {min_cols}-{max_cols} columns, found {len(values)}",
                             path, num)
        if width is None:
            width = len(values)
        elif len(values) != width:
            raise ParseError(f"ragged row: {len(values)} columns where earlier rows had {width}",
                             path, num)
        if not all(math.isfinite(v) for v in values):
            raise ParseError("non-finite value", path, num)
        rows.append((num, values))
    return rows


# --------------------------------------------------------------------------
# spectra
# --------------------------------------------------------------------------

def write_spectrum_file(path, spectrum: Spectrum):
    path = Path(path)
    lines = ["# delta-metrology spectrum",
             "# bin_edges_keV=" + " ".join(_fmt(e) for e in spectrum.bin_edges),
             "energy_keV,counts"]
    lines += [f"{_fmt(c)},{_fmt(n)}" for c, n in zip(spectrum.centers, spectrum.counts)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def parse_spectrum_file(path) -> Spectrum:
    path, lines = _read_lines(path)
    edges = None
    for num, raw in enumerate(lines, start=1):
        if raw.startswith("#") and "bin_edges_keV=" in raw:
            try:
                edges = np.array([float(v) for v in raw.split("=", 1)[1].split()])
            except ValueError:
                raise ParseError("malformed bin_edges_keV header", path, num) from None
    rows = _rows(path, lines, 2, 2)
    if not rows:
        raise ParseError("no data rows", path)
    energies = np.array([r[1][0] for r in rows])
    counts = np.array([r[1][1] for r in rows])
    for (num, (e, c)), prev in zip(rows, [None] + rows[:-1]):
        if c < 0:
            raise ParseError(f"negative count {c}", path, num)
        if prev is not None and not e > prev[1][0]:
            raise ParseError("energies must increase strictly", path, num)
    if edges is not None:
        if edges.size != counts.size + 1:
            raise ParseError("bin_edges_keV header does not match the number of rows", path)
        centers = 0.5 * (edges[1:] + edges[:-1])
        if not np.allclose(centers, energies, rtol=1e-9, atol=1e-12):
            raise ParseError("energies are not the centres of the declared bin edges", path)
    else:
        if energies.size < 2:
            raise ParseError("need two rows (or a bin_edges_keV header) to infer bin width", path)
        width = (energies[-1] - energies[0]) / (energies.size - 1)
        # the first spacing is the reference, so the error points at the row
        # where the spacing first changes
        dev = np.abs(np.diff(energies) - (energies[1] - energies[0]))
        if np.any(dev > 1e-6 * width):
            bad = int(np.argmax(dev > 1e-6 * width)) + 1
            raise ParseError("energies are not uniformly spaced; add a bin_edges_keV header",
                             path, rows[bad][0])
        edges = energies[0] - 0.5 * width + width * np.arange(energies.size + 1)
    return Spectrum(edges, counts)


# --------------------------------------------------------------------------
# transport sweeps
# --------------------------------------------------------------------------

def write_transport_file(path, trace: MagnetoTrace):
    path = Path(path)
    head = [f"orientation={trace.orientation}", f"quantity={trace.quantity}"]
    if trace.temperature is not None:
        head.append(f"temperature_K={_fmt(trace.temperature)}")
    sweep = trace.orientation == "tilt" and np.ndim(trace.angle) == 1
    if trace.orientation == "tilt" and not sweep:
        head.append(f"angle_deg={_fmt(trace.angle)}")
    if sweep:
        if np.unique(trace.field).size != 1:
            raise DomainError("angle-sweep files need a single field magnitude")
        head += ["sweep=angle", f"field_T={_fmt(trace.field[0])}"]
    first = trace.angles if sweep else trace.field
    cols = ["angle_deg" if sweep else "B_T", "value"] + (["error"] if trace.error is not None else [])
    lines = ["# " + " ".join(head), ",".join(cols)]
    for i in range(len(trace)):
        row = [_fmt(first[i]), _fmt(trace.value[i])]
        if trace.error is not None:
            row.append(_fmt(trace.error[i]))
        lines.append(",".join(row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def parse_transport_file(path) -> MagnetoTrace:
    path, lines = _read_lines(path)
    header = {}
    for raw in lines:
        if raw.lstrip().startswith("#"):
            header.update(_header_tokens(raw))
    if "orientation" not in header:
        raise ParseError("missing 'orientation=' header", path)
    rows = _rows(path, lines, 2, 3)
    if len(rows) < MIN_POINTS:
        raise InsufficientDataError(f"need at least {MIN_POINTS} points, found {len(rows)}", path)
    data = np.array([r[1] for r in rows])

    def num(key):
        try:
            return float(header[key])
        except ValueError:
            raise ParseError(f"header {key}={header[key]!r} is not a number", path) from None

    temperature = num("temperature_K") if "temperature_K" in header else None
    angle = None
    field = data[:, 0]
    if header.get("sweep") == "angle":
        if "field_T" not in header:
            raise ParseError("angle sweep needs a 'field_T=' header", path)
        angle = data[:, 0]
        field = np.full(len(rows), num("field_T"))
    elif "angle_deg" in header or "angle" in header:
        angle = num("angle_deg" if "angle_deg" in header else "angle")
    error = data[:, 2] if data.shape[1] == 3 else None
    try:
        return MagnetoTrace(header["orientation"], field, data[:, 1], error,
                            header.get("quantity", "delta_sigma"), temperature, angle)
    except DomainError as exc:
        raise ParseError(str(exc), path) from None


# --------------------------------------------------------------------------
# scans
# --------------------------------------------------------------------------

def _scan_header(grid: ScanGrid):
    return {
        "format": "delta-metrology scan",
        "version": 1,
        "nx": grid.nx,
        "ny": grid.ny,
        "n_bins": int(grid.bin_edges.size - 1),
        "pitch_x_um": grid.pitch_x,
        "pitch_y_um": grid.pitch_y,
        "origin_um": list(grid.origin),
        "seed": grid.seed if grid.seed is None or isinstance(grid.seed, int) else list(grid.seed),
        "beam": asdict(grid.beam),
        "detector": asdict(grid.detector),
        "fingerprint": grid.fingerprint(),
    }


def _grid_from_header(h, edges, counts, path):
    try:
        beam = BeamConfig(**h["beam"])
        det = DetectorConfig(**h["detector"])
        seed = h.get("seed")
        if isinstance(seed, list):
            seed = tuple(seed)
        return ScanGrid(int(h["nx"]), int(h["ny"]), float(h["pitch_x_um"]),
                        float(h["pitch_y_um"]), edges,
                        counts.reshape(int(h["ny"]), int(h["nx"]), -1), beam, det,
                        tuple(h.get("origin_um", (0.0, 0.0))), seed)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"invalid scan header: {exc}", path) from None


def pixel_filename(ix, iy):
    return f"pixel_y{iy:04d}_x{ix:04d}.csv"


def write_scan(path, grid: ScanGrid, fmt="csv"):
    """Write a scan as a directory of per-pixel CSVs plus ``index.json``
    (fmt="csv") or as one packed binary file (fmt="packed")."""
    path = Path(path)
    header = _scan_header(grid)
    if fmt == "packed":
        blob = json.dumps(header, sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(PACKED_MAGIC)
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
            fh.write(np.ascontiguousarray(grid.bin_edges, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(grid.counts, dtype="<f8").tobytes())
        return path
    if fmt != "csv":
        raise ConfigError(f"unknown scan format {fmt!r} (csv or packed)")
    path.mkdir(parents=True, exist_ok=True)
    files = []
    for iy in range(grid.ny):
        for ix in range(grid.nx):
            name = pixel_filename(ix, iy)
            write_spectrum_file(path / name, grid.pixel(ix, iy))
            files.append(name)
    header["files"] = files
    (path / "index.json").write_text(json.dumps(header, sort_keys=True, indent=1) + "\n",
                                     encoding="utf-8")
    return path


def read_scan(path) -> ScanGrid:
    path = Path(path)
    if path.is_dir():
        index = path / "index.json"
        try:
            h = json.loads(index.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ParseError("scan directory has no index.json", path) from None
        except json.JSONDecodeError as exc:
            raise ParseError(f"index.json is not valid JSON: {exc}", index) from None
        nx, ny = int(h["nx"]), int(h["ny"])
        files = h.get("files") or [pixel_filename(ix, iy) for iy in range(ny) for ix in range(nx)]
        if len(files) != nx * ny:
            raise ParseError(f"index lists {len(files)} files for a {nx}x{ny} grid", index)
        spectra = [parse_spectrum_file(path / f) for f in files]
        edges = spectra[0].bin_edges
        for f, s in zip(files, spectra):
            if not np.array_equal(s.bin_edges, edges):
                raise ParseError("pixel spectra have different energy axes", path / f)
        counts = np.stack([s.counts for s in spectra])
        return _grid_from_header(h, edges, counts, index)
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise ParseError("file not found", path) from None
    if raw[:8] != PACKED_MAGIC:
        raise ParseError("not a packed delta-metrology scan (bad magic)", path)
    (hlen,) = struct.unpack("<I", raw[8:12])
    try:
        h = json.loads(raw[12:12 + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"corrupt header: {exc}", path) from None
    nb, nx, ny = int(h["n_bins"]), int(h["nx"]), int(h["ny"])
    body = np.frombuffer(raw, dtype="<f8", offset=12 + hlen)
    if body.size != nb + 1 + nx * ny * nb:
        raise ParseError(f"payload holds {body.size} values, expected {nb + 1 + nx * ny * nb}",
                         path)
    return _grid_from_header(h, body[:nb + 1].astype(float), body[nb + 1:].astype(float), path)


# --------------------------------------------------------------------------
# maps
# --------------------------------------------------------------------------

def write_map_csv(path, values, errors, flags, pitch, origin, meta):
    """Long-format map: one row per pixel (ix, iy, x_um, y_um, value, error, flag).
    ``meta`` (element, unit, fingerprint, ...) is written as '# key=value'."""
    path = Path(path)
    values = np.asarray(values, dtype=float)
    ny, nx = values.shape
    lines = ["# delta-metrology map"]
    lines += [f"# {k}={meta[k]}" for k in sorted(meta)]
    lines.append("ix,iy,x_um,y_um,value,error,flag")
    for iy in range(ny):
        for ix in range(nx):
            x = origin[0] + ix * pitch[0]
            y = origin[1] + iy * pitch[1]
            lines.append(f"{ix},{iy},{_fmt(x)},{_fmt(y)},{_fmt(values[iy, ix])},"
                         f"{_fmt(errors[iy, ix])},{int(bool(flags[iy, ix]))}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_map_csv(path):
    """Returns (values, errors, flags, meta) with arrays shaped (ny, nx)."""
    path, lines = _read_lines(path)
    meta = {}
    rows = []
    for num, raw in enumerate(lines, start=1):
        s = raw.strip()
        if s.startswith("#"):
            body = s.lstrip("#").strip()
            if "=" in body:
                k, v = body.split("=", 1)
                meta[k.strip()] = v.strip()
            continue
        if not s or s.startswith("ix,"):
            continue
        parts = s.split(",")
        if len(parts) != 7:
            raise ParseError(f"expected 7 columns, found {len(parts)}", path, num)
        try:
            rows.append((int(parts[0]), int(parts[1]), float(parts[4]), float(parts[5]),
                         int(parts[6])))
        except ValueError:
            raise ParseError("malformed map row", path, num) from None
    if not rows:
        raise ParseError("no map rows", path)
    nx = max(r[0] for r in rows) + 1
    ny = max(r[1] for r in rows) + 1
    values = np.full((ny, nx), np.nan)
    errors = np.full((ny, nx), np.nan)
    flags = np.ones((ny, nx), dtype=bool)
    for ix, iy, v, e, f in rows:
        values[iy, ix], errors[iy, ix], flags[iy, ix] = v, e, bool(f)
    return values, errors, flags, meta


# --------------------------------------------------------------------------
# element tables
# --------------------------------------------------------------------------

def write_element_table(path, templates):
    out = {}
    for sym, t in sorted(dict(templates).items()):
        out[sym] = {
            "sensitivity_cm2": t.sensitivity,
            "mass_attenuation_cm2_per_g": None if math.isnan(t.mass_attenuation) else t.mass_attenuation,
            "molar_mass_g_per_mol": None if math.isnan(t.molar_mass) else t.molar_mass,
            "fluorescence_yield": None if math.isnan(t.fluorescence_yield) else t.fluorescence_yield,
            "lines": [{"label": l.label, "energy_keV": l.energy,
                       "relative_intensity": l.relative_intensity,
                       "edge_keV": l.edge_energy, "transmission": l.transmission}
                      for l in t.lines],
        }
    Path(path).write_text(json.dumps({"elements": out}, sort_keys=True, indent=1) + "\n",
                          encoding="utf-8")
    return Path(path)


def load_element_table(path) -> dict:
    """Element templates from JSON.  ``sensitivity_cm2`` may be omitted when
    mass attenuation, molar mass and fluorescence yield are all given."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ParseError("file not found", path) from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", path, exc.lineno) from None
    elements = doc.get("elements") if isinstance(doc, dict) else None
    if not isinstance(elements, dict) or not elements:
        raise ParseError("expected a non-empty 'elements' object", path)
    out = {}
    for sym, e in elements.items():
        try:
            lines = tuple(EmissionLine(l["label"], float(l["energy_keV"]),
                                       float(l["relative_intensity"]), float(l["edge_keV"]),
                                       float(l.get("transmission", 1.0)))
                          for l in e["lines"])
            mu = e.get("mass_attenuation_cm2_per_g")
            molar = e.get("molar_mass_g_per_mol")
            fy = e.get("fluorescence_yield")
            sens = e.get("sensitivity_cm2")
            if sens is None:
                if None in (mu, molar, fy):
                    raise ParseError(f"{sym}: give sensitivity_cm2 or mass attenuation, "
                                     "molar mass and fluorescence yield", path)
                sens = sensitivity_from_attenuation(mu, molar, fy)
            out[sym] = ElementTemplate(sym, lines, float(sens),
                                       math.nan if mu is None else float(mu),
                                       math.nan if molar is None else float(molar),
                                       math.nan if fy is None else float(fy))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ParseError):
                raise
            raise ParseError(f"{sym}: malformed entry ({exc})", path) from None
    return out
