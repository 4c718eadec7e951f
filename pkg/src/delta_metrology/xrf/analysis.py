"""Spectrum decomposition, elemental maps and absolute quantification."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .. import kernels
from ..core import BeamConfig, DetectorConfig, Measurement, ScanGrid, Spectrum, as_measurement
from ..errors import (CalibrationError, DegeneracyError, DegenerateTraceError, DomainError,
                      FitError, RangeError)
from .forward import compton_energy, line_shape
from .lines import ElementTemplate

# columns whose unit-normalised overlap exceeds this are treated as identical
_COLLINEAR = 1.0 - 1e-9
_STATUS_TEXT = {
    kernels.NNLS_MAXITER: "active-set iteration limit reached",
    kernels.NNLS_SINGULAR: "singular normal matrix",
}


@dataclass(frozen=True)
class ScatterModel:
    fit: bool = True
    angle: float = 90.0  # degrees


@dataclass(frozen=True, eq=False)
class Design:
    matrix: np.ndarray  # (n_window_bins, n_columns)
    names: tuple
    kinds: tuple  # "element" | "scatter" | "background"
    constrained: np.ndarray
    window: slice
    energy_range: tuple

    def column(self, name):
        return self.names.index(name)

    @property
    def elements(self):
        return [n for n, k in zip(self.names, self.kinds) if k == "element"]


def default_window(edges, beam: BeamConfig):
    """Fit range: 0.9 keV up to 0.8 keV above the beam, clipped to the data."""
    return (max(edges[0], 0.9), min(edges[-1], beam.photon_energy + 0.8))


def _as_list(templates):
    if isinstance(templates, Mapping):
        return list(templates.values())
    if isinstance(templates, ElementTemplate):
        return [templates]
    return list(templates)


def build_design(edges, templates, beam: BeamConfig, detector: DetectorConfig,
                 scatter: Optional[ScatterModel] = ScatterModel(), background_order=2,
                 window=None) -> Design:
    """Fixed-shape design matrix: one unit-area column per element and scatter
    peak, plus Legendre background terms over the fit window."""
    templates = _as_list(templates)
    if not templates:
        raise DomainError("need at least one element template")
    if background_order is not None and background_order < 0:
        raise DomainError("background_order must be >= 0 (or None for no background)")
    edges = np.asarray(edges, dtype=float)
    lo_e, hi_e = window if window is not None else default_window(edges, beam)
    centers = 0.5 * (edges[1:] + edges[:-1])
    idx = np.nonzero((centers >= lo_e) & (centers <= hi_e))[0]
    if idx.size < 2:
        raise DomainError(f"fit window {lo_e}-{hi_e} keV holds fewer than two bins")
    sl = slice(int(idx[0]), int(idx[-1]) + 1)
    sub_edges = edges[sl.start:sl.stop + 1]

    cols, names, kinds, cons = [], [], [], []
    for t in templates:
        if t.symbol in names:
            raise DegeneracyError(f"template {t.symbol} given twice", (t.symbol, t.symbol))
        lines = [l for l in t.excited_lines(beam.photon_energy)
                 if lo_e <= l.energy <= hi_e]
        weights = np.array([l.relative_intensity * l.transmission for l in lines])
        if not lines or weights.sum() <= 0:
            raise DegeneracyError(
                f"template {t.symbol} has no excited lines inside {lo_e:.2f}-{hi_e:.2f} keV",
                (t.symbol,))
        # unit total area over all excited lines, so the amplitude is the
        # element's total detected counts
        all_w = t.detected_fraction(beam.photon_energy)
        col = line_shape([l.energy for l in lines], weights / all_w, detector, sub_edges)
        cols.append(col)
        names.append(t.symbol)
        kinds.append("element")
        cons.append(True)
    if scatter is not None and scatter.fit:
        e0 = beam.photon_energy
        for name, energy in (("elastic", e0), ("compton", compton_energy(e0, scatter.angle))):
            cols.append(line_shape([energy], [1.0], detector, sub_edges))
            names.append(name)
            kinds.append("scatter")
            cons.append(True)
    if background_order is not None:
        u = 2.0 * (centers[sl] - lo_e) / (hi_e - lo_e) - 1.0
        for k in range(background_order + 1):
            cols.append(np.polynomial.legendre.Legendre.basis(k)(u))
            names.append(f"bg{k}")
            kinds.append("background")
            cons.append(False)
    matrix = np.column_stack(cols)
    _check_rank(matrix, names)
    return Design(matrix, tuple(names), tuple(kinds), np.array(cons, dtype=bool), sl,
                  (float(lo_e), float(hi_e)))


def _check_rank(matrix, names):
    norms = np.linalg.norm(matrix, axis=0)
    for i, n in enumerate(norms):
        if n == 0:
            raise DegeneracyError(f"column {names[i]} is identically zero in the fit window",
                                  (names[i],))
    unit = matrix / norms
    gram = unit.T @ unit
    n = len(names)
    for i in range(n):
        for j in range(i + 1, n):
            if abs(gram[i, j]) >= _COLLINEAR:
                raise DegeneracyError(
                    f"templates {names[i]} and {names[j]} have identical shapes", (names[i], names[j]))
    s = np.linalg.svd(unit, compute_uv=False)
    if s[-1] / s[0] < 1e-10:
        _, _, vt = np.linalg.svd(unit)
        null = np.abs(vt[-1])
        involved = tuple(names[i] for i in np.argsort(null)[::-1][:2])
        raise DegeneracyError(f"design matrix is rank deficient (involves {', '.join(involved)})",
                              involved)


@dataclass(frozen=True, eq=False)
class DecompositionResult:
    names: tuple
    kinds: tuple
    values: np.ndarray
    errors: np.ndarray
    chi2: float
    residual_norm: float
    n_bins: int
    energy_range: tuple
    model: np.ndarray = field(repr=False, default=None)

    @property
    def dof(self):
        return max(1, self.n_bins - len(self.names))

    @property
    def reduced_chi2(self):
        return self.chi2 / self.dof

    def amplitude(self, name) -> Measurement:
        i = self.names.index(name)
        return Measurement(float(self.values[i]), float(self.errors[i]))

    @property
    def amplitudes(self):
        return {n: self.amplitude(n) for n, k in zip(self.names, self.kinds) if k == "element"}

    @property
    def scatter(self):
        return {n: self.amplitude(n) for n, k in zip(self.names, self.kinds) if k == "scatter"}

    @property
    def background(self):
        return np.array([v for v, k in zip(self.values, self.kinds) if k == "background"])


WEIGHTINGS = ("counts", "model")
# model-variance floor (counts per bin) for the reweighted fit
VARIANCE_FLOOR = 1e-2


def _solve(design: Design, counts2d, workers=None, weighting="counts", max_reweight=50,
           rtol=1e-7):
    """Batch NNLS.  ``weighting="counts"`` uses 1/max(y, 1); ``"model"``
    iterates weights 1/max(model, floor) from the previous solution, which
    converges to the Poisson maximum-likelihood amplitudes and removes the
    downward bias of count weights at a few counts per bin."""
    if weighting not in WEIGHTINGS:
        raise DomainError(f"weighting must be one of {WEIGHTINGS}, got {weighting!r}")
    a = design.matrix
    y = np.ascontiguousarray(counts2d[:, design.window])
    x, err, chi2, rnorm, status = kernels.nnls_batch(a, y, design.constrained, workers=workers)
    if weighting == "counts":
        return x, err, chi2, rnorm, status
    active = np.nonzero(status == kernels.NNLS_OK)[0]
    for _ in range(max_reweight):
        if active.size == 0:
            break
        var = np.maximum(x[active] @ a.T, VARIANCE_FLOOR)
        xn, en, cn, rn, sn = kernels.nnls_batch(a, y[active], design.constrained,
                                                workers=workers, variance=var)
        step = np.abs(xn - x[active]).max(axis=1)
        size = np.abs(xn).max(axis=1)
        x[active], err[active], chi2[active] = xn, en, cn
        rnorm[active], status[active] = rn, sn
        done = (step <= rtol * np.maximum(size, 1.0)) | (sn != kernels.NNLS_OK)
        active = active[~done]
    return x, err, chi2, rnorm, status


def fit_spectrum(spectrum: Spectrum, templates, beam: BeamConfig, detector: DetectorConfig,
                 scatter: Optional[ScatterModel] = ScatterModel(), background_order=2,
                 window=None, design: Optional[Design] = None,
                 weighting="counts") -> DecompositionResult:
    """Non-negative Poisson-weighted least-squares decomposition of one spectrum.

    Element and scatter amplitudes (total detected counts) are constrained to
    be >= 0; background coefficients are free.  Weights are 1/max(counts, 1)
    (or the reweighted model variance, see ``_solve``) and standard errors
    come from the inverse weighted normal matrix.
    """
    if spectrum.n_bins < 2:
        raise DomainError("spectrum must have at least two bins")
    if design is None:
        design = build_design(spectrum.bin_edges, templates, beam, detector, scatter,
                              background_order, window)
    x, err, chi2, rnorm, status = _solve(design, spectrum.counts[None, :],
                                         weighting=weighting)
    if status[0] != kernels.NNLS_OK:
        raise FitError(f"decomposition failed: {_STATUS_TEXT[int(status[0])]}",
                       {"status": int(status[0])})
    model = design.matrix @ x[0]
    return DecompositionResult(design.names, design.kinds, x[0], err[0], float(chi2[0]),
                               float(rnorm[0]), design.matrix.shape[0], design.energy_range,
                               model)


@dataclass(frozen=True, eq=False)
class GridFit:
    names: tuple
    kinds: tuple
    values: np.ndarray  # (ny, nx, ncol)
    errors: np.ndarray
    chi2: np.ndarray  # (ny, nx)
    status: np.ndarray
    n_bins: int
    grid_meta: dict

    @property
    def failed(self):
        return (self.status != kernels.NNLS_OK) | ~np.all(np.isfinite(self.values), axis=-1)

    def causes(self):
        out = {}
        for iy, ix in zip(*np.nonzero(self.failed)):
            st = int(self.status[iy, ix])
            out[(int(ix), int(iy))] = _STATUS_TEXT.get(st, "non-finite amplitudes")
        return out

    def element_map(self, element) -> "ElementMap":
        if element not in self.names:
            raise DomainError(f"element {element!r} not among fitted templates {self.names}")
        i = self.names.index(element)
        failed = self.failed
        vals = np.where(failed, np.nan, self.values[..., i])
        errs = np.where(failed, np.nan, self.errors[..., i])
        return ElementMap(element=element, values=vals, errors=errs, flags=failed,
                          causes=self.causes(), **self.grid_meta)


def fit_grid(grid: ScanGrid, templates, scatter: Optional[ScatterModel] = ScatterModel(),
             background_order=2, window=None, workers=None, weighting="counts") -> GridFit:
    """Decompose every pixel of a scan with one shared design."""
    design = build_design(grid.bin_edges, templates, grid.beam, grid.detector, scatter,
                          background_order, window)
    flat = grid.counts.reshape(grid.nx * grid.ny, -1)
    x, err, chi2, _, status = _solve(design, flat, workers, weighting)
    shape = (grid.ny, grid.nx)
    meta = dict(pitch_x=grid.pitch_x, pitch_y=grid.pitch_y, origin=grid.origin,
                fingerprint=grid.fingerprint())
    return GridFit(design.names, design.kinds, x.reshape(shape + (-1,)),
                   err.reshape(shape + (-1,)), chi2.reshape(shape), status.reshape(shape),
                   design.matrix.shape[0], meta)


@dataclass(frozen=True, eq=False)
class ElementMap:
    """Per-pixel fitted amplitude (counts per dwell) of one element."""

    element: str
    values: np.ndarray  # (ny, nx)
    errors: np.ndarray
    flags: np.ndarray  # True where the pixel fit failed
    pitch_x: float
    pitch_y: float
    origin: tuple = (0.0, 0.0)
    fingerprint: Optional[str] = None
    causes: dict = field(default_factory=dict)

    @property
    def ny(self):
        return self.values.shape[0]

    @property
    def nx(self):
        return self.values.shape[1]


def element_map(grid: ScanGrid, element, templates,
                scatter: Optional[ScatterModel] = ScatterModel(), background_order=2,
                window=None, workers=None, weighting="counts") -> ElementMap:
    return fit_grid(grid, templates, scatter, background_order, window, workers,
                    weighting).element_map(element)


def mean_amplitude(emap: ElementMap, mask=None) -> Measurement:
    """Mean over (unflagged, optionally masked) pixels; error is the standard
    error of the mean from the pixel scatter (fit error for one pixel)."""
    ok = ~emap.flags
    if mask is not None:
        ok &= np.asarray(mask, dtype=bool)
    v = emap.values[ok]
    if v.size == 0:
        raise DomainError("no usable pixels in selection")
    if v.size == 1:
        return Measurement(float(v[0]), float(emap.errors[ok][0]))
    return Measurement(float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size)))


@dataclass(frozen=True)
class CalibrationFactor:
    element: str
    factor: float  # cm^-2 per count
    rel_error: float
    fingerprint: Optional[str] = None
    amplitude_rel_error: float = 0.0
    density_rel_error: float = 0.0

    def __post_init__(self):
        if not self.factor > 0 or self.rel_error < 0:
            raise CalibrationError("calibration factor must be > 0 with non-negative error")


def calibrate_reference(ref_amplitude, known_density, element="As",
                        fingerprint=None) -> CalibrationFactor:
    """Counts-to-density factor from a reference of known areal density
    measured under the same illumination."""
    amp = as_measurement(ref_amplitude)
    dens = as_measurement(known_density)
    if not amp.value > 0 or not dens.value > 0:
        raise DomainError("reference amplitude and known density must be positive")
    a_rel, d_rel = amp.rel, dens.rel
    return CalibrationFactor(element, dens.value / amp.value, math.hypot(a_rel, d_rel),
                             fingerprint, a_rel, d_rel)


@dataclass(frozen=True, eq=False)
class DensityMap:
    """Areal density (cm^-2) per pixel.  ``counting_error`` is the per-pixel
    statistical part; ``calibration_rel_error`` is common to all pixels."""

    element: str
    values: np.ndarray
    counting_error: np.ndarray
    calibration_rel_error: float
    flags: np.ndarray
    pitch_x: float
    pitch_y: float
    origin: tuple = (0.0, 0.0)
    fingerprint: Optional[str] = None

    @property
    def errors(self):
        return np.hypot(self.counting_error, self.values * self.calibration_rel_error)

    @property
    def ny(self):
        return self.values.shape[0]

    @property
    def nx(self):
        return self.values.shape[1]


@dataclass(frozen=True)
class RegionDensity:
    value: float
    counting_error: float
    calibration_error: float
    n_pixels: int

    @property
    def error(self):
        return math.hypot(self.counting_error, self.calibration_error)


def quantify_map(emap: ElementMap, calibration: CalibrationFactor) -> DensityMap:
    if calibration.element != emap.element:
        raise CalibrationError(
            f"calibration is for {calibration.element}, map is {emap.element}")
    if (calibration.fingerprint is not None and emap.fingerprint is not None
            and calibration.fingerprint != emap.fingerprint):
        raise CalibrationError(
            "beam/detector conditions of the map differ from the reference measurement "
            f"({emap.fingerprint} vs {calibration.fingerprint})")
    f = calibration.factor
    return DensityMap(emap.element, emap.values * f, emap.errors * f,
                      calibration.rel_error, emap.flags.copy(), emap.pitch_x, emap.pitch_y,
                      emap.origin, emap.fingerprint)


def region_density(dmap: DensityMap, mask=None) -> RegionDensity:
    ok = ~dmap.flags
    if mask is not None:
        ok &= np.asarray(mask, dtype=bool)
    v = dmap.values[ok]
    if v.size == 0:
        raise DomainError("no usable pixels in selection")
    mean = float(v.mean())
    if v.size > 1:
        stat = float(v.std(ddof=1) / math.sqrt(v.size))
    else:
        stat = float(dmap.counting_error[ok][0])
    return RegionDensity(mean, stat, abs(mean) * dmap.calibration_rel_error, int(v.size))


def pixel_mask(dmap, polygon_or_rect):
    """Boolean mask of pixel centres inside a region (shapely geometry or
    (x0, y0, x1, y1) rectangle in um)."""
    import shapely

    geom = polygon_or_rect
    if not hasattr(geom, "geom_type"):
        geom = shapely.box(*polygon_or_rect)
    xs = dmap.origin[0] + dmap.pitch_x * np.arange(dmap.nx)
    ys = dmap.origin[1] + dmap.pitch_y * np.arange(dmap.ny)
    gx, gy = np.meshgrid(xs, ys)
    return shapely.contains_xy(geom, gx, gy)


def line_trace(map_, axis, index, window_length=None, start=None):
    """Values along one row (axis="x") or column (axis="y") of a map.

    ``start`` and ``window_length`` are in um along the trace axis; the
    window is closed at both ends.  Returns [(position_um, value), ...].
    """
    if axis not in ("x", "y"):
        raise DomainError("axis must be 'x' or 'y'")
    values = np.asarray(map_.values)
    ny, nx = values.shape
    if axis == "x":
        if not 0 <= index < ny:
            raise RangeError(f"row {index} outside map with {ny} rows")
        line = values[index, :]
        pos = map_.origin[0] + map_.pitch_x * np.arange(nx)
        pitch = map_.pitch_x
    else:
        if not 0 <= index < nx:
            raise RangeError(f"column {index} outside map with {nx} columns")
        line = values[:, index]
        pos = map_.origin[1] + map_.pitch_y * np.arange(ny)
        pitch = map_.pitch_y
    if start is None:
        start = pos[0]
    stop = pos[-1] if window_length is None else start + window_length
    tol = 1e-9 * pitch
    if start < pos[0] - tol or stop > pos[-1] + tol or stop < start:
        raise RangeError(f"trace window [{start}, {stop}] um outside [{pos[0]}, {pos[-1]}] um")
    sel = (pos >= start - tol) & (pos <= stop + tol)
    return [(float(p), float(v)) for p, v in zip(pos[sel], line[sel])]


def _trace_values(trace):
    arr = np.asarray(trace, dtype=float)
    if arr.ndim == 2 and arr.shape[1] == 2:
        arr = arr[:, 1]
    return arr.ravel()


def snr(trace_on, trace_off, ddof=0):
    """(mean(on) - mean(off)) / std(on).

    The spread uses the population denominator N by default; ``ddof=1``
    gives the sample (N - 1) convention.  Traces may be plain value
    sequences or ``line_trace`` output.
    """
    on = _trace_values(trace_on)
    off = _trace_values(trace_off)
    if on.size == 0 or off.size == 0:
        raise DomainError("both traces must be non-empty")
    if ddof not in (0, 1) or on.size <= ddof:
        raise DomainError("ddof must be 0 or 1 and smaller than the trace length")
    sd = on.std(ddof=ddof)
    if not sd > 0:
        raise DegenerateTraceError("on-trace has zero spread; SNR undefined")
    return float((on.mean() - off.mean()) / sd)


def activation(n_xrf, n_hall) -> Measurement:
    """Electrically active fraction in percent, relative errors in quadrature."""
    x = as_measurement(n_xrf)
    h = as_measurement(n_hall)
    if not x.value > 0 or not h.value > 0:
        raise DomainError("densities must be positive")
    pct = 100.0 * h.value / x.value
    return Measurement(pct, pct * math.hypot(x.rel, h.rel))
