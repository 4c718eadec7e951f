"""X-ray fluorescence raster scans: forward simulation and quantification."""
from .analysis import (CalibrationFactor, DecompositionResult, DensityMap, ElementMap,
                       GridFit, RegionDensity, ScatterModel, activation, build_design,
                       calibrate_reference, element_map, fit_grid, fit_spectrum, line_trace,
                       mean_amplitude, pixel_mask, quantify_map, region_density, snr)
from .forward import (DeviceLayout, DoseReport, Region, Substrate, dose_report,
                      expected_pixel, simulate_pixel, simulate_scan)
from .lines import ElementTemplate, EmissionLine, default_templates, merge_templates

__all__ = [
    "CalibrationFactor", "DecompositionResult", "DensityMap", "DeviceLayout", "DoseReport",
    "ElementMap", "ElementTemplate", "EmissionLine", "GridFit", "Region", "RegionDensity",
    "ScatterModel", "Substrate", "activation", "build_design", "calibrate_reference",
    "default_templates", "dose_report", "element_map", "expected_pixel", "fit_grid",
    "fit_spectrum", "line_trace", "mean_amplitude", "merge_templates", "pixel_mask",
    "quantify_map", "region_density", "simulate_pixel", "simulate_scan", "snr",
]
