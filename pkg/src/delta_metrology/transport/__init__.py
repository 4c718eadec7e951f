"""Weak-localization magnetotransport: models, fits, Hall analysis."""
from .fitting import MagnetoTrace, PerpFit, ScalarFit, fit_parallel, fit_perp, fit_tilt
from .hall import (ComparisonReport, HallResult, RunSummary, compare_runs, gamma_from_thickness,
                   hall_analysis, hall_slope, mean_free_path, mobility_from_mean_free_path,
                   thickness)
from .models import (SIGMA_0, CharacteristicFields, WlParams, characteristic_fields,
                     delta_sigma_parallel, delta_sigma_perp, delta_sigma_tilt, digamma,
                     trigamma)

__all__ = [
    "SIGMA_0", "CharacteristicFields", "ComparisonReport", "HallResult", "MagnetoTrace",
    "PerpFit", "RunSummary", "ScalarFit", "WlParams", "characteristic_fields",
    "compare_runs", "delta_sigma_parallel", "delta_sigma_perp", "delta_sigma_tilt",
    "digamma", "fit_parallel", "fit_perp", "fit_tilt", "gamma_from_thickness",
    "hall_analysis", "hall_slope", "mean_free_path", "mobility_from_mean_free_path",
    "thickness", "trigamma",
]
