"""Buried dopant-layer metrology: XRF raster quantification and
weak-localization magnetotransport analysis."""
from ._jit import backend
from .core import (CONSTANTS, BeamConfig, DetectorConfig, ExternalReference, Measurement,
                   ScanGrid, Spectrum)
from .errors import (CalibrationError, ConfigError, DeltaMetrologyError, DomainError,
                     FitError, ParseError)

__version__ = "0.1.0"

__all__ = [
    "CONSTANTS", "BeamConfig", "CalibrationError", "ConfigError", "DeltaMetrologyError",
    "DetectorConfig", "DomainError", "ExternalReference", "FitError", "Measurement",
    "ParseError", "ScanGrid", "Spectrum", "backend", "__version__",
]
