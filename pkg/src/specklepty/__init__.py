"""Lensless speckle-scanning microscopy: simulation, registration and sub-sampled ptychographic recovery."""

from .estimators import PhaseCorrelationRegistration, SubsampledPtychography

__version__ = "0.1.0"

__all__ = ["PhaseCorrelationRegistration", "SubsampledPtychography", "__version__"]
