"""Confidence-weighted multi-view multi-modal graph attention classifier.

Pipeline: ROI co-function graphs from thresholded Pearson correlation,
three-level multi-head graph attention encoders per view, cross-view and
cross-modal attention fusion, and harmonized true/false class-probability
confidence weighting, all on a small reverse-mode autodiff engine.
"""

from . import autodiff, biomarker, confidence, data, fusion, gat, model, rri, studies, trainer
from .errors import (
    ConfigurationError,
    DataError,
    DimensionError,
    NumericError,
    ParseError,
    SplitError,
    TrustfuseError,
    UsageError,
)

__version__ = "0.1.0"
