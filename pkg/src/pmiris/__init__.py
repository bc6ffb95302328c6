"""Forensic (post-mortem) iris image analysis toolkit.

Covers PMI-class dataset organization, classical iris segmentation and
rubber-sheet normalization, ISO/IEC 29794-6 style quality metrics, an
ICA-filter (BSIF-like) iris code encoder with a masked Hamming matcher, and
calibration of the latent-perturbation radius used to sample same-identity
synthetic images.
"""

from pmiris.errors import (
    CalibrationError,
    EncoderError,
    InvalidInputError,
    ManifestError,
    MatchError,
    NormalizationError,
    PmirisError,
    SegmentationError,
)

__version__ = "0.1.0"

__all__ = [
    "CalibrationError",
    "EncoderError",
    "InvalidInputError",
    "ManifestError",
    "MatchError",
    "NormalizationError",
    "PmirisError",
    "SegmentationError",
    "__version__",
]
