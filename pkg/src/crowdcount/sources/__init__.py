"""Per-cell count sources.

Each source turns a grid cell into a count estimate plus side statistics;
the fusion layer consumes their concatenated outputs.
"""

from .fourier import FourierOutput, fourier_analyze
from .glcm import GlcmFeatures, glcm_features, quantize
from .head import Detection, HeadFilter, HeadSourceOutput, detect_heads, head_stats, train_head_filter
from .interest import (
    Descriptor,
    PoissonRates,
    crowd_confidence,
    estimate_rates,
    extract_descriptors,
    word_histogram,
)
from .wavelet import WaveletFeatures, wavelet_features

__all__ = [
    "FourierOutput",
    "fourier_analyze",
    "GlcmFeatures",
    "glcm_features",
    "quantize",
    "Detection",
    "HeadFilter",
    "HeadSourceOutput",
    "detect_heads",
    "head_stats",
    "train_head_filter",
    "Descriptor",
    "PoissonRates",
    "crowd_confidence",
    "estimate_rates",
    "extract_descriptors",
    "word_histogram",
    "WaveletFeatures",
    "wavelet_features",
]
