"""Crowd count estimation for high-density still images.

Per-cell estimates from five independent sources (interest-point words,
spectral periodicity, co-occurrence texture, wavelet energies, head
detections) are fused by a trained regressor; an image's count is the sum
over its grid cells.
"""

from .config import Config, config_from_dict, load_config
from .dataset import Annotation, Manifest, Sample, load_all, load_manifest, make_folds
from .errors import ConfigError, CrowdCountError, DataError, ModelCompatError
from .imaging import GrayImage, GridSpec, Patch, decode_image, load_image, partition
from .pipeline import (
    EvalReport,
    TrainedModel,
    count_image,
    cross_validate,
    evaluate,
    evaluate_model,
    load_model,
    save_model,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "Config",
    "config_from_dict",
    "load_config",
    "Annotation",
    "Manifest",
    "Sample",
    "load_all",
    "load_manifest",
    "make_folds",
    "ConfigError",
    "CrowdCountError",
    "DataError",
    "ModelCompatError",
    "GrayImage",
    "GridSpec",
    "Patch",
    "decode_image",
    "load_image",
    "partition",
    "EvalReport",
    "TrainedModel",
    "count_image",
    "cross_validate",
    "evaluate",
    "evaluate_model",
    "load_model",
    "save_model",
    "train",
    "__version__",
]
