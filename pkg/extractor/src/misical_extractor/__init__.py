"""Extraction sidecar: images + masks -> binary pool files of patch
features from MC-dropout segmentation passes.
"""

from .errors import (
    ExtractorError,
    ModelLoadError,
    PatchGridError,
    PoolWriteError,
    UnpairedFilesError,
)
from .extract import ExtractionJob, dump_probmaps, extract
from .features import patch_mean_entropy, patch_presence, patch_summary, pixel_disagreement
from .model import TinySegNet, build_model, mc_probabilities
from .poolwriter import PoolFileWriter

__version__ = "0.1.0"
