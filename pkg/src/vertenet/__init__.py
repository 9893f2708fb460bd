"""Vertebral landmark detection with dual-resolution attention fusion, plus
inter-vertebral guides and abdominal-aorta crop detection on lateral spine images.

Everything runs on numpy float64 with a small reverse-mode tape
(:mod:`vertenet.tensor`); the CLI lives in :mod:`vertenet.cli`.
"""

from .attention import WindowSpec, csa_forward, drca_forward, drsa_forward, gdfn_forward, transformer_block
from .cropdetect import CropConfig, CropReport, detect_black_regions, detect_crop, factor_sweep, smooth_mask
from .guides import GuideSet, classify_corners, generate_ivgs, mean_vertebral_width
from .landmarks import LandmarkSet, Vertebra, decode_landmarks, render_targets
from .model import ModelConfig, VertenetParams, load_model, save_model, vertenet_forward
from .spline import fit_natural_cubic_spline, sample_spline
from .stats import ScoreSheet, agreement_stats
from .tensor import GradTape, Tensor

__version__ = "0.1.0"

__all__ = [
    "CropConfig", "CropReport", "GradTape", "GuideSet", "LandmarkSet", "ModelConfig", "ScoreSheet", "Tensor",
    "Vertebra", "VertenetParams", "WindowSpec", "agreement_stats", "classify_corners", "csa_forward",
    "decode_landmarks", "detect_black_regions", "detect_crop", "drca_forward", "drsa_forward", "factor_sweep",
    "fit_natural_cubic_spline", "gdfn_forward", "generate_ivgs", "load_model", "mean_vertebral_width",
    "render_targets", "sample_spline", "save_model", "smooth_mask", "transformer_block", "vertenet_forward",
]
