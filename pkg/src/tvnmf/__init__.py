"""Noise-robust acoustic features from NMF dictionaries adapted per utterance
through a total variability subspace."""

from .estimators import NoiseRobustFeatures, SparseNMF, TotalVariability
from .features import adapt_dictionary, extract_features, extract_ivector
from .model_io import load_model, read_matrix, save_model, write_matrix
from .nmf import NmfConfig, factorize, gkl_cost, infer_activations, normalize_columns
from .spectrogram import AudioBuffer, compute_spectrogram, load_wav
from .tvm import (
    CovarianceBlocks,
    IVectorPosterior,
    SufficientStats,
    TotalVariabilityModel,
    compute_stats,
    e_step,
    estimate_covariances,
    m_step,
    train_tvm,
)

__version__ = "0.1.0"

__all__ = [
    "AudioBuffer",
    "CovarianceBlocks",
    "IVectorPosterior",
    "NmfConfig",
    "NoiseRobustFeatures",
    "SparseNMF",
    "SufficientStats",
    "TotalVariability",
    "TotalVariabilityModel",
    "adapt_dictionary",
    "compute_spectrogram",
    "compute_stats",
    "e_step",
    "estimate_covariances",
    "extract_features",
    "extract_ivector",
    "factorize",
    "gkl_cost",
    "infer_activations",
    "load_model",
    "load_wav",
    "m_step",
    "normalize_columns",
    "read_matrix",
    "save_model",
    "train_tvm",
    "write_matrix",
]
