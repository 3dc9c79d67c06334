"""Per-utterance i-vectors, adapted dictionaries and log-activation features."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .nmf import NmfConfig, infer_activations, normalize_columns
from .tvm import (
    TotalVariabilityModel,
    compute_stats,
    e_step,
    stack_supervector,
    unstack_supervector,
)

logger = logging.getLogger(__name__)

MAX_ENTRY = 1e12


@dataclass
class AdaptedDictionary:
    values: np.ndarray
    source_ivector: np.ndarray
    clamped: bool = False


def _check_dims(V, model):
    d, k, _ = model.dims
    if V.ndim != 2 or V.shape[0] != d:
        raise ValueError(f"spectrogram has shape {V.shape}, model expects {d} rows")


def ivector_posterior(V, model: TotalVariabilityModel, nmf_config: NmfConfig, pre=None):
    """Full i-vector posterior for one utterance (mean and covariance)."""
    V = np.asarray(V, dtype=np.float64)
    _check_dims(V, model)
    H = infer_activations(V, model.w_ubm, nmf_config)
    stats = compute_stats(V, model.w_ubm, normalize_columns(H, nmf_config.epsilon))
    return e_step(stats, model, pre)


def extract_ivector(V, model, nmf_config, pre=None):
    """Posterior-mean i-vector of one utterance."""
    return ivector_posterior(V, model, nmf_config, pre).mean


def adapt_dictionary(model, q):
    """``exp(log w_ubm + T q)`` reshaped to ``(d, k)``.

    Entries above 1e12 are clamped and ``clamped`` is set on the result.
    """
    q = np.asarray(q, dtype=np.float64)
    if not np.all(np.isfinite(q)):
        raise ValueError("i-vector must be finite")
    d, k, _ = model.dims
    log_w = np.log(model.w_ubm_supervector) + model.T_supervector @ q
    with np.errstate(over="ignore"):
        w = np.exp(log_w)
    clamped = bool(np.any(w > MAX_ENTRY))
    if clamped:
        logger.warning("adapted dictionary overflow; entries clamped to %g", MAX_ENTRY)
        w = np.minimum(w, MAX_ENTRY)
    return AdaptedDictionary(unstack_supervector(w, d, k), q, clamped)


def extract_features(V, model, nmf_config, pre=None, return_ivector=False):
    """Log activations of ``V`` against its own adapted dictionary, ``(k, t)``."""
    V = np.asarray(V, dtype=np.float64)
    q = extract_ivector(V, model, nmf_config, pre)
    W_a = adapt_dictionary(model, q)
    H_adapted = infer_activations(V, W_a.values, nmf_config)
    feats = np.log(np.maximum(H_adapted, nmf_config.epsilon))
    if return_ivector:
        return feats, q
    return feats


__all__ = [
    "AdaptedDictionary",
    "adapt_dictionary",
    "extract_features",
    "extract_ivector",
    "ivector_posterior",
    "stack_supervector",
    "unstack_supervector",
]
