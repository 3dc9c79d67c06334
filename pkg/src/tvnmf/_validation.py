"""Input validation helpers for the estimator API."""

import numbers

import numpy as np


def check_spectrogram(V, n_rows=None, name="spectrogram"):
    """Return ``V`` as a float64 ``(d, t)`` array, strictly positive and finite."""
    V = np.asarray(V, dtype=np.float64)
    if V.ndim != 2:
        raise ValueError(f"{name} must be 2-D (bins x frames), got {V.ndim}-D")
    if V.shape[1] == 0:
        raise ValueError(f"{name} has no frames")
    if not np.all(np.isfinite(V)):
        raise ValueError(f"{name} contains non-finite values")
    if np.any(V <= 0):
        raise ValueError(f"{name} must be strictly positive; apply a floor first")
    if n_rows is not None and V.shape[0] != n_rows:
        raise ValueError(f"{name} has {V.shape[0]} rows, expected {n_rows}")
    return V


def check_corpus(X, n_rows=None):
    """Normalize a single spectrogram or a sequence of them.

    Returns ``(list_of_arrays, single)`` where ``single`` tells whether the
    caller passed one 2-D array.
    """
    if isinstance(X, np.ndarray) and X.ndim == 2:
        return [check_spectrogram(X, n_rows)], True
    items = list(X)
    if not items:
        raise ValueError("empty corpus")
    out = []
    for i, V in enumerate(items):
        V = check_spectrogram(V, n_rows, name=f"spectrogram {i}")
        if n_rows is None:
            n_rows = V.shape[0]
        out.append(V)
    return out, False


def check_seed(seed):
    if isinstance(seed, (numbers.Integral, np.integer)) and not isinstance(seed, bool):
        return int(seed)
    raise TypeError(f"random_state must be an int for reproducible runs, got {seed!r}")
