"""Sparse NMF under the generalized KL divergence.

All matrices follow the spectrogram orientation: ``V`` is ``(d, t)``
(frequency bins by frames), the dictionary ``W`` is ``(d, k)`` and the
activations ``H`` are ``(k, t)``.

Training data may be given either as one array or as a sequence of column
blocks (one per utterance). Blocks are never concatenated; the dictionary
update sums its numerator and denominator over blocks, which is the same
update as on the column-wise concatenation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_EPSILON = 1e-12


@dataclass(frozen=True)
class NmfConfig:
    """Settings shared by dictionary training and activation inference."""

    k: int = 60
    lam: float = 0.1
    max_iters: int = 200
    rel_tol: float = 1e-5
    seed: int = 0
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if not self.lam >= 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if not self.rel_tol >= 0:
            raise ValueError(f"rel_tol must be >= 0, got {self.rel_tol}")


def _check_shapes(V, W, H):
    if V.ndim != 2 or W.ndim != 2 or H.ndim != 2:
        raise ValueError("V, W and H must all be 2-D")
    if W.shape[0] != V.shape[0] or H.shape[1] != V.shape[1] or W.shape[1] != H.shape[0]:
        raise ValueError(
            f"shape mismatch: V {V.shape}, W {W.shape}, H {H.shape}"
        )


def _as_blocks(V) -> list[np.ndarray] | Sequence[np.ndarray]:
    if isinstance(V, np.ndarray):
        return [V]
    return V


def gkl_cost(V, W, H, lam=0.0):
    """Generalized KL divergence ``D(V || WH)`` plus ``lam * sum(H)``.

    Raises ``ValueError`` when shapes do not conform, when the
    reconstruction has non-positive entries, or when the result is not
    finite.
    """
    V = np.asarray(V, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    H = np.asarray(H, dtype=np.float64)
    _check_shapes(V, W, H)
    V_hat = W @ H
    if np.any(V_hat <= 0):
        raise ValueError("reconstruction WH must be strictly positive")
    with np.errstate(divide="ignore", invalid="ignore"):
        # 0 * log(0 / x) is taken as 0
        log_term = np.where(V > 0, V * np.log(V / V_hat), 0.0)
    cost = float(np.sum(log_term - V + V_hat) + lam * np.sum(H))
    if not np.isfinite(cost):
        raise ValueError("cost is not finite")
    return cost


def update_dictionary(V, W, H, epsilon=DEFAULT_EPSILON):
    """One multiplicative KL update of the dictionary, ``H`` held fixed.

    ``V`` and ``H`` may be matching sequences of column blocks.
    """
    blocks = _as_blocks(V)
    H_blocks = _as_blocks(H)
    if len(blocks) != len(H_blocks):
        raise ValueError("V and H must have the same number of blocks")
    numer = np.zeros_like(W)
    denom = np.zeros(W.shape[1])
    for V_b, H_b in zip(blocks, H_blocks):
        _check_shapes(V_b, W, H_b)
        ratio = V_b / np.maximum(W @ H_b, epsilon)
        numer += ratio @ H_b.T
        # 1_{d x t} H^T has identical rows: the row sums of H
        denom += H_b.sum(axis=1)
    W_new = W * numer / np.maximum(denom, epsilon)[None, :]
    return np.maximum(W_new, epsilon)


def update_activations(V, W, H, lam=0.0, epsilon=DEFAULT_EPSILON):
    """One multiplicative update of the activations with an l1 penalty."""
    _check_shapes(V, W, H)
    ratio = V / np.maximum(W @ H, epsilon)
    # W^T 1_{d x t} has identical columns: the column sums of W
    denom = W.sum(axis=0)[:, None] + lam
    H_new = H * (W.T @ ratio) / np.maximum(denom, epsilon)
    if not np.all(np.isfinite(H_new)):
        raise FloatingPointError("non-finite activation update")
    return np.maximum(H_new, epsilon)


def random_init(shape, rng, epsilon=DEFAULT_EPSILON):
    """Uniform entries in ``(epsilon, 1]``."""
    return np.maximum(1.0 - rng.random(shape), epsilon)


def _rel_change(prev, cur):
    return abs(prev - cur) / max(abs(prev), np.finfo(float).tiny)


def _total_cost(blocks, W, H_blocks, lam):
    return sum(gkl_cost(V_b, W, H_b, lam) for V_b, H_b in zip(blocks, H_blocks))


def factorize(V, config: NmfConfig, W_init=None):
    """Learn a dictionary and activations by alternating updates.

    Parameters
    ----------
    V : ndarray of shape (d, t) or sequence of (d, t_u) arrays
        Strictly positive data. A sequence is treated as the column-wise
        concatenation of its blocks without materializing it.
    config : NmfConfig
    W_init : ndarray of shape (d, k), optional
        Starting dictionary; random when omitted.

    Returns
    -------
    W : ndarray of shape (d, k)
    H : ndarray of shape (k, t) or list of (k, t_u) arrays
        Same container type as ``V``.
    cost_trace : list of float
        Objective at initialization followed by one value per iteration.
    """
    single = isinstance(V, np.ndarray)
    blocks = _as_blocks(V)
    if len(blocks) == 0:
        raise ValueError("no training data")
    rng = np.random.default_rng(config.seed)
    d = blocks[0].shape[0]
    eps = config.epsilon
    if W_init is None:
        W = random_init((d, config.k), rng, eps)
    else:
        W = np.maximum(np.array(W_init, dtype=np.float64), eps)
    # draw H for the whole concatenation so block layout does not change the init
    widths = [V_b.shape[1] for V_b in blocks]
    H_all = random_init((config.k, sum(widths)), rng, eps)
    H_blocks = [h.copy() for h in np.split(H_all, np.cumsum(widths)[:-1], axis=1)]

    trace = [_total_cost(blocks, W, H_blocks, config.lam)]
    for it in range(config.max_iters):
        W = update_dictionary(blocks, W, H_blocks, eps)
        H_blocks = [
            update_activations(V_b, W, H_b, config.lam, eps)
            for V_b, H_b in zip(blocks, H_blocks)
        ]
        trace.append(_total_cost(blocks, W, H_blocks, config.lam))
        logger.debug("nmf iter %d cost %.6g", it + 1, trace[-1])
        if _rel_change(trace[-2], trace[-1]) < config.rel_tol:
            break
    return W, (H_blocks[0] if single else H_blocks), trace


def infer_activations(V, W, config: NmfConfig, return_trace=False):
    """Fit activations of ``V`` against a fixed dictionary ``W``."""
    V = np.asarray(V, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    if W.shape[1] != config.k:
        raise ValueError(f"dictionary has {W.shape[1]} atoms, config.k={config.k}")
    rng = np.random.default_rng(config.seed)
    eps = config.epsilon
    H = random_init((W.shape[1], V.shape[1]), rng, eps)
    trace = [gkl_cost(V, W, H, config.lam)]
    for _ in range(config.max_iters):
        H = update_activations(V, W, H, config.lam, eps)
        trace.append(gkl_cost(V, W, H, config.lam))
        if _rel_change(trace[-2], trace[-1]) < config.rel_tol:
            break
    if return_trace:
        return H, trace
    return H


def normalize_columns(H, epsilon=DEFAULT_EPSILON):
    """Scale each column to sum to one; near-empty columns become uniform."""
    H = np.asarray(H, dtype=np.float64)
    sums = H.sum(axis=0)
    out = np.empty_like(H)
    ok = sums >= epsilon
    out[:, ok] = H[:, ok] / sums[ok]
    out[:, ~ok] = 1.0 / H.shape[0]
    return out
