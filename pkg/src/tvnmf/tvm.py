"""Total variability modeling on log-domain NMF statistics.

Normalized activation columns play the role of per-frame component
posteriors and the (log) dictionary columns play the role of component
means. Per-utterance statistics feed an EM estimator for the total
variability matrix ``T``, stored as ``k`` blocks of shape ``(d, s)``.
Block ``c`` corresponds to rows ``c*d:(c+1)*d`` of the supervector-space
matrix, matching a column-major stacking of the ``(d, k)`` dictionary.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy import linalg

logger = logging.getLogger(__name__)

STAT_FLOOR = 1e-8
JITTER_SCALE = 1e-6
MIN_JITTER = 1e-10


@dataclass
class SufficientStats:
    """Zeroth-order counts ``n`` (k,), ``F`` and centered ``F_centered`` (d, k)."""

    n: np.ndarray
    F: np.ndarray
    F_centered: np.ndarray
    t_u: int


@dataclass
class CovarianceBlocks:
    """Per-component ``(d, d)`` covariances stacked as ``(k, d, d)``."""

    blocks: np.ndarray
    jitter: np.ndarray
    empty_components: list = field(default_factory=list)

    def __post_init__(self):
        self.blocks = np.asarray(self.blocks, dtype=np.float64)
        self.jitter = np.broadcast_to(
            np.asarray(self.jitter, dtype=np.float64), (self.blocks.shape[0],)
        ).copy()


@dataclass
class TotalVariabilityModel:
    w_ubm: np.ndarray
    T: np.ndarray
    sigma: CovarianceBlocks
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.w_ubm = np.asarray(self.w_ubm, dtype=np.float64)
        self.T = np.asarray(self.T, dtype=np.float64)
        d, k = self.w_ubm.shape
        if self.T.ndim != 3 or self.T.shape[:2] != (k, d):
            raise ValueError(f"T has shape {self.T.shape}, expected ({k}, {d}, s)")
        if self.sigma.blocks.shape != (k, d, d):
            raise ValueError(
                f"sigma has shape {self.sigma.blocks.shape}, expected ({k}, {d}, {d})"
            )
        if np.any(self.w_ubm <= 0):
            raise ValueError("UBM dictionary must be strictly positive")

    @property
    def dims(self):
        """``(d, k, s)``."""
        k, d, s = self.T.shape
        return d, k, s

    @property
    def w_ubm_supervector(self):
        return stack_supervector(self.w_ubm)

    @property
    def T_supervector(self):
        k, d, s = self.T.shape
        return self.T.reshape(k * d, s)


class IVectorPosterior(NamedTuple):
    mean: np.ndarray
    covariance: np.ndarray


def stack_supervector(M):
    """Stack the columns of a ``(d, k)`` matrix into a length ``k*d`` vector."""
    return np.asarray(M).reshape(-1, order="F")


def unstack_supervector(w, d, k):
    """Inverse of :func:`stack_supervector`."""
    return np.asarray(w).reshape((d, k), order="F")


def compute_stats(V, W_ubm, H_norm, stat_floor=STAT_FLOOR):
    """Zeroth- and first-order log-domain statistics of one utterance.

    ``F[:, c]`` is ``n_c`` times the log of the posterior-weighted mean
    frame for component ``c``; ``F_centered`` subtracts ``n_c * log W[:, c]``.
    Components whose count is below ``stat_floor`` get a zero centered
    statistic.
    """
    V = np.asarray(V, dtype=np.float64)
    W_ubm = np.asarray(W_ubm, dtype=np.float64)
    H_norm = np.asarray(H_norm, dtype=np.float64)
    if V.shape[1] != H_norm.shape[1] or W_ubm.shape != (V.shape[0], H_norm.shape[0]):
        raise ValueError(
            f"shape mismatch: V {V.shape}, W {W_ubm.shape}, H {H_norm.shape}"
        )
    n = H_norm.sum(axis=1)
    log_w = np.log(W_ubm)
    used = n >= stat_floor
    weighted = V @ H_norm.T
    F = n[None, :] * log_w
    F[:, used] = n[used] * np.log(weighted[:, used] / n[used])
    F_centered = F - n[None, :] * log_w
    if not (np.all(np.isfinite(F)) and np.all(np.isfinite(F_centered))):
        raise FloatingPointError("non-finite statistics; check flooring of V and W")
    return SufficientStats(n=n, F=F, F_centered=F_centered, t_u=V.shape[1])


class CovarianceAccumulator:
    """Pooled posterior-weighted scatter of ``log V`` around ``log W``.

    Feed utterances one at a time with :meth:`add`, then call
    :meth:`finalize`.
    """

    def __init__(self, W_ubm, diagonal=False):
        self.log_w = np.log(np.asarray(W_ubm, dtype=np.float64))
        d, k = self.log_w.shape
        self.diagonal = diagonal
        self.scatter = np.zeros((k, d, d))
        self.counts = np.zeros(k)

    def add(self, V, H_norm):
        log_v = np.log(np.asarray(V, dtype=np.float64))
        for c in range(self.log_w.shape[1]):
            h = H_norm[c]
            D = log_v - self.log_w[:, c : c + 1]
            self.scatter[c] += (D * h) @ D.T
            self.counts[c] += h.sum()

    def finalize(self):
        k, d, _ = self.scatter.shape
        blocks = np.empty_like(self.scatter)
        jitter = np.zeros(k)
        empty = []
        for c in range(k):
            if self.counts[c] <= 0:
                blocks[c] = np.eye(d)
                empty.append(c)
                continue
            S = self.scatter[c] / self.counts[c]
            S = 0.5 * (S + S.T)
            if self.diagonal:
                S = np.diag(np.diag(S))
            jitter[c] = max(JITTER_SCALE * np.trace(S) / d, MIN_JITTER)
            blocks[c] = S + jitter[c] * np.eye(d)
        if empty:
            logger.warning("components with zero total count: %s", empty)
        return CovarianceBlocks(blocks, jitter, empty)


def estimate_covariances(spectrograms, H_norms, W_ubm, diagonal=False):
    """Covariance blocks pooled over all utterances and frames."""
    acc = CovarianceAccumulator(W_ubm, diagonal=diagonal)
    for V, H in zip(spectrograms, H_norms):
        acc.add(V, H)
    return acc.finalize()


class _Precomputed(NamedTuple):
    TtSinv: np.ndarray  # (k, s, d)
    TtSinvT: np.ndarray  # (k, s, s)


def precompute(model_or_T, sigma=None):
    """Per-component ``T_c^T Sigma_c^{-1}`` and ``T_c^T Sigma_c^{-1} T_c``."""
    if sigma is None:
        T, sigma = model_or_T.T, model_or_T.sigma
    else:
        T = model_or_T
    k, d, s = T.shape
    TtSinv = np.empty((k, s, d))
    for c in range(k):
        cf = linalg.cho_factor(sigma.blocks[c], lower=True)
        TtSinv[c] = linalg.cho_solve(cf, T[c]).T
    TtSinvT = np.einsum("csd,cdr->csr", TtSinv, T)
    return _Precomputed(TtSinv, TtSinvT)


def _posterior(stats, pre):
    s = pre.TtSinvT.shape[1]
    L = np.eye(s) + np.einsum("c,csr->sr", stats.n, pre.TtSinvT)
    L = 0.5 * (L + L.T)
    b = np.einsum("csd,dc->s", pre.TtSinv, stats.F_centered)
    try:
        cf = linalg.cho_factor(L, lower=True)
    except linalg.LinAlgError as exc:
        raise FloatingPointError("posterior precision not positive definite") from exc
    cov = linalg.cho_solve(cf, np.eye(s))
    cov = 0.5 * (cov + cov.T)
    mean = linalg.cho_solve(cf, b)
    logdet = 2.0 * np.sum(np.log(np.diag(cf[0])))
    return IVectorPosterior(mean, cov), 0.5 * b @ mean - 0.5 * logdet


def e_step(stats, model, pre=None):
    """Posterior mean and covariance of the i-vector for one utterance."""
    if pre is None:
        pre = precompute(model)
    return _posterior(stats, pre)[0]


def m_step(stats_list, posteriors, T_prev=None, loading=1e-10):
    """Re-estimate every block ``T_c`` from accumulated statistics.

    Returns ``(T, loaded)`` where ``loaded`` lists the components whose
    accumulator needed diagonal loading. Components that no utterance
    visits keep their ``T_prev`` block (zeros when ``T_prev`` is None).
    """
    d, k = stats_list[0].F_centered.shape
    s = posteriors[0].mean.shape[0]
    A = np.zeros((k, s, s))
    B = np.zeros((k, d, s))
    for st, post in zip(stats_list, posteriors):
        second = post.covariance + np.outer(post.mean, post.mean)
        A += st.n[:, None, None] * second[None]
        B += np.einsum("dc,s->cds", st.F_centered, post.mean)
    T = np.zeros((k, d, s)) if T_prev is None else np.array(T_prev, dtype=np.float64)
    total = sum(st.n for st in stats_list)
    loaded = []
    for c in range(k):
        if total[c] <= 0:
            continue
        A_c = 0.5 * (A[c] + A[c].T)
        try:
            cf = linalg.cho_factor(A_c, lower=True)
        except linalg.LinAlgError:
            loaded.append(c)
            A_c = A_c + loading * max(np.trace(A_c) / s, 1.0) * np.eye(s)
            cf = linalg.cho_factor(A_c, lower=True)
        T[c] = linalg.cho_solve(cf, B[c].T).T
    return T, loaded


def initial_T(d, k, s, sigma, seed):
    rng = np.random.default_rng(seed)
    scale = 0.001 * np.mean(np.diagonal(sigma.blocks, axis1=1, axis2=2))
    return rng.uniform(-0.5, 0.5, size=(k, d, s)) * scale


def train_tvm(stats_list: Sequence[SufficientStats], W_ubm, sigma, s, em_iters=10,
              seed=0, T_init=None):
    """Estimate ``T`` by EM with the covariances held fixed.

    Returns the model and the objective trace. The objective is the
    log-likelihood of the first-order statistics with the i-vector
    integrated out, up to a constant independent of ``T``. Entry ``i`` is
    evaluated at the ``T`` before the ``i``-th M-step; the last entry is
    evaluated at the returned ``T``. EM guarantees it never decreases.
    """
    if len(stats_list) == 0:
        raise ValueError("empty stats list")
    if s < 1 or em_iters < 1:
        raise ValueError("s and em_iters must be >= 1")
    W_ubm = np.asarray(W_ubm, dtype=np.float64)
    d, k = W_ubm.shape
    T = initial_T(d, k, s, sigma, seed) if T_init is None else np.array(T_init, float)
    trace = []
    for it in range(em_iters + 1):
        pre = precompute(T, sigma)
        posts, objective = [], 0.0
        for st in stats_list:
            post, obj = _posterior(st, pre)
            posts.append(post)
            objective += obj
        trace.append(float(objective))
        logger.info("em iter %d objective %.10g", it, objective)
        if it == em_iters:
            break
        T, loaded = m_step(stats_list, posts, T_prev=T)
        if loaded:
            logger.warning("diagonal loading applied to components %s", loaded)
    model = TotalVariabilityModel(W_ubm, T, sigma)
    return model, trace


def auxiliary_objective(stats_list, model):
    """Objective of :func:`train_tvm` evaluated at ``model.T``."""
    pre = precompute(model)
    return float(sum(_posterior(st, pre)[1] for st in stats_list))
