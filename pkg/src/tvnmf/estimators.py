"""scikit-learn style estimators over the functional core.

Spectrograms keep their natural ``(n_bins, n_frames)`` orientation and a
corpus is a list of them, since utterances differ in length. Every
``fit``/``transform`` also accepts a single 2-D array.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin, clone
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_is_fitted

from ._validation import check_corpus, check_seed
from .features import adapt_dictionary, extract_features, ivector_posterior
from .nmf import DEFAULT_EPSILON, NmfConfig, factorize, infer_activations, normalize_columns
from .tvm import CovarianceAccumulator, compute_stats, precompute, train_tvm


class SparseNMF(TransformerMixin, BaseEstimator):
    """Sparse KL-NMF dictionary learner.

    Parameters
    ----------
    n_components : int, default=60
        Number of dictionary atoms ``k``.
    sparsity : float, default=0.1
        Weight of the l1 penalty on the activations.
    max_iter : int, default=200
    tol : float, default=1e-5
        Stop when the relative objective change falls below this.
    random_state : int, default=0
    epsilon : float, default=1e-12
        Floor for dictionary, activation and reconstruction entries.

    Attributes
    ----------
    components_ : ndarray of shape (n_bins, n_components)
        The learned dictionary.
    cost_trace_ : list of float
    n_iter_ : int
    n_features_in_ : int
        Number of frequency bins seen during fit.
    """

    def __init__(self, n_components=60, sparsity=0.1, max_iter=200, tol=1e-5,
                 random_state=0, epsilon=DEFAULT_EPSILON):
        self.n_components = n_components
        self.sparsity = sparsity
        self.max_iter = max_iter
        self.tol = tol
        self.random_state = random_state
        self.epsilon = epsilon

    def _config(self):
        return NmfConfig(k=self.n_components, lam=self.sparsity, max_iters=self.max_iter,
                         rel_tol=self.tol, seed=check_seed(self.random_state),
                         epsilon=self.epsilon)

    def _fit(self, X):
        blocks, single = check_corpus(X)
        W, H, trace = factorize(blocks, self._config())
        self.components_ = W
        self.cost_trace_ = trace
        self.n_iter_ = len(trace) - 1
        self.n_features_in_ = W.shape[0]
        return H[0] if single else H

    def fit(self, X, y=None):
        self._fit(X)
        return self

    def fit_transform(self, X, y=None):
        return self._fit(X)

    def transform(self, X):
        """Activations against the fixed dictionary, ``(k, n_frames)`` per utterance."""
        check_is_fitted(self)
        blocks, single = check_corpus(X, self.n_features_in_)
        cfg = self._config()
        H = [infer_activations(V, self.components_, cfg) for V in blocks]
        return H[0] if single else H

    @property
    def config(self):
        return self._config()


class TotalVariability(TransformerMixin, BaseEstimator):
    """Total variability subspace over log-dictionary supervectors.

    Parameters
    ----------
    ubm : SparseNMF, optional
        Dictionary learner. Used as-is when already fitted; otherwise a
        clone is fitted on the same corpus. Defaults to ``SparseNMF()``.
    n_ivector : int, default=400
        Subspace dimension ``s``.
    em_iter : int, default=10
    random_state : int, default=0
        Seed for the initial subspace matrix.
    diagonal_covariance : bool, default=False

    Attributes
    ----------
    ubm_ : SparseNMF
    model_ : TotalVariabilityModel
    objective_trace_ : list of float
    """

    def __init__(self, ubm=None, n_ivector=400, em_iter=10, random_state=0,
                 diagonal_covariance=False):
        self.ubm = ubm
        self.n_ivector = n_ivector
        self.em_iter = em_iter
        self.random_state = random_state
        self.diagonal_covariance = diagonal_covariance

    def fit(self, X, y=None, posteriors=None):
        """Fit on a corpus.

        ``posteriors`` optionally replaces the normalized activations with
        caller-supplied per-frame component posteriors ``(k, n_frames)``.
        """
        blocks, _ = check_corpus(X)
        ubm = SparseNMF() if self.ubm is None else self.ubm
        try:
            check_is_fitted(ubm)
            self.ubm_ = ubm
        except NotFittedError:
            self.ubm_ = clone(ubm).fit(blocks)
        W = self.ubm_.components_
        cfg = self.ubm_.config
        if posteriors is None:
            posteriors = [normalize_columns(H, cfg.epsilon) for H in self.ubm_.transform(blocks)]
        acc = CovarianceAccumulator(W, diagonal=self.diagonal_covariance)
        stats = []
        for V, H in zip(blocks, posteriors):
            stats.append(compute_stats(V, W, H))
            acc.add(V, H)
        sigma = acc.finalize()
        self.model_, self.objective_trace_ = train_tvm(
            stats, W, sigma, self.n_ivector, self.em_iter, check_seed(self.random_state)
        )
        self.model_.meta.update({"lambda": repr(float(cfg.lam)),
                                 "epsilon": repr(float(cfg.epsilon))})
        self.n_features_in_ = W.shape[0]
        return self

    def transform(self, X):
        """Posterior-mean i-vectors, shape ``(n_utterances, n_ivector)``."""
        check_is_fitted(self)
        blocks, _ = check_corpus(X, self.n_features_in_)
        pre = precompute(self.model_)
        cfg = self.ubm_.config
        return np.stack([ivector_posterior(V, self.model_, cfg, pre).mean for V in blocks])


class NoiseRobustFeatures(TransformerMixin, BaseEstimator):
    """Log activations against an utterance-adapted dictionary.

    ``fit`` learns the dictionary and the total variability subspace;
    ``transform`` maps each ``(n_bins, n_frames)`` spectrogram to a
    ``(n_components, n_frames)`` feature matrix.
    """

    def __init__(self, n_components=60, sparsity=0.1, n_ivector=400, nmf_max_iter=200,
                 nmf_tol=1e-5, em_iter=10, random_state=0, diagonal_covariance=False):
        self.n_components = n_components
        self.sparsity = sparsity
        self.n_ivector = n_ivector
        self.nmf_max_iter = nmf_max_iter
        self.nmf_tol = nmf_tol
        self.em_iter = em_iter
        self.random_state = random_state
        self.diagonal_covariance = diagonal_covariance

    def fit(self, X, y=None):
        ubm = SparseNMF(self.n_components, self.sparsity, self.nmf_max_iter, self.nmf_tol,
                        self.random_state)
        self.tvm_ = TotalVariability(ubm, self.n_ivector, self.em_iter, self.random_state,
                                     self.diagonal_covariance).fit(X)
        self.n_features_in_ = self.tvm_.n_features_in_
        return self

    def _parts(self):
        check_is_fitted(self)
        return self.tvm_.model_, self.tvm_.ubm_.config

    def transform(self, X):
        model, cfg = self._parts()
        blocks, single = check_corpus(X, self.n_features_in_)
        pre = precompute(model)
        feats = [extract_features(V, model, cfg, pre) for V in blocks]
        return feats[0] if single else feats

    def ivectors(self, X):
        return self.tvm_.transform(X)

    def adapted_dictionary(self, V):
        model, cfg = self._parts()
        q = self.tvm_.transform([V])[0]
        return adapt_dictionary(model, q).values
