"""Synthetic corpora drawn from the log-normal total variability model.

Each frame picks one component ``c`` uniformly and is drawn as

    log v = log w_c + T_c q_u + e,   e ~ N(-noise**2 / 2, noise**2 I)

so that ``E[v] = w_c * exp(T_c q_u)``: the dictionary column is the mean
spectrum and the centered statistics have no systematic offset.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model_io import write_matrix


@dataclass
class SyntheticCorpus:
    spectrograms: list
    W: np.ndarray  # (d, k)
    T: np.ndarray  # (k, d, s)
    q: np.ndarray  # (U, s)
    labels: np.ndarray  # (U, frames), integer component per frame

    def posteriors(self, u):
        """Indicator posteriors of utterance ``u``, shape ``(k, frames)``."""
        k = self.W.shape[1]
        H = np.zeros((k, self.labels.shape[1]))
        H[self.labels[u], np.arange(self.labels.shape[1])] = 1.0
        return H


def generate(d=4, k=3, s=2, utterances=200, frames=100, seed=0,
             t_scale=0.5, noise=0.1):
    if min(d, k, s, utterances, frames) < 1:
        raise ValueError("all dimensions must be >= 1")
    rng = np.random.default_rng(seed)
    log_w = rng.normal(0.0, 1.0, size=(d, k))
    T = rng.normal(0.0, t_scale, size=(k, d, s))
    q = rng.standard_normal((utterances, s))
    labels = rng.integers(0, k, size=(utterances, frames))
    spectrograms = []
    for u in range(utterances):
        means = log_w + np.einsum("cds,s->dc", T, q[u])
        log_v = means[:, labels[u]] + rng.normal(-0.5 * noise**2, noise, size=(d, frames))
        spectrograms.append(np.exp(log_v))
    return SyntheticCorpus(spectrograms, np.exp(log_w), T, q, labels)


def write_corpus(corpus: SyntheticCorpus, out_dir):
    """Write ``utt_<u>.mat`` files, ``list.txt`` and a ``truth/`` directory."""
    out = Path(out_dir)
    truth = out / "truth"
    truth.mkdir(parents=True, exist_ok=True)
    names = []
    for u, V in enumerate(corpus.spectrograms):
        name = f"utt_{u:05d}.mat"
        write_matrix(out / name, V)
        names.append(name)
    (out / "list.txt").write_text("".join(n + "\n" for n in names), encoding="utf-8")
    k, d, s = corpus.T.shape
    write_matrix(truth / "w.mat", corpus.W)
    write_matrix(truth / "T.mat", corpus.T.reshape(k * d, s))
    write_matrix(truth / "q.mat", corpus.q)
    write_matrix(truth / "labels.mat", corpus.labels.astype(np.float64))
    return [out / n for n in names]
