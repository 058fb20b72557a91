"""Comparison embeddings: raw code counts and per-patient PMI eigenvalues."""

from __future__ import annotations

import math

import numpy as np

from .core import ConfigError, EventSequence
from .spectral import Embedding


def count_embedding(seq: EventSequence) -> np.ndarray:
    """Number of occurrences of each code over the observation window."""
    return seq.counts.copy()


def occurrence_bins(seq: EventSequence, window: float) -> np.ndarray:
    """Binary ``(n_bins, d)`` indicators of code occurrence in ``[m w, (m+1) w)``.

    The last bin may be partial; an event exactly at ``T`` falls in it.
    """
    if not window > 0:
        raise ConfigError("PMI window must be positive")
    n_bins = max(1, math.ceil(seq.window_end / window - 1e-12))
    B = np.zeros((n_bins, seq.dim), dtype=bool)
    for j, times in enumerate(seq.events):
        if times.size:
            idx = np.minimum((times // window).astype(np.int64), n_bins - 1)
            B[idx, j] = True
    return B


def pmi_matrix(seq: EventSequence, window: float, smoothing: float | None = None) -> np.ndarray:
    """Smoothed pointwise mutual information of binned code co-occurrence.

    ``PMI[j, j'] = log((p(j, j') + eps) / ((p(j) + eps)(p(j') + eps)))`` with
    ``eps = 1/n_bins`` unless ``smoothing`` is given.
    """
    B = occurrence_bins(seq, window).astype(np.float64)
    n_bins = B.shape[0]
    eps = 1.0 / n_bins if smoothing is None else float(smoothing)
    joint = B.T @ B / n_bins
    marg = np.diag(joint).copy()
    P = np.log(joint + eps) - np.log(marg + eps)[:, None] - np.log(marg + eps)[None, :]
    return (P + P.T) / 2


def pmi_embedding(seq: EventSequence, window: float, k: int,
                  smoothing: float | None = None) -> Embedding:
    """Top ``k`` eigenvalues (algebraic, descending) of the PMI matrix."""
    if k > seq.dim:
        raise ConfigError("k cannot exceed the number of codes")
    vals = np.linalg.eigvalsh(pmi_matrix(seq, window, smoothing))[::-1]
    return Embedding(vals[:k])
