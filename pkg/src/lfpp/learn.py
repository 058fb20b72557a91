"""Downstream learners on patient embeddings and their evaluation metrics."""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy import optimize, special, stats

from .core import ConfigError, seeded_rng

log = logging.getLogger(__name__)


class ConvergenceWarning(UserWarning):
    pass


# ---------------------------------------------------------------------------
# logistic regression
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LogisticModel:
    """Linear logistic classifier on raw features.

    Fitting happens on standardized features; ``weights``/``bias`` are kept on
    that scale together with the standardization itself.
    """

    weights: np.ndarray
    bias: float
    mean: np.ndarray
    scale: np.ndarray
    iterations: int = 0
    objective: float = float("nan")
    grad_norm: float = float("nan")
    converged: bool = True

    def decision_function(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.weights.size:
            raise ConfigError(f"expected {self.weights.size} features, got {X.shape[1]}")
        return ((X - self.mean) / self.scale) @ self.weights + self.bias

    def to_dict(self) -> dict[str, Any]:
        return {"weights": self.weights.tolist(), "bias": self.bias, "mean": self.mean.tolist(),
                "scale": self.scale.tolist(), "iterations": self.iterations,
                "objective": self.objective, "grad_norm": self.grad_norm,
                "converged": self.converged}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "LogisticModel":
        return cls(np.asarray(d["weights"], dtype=np.float64), float(d["bias"]),
                   np.asarray(d["mean"], dtype=np.float64), np.asarray(d["scale"], dtype=np.float64),
                   int(d.get("iterations", 0)), float(d.get("objective", np.nan)),
                   float(d.get("grad_norm", np.nan)), bool(d.get("converged", True)))


def logistic_objective(theta: np.ndarray, Z: np.ndarray, y: np.ndarray, reg: float) -> float:
    """Mean logistic loss plus ``reg/2 ||w||^2``; ``theta = (w, b)`` on standardized ``Z``."""
    z = Z @ theta[:-1] + theta[-1]
    return float(np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * reg * theta[:-1] @ theta[:-1])


def _grad_hess(theta, Z1, y, reg):
    n, p = Z1.shape
    z = Z1 @ theta
    pr = special.expit(z)
    g = Z1.T @ (pr - y) / n
    g[:-1] += reg * theta[:-1]
    H = (Z1 * (pr * (1 - pr))[:, None]).T @ Z1 / n
    H[np.arange(p - 1), np.arange(p - 1)] += reg
    return g, H


def train_logistic(features, labels, reg: float = 1e-4, tol: float = 1e-8,
                   max_iter: int = 100) -> LogisticModel:
    """Regularized logistic regression by damped Newton iterations."""
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if X.shape[0] != y.size:
        raise ConfigError("features and labels differ in length")
    if not np.all(np.isin(y, (0.0, 1.0))):
        raise ConfigError("labels must be binary 0/1")
    if y.min() == y.max():
        raise ConfigError("need at least one example of each class")
    if not np.all(np.isfinite(X)):
        raise ConfigError("features must be finite")
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale = np.where(scale > 1e-12 * np.maximum(1.0, np.abs(mean)), scale, 1.0)
    Z = (X - mean) / scale
    Z[:, np.all(Z == 0, axis=0)] = 0.0
    Z1 = np.hstack([Z, np.ones((Z.shape[0], 1))])
    p = Z1.shape[1]
    theta = np.zeros(p)
    base = y.mean()
    theta[-1] = np.log(base / (1 - base))
    obj = logistic_objective(theta, Z, y, reg)
    g, H = _grad_hess(theta, Z1, y, reg)
    it = 0
    while np.linalg.norm(g) > tol and it < max_iter:
        try:
            step = np.linalg.solve(H + 1e-12 * np.eye(p), g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, g, rcond=None)[0]
        t = 1.0
        while True:
            cand = theta - t * step
            new = logistic_objective(cand, Z, y, reg)
            if new <= obj - 1e-4 * t * (g @ step) or t < 1e-10:
                break
            t *= 0.5
        theta, obj = cand, new
        g, H = _grad_hess(theta, Z1, y, reg)
        it += 1
    gn = float(np.linalg.norm(g))
    converged = gn <= tol
    if reg == 0 and np.all((2 * y - 1) * (Z1 @ theta) > 0):
        # unregularized optimum is at infinity; a small gradient only reflects huge weights
        converged = False
        warnings.warn(f"training data are perfectly separated and reg = 0; weights diverge "
                      f"(norm {np.linalg.norm(theta):.3g}). Use reg > 0", ConvergenceWarning, stacklevel=2)
    elif not converged:
        hint = " (data may be separable; use reg > 0)" if reg == 0 else ""
        warnings.warn(f"logistic regression stopped at gradient norm {gn:.3g} after {it} "
                      f"iterations{hint}", ConvergenceWarning, stacklevel=2)
    return LogisticModel(theta[:-1].copy(), float(theta[-1]), mean, scale, it, obj, gn, converged)


def predict_score(model: LogisticModel, features) -> np.ndarray | float:
    """Class-1 probability ``sigmoid(w . x + b)``; scalar for a single feature vector."""
    x = np.asarray(features, dtype=np.float64)
    out = special.expit(model.decision_function(x))
    return float(out[0]) if x.ndim <= 1 else out


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def auc(scores, labels) -> float:
    """Mann-Whitney AUC, ``P(s+ > s-) + P(s+ = s-)/2``, via average ranks."""
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1).astype(bool)
    if s.size != y.size:
        raise ConfigError("scores and labels differ in length")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ConfigError("AUC needs both classes")
    ranks = stats.rankdata(s)
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _comb2(x):
    x = np.asarray(x, dtype=np.float64)
    return x * (x - 1) / 2


def contingency(labels_a, labels_b) -> np.ndarray:
    a = np.asarray(labels_a).reshape(-1)
    b = np.asarray(labels_b).reshape(-1)
    if a.size != b.size:
        raise ConfigError("label vectors differ in length")
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    table = np.zeros((ia.max() + 1 if ia.size else 0, ib.max() + 1 if ib.size else 0), dtype=np.int64)
    np.add.at(table, (ia, ib), 1)
    return table


def adjusted_rand_index(labels_a, labels_b) -> float:
    """Pair-counting adjusted Rand index from the contingency table."""
    table = contingency(labels_a, labels_b)
    n = int(table.sum())
    if n < 2:
        raise ConfigError("need at least two items")
    index = _comb2(table).sum()
    sa = _comb2(table.sum(axis=1)).sum()
    sb = _comb2(table.sum(axis=0)).sum()
    expected = sa * sb / _comb2(n)
    max_index = 0.5 * (sa + sb)
    if max_index == expected:
        return 1.0
    return float((index - expected) / (max_index - expected))


def matched_accuracy(labels_true, labels_pred) -> float:
    """Accuracy under the best one-to-one relabeling of predicted clusters."""
    table = contingency(labels_true, labels_pred)
    rows, cols = optimize.linear_sum_assignment(-table)
    return float(table[rows, cols].sum() / table.sum())


# ---------------------------------------------------------------------------
# K-means with spectral initialization
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ClusteringResult:
    assignments: np.ndarray
    centers: np.ndarray
    iterations: int
    objective: float
    history: list[float] = field(default_factory=list)
    reseeds: int = 0


def kmeans_objective(X: np.ndarray, assignments: np.ndarray, centers: np.ndarray) -> float:
    return float(((X - centers[assignments]) ** 2).sum())


def _assign(X, C):
    d2 = ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1), d2


def _update(X, lab, C):
    """Assigned means; an empty cluster is moved to the point farthest from its center."""
    C = C.copy()
    reseeds = 0
    for g in range(C.shape[0]):
        members = lab == g
        if members.any():
            C[g] = X[members].mean(axis=0)
    for g in range(C.shape[0]):
        if not np.any(lab == g):
            dist = ((X - C[lab]) ** 2).sum(axis=1)
            far = int(np.argmax(dist))
            log.info("k-means: cluster %d empty, reseeding at point %d", g, far)
            lab = lab.copy()
            lab[far] = g
            C[g] = X[far]
            reseeds += 1
    return C, lab, reseeds


def _kmeans_pp(X, k, rng, trials: int | None = None):
    """Greedy k-means++: sample ``2 + log k`` candidates per step, keep the best."""
    n = X.shape[0]
    trials = trials or 2 + int(math.log(k))
    centers = [X[int(rng.integers(n))]]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            cand = rng.integers(n, size=trials)
        else:
            cand = np.searchsorted(np.cumsum(d2), rng.random(trials) * total, side="right")
            cand = np.minimum(cand, n - 1)
        best, best_pot, best_d2 = -1, np.inf, d2
        for idx in cand:
            nd2 = np.minimum(d2, ((X - X[idx]) ** 2).sum(axis=1))
            pot = nd2.sum()
            if pot < best_pot:
                best, best_pot, best_d2 = int(idx), pot, nd2
        centers.append(X[best])
        d2 = best_d2
    return np.array(centers)


def lloyd(X: np.ndarray, centers: np.ndarray, max_iter: int = 300,
          history: list[float] | None = None) -> tuple[np.ndarray, np.ndarray, int, int]:
    """Lloyd iterations from ``centers`` until assignments stop changing."""
    lab, _ = _assign(X, centers)
    reseeds = 0
    it = 0
    for it in range(1, max_iter + 1):
        centers, lab, r = _update(X, lab, centers)
        reseeds += r
        if history is not None:
            history.append(kmeans_objective(X, lab, centers))
        new, _ = _assign(X, centers)
        if np.array_equal(new, lab):
            break
        lab = new
    return lab, centers, it, reseeds


def low_rank_approximation(F: np.ndarray, rank: int) -> np.ndarray:
    U, s, Vt = np.linalg.svd(F, full_matrices=False)
    r = min(rank, s.size)
    return (U[:, :r] * s[:r]) @ Vt[:r]


def kmeans_spectral(features, num_clusters: int, seed: int = 0, max_iter: int = 300,
                    init_rounds: int = 10) -> ClusteringResult:
    """K-means on embeddings, initialized from clustering a rank-``num_clusters`` SVD approximation."""
    F = np.atleast_2d(np.asarray(features, dtype=np.float64))
    n = F.shape[0]
    if num_clusters < 2 or n < num_clusters:
        raise ConfigError("need n >= num_clusters >= 2")
    Fhat = low_rank_approximation(F, num_clusters)
    rng = seeded_rng(seed, 0)
    C0 = _kmeans_pp(Fhat, num_clusters, rng)
    _, C0, _, r0 = lloyd(Fhat, C0, max_iter=init_rounds)
    history: list[float] = []
    lab, C, it, r1 = lloyd(F, C0, max_iter=max_iter, history=history)
    return ClusteringResult(lab, C, it, kmeans_objective(F, lab, C), history, r0 + r1)
