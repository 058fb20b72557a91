"""Fourier-Eigen embeddings and their population-level counterparts."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import ConfigError, EstimatorConfig, EventSequence, ModelSpec, SpectralConfig, kernel_fourier
from .covariance import (CovarianceCurve, PairTransformTable, estimate_cross_covariance,
                         transformed_cross_covariance, trapezoid_weights)

HERMITIAN_TOL = 1e-10
RANK_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class SpectralMatrix:
    frequency: float
    entries: np.ndarray

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def hermitian_defect(self) -> float:
        return hermitian_defect(self.entries)


@dataclass(frozen=True, eq=False)
class Embedding:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(v)):
            raise ConfigError("embedding has non-finite entries")
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.size


def hermitian_defect(S: np.ndarray) -> float:
    return float(np.max(np.abs(S - S.conj().T), initial=0.0))


def symmetrize(S: np.ndarray) -> np.ndarray:
    """``(S + S^H)/2``; exactly Hermitian in floating point."""
    return (S + S.conj().T) / 2


def fourier_transform_curve(curve: CovarianceCurve, xi0: float,
                            symmetrized: bool = True) -> SpectralMatrix:
    """Trapezoidal ``sum_m w_m V(tau_m) exp(-i 2 pi xi0 tau_m)`` over the lag grid."""
    if not curve.is_symmetric_grid():
        raise ConfigError("lag grid must be symmetric about zero")
    w = trapezoid_weights(curve.lags) * np.exp(-2j * np.pi * xi0 * curve.lags)
    S = np.tensordot(w, curve.values, axes=(0, 0))
    return SpectralMatrix(float(xi0), symmetrize(S) if symmetrized else S)


def hermitian_eigh(S: np.ndarray | SpectralMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (algebraic descending) and matching eigenvectors of a Hermitian matrix."""
    S = S.entries if isinstance(S, SpectralMatrix) else np.asarray(S)
    scale = max(1.0, float(np.max(np.abs(S), initial=0.0)))
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ConfigError("expected a square matrix")
    if hermitian_defect(S) > HERMITIAN_TOL * scale:
        raise ConfigError(f"matrix is not Hermitian (defect {hermitian_defect(S):.3g})")
    vals, vecs = np.linalg.eigh(symmetrize(S))
    return vals[::-1].copy(), vecs[:, ::-1].copy()


def hermitian_eigenvalues(S: np.ndarray | SpectralMatrix) -> np.ndarray:
    return hermitian_eigh(S)[0]


def fourier_eigen_embedding(seq: EventSequence, est_cfg: EstimatorConfig, sp_cfg: SpectralConfig,
                            table: PairTransformTable | None = None,
                            method: str = "fused") -> Embedding:
    """Top ``embed_dim`` eigenvalues of the transformed kernel-smoothed cross-covariance.

    ``method="curve"`` materializes the lag curve first; ``"fused"`` (default)
    accumulates the transform directly from event pairs and gives the same
    matrix up to interpolation error near 1e-12.
    """
    if sp_cfg.embed_dim > seq.dim:
        raise ConfigError("embed_dim cannot exceed the number of codes")
    if method == "curve":
        S = fourier_transform_curve(estimate_cross_covariance(seq, est_cfg), sp_cfg.frequency).entries
    elif method == "fused":
        S = transformed_cross_covariance(seq, est_cfg, sp_cfg.frequency, table)
    else:
        raise ConfigError(f"unknown embedding method {method!r}")
    return Embedding(hermitian_eigenvalues(S)[:sp_cfg.embed_dim])


def embed_sequences(seqs: Sequence[EventSequence], est_cfg: EstimatorConfig,
                    sp_cfg: SpectralConfig, bandwidth_c1: float | None = None) -> np.ndarray:
    """Stack Fourier-Eigen embeddings as an ``(n, embed_dim)`` array.

    With ``bandwidth_c1`` each sequence uses bandwidth ``c1 * T_i**(-1/5)``.
    """
    tables: dict[float, tuple[EstimatorConfig, PairTransformTable]] = {}
    out = np.empty((len(seqs), sp_cfg.embed_dim))
    for i, seq in enumerate(seqs):
        h = est_cfg.bandwidth if bandwidth_c1 is None else bandwidth_c1 * seq.window_end ** -0.2
        if h not in tables:
            cfg = est_cfg.with_bandwidth(h)
            tables[h] = (cfg, PairTransformTable.build(cfg, sp_cfg.frequency))
        cfg, table = tables[h]
        out[i] = fourier_eigen_embedding(seq, cfg, sp_cfg, table).values
    return out


# ---------------------------------------------------------------------------
# population oracle
# ---------------------------------------------------------------------------

def fix_phases(U: np.ndarray) -> np.ndarray:
    """Rotate each column so its largest-modulus entry is real and positive."""
    U = np.array(U, dtype=np.complex128)
    idx = np.argmax(np.abs(U), axis=0)
    piv = U[idx, np.arange(U.shape[1])]
    phase = np.where(np.abs(piv) > 0, piv / np.where(np.abs(piv) > 0, np.abs(piv), 1.0), 1.0)
    return U / phase[None, :]


@dataclass(frozen=True, eq=False)
class PopulationOracle:
    frequency: float
    W: np.ndarray
    mu: dict[str, np.ndarray]
    spectral: dict[str, np.ndarray]
    embeddings: dict[str, np.ndarray]
    eigvecs: dict[str, np.ndarray]
    sigma_1: float
    sigma_k: float

    @property
    def k(self) -> int:
        return self.W.shape[1]

    def rho(self, g: str, r: str) -> float:
        """``|| U_g^H U_r - I ||_F`` with phase-fixed top-k eigenvectors."""
        Ug, Ur = self.eigvecs[g], self.eigvecs[r]
        return float(np.linalg.norm(Ug.conj().T @ Ur - np.eye(self.k)))

    @property
    def rhos(self) -> dict[tuple[str, str], float]:
        labels = list(self.mu)
        return {(g, r): self.rho(g, r) for g in labels for r in labels if g != r}


def transfer_fourier_matrix(model: ModelSpec, xi0: float) -> np.ndarray:
    """``W[j, l]`` = Fourier transform of ``omega_jl`` at ``xi0``."""
    return model.transfer.coefficients * kernel_fourier(model.transfer.kernel, xi0)


def population_oracle(model: ModelSpec, xi0: float, W: np.ndarray | None = None) -> PopulationOracle:
    """Population spectral matrices ``W diag(mu_g) W^H`` and their eigen-structure for every group."""
    if W is None:
        W = transfer_fourier_matrix(model, xi0)
    W = np.asarray(W, dtype=np.complex128)
    k = W.shape[1]
    sv = np.linalg.svd(W, compute_uv=False)
    s1, sk = float(sv[0]), float(sv[k - 1]) if sv.size >= k else 0.0
    if sk < RANK_TOL:
        warnings.warn(f"transfer matrix is rank deficient at frequency {xi0} "
                      f"(smallest singular value {sk:.3g})", RuntimeWarning, stacklevel=2)
    mus, spec, emb, vecs = {}, {}, {}, {}
    for g, mu in model.groups:
        V = symmetrize((W * mu) @ W.conj().T)
        vals, U = hermitian_eigh(V)
        mus[g], spec[g] = mu, V
        emb[g] = vals[:k]
        vecs[g] = fix_phases(U[:, :k])
    return PopulationOracle(float(xi0), W, mus, spec, emb, vecs, s1, sk)


def population_embedding(model: ModelSpec, group: str, xi0: float,
                         embed_dim: int | None = None) -> tuple[Embedding, PopulationOracle]:
    oracle = population_oracle(model, xi0)
    model.mu(group)
    k = embed_dim or oracle.k
    vals = hermitian_eigenvalues(oracle.spectral[str(group)])
    return Embedding(vals[:k]), oracle


@dataclass(frozen=True)
class SeparationReport:
    lhs: float
    rhs: float
    rho: float
    holds: bool


def separation_diagnostic(oracle: PopulationOracle, g: str, r: str, rtol: float = 1e-12) -> SeparationReport:
    """Evaluate both sides of the population embedding separation bound.

    ``(1/k)||f_g - f_r|| >= s_k^2 ||mu_g - mu_r|| - 3 s_1^2 min(||mu_g||, ||mu_r||) max(rho, rho^2)``.
    ``holds`` allows a relative slack of ``rtol`` for rounding (equality cases).
    """
    g, r = str(g), str(r)
    k = oracle.k
    lhs = float(np.linalg.norm(oracle.embeddings[g] - oracle.embeddings[r])) / k
    rho = 0.0 if g == r else oracle.rho(g, r)
    mg, mr = oracle.mu[g], oracle.mu[r]
    first = oracle.sigma_k ** 2 * float(np.linalg.norm(mg - mr))
    second = 3 * oracle.sigma_1 ** 2 * min(np.linalg.norm(mg), np.linalg.norm(mr)) * max(rho, rho * rho)
    rhs = first - second
    slack = rtol * max(1.0, abs(first), abs(second), lhs)
    return SeparationReport(lhs, rhs, rho, lhs >= rhs - slack)
