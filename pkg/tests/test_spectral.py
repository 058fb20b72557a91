import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lfpp.core import (KERNEL_SUPPORT, ConfigError, EstimatorConfig, EventSequence, ModelSpec,
                       SpectralConfig, TransferBank, seeded_rng, two_group_model)
from lfpp.covariance import CovarianceCurve, analytic_cross_covariance
from lfpp.simulate import simulate_patient
from lfpp.spectral import (Embedding, embed_sequences, fix_phases,
                           fourier_eigen_embedding, fourier_transform_curve, hermitian_defect,
                           hermitian_eigenvalues, hermitian_eigh, population_embedding,
                           population_oracle, separation_diagnostic, transfer_fourier_matrix)

from oracles import hermitian_2x2_eigenvalues


def _grid(step=0.01, C=5.0):
    M = int(round(C / step))
    return np.arange(-M, M + 1) * step


# --- fourier_transform_curve -------------------------------------------------------

def test_transform_zero_curve():
    lags = _grid(0.5)
    S = fourier_transform_curve(CovarianceCurve(lags, np.zeros((lags.size, 3, 3))), 1.0)
    assert np.all(S.entries == 0) and S.dim == 3 and S.frequency == 1.0


def test_transform_gaussian_pair():
    lags = _grid(0.01)
    V = np.exp(-math.pi * lags ** 2)[:, None, None]
    S = fourier_transform_curve(CovarianceCurve(lags, V), 1.0)
    assert abs(S.entries[0, 0] - math.exp(-math.pi)) < 1e-4


def test_transform_rejects_asymmetric_grid():
    lags = np.array([-1.0, 0.0, 2.0])
    with pytest.raises(ConfigError):
        fourier_transform_curve(CovarianceCurve(lags, np.zeros((3, 1, 1))), 1.0)


def _swap_symmetric_curve(rng, d, lags):
    half = rng.normal(size=(lags.size, d, d))
    return half + half[::-1].transpose(0, 2, 1)


@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.floats(-3, 3))
@settings(max_examples=60, deadline=None)
def test_swap_symmetric_curve_gives_hermitian_transform(seed, d, xi):
    lags = _grid(0.1)
    V = _swap_symmetric_curve(np.random.default_rng(seed), d, lags)
    raw = fourier_transform_curve(CovarianceCurve(lags, V), xi, symmetrized=False)
    assert raw.hermitian_defect() < 1e-10
    sym = fourier_transform_curve(CovarianceCurve(lags, V), xi)
    assert sym.hermitian_defect() == 0.0


# --- eigenvalues -------------------------------------------------------------------

def test_eigenvalues_identity_and_diagonal():
    assert hermitian_eigenvalues(np.eye(3)).tolist() == [1.0, 1.0, 1.0]
    assert np.allclose(hermitian_eigenvalues(np.diag([2.0, 0.0, -1.0])), [2, 0, -1], atol=0)


def test_eigenvalues_reject_non_hermitian():
    with pytest.raises(ConfigError):
        hermitian_eigenvalues(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(ConfigError):
        hermitian_eigenvalues(np.ones((2, 3)))


@given(st.floats(-10, 10), st.floats(-10, 10), st.floats(-10, 10), st.floats(-10, 10))
@settings(max_examples=200, deadline=None)
def test_eigenvalues_2x2_closed_form(a, b, cr, ci):
    c = complex(cr, ci)
    S = np.array([[a, c], [c.conjugate(), b]])
    assert np.allclose(hermitian_eigenvalues(S), hermitian_2x2_eigenvalues(a, b, c), atol=1e-10, rtol=0)


def test_eigh_vectors_match_values():
    rng = seeded_rng(1)
    X = rng.normal(size=(5, 5)) + 1j * rng.normal(size=(5, 5))
    S = X + X.conj().T
    vals, vecs = hermitian_eigh(S)
    assert np.all(np.diff(vals) <= 0)
    assert np.allclose(S @ vecs, vecs * vals, atol=1e-10)


def test_fix_phases_makes_pivot_real_positive():
    rng = seeded_rng(2)
    U = rng.normal(size=(4, 2)) + 1j * rng.normal(size=(4, 2))
    F = fix_phases(U * np.exp(1j * 0.7))
    piv = F[np.argmax(np.abs(F), axis=0), [0, 1]]
    assert np.allclose(piv.imag, 0, atol=1e-15) and np.all(piv.real > 0)
    assert np.allclose(np.abs(F), np.abs(U))


# --- embeddings --------------------------------------------------------------------

def test_embedding_of_empty_sequence_is_zero():
    e = fourier_eigen_embedding(EventSequence(4, 50.0), EstimatorConfig(), SpectralConfig(embed_dim=2))
    assert e.values.tolist() == [0.0, 0.0]


def test_embedding_deterministic_and_sorted():
    m = two_group_model(TransferBank.random(8, 2, seeded_rng(3)), 0.5)
    seq = simulate_patient(m, "0", 80.0, seeded_rng(4))
    cfg, sp = EstimatorConfig(), SpectralConfig(embed_dim=3)
    a = fourier_eigen_embedding(seq, cfg, sp)
    b = fourier_eigen_embedding(seq, cfg, sp)
    assert np.array_equal(a.values, b.values) and len(a) == 3
    assert np.all(np.diff(a.values) <= 0)


def test_embedding_methods_agree():
    m = two_group_model(TransferBank.random(6, 2, seeded_rng(5), "lin_ramp"), 0.5)
    seq = simulate_patient(m, "1", 60.0, seeded_rng(6))
    cfg, sp = EstimatorConfig(bandwidth=0.3), SpectralConfig(frequency=0.4, embed_dim=2)
    fused = fourier_eigen_embedding(seq, cfg, sp, method="fused").values
    curve = fourier_eigen_embedding(seq, cfg, sp, method="curve").values
    assert np.allclose(fused, curve, rtol=0, atol=1e-10 * max(1.0, np.abs(curve).max()))
    with pytest.raises(ConfigError):
        fourier_eigen_embedding(seq, cfg, sp, method="fft")


def test_embedding_invariant_to_code_permutation():
    m = two_group_model(TransferBank.random(7, 2, seeded_rng(7)), 0.5)
    seq = simulate_patient(m, "0", 60.0, seeded_rng(8))
    perm = seeded_rng(9).permutation(7)
    cfg, sp = EstimatorConfig(), SpectralConfig(frequency=0.2, embed_dim=3)
    a = fourier_eigen_embedding(seq, cfg, sp).values
    b = fourier_eigen_embedding(seq.permuted(perm), cfg, sp).values
    assert np.allclose(a, b, atol=1e-10, rtol=0)


def test_embed_dim_bound_and_finite_check():
    with pytest.raises(ConfigError):
        fourier_eigen_embedding(EventSequence(2, 5.0), EstimatorConfig(), SpectralConfig(embed_dim=3))
    with pytest.raises(ConfigError):
        Embedding(np.array([1.0, np.nan]))


def test_embed_sequences_scheduled_bandwidth():
    m = two_group_model(TransferBank.random(5, 2, seeded_rng(10)), 0.5)
    seqs = [simulate_patient(m, "0", T, seeded_rng(11, i)) for i, T in enumerate([40.0, 90.0])]
    sp = SpectralConfig(frequency=0.3)
    X = embed_sequences(seqs, EstimatorConfig(), sp, bandwidth_c1=1.0)
    for i, s in enumerate(seqs):
        cfg = EstimatorConfig().with_bandwidth(s.window_end ** -0.2)
        assert np.array_equal(X[i], fourier_eigen_embedding(s, cfg, sp).values)


def test_low_frequency_embedding_consistency():
    # at a low frequency the smoothing attenuation is small and estimates approach the oracle
    rng = seeded_rng(12)
    m = two_group_model(TransferBank.random(10, 2, rng), 0.8)
    T = 2000.0
    sp = SpectralConfig(frequency=0.1, embed_dim=2)
    cfg = EstimatorConfig().with_bandwidth(T ** -0.2)
    errs = []
    for r in range(5):
        est = fourier_eigen_embedding(simulate_patient(m, "1", T, seeded_rng(13, r)), cfg, sp).values
        pop = population_embedding(m, "1", 0.1)[0].values
        errs.append(np.linalg.norm(est - pop) / np.linalg.norm(pop))
    assert np.mean(errs) < 0.15


# --- population oracle ----------------------------------------------------------------

def _oracle_from_W(W, mus):
    A = np.abs(W.real)  # placeholder nonnegative bank; W is passed explicitly
    groups = tuple((str(i), mu) for i, mu in enumerate(mus))
    m = ModelSpec(TransferBank(A), 0.1, groups, np.full(len(mus), 1.0 / len(mus)))
    return population_oracle(m, 1.0, W=W)


def test_orthonormal_columns_embedding_equals_mu():
    W = np.linalg.qr(seeded_rng(14).normal(size=(5, 2)))[0] * np.exp(0.3j)
    o = _oracle_from_W(W, [np.array([3.0, 1.0]), np.array([1.0, 3.0])])
    assert np.allclose(o.embeddings["0"], [3, 1], atol=1e-12)
    assert np.allclose(o.embeddings["1"], [3, 1], atol=1e-12)


def test_zero_mu_zero_embedding():
    m = ModelSpec(TransferBank(np.full((3, 2), 0.3)), 0.1, (("a", [0, 0]), ("b", [1, 1])), [0.5, 0.5])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # equal columns: rank-deficient W
        e, _ = population_embedding(m, "a", 1.0)
    assert np.all(e.values == 0)


def test_gram_trick_oracle():
    rng = seeded_rng(15)
    W = rng.normal(size=(3, 2)) + 1j * rng.normal(size=(3, 2))
    mu = np.array([2.0, 1.0])
    o = _oracle_from_W(W, [mu, np.array([1.0, 1.0])])
    D = np.diag(np.sqrt(mu))
    small = np.sort(np.linalg.eigvalsh(D @ W.conj().T @ W @ D))[::-1]
    assert np.allclose(o.embeddings["0"], small, atol=1e-12)
    full = np.sort(np.linalg.eigvalsh((W * mu) @ W.conj().T))[::-1]
    assert np.allclose(full[:2], small, atol=1e-12) and abs(full[2]) < 1e-12


@pytest.mark.parametrize("kernel", list(KERNEL_SUPPORT))
def test_population_matrix_psd_rank_k_and_matches_transformed_analytic_curve(kernel):
    rng = seeded_rng(16)
    m = two_group_model(TransferBank.random(6, 2, rng, kernel), 0.5)
    o = population_oracle(m, 0.3)
    for g in m.labels:
        V = o.spectral[g]
        assert hermitian_defect(V) == 0.0
        vals = hermitian_eigenvalues(V)
        assert vals.min() >= -1e-10 and np.all(np.abs(vals[2:]) < 1e-10)
        # transform of the analytic lag curve over a wide fine grid agrees with W diag(mu) W^H
        lags = _grid(0.005, C=KERNEL_SUPPORT[kernel] + 0.5)
        S = fourier_transform_curve(analytic_cross_covariance(m, g, lags), 0.3).entries
        assert np.max(np.abs(S - V)) < 1e-4 * np.abs(V).max()


def test_transfer_fourier_matrix():
    tb = TransferBank(np.array([[0.2, 0.4]]), "exp4")
    m = two_group_model(tb, 0.1)
    from lfpp.core import kernel_fourier
    assert np.allclose(transfer_fourier_matrix(m, 0.7), tb.coefficients * kernel_fourier("exp4", 0.7))


def test_rank_deficiency_warning():
    m = ModelSpec(TransferBank(np.full((4, 2), 0.2)), 0.1, (("a", [1, 2]), ("b", [2, 1])), [0.5, 0.5])
    with pytest.warns(RuntimeWarning, match="rank deficient"):
        population_oracle(m, 1.0)


# --- separation diagnostic ----------------------------------------------------------

def test_separation_same_group():
    m = two_group_model(TransferBank.random(5, 2, seeded_rng(17)), 0.5)
    rep = separation_diagnostic(population_oracle(m, 1.0), "0", "0")
    assert rep.lhs == 0.0 and rep.rhs <= 0 and rep.holds and rep.rho == 0.0


def test_separation_orthonormal_example():
    """Orthonormal W with mu^(g) = (3, 1), mu^(r) = (1, 3), evaluated directly."""
    W = np.eye(3)[:, :2].astype(complex)
    o = _oracle_from_W(W, [np.array([3.0, 1.0]), np.array([1.0, 3.0])])
    rep = separation_diagnostic(o, "0", "1")
    # both groups have eigenvalues (3, 1); their top eigenvectors are swapped
    assert rep.lhs == pytest.approx(0.0, abs=1e-12)
    assert rep.rho == pytest.approx(2.0, abs=1e-12)
    assert rep.rhs == pytest.approx(2 * math.sqrt(2) - 3 * math.sqrt(10) * 4, abs=1e-12)
    assert rep.holds


def test_separation_orthonormal_rho_zero_case():
    """Aligned eigenvectors (rho = 0) with orthonormal W: the bound compares (1/k)||f_g - f_r|| with ||mu_g - mu_r||."""
    W = np.eye(3)[:, :2].astype(complex)
    o = _oracle_from_W(W, [np.array([3.0, 1.0]), np.array([5.0, 2.0])])
    rep = separation_diagnostic(o, "0", "1")
    assert rep.rho == pytest.approx(0.0, abs=1e-12)
    assert rep.lhs == pytest.approx(math.sqrt(5) / 2)
    assert rep.rhs == pytest.approx(math.sqrt(5))
    assert not rep.holds


@pytest.mark.parametrize("seed", range(100))
def test_separation_random_models(seed):
    rng = seeded_rng(1000, seed)
    d = int(rng.integers(3, 30))
    k = int(rng.integers(1, 4))
    kernel = list(KERNEL_SUPPORT)[int(rng.integers(0, 5))]
    tb = TransferBank.random(d, k, rng, kernel)
    mus = [rng.uniform(0, 3, k), rng.uniform(0, 3, k)]
    m = ModelSpec(tb, 0.1, (("g", mus[0]), ("r", mus[1])), [0.5, 0.5])
    rep = separation_diagnostic(population_oracle(m, 1.0), "g", "r")
    assert rep.holds, rep
