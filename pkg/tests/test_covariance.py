import math

import mpmath as mp

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from lfpp.core import (KERNEL_SUPPORT, ConfigError, EstimatorConfig, EventSequence, ModelSpec,
                       TransferBank, seeded_rng)
from lfpp.covariance import (CovarianceCurve, PairTransformTable, analytic_cross_covariance,
                             estimate_cross_covariance, transformed_cross_covariance, trapezoid_weights)
from lfpp.simulate import simulate_patient
from lfpp.spectral import fourier_transform_curve

from oracles import naive_cross_covariance


def _random_seq(rng, d, T, n_events, ties=False):
    times = rng.uniform(0, T, n_events)
    if ties:
        times[: n_events // 4] = np.round(times[: n_events // 4], 1)
    codes = rng.integers(0, d, n_events)
    return EventSequence.from_unsorted(d, T, [times[codes == j] for j in range(d)])


SMALL = EstimatorConfig(bandwidth=0.7, lag_threshold=2.0, lag_grid_step=0.25)


def test_empty_sequence_zero_curve():
    c = estimate_cross_covariance(EventSequence(3, 10.0), EstimatorConfig())
    assert c.values.shape == (201, 3, 3) and np.all(c.values == 0)


def test_single_event_mean_term_only():
    seq = EventSequence(1, 10.0, [[1.0]])
    c = estimate_cross_covariance(seq, EstimatorConfig())
    assert np.all(c.values[:, 0, 0] == pytest.approx(-0.01, abs=1e-15))


def test_coincident_distinct_events_pair():
    # two events at the same time on one code still form a pair
    seq = EventSequence(1, 10.0, [[2.0, 2.0]])
    c = estimate_cross_covariance(seq, EstimatorConfig())
    expected = 2 * stats.norm.pdf(0.0) / 10.0 - 4 / 100.0
    assert c.at(0.0)[0, 0] == pytest.approx(expected, abs=1e-14)


@pytest.mark.parametrize("seed", range(6))
@pytest.mark.parametrize("kernel", ["gaussian", "epanechnikov"])
def test_fast_path_matches_naive_loop(seed, kernel):
    rng = seeded_rng(seed)
    d = int(rng.integers(1, 5))
    seq = _random_seq(rng, d, 20.0, int(rng.integers(1, 200)), ties=seed % 2 == 0)
    cfg = EstimatorConfig(bandwidth=float(rng.uniform(0.2, 1.5)), smoothing_kernel=kernel,
                          lag_threshold=2.0, lag_grid_step=0.25)
    fast = estimate_cross_covariance(seq, cfg).values
    slow = naive_cross_covariance(seq.events, seq.window_end, cfg.lags, cfg.bandwidth, kernel,
                                  cfg.kernel_truncation_radius)
    assert np.max(np.abs(fast - slow)) < 1e-12


@given(st.integers(0, 2**32 - 1), st.integers(1, 4), st.integers(0, 150))
@settings(max_examples=40, deadline=None)
def test_swap_symmetry_exact(seed, d, n):
    seq = _random_seq(seeded_rng(seed), d, 15.0, n, ties=True)
    c = estimate_cross_covariance(seq, SMALL)
    assert c.swap_defect() == 0.0


def test_values_outside_threshold_not_produced():
    c = estimate_cross_covariance(_random_seq(seeded_rng(1), 2, 10.0, 50), SMALL)
    assert c.lags.min() == -2.0 and c.lags.max() == 2.0 and c.is_symmetric_grid()


# --- analytic curve ------------------------------------------------------------

def _model(A, mu, kernel="gauss"):
    A = np.atleast_2d(np.asarray(A, float))
    return ModelSpec(TransferBank(A, kernel), 0.1, (("0", mu), ("1", np.zeros(A.shape[1]))), [0.5, 0.5])


def test_analytic_zero_rate():
    m = _model([[0.3, 0.2]], [0.0, 0.0])
    assert np.all(analytic_cross_covariance(m, "0", EstimatorConfig().lags).values == 0)


def test_analytic_gauss_scalar_value():
    # int_0^inf exp(-s^2/2) exp(-(s-tau)^2/2) ds at tau = 0 is sqrt(pi)/2
    m = _model([[1.0]], [1.0])
    c = analytic_cross_covariance(m, "0", np.array([-1.0, 0.0, 1.0]))
    assert c.at(0.0)[0, 0] == pytest.approx(math.sqrt(math.pi) / 2, abs=1e-12)
    ref = integrate.quad(lambda s: math.exp(-s * s / 2) * math.exp(-(s - 1) ** 2 / 2), 1, 40)[0]
    assert c.at(1.0)[0, 0] == pytest.approx(ref, abs=1e-10)


@pytest.mark.parametrize("kernel", list(KERNEL_SUPPORT))
def test_analytic_matches_direct_quadrature(kernel):
    rng = seeded_rng(3)
    A = rng.uniform(0, 0.5, (3, 2))
    mu = np.array([1.3, 0.6])
    m = _model(A, mu, kernel)
    lags = np.array([-1.5, -0.4, 0.0, 0.25, 1.0])
    c = analytic_cross_covariance(m, "0", lags)
    overlap = [_mp_overlap(kernel, tau) for tau in lags]
    for i, tau in enumerate(lags):
        for j in range(3):
            for jp in range(3):
                ref = sum(mu[l] * A[j, l] * A[jp, l] * overlap[i] for l in range(2))
                assert c.values[i, j, jp] == pytest.approx(ref, abs=1e-8)


def _mp_overlap(kernel, tau):
    """30-digit quadrature of int beta(s) beta(s - tau) ds, split at every kink."""
    mp.mp.dps = 30
    b0 = mp.mpf(KERNEL_SUPPORT[kernel])
    beta = {"gauss": lambda s: mp.exp(-s * s / 2) if 0 <= s < 6 else 0,
            "sinc_decay": lambda s: abs(mp.sin(s)) / (s + 1) if 0 <= s < mp.pi else 0,
            "sqrt_ramp": lambda s: 1 - mp.sqrt(s) if 0 <= s < 1 else 0,
            "lin_ramp": lambda s: 1 - s if 0 <= s < 1 else 0,
            "exp4": lambda s: mp.power(4, -s) if 0 <= s < 2 else 0}[kernel]
    t = mp.mpf(abs(tau))
    if t >= b0:
        return 0.0
    pts = sorted({t, b0, *(p for p in (t + b0 / 2, b0 / 2) if t < p < b0)})
    return float(mp.quad(lambda s: beta(s) * beta(s - t), pts))


def test_analytic_swap_symmetry():
    m = _model(seeded_rng(4).uniform(0, 0.5, (4, 2)), [1.0, 2.0], "sinc_decay")
    c = analytic_cross_covariance(m, "0", EstimatorConfig(lag_grid_step=0.25).lags)
    assert c.swap_defect() < 1e-12


def _two_code_model():
    return _model([[0.4], [0.3]], [1.0])


def _mc_tau0(h, reps=20, T=2000.0):
    m = _two_code_model()
    cfg = EstimatorConfig(bandwidth=h, lag_threshold=1.0, lag_grid_step=0.5)
    est = [estimate_cross_covariance(simulate_patient(m, "0", T, seeded_rng(100, r)), cfg).at(0.0)
           for r in range(reps)]
    return m, np.mean(est, axis=0)


def test_estimator_tracks_analytic_at_zero_lag_h1():
    """d=2, k=1, gauss transfer, T=2000, h=1, 20 replications.

    Known to fail: at h=1 smoothing bias alone leaves the mean near 0.54 of the
    analytic value (see the smoothed comparison below), well outside 15%.
    """
    m, est = _mc_tau0(1.0)
    truth = analytic_cross_covariance(m, "0", [0.0]).values[0]
    assert np.max(np.abs(est - truth)) < 0.15 * np.max(np.abs(truth))


@pytest.mark.parametrize("h", [1.0, 0.2])
def test_estimator_mean_matches_smoothed_analytic(h):
    # at any h the estimator's mean is the analytic curve convolved with K_h
    m, est = _mc_tau0(h)
    A = m.transfer.coefficients
    mix = (A * m.mu("0")) @ A.T
    from lfpp.core import kernel_autocorrelation
    smoothed = integrate.quad(lambda u: stats.norm.pdf(u) * kernel_autocorrelation("gauss", h * u), -4, 4,
                              points=[0.0])[0]
    target = smoothed * mix
    assert np.max(np.abs(est - target)) < 0.15 * np.max(target)


# --- fused transform path --------------------------------------------------------

def test_trapezoid_weights():
    w = trapezoid_weights(np.array([-1.0, -0.5, 0.0, 0.5, 1.0]))
    assert w.tolist() == [0.25, 0.5, 0.5, 0.5, 0.25]


@pytest.mark.parametrize("kernel", ["gaussian", "epanechnikov"])
@pytest.mark.parametrize("h,xi", [(1.0, 1.0), (0.3, 0.1), (0.05, 2.5)])
def test_fused_matches_curve_transform(kernel, h, xi):
    rng = seeded_rng(5)
    seq = _random_seq(rng, 4, 40.0, 180)
    cfg = EstimatorConfig(bandwidth=h, smoothing_kernel=kernel)
    curve = fourier_transform_curve(estimate_cross_covariance(seq, cfg), xi, symmetrized=False).entries
    fused = transformed_cross_covariance(seq, cfg, xi)
    scale = max(1.0, np.abs(curve).max())
    assert np.max(np.abs(fused - curve)) < 1e-10 * scale
    assert np.array_equal(fused, fused.conj().T)


def test_fused_with_edge_ties_within_jump_bound():
    # integer-valued times make pair gaps land exactly on truncation edges, where the
    # truncated kernel jumps by K(R); the two paths may resolve such ties differently
    rng = seeded_rng(6)
    T = 60.0
    seq = EventSequence.from_unsorted(3, T, [rng.integers(0, 60, 40).astype(float) for _ in range(3)])
    cfg = EstimatorConfig(bandwidth=1.0)
    curve = fourier_transform_curve(estimate_cross_covariance(seq, cfg), 1.0).entries
    fused = transformed_cross_covariance(seq, cfg, 1.0)
    n_pairs = seq.total ** 2
    jump = stats.norm.pdf(4.0) * cfg.lag_grid_step / (T * cfg.bandwidth)
    assert np.max(np.abs(fused - curve)) <= 2 * n_pairs * jump


def test_pair_table_matches_direct_sum():
    cfg = EstimatorConfig(bandwidth=0.4)
    tab = PairTransformTable.build(cfg, 1.0)
    # irrational spacing keeps samples off the truncation edges
    x = np.concatenate([np.linspace(-7, 7, 3001) + math.sqrt(2) * 1e-4, [math.sqrt(3) * 1e-7, tab.reach + 1]])
    w = trapezoid_weights(cfg.lags) * np.exp(-2j * np.pi * cfg.lags)
    arg = (x[:, None] + cfg.lags[None, :]) / cfg.bandwidth
    direct = np.where(np.abs(arg) <= 4, stats.norm.pdf(arg), 0.0) @ w
    assert np.max(np.abs(tab(x) - direct)) < 1e-11


def test_curve_container_validation():
    with pytest.raises(ConfigError):
        CovarianceCurve(np.zeros(3), np.zeros((2, 1, 1)))
    c = CovarianceCurve(np.array([-1.0, 0.0, 1.0]), np.zeros((3, 2, 2)))
    with pytest.raises(KeyError):
        c.at(0.5)
