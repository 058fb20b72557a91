"""Kernel-smoothed cross-covariance estimation and its population counterpart.

The estimator sums a smoothing kernel over event pairs. Both numba kernels
below walk the time-sorted event list once and stop each inner sweep as soon
as the pair separation leaves the kernel's truncated support, so the cost is
proportional to the number of contributing pairs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .core import ConfigError, EstimatorConfig, EventSequence, ModelSpec, kernel_autocorrelation

_SQRT_2PI = math.sqrt(2.0 * math.pi)
_KERNEL_CODES = {"gaussian": 0, "epanechnikov": 1}


@dataclass(frozen=True, eq=False)
class CovarianceCurve:
    """``values[m]`` is the d x d cross-covariance matrix at lag ``lags[m]``."""

    lags: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        lags = np.asarray(self.lags, dtype=np.float64)
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 3 or vals.shape[0] != lags.size or vals.shape[1] != vals.shape[2]:
            raise ConfigError("covariance values must have shape (n_lags, d, d)")
        object.__setattr__(self, "lags", lags)
        object.__setattr__(self, "values", vals)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def is_symmetric_grid(self) -> bool:
        return bool(np.array_equal(self.lags[::-1], -self.lags))

    def swap_defect(self) -> float:
        """``max |V_jj'(tau) - V_j'j(-tau)|`` over the grid."""
        return float(np.max(np.abs(self.values - self.values[::-1].transpose(0, 2, 1)), initial=0.0))

    def at(self, tau: float) -> np.ndarray:
        idx = np.flatnonzero(np.isclose(self.lags, tau, atol=1e-12, rtol=0))
        if idx.size == 0:
            raise KeyError(f"lag {tau} not on grid")
        return self.values[idx[0]]


def smoothing_kernel(name: str, x):
    """Standard Gaussian density or Epanechnikov kernel (not truncated)."""
    x = np.asarray(x, dtype=np.float64)
    if name == "gaussian":
        return np.exp(-0.5 * x * x) / _SQRT_2PI
    if name == "epanechnikov":
        return np.where(np.abs(x) <= 1.0, 0.75 * (1.0 - x * x), 0.0)
    raise ConfigError(f"unknown smoothing kernel {name!r}")


@numba.njit(cache=True, inline="always")
def _kern(code, x, radius):
    ax = abs(x)
    if ax > radius:
        return 0.0
    if code == 0:
        return math.exp(-0.5 * x * x) / 2.5066282746310002
    if ax > 1.0:
        return 0.0
    return 0.75 * (1.0 - x * x)


@numba.njit(cache=True)
def _add_pair(V, a, b, x, step, M, h, code, radius, rh, nonneg_only):
    # V[m, a, b] += K((x + m*step)/h) for grid indices within the kernel window
    lo = int(math.ceil((-rh - x) / step)) - 1
    hi = int(math.floor((rh - x) / step)) + 1
    if nonneg_only and lo < 0:
        lo = 0
    if lo < -M:
        lo = -M
    if hi > M:
        hi = M
    for m in range(lo, hi + 1):
        V[m + M, a, b] += _kern(code, (x + m * step) / h, radius)


@numba.njit(cache=True)
def _pair_sum_curve(times, codes, d, step, M, h, code, radius):
    """Unnormalized pair sums on canonical slots (j < j', all lags; j == j', lags >= 0)."""
    V = np.zeros((2 * M + 1, d, d))
    rh = radius * h
    reach = M * step + rh
    n = times.size
    for i in range(n):
        ti = times[i]
        ci = codes[i]
        k = i + 1
        while k < n and times[k] - ti <= reach:
            ck = codes[k]
            delta = times[k] - ti
            if ci < ck:
                _add_pair(V, ci, ck, delta, step, M, h, code, radius, rh, False)
            elif ci > ck:
                _add_pair(V, ck, ci, -delta, step, M, h, code, radius, rh, False)
            else:
                _add_pair(V, ci, ci, delta, step, M, h, code, radius, rh, True)
                _add_pair(V, ci, ci, -delta, step, M, h, code, radius, rh, True)
            k += 1
    return V


def estimate_cross_covariance(seq: EventSequence, cfg: EstimatorConfig) -> CovarianceCurve:
    """Kernel-smoothing estimate of the lag-indexed cross-covariance matrix.

    ``V[tau][j, j'] = (1/(T h)) sum_{t in N_j, t' in N_j'} K((t' - t + tau)/h)
    - N_j N_j' / T**2``, excluding an event paired with itself on the diagonal.
    Swap symmetry ``V[tau][j, j'] == V[-tau][j', j]`` holds bit-for-bit because
    only one of each mirrored pair of slots is computed and the other is copied.
    """
    T = seq.window_end
    if not T > 0:
        raise ConfigError("observation window must be positive")
    d, M, step = seq.dim, cfg.half_width, cfg.lag_grid_step
    times, codes = seq.flatten()
    V = _pair_sum_curve(times, codes, d, step, M, cfg.bandwidth,
                        _KERNEL_CODES[cfg.smoothing_kernel], cfg.kernel_truncation_radius)
    V /= T * cfg.bandwidth
    # mirror canonical slots: upper triangle -> lower at negated lag, diagonal -> negative lags
    iu = np.triu_indices(d, 1)
    V[:, iu[1], iu[0]] = V[::-1, iu[0], iu[1]]
    diag = np.arange(d)
    V[:M, diag, diag] = V[:M:-1, diag, diag]
    counts = seq.counts.astype(np.float64)
    V -= np.outer(counts, counts)[None] / (T * T)
    return CovarianceCurve(cfg.lags, V)


def analytic_cross_covariance(model: ModelSpec, group: str, lags) -> CovarianceCurve:
    """Population cross-covariance of the model at each lag (self-excitation atom excluded).

    ``V_jj'(tau) = sum_l mu_l int omega_jl(s) omega_j'l(s - tau) ds``. With
    ``omega_jl = a_jl beta`` this factors as ``R(tau) * (A diag(mu) A^T)_jj'``
    where ``R`` is the kernel's autocorrelation.
    """
    lags = np.asarray(lags, dtype=np.float64)
    A = model.transfer.coefficients
    mixing = (A * model.mu(group)) @ A.T
    r = kernel_autocorrelation(model.transfer.kernel, lags)
    return CovarianceCurve(lags, r[:, None, None] * mixing[None])


# ---------------------------------------------------------------------------
# fused pair sum -> Fourier transform at one frequency
# ---------------------------------------------------------------------------

def trapezoid_weights(lags: np.ndarray) -> np.ndarray:
    steps = np.diff(lags)
    w = np.zeros_like(lags)
    w[:-1] += steps / 2
    w[1:] += steps / 2
    return w


@dataclass(frozen=True, eq=False)
class PairTransformTable:
    """Piecewise-cubic representation of the per-pair Fourier weight.

    ``g(x) = sum_m w_m exp(-i 2 pi xi tau_m) K_trunc((x + tau_m)/h)`` for
    ``x >= 0`` (``g(-x) = conj(g(x))``). It is smooth except where some grid
    lag meets the truncation edge, so those points are segment boundaries.
    Each row of ``packed`` holds ``[right edge, midpoint, 2/width, re/im
    Horner coefficients in the local coordinate]``.
    """

    packed: np.ndarray
    lookup: np.ndarray    # uniform cell index -> first segment overlapping it
    inv_cell: float
    reach: float
    degree: int
    offset: complex       # sum_m w_m exp(-i 2 pi xi tau_m)

    @classmethod
    def build(cls, cfg: EstimatorConfig, xi: float, degree: int = 3) -> "PairTransformTable":
        lags = cfg.lags
        step, M, h = cfg.lag_grid_step, cfg.half_width, cfg.bandwidth
        rh = cfg.kernel_truncation_radius * h
        reach = M * step + rh
        w = trapezoid_weights(lags) * np.exp(-2j * np.pi * xi * lags)
        if cfg.smoothing_kernel == "epanechnikov":
            rh = min(cfg.kernel_truncation_radius, 1.0) * h
        m = np.arange(-M - 1, M + 2) * step
        cell = min(step / 16.0, h / 64.0)
        n_cells = int(math.ceil(reach / cell))
        edges = np.concatenate(([0.0, reach], rh - m, -rh - m, np.arange(n_cells) * cell))
        b = np.unique(np.clip(edges, 0.0, reach))
        b = b[np.concatenate(([True], np.diff(b) > 1e-12 * reach))]
        b[-1] = reach
        nodes = np.cos(np.pi * (np.arange(degree + 1) + 0.5) / (degree + 1))
        mid = 0.5 * (b[:-1] + b[1:])
        half = 0.5 * (b[1:] - b[:-1])
        g = np.empty((mid.size, degree + 1), dtype=np.complex128)
        for lo in range(0, mid.size, 4096):
            x = mid[lo:lo + 4096, None] + half[lo:lo + 4096, None] * nodes[None, :]
            arg = (x[..., None] + lags) / h
            kv = np.where(np.abs(arg) <= cfg.kernel_truncation_radius,
                          smoothing_kernel(cfg.smoothing_kernel, arg), 0.0)
            g[lo:lo + 4096] = kv @ w
        # exact interpolation at Chebyshev nodes, monomial basis in u in [-1, 1]
        mono = np.linalg.solve(np.vander(nodes, degree + 1), g.T).T
        packed = np.empty((mid.size, 3 + 2 * (degree + 1)))
        packed[:, 0] = b[1:]
        packed[-1, 0] = np.inf
        packed[:, 1] = mid
        packed[:, 2] = np.divide(1.0, half, out=np.zeros_like(half), where=half > 0)
        packed[:, 3::2] = mono.real
        packed[:, 4::2] = mono.imag
        lookup = np.searchsorted(b, np.arange(n_cells + 1) * cell, side="right") - 1
        lookup = np.clip(lookup, 0, mid.size - 1).astype(np.int64)
        return cls(packed, lookup, 1.0 / cell, reach, degree, complex(w.sum()))

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        out = _eval_table(np.abs(x), self.packed, self.lookup, self.inv_cell, self.reach, self.degree)
        return np.where(x < 0, np.conj(out), out)


@numba.njit(cache=True, inline="always")
def _table_value(x, packed, lookup, inv_cell, degree):
    seg = lookup[int(x * inv_cell)]
    while packed[seg, 0] <= x:
        seg += 1
    u = (x - packed[seg, 1]) * packed[seg, 2]
    re = packed[seg, 3]
    im = packed[seg, 4]
    for r in range(1, degree + 1):
        re = re * u + packed[seg, 3 + 2 * r]
        im = im * u + packed[seg, 4 + 2 * r]
    return re, im


@numba.njit(cache=True)
def _eval_table(x, packed, lookup, inv_cell, reach, degree):
    out = np.zeros(x.size, dtype=np.complex128)
    for i in range(x.size):
        if x[i] <= reach:
            re, im = _table_value(x[i], packed, lookup, inv_cell, degree)
            out[i] = complex(re, im)
    return out


@numba.njit(cache=True)
def _pair_sum_transform(times, codes, d, packed, lookup, inv_cell, reach, degree):
    Ar = np.zeros((d, d))
    Ai = np.zeros((d, d))
    n = times.size
    for i in range(n):
        ti = times[i]
        ci = codes[i]
        k = i + 1
        while k < n:
            x = times[k] - ti
            if x > reach:
                break
            re, im = _table_value(x, packed, lookup, inv_cell, degree)
            Ar[ci, codes[k]] += re
            Ai[ci, codes[k]] += im
            k += 1
    return Ar, Ai


def transformed_cross_covariance(seq: EventSequence, cfg: EstimatorConfig, xi: float,
                                 table: PairTransformTable | None = None) -> np.ndarray:
    """Trapezoidal Fourier transform of the estimated curve, computed straight from pairs.

    Equal (up to the table's interpolation error) to transforming
    :func:`estimate_cross_covariance`; never materializes the curve.
    The result is Hermitian by construction.
    """
    T = seq.window_end
    if not T > 0:
        raise ConfigError("observation window must be positive")
    if table is None:
        table = PairTransformTable.build(cfg, xi)
    times, codes = seq.flatten()
    Ar, Ai = _pair_sum_transform(times, codes, seq.dim, table.packed, table.lookup,
                                 table.inv_cell, table.reach, table.degree)
    A = Ar + 1j * Ai
    S = (A + A.conj().T) / (T * cfg.bandwidth)
    counts = seq.counts.astype(np.float64)
    S -= table.offset.real * np.outer(counts, counts) / (T * T)
    return S
