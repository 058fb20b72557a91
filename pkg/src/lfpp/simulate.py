"""Cohort simulation from the latent factor point process model.

Patients are generated in two stages: a homogeneous Poisson latent process,
then, conditionally on it, an inhomogeneous Poisson observed process whose
rate is the baseline plus transfer-filtered latent history. The second stage
uses thinning under a piecewise-constant dominating rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numba
import numpy as np

from .core import (KERNEL_CODES, ConfigError, Dataset, EventSequence, ModelSpec, Record,
                   seeded_rng)

RATIO_SLACK = 1e-9


class ThinningError(RuntimeError):
    """The dominating rate failed to bound the conditional intensity."""


@numba.njit(cache=True, inline="always")
def _beta(code, t):
    if t < 0.0:
        return 0.0
    if code == 0:
        return math.exp(-0.5 * t * t) if t < 6.0 else 0.0
    if code == 1:
        return abs(math.sin(t)) / (t + 1.0) if t < math.pi else 0.0
    if code == 2:
        return 1.0 - math.sqrt(t) if t < 1.0 else 0.0
    if code == 3:
        return 1.0 - t if t < 1.0 else 0.0
    return 4.0 ** (-t) if t < 2.0 else 0.0


@numba.njit(cache=True)
def _intensity_at(times, codes, coef, nu, kcode, b0, lat_times, lat_comp):
    """Conditional intensity of code ``codes[i]`` at ``times[i]`` for each i."""
    out = np.empty(times.size)
    n_lat = lat_times.size
    for i in range(times.size):
        t = times[i]
        j = codes[i]
        lo = np.searchsorted(lat_times, t - b0, side="right")
        acc = nu[j]
        m = lo
        while m < n_lat and lat_times[m] < t:
            acc += coef[j, lat_comp[m]] * _beta(kcode, t - lat_times[m])
            m += 1
        out[i] = acc
    return out


def sample_group(prior: Sequence[float], rng: np.random.Generator) -> int:
    """Draw a group index with probabilities ``prior``."""
    p = np.asarray(prior, dtype=np.float64)
    return int(np.searchsorted(np.cumsum(p), rng.random() * p.sum(), side="right").clip(0, p.size - 1))


def sample_latent(mu: Sequence[float], T: float, rng: np.random.Generator) -> EventSequence:
    """Independent homogeneous Poisson processes with rates ``mu`` on [0, T]."""
    mu = np.asarray(mu, dtype=np.float64)
    if np.any(mu < 0) or not T > 0:
        raise ConfigError("latent rates must be nonnegative and T positive")
    counts = rng.poisson(mu * T)
    return EventSequence(mu.size, T, [np.sort(rng.uniform(0.0, T, size=c)) for c in counts],
                         check=False)


def conditional_intensity(model: ModelSpec, latent: EventSequence, j: int, t: float) -> float:
    """``nu_j + sum over latent events u < t of omega_jl(t - u)``."""
    tb = model.transfer
    b0 = tb.support_radius
    rate = float(model.baseline[j])
    for l, u in enumerate(latent.events):
        lo = np.searchsorted(u, t - b0, side="right")
        hi = np.searchsorted(u, t, side="left")
        if hi > lo:
            rate += float(tb.coefficients[j, l] * tb.beta(t - u[lo:hi]).sum())
    return rate


def _dominating_segments(lat_times: np.ndarray, b0: float, T: float):
    """Breakpoints where the trailing-window latent count changes, with counts."""
    pts = np.concatenate(([0.0, T], lat_times, lat_times + b0))
    pts = np.unique(pts[(pts >= 0.0) & (pts <= T)])
    starts, ends = pts[:-1], pts[1:]
    n_win = (np.searchsorted(lat_times, starts, side="right")
             - np.searchsorted(lat_times + b0, starts, side="right"))
    return starts, ends, n_win


def simulate_observed(model: ModelSpec, latent: EventSequence, T: float,
                      rng: np.random.Generator) -> EventSequence:
    """Observed d-dimensional process given a latent realization, by thinning."""
    if latent.window_end != T:
        raise ConfigError("latent window must equal the observation window")
    tb = model.transfer
    d, b0 = tb.d, tb.support_radius
    lat_times, lat_comp = latent.flatten()
    starts, ends, n_win = _dominating_segments(lat_times, b0, T)
    slope = tb.coefficients.max(axis=1) * tb.kernel_sup
    bound = model.baseline[None, :] + n_win[:, None] * slope[None, :]
    counts = rng.poisson(bound * (ends - starts)[:, None])
    seg_idx, code_idx = np.nonzero(counts)
    reps = counts[seg_idx, code_idx]
    seg = np.repeat(seg_idx, reps)
    codes = np.repeat(code_idx, reps).astype(np.int64)
    if seg.size == 0:
        return EventSequence(d, T, check=False)
    times = starts[seg] + (ends - starts)[seg] * rng.random(seg.size)
    accept_u = rng.random(seg.size)
    lam = _intensity_at(times, codes, tb.coefficients, model.baseline,
                        KERNEL_CODES[tb.kernel], b0, lat_times, lat_comp)
    lam_bar = bound[seg, codes]
    ratio = np.divide(lam, lam_bar, out=np.zeros_like(lam), where=lam_bar > 0)
    if np.any(ratio > 1.0 + RATIO_SLACK):
        raise ThinningError(f"acceptance ratio {ratio.max():.12g} exceeds 1")
    keep = accept_u < ratio
    times, codes = times[keep], codes[keep]
    order = np.lexsort((times, codes))
    times, codes = times[order], codes[order]
    splits = np.searchsorted(codes, np.arange(1, d))
    return EventSequence(d, T, np.split(times, splits), check=False)


def simulate_patient(model: ModelSpec, label: str, T: float, rng: np.random.Generator,
                     burn_in: bool = True) -> EventSequence:
    """Latent then observed process for one patient of group ``label``.

    With ``burn_in`` the latent process starts ``support_radius`` before the
    observation window, so the observed window is in the stationary regime.
    """
    pad = model.transfer.support_radius if burn_in else 0.0
    latent = sample_latent(model.mu(label), T + pad, rng)
    obs = simulate_observed(model, latent, T + pad, rng)
    if pad == 0.0:
        return obs
    return EventSequence(obs.dim, T, [a[a >= pad] - pad for a in obs.events], check=False)


@dataclass(frozen=True)
class SimulationPlan:
    model: ModelSpec
    n: int
    observation_times: float | tuple[float, ...]
    seed: int = 0
    stratified: bool = True
    burn_in: bool = True
    id_prefix: str = "p"

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError("cohort size must be at least 1")
        ts = self.observation_times
        if not np.isscalar(ts):
            ts = tuple(float(t) for t in ts)
            if len(ts) != self.n:
                raise ConfigError("need one observation time per patient")
            object.__setattr__(self, "observation_times", ts)
        if np.any(np.asarray(ts, dtype=float) <= 0):
            raise ConfigError("observation times must be positive")

    def time_of(self, i: int) -> float:
        ts = self.observation_times
        return float(ts) if np.isscalar(ts) else ts[i]


def simulate_cohort(plan: SimulationPlan) -> Dataset:
    """Simulate ``plan.n`` labelled patients; patient i draws from rng stream i.

    With ``stratified`` the groups are assigned round-robin, giving equal group
    sizes (up to one) regardless of the prior.
    """
    model = plan.model
    labels = model.labels
    records = []
    for i in range(plan.n):
        rng = seeded_rng(plan.seed, i)
        g = i % len(labels) if plan.stratified else sample_group(model.prior, rng)
        seq = simulate_patient(model, labels[g], plan.time_of(i), rng, plan.burn_in)
        records.append(Record(f"{plan.id_prefix}{i}", seq, labels[g]))
    return Dataset(tuple(records), model.transfer.d)
