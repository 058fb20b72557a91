"""Domain types, configuration objects and the randomness contract.

Every object here is immutable after construction; validation happens in
``__post_init__`` so an invalid instance can never exist.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields
from functools import cached_property
from typing import Any, Mapping, Sequence

import numpy as np
from scipy import integrate, optimize, special


class ConfigError(ValueError):
    """Raised for invalid configuration or malformed inputs."""


# ---------------------------------------------------------------------------
# randomness
# ---------------------------------------------------------------------------

def seeded_rng(seed: int, stream: int | Sequence[int] = 0) -> np.random.Generator:
    """Return an independent PCG64 generator for ``(seed, stream)``.

    ``stream`` may be a tuple of nonnegative integers for nested streams
    (e.g. ``(cell, replication, patient)``).
    """
    key = (stream,) if np.isscalar(stream) else tuple(stream)
    if any(int(s) < 0 for s in key):
        raise ConfigError("rng stream indices must be nonnegative")
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1),
                                spawn_key=tuple(int(s) for s in key))
    return np.random.default_rng(ss)


def derive_seed(seed: int, *keys: int) -> int:
    """Deterministically derive a child 64-bit seed from ``seed`` and ``keys``."""
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1),
                                spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


# ---------------------------------------------------------------------------
# event sequences
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class EventSequence:
    """Sorted event times for each of ``dim`` component processes on [0, window_end]."""

    dim: int
    window_end: float
    events: tuple[np.ndarray, ...]

    def __init__(self, dim: int, window_end: float, events: Sequence[Any] | None = None,
                 *, check: bool = True):
        if events is None:
            events = [()] * int(dim)
        arrs = tuple(np.array(e, dtype=np.float64).reshape(-1) for e in events)
        object.__setattr__(self, "dim", int(dim))
        object.__setattr__(self, "window_end", float(window_end))
        object.__setattr__(self, "events", arrs)
        if check:
            self._validate()
        for a in arrs:
            a.setflags(write=False)

    def _validate(self) -> None:
        if self.dim < 1:
            raise ConfigError("dim must be positive")
        if not (self.window_end > 0) or not math.isfinite(self.window_end):
            raise ConfigError(f"window_end must be positive and finite, got {self.window_end}")
        if len(self.events) != self.dim:
            raise ConfigError(f"expected {self.dim} component lists, got {len(self.events)}")
        for j, a in enumerate(self.events):
            if a.size == 0:
                continue
            if not np.all(np.isfinite(a)):
                raise ConfigError(f"component {j}: non-finite event time")
            if a[0] < 0 or a[-1] > self.window_end:
                raise ConfigError(f"component {j}: event time outside [0, {self.window_end}]")
            if a.size > 1 and np.any(np.diff(a) < 0):
                raise ConfigError(f"component {j}: event times not sorted")

    @classmethod
    def from_unsorted(cls, dim: int, window_end: float, events: Sequence[Any]) -> "EventSequence":
        return cls(dim, window_end, [np.sort(np.asarray(e, dtype=np.float64)) for e in events])

    @property
    def counts(self) -> np.ndarray:
        return np.array([a.size for a in self.events], dtype=np.int64)

    @property
    def total(self) -> int:
        return int(sum(a.size for a in self.events))

    def flatten(self) -> tuple[np.ndarray, np.ndarray]:
        """All events as ``(times, codes)`` sorted by time (stable in code order)."""
        if self.total == 0:
            return np.empty(0), np.empty(0, dtype=np.int64)
        times = np.concatenate(self.events)
        codes = np.repeat(np.arange(self.dim, dtype=np.int64), self.counts)
        order = np.argsort(times, kind="stable")
        return times[order], codes[order]

    def permuted(self, perm: Sequence[int]) -> "EventSequence":
        """Relabel codes: component ``j`` of the result is component ``perm[j]`` here."""
        return EventSequence(self.dim, self.window_end, [self.events[p] for p in perm], check=False)

    def merge(self, other: "EventSequence") -> "EventSequence":
        if other.dim != self.dim:
            raise ConfigError("cannot merge sequences of different dimension")
        T = max(self.window_end, other.window_end)
        return EventSequence(self.dim, T, [np.sort(np.concatenate([a, b]))
                                           for a, b in zip(self.events, other.events)])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EventSequence):
            return NotImplemented
        return (self.dim == other.dim and self.window_end == other.window_end
                and all(np.array_equal(a, b) for a, b in zip(self.events, other.events)))

    def __repr__(self) -> str:
        return f"EventSequence(dim={self.dim}, window_end={self.window_end}, total={self.total})"


# ---------------------------------------------------------------------------
# transfer kernels
# ---------------------------------------------------------------------------

# tag -> support radius b0
KERNEL_SUPPORT = {
    "gauss": 6.0,
    "sinc_decay": math.pi,
    "sqrt_ramp": 1.0,
    "lin_ramp": 1.0,
    "exp4": 2.0,
}
KERNEL_CODES = {name: i for i, name in enumerate(KERNEL_SUPPORT)}


def transfer_kernel(tag: str, t: Any) -> np.ndarray:
    """Evaluate the transfer kernel ``beta`` at ``t`` (zero outside [0, support))."""
    if tag not in KERNEL_SUPPORT:
        raise ConfigError(f"unknown transfer kernel {tag!r}")
    t = np.asarray(t, dtype=np.float64)
    b0 = KERNEL_SUPPORT[tag]
    inside = (t >= 0) & (t < b0)
    s = np.where(inside, t, 0.0)
    if tag == "gauss":
        v = np.exp(-0.5 * s * s)
    elif tag == "sinc_decay":
        v = np.abs(np.sin(s)) / (s + 1.0)
    elif tag == "sqrt_ramp":
        v = 1.0 - np.sqrt(s)
    elif tag == "lin_ramp":
        v = 1.0 - s
    else:
        v = np.power(4.0, -s)
    return np.where(inside, v, 0.0)


def _kernel_sup(tag: str) -> float:
    if tag != "sinc_decay":
        return 1.0
    res = optimize.minimize_scalar(lambda t: -math.sin(t) / (t + 1.0), bounds=(0.0, math.pi),
                                   method="bounded", options={"xatol": 1e-12})
    return float(-res.fun)


def _kernel_integral(tag: str) -> float:
    if tag == "gauss":
        return math.sqrt(math.pi / 2.0) * math.erf(6.0 / math.sqrt(2.0))
    if tag == "sqrt_ramp":
        return 1.0 / 3.0
    if tag == "lin_ramp":
        return 0.5
    if tag == "exp4":
        return (1.0 - 4.0 ** -2) / math.log(4.0)
    val, _ = integrate.quad(lambda t: float(transfer_kernel(tag, t)), 0.0, KERNEL_SUPPORT[tag],
                            epsabs=1e-13, epsrel=1e-13, limit=200)
    return val


def kernel_fourier(tag: str, xi: float) -> complex:
    """One-sided Fourier transform of the transfer kernel at frequency ``xi``.

    Uses ``exp(-i 2 pi xi t)``. The gauss kernel uses its closed form through
    Dawson's integral; the others use oscillatory adaptive quadrature.
    """
    if tag == "gauss":
        x = math.sqrt(2.0) * math.pi * xi
        return complex(math.sqrt(math.pi / 2.0) * math.exp(-2.0 * (math.pi * xi) ** 2),
                       -math.sqrt(2.0) * float(special.dawsn(x)))
    b0 = KERNEL_SUPPORT[tag]
    f = lambda t: float(transfer_kernel(tag, t))  # noqa: E731
    w = 2.0 * math.pi * xi
    if w == 0.0:
        return complex(_kernel_integral(tag), 0.0)
    re, _ = integrate.quad(f, 0.0, b0, weight="cos", wvar=w, epsabs=1e-11, limit=400)
    im, _ = integrate.quad(f, 0.0, b0, weight="sin", wvar=w, epsabs=1e-11, limit=400)
    return complex(re, -im)


def kernel_autocorrelation(tag: str, lags: Any) -> np.ndarray:
    """``R(tau) = int beta(s) beta(s - |tau|) ds``, the lag-tau overlap of the kernel with itself."""
    lags = np.abs(np.asarray(lags, dtype=np.float64))
    if tag == "gauss":
        return 0.5 * math.sqrt(math.pi) * np.exp(-lags * lags / 4.0) * special.erfc(lags / 2.0)
    b0 = KERNEL_SUPPORT[tag]
    out = np.zeros_like(lags)
    f = lambda s, tau: float(transfer_kernel(tag, s) * transfer_kernel(tag, s - tau))  # noqa: E731
    for idx, tau in np.ndenumerate(lags):
        if tau >= b0:
            continue
        pts = [p for p in (math.pi / 2, math.pi / 2 + tau) if tau < p < b0] if tag == "sinc_decay" else None
        out[idx], _ = integrate.quad(f, tau, b0, args=(tau,), epsabs=1e-10, epsrel=1e-10,
                                     limit=200, points=pts)
    return out


@dataclass(frozen=True, eq=False)
class TransferBank:
    """Transfer functions ``omega_jl(t) = coefficients[j, l] * beta(t)``."""

    coefficients: np.ndarray
    kernel: str = "gauss"

    def __post_init__(self):
        a = np.array(self.coefficients, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
            raise ConfigError("transfer coefficients must be a nonempty d x k matrix")
        if np.any(a < 0) or not np.all(np.isfinite(a)):
            raise ConfigError("transfer coefficients must be finite and nonnegative")
        if self.kernel not in KERNEL_SUPPORT:
            raise ConfigError(f"unknown transfer kernel {self.kernel!r}")
        a.setflags(write=False)
        object.__setattr__(self, "coefficients", a)

    @property
    def d(self) -> int:
        return self.coefficients.shape[0]

    @property
    def k(self) -> int:
        return self.coefficients.shape[1]

    @property
    def support_radius(self) -> float:
        return KERNEL_SUPPORT[self.kernel]

    @cached_property
    def kernel_sup(self) -> float:
        return _kernel_sup(self.kernel)

    @cached_property
    def kernel_integral(self) -> float:
        return _kernel_integral(self.kernel)

    def beta(self, t: Any) -> np.ndarray:
        return transfer_kernel(self.kernel, t)

    def __call__(self, j: int, l: int, t: Any) -> np.ndarray:
        return self.coefficients[j, l] * self.beta(t)

    @classmethod
    def random(cls, d: int, k: int, rng: np.random.Generator, kernel: str = "gauss",
               high: float = 0.5) -> "TransferBank":
        return cls(rng.uniform(0.0, high, size=(d, k)), kernel)


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Generative model: group prior, per-group latent rates, transfer bank, baselines."""

    transfer: TransferBank
    baseline: np.ndarray
    groups: tuple[tuple[str, np.ndarray], ...]
    prior: np.ndarray

    def __post_init__(self):
        nu = np.array(self.baseline, dtype=np.float64).reshape(-1)
        if nu.size == 1 and self.transfer.d > 1:
            nu = np.full(self.transfer.d, float(nu[0]))
        if nu.size != self.transfer.d or np.any(nu < 0) or not np.all(np.isfinite(nu)):
            raise ConfigError("baseline must be a nonnegative length-d vector")
        groups = []
        for label, mu in self.groups:
            mu = np.array(mu, dtype=np.float64).reshape(-1)
            if mu.size != self.transfer.k:
                raise ConfigError(f"group {label!r}: latent intensity must have length k={self.transfer.k}")
            if np.any(mu < 0) or not np.all(np.isfinite(mu)):
                raise ConfigError(f"group {label!r}: latent intensities must be nonnegative")
            mu.setflags(write=False)
            groups.append((str(label), mu))
        labels = [g for g, _ in groups]
        if len(set(labels)) != len(labels):
            raise ConfigError("group labels must be unique")
        if len(groups) < 2:
            raise ConfigError("at least two groups are required")
        prior = np.array(self.prior, dtype=np.float64).reshape(-1)
        if prior.size != len(groups):
            raise ConfigError("prior length must match the number of groups")
        if np.any(prior <= 0) or abs(prior.sum() - 1.0) > 1e-12:
            raise ConfigError("prior must be strictly positive and sum to 1")
        nu.setflags(write=False)
        prior.setflags(write=False)
        object.__setattr__(self, "baseline", nu)
        object.__setattr__(self, "groups", tuple(groups))
        object.__setattr__(self, "prior", prior)

    @property
    def labels(self) -> list[str]:
        return [g for g, _ in self.groups]

    def mu(self, label: str) -> np.ndarray:
        for g, mu in self.groups:
            if g == str(label):
                return mu
        raise ConfigError(f"unknown group {label!r}")

    def with_transfer(self, transfer: TransferBank) -> "ModelSpec":
        return ModelSpec(transfer, self.baseline, self.groups, self.prior)

    def stationary_rate(self, label: str) -> np.ndarray:
        """Mean intensity of each code in the stationary regime for ``label``."""
        A = self.transfer.coefficients
        return self.baseline + A @ self.mu(label) * self.transfer.kernel_integral


def two_group_means(delta: float, base: Sequence[float] = (1.0, 1.0),
                    direction: Sequence[float] | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Group latent rates ``mu0 = base`` and ``mu1 = base + delta * direction``.

    ``direction`` defaults to ``(1, -1, 0, ...)/sqrt(2)``, which keeps the total
    latent rate equal across groups.
    """
    base = np.asarray(base, dtype=np.float64)
    if direction is None:
        direction = np.zeros_like(base)
        direction[0], direction[1] = 1.0, -1.0
    direction = np.asarray(direction, dtype=np.float64)
    direction = direction / np.linalg.norm(direction)
    mu1 = base + delta * direction
    if np.any(mu1 < 0):
        raise ConfigError(f"signal strength {delta} drives a latent rate negative from base {base.tolist()}")
    return base.copy(), mu1


def two_group_model(transfer: TransferBank, delta: float, base: Sequence[float] = (1.0, 1.0),
                    baseline: float | Sequence[float] = 0.1) -> ModelSpec:
    mu0, mu1 = two_group_means(delta, base)
    nu = np.broadcast_to(np.asarray(baseline, dtype=np.float64), (transfer.d,))
    return ModelSpec(transfer, nu, (("0", mu0), ("1", mu1)), np.array([0.5, 0.5]))


# ---------------------------------------------------------------------------
# estimator / spectral configuration
# ---------------------------------------------------------------------------

SMOOTHING_KERNELS = ("gaussian", "epanechnikov")


@dataclass(frozen=True)
class EstimatorConfig:
    bandwidth: float = 1.0
    smoothing_kernel: str = "gaussian"
    lag_threshold: float = 5.0
    lag_grid_step: float | None = None
    kernel_truncation_radius: float | None = None

    def __post_init__(self):
        if self.smoothing_kernel not in SMOOTHING_KERNELS:
            raise ConfigError(f"unknown smoothing kernel {self.smoothing_kernel!r}")
        if self.lag_grid_step is None:
            object.__setattr__(self, "lag_grid_step", self.lag_threshold / 100.0)
        if self.kernel_truncation_radius is None:
            r = 4.0 if self.smoothing_kernel == "gaussian" else 1.0
            object.__setattr__(self, "kernel_truncation_radius", r)
        for name in ("bandwidth", "lag_threshold", "lag_grid_step", "kernel_truncation_radius"):
            v = getattr(self, name)
            if not (v > 0) or not math.isfinite(v):
                raise ConfigError(f"{name} must be positive, got {v}")
        ratio = self.lag_threshold / self.lag_grid_step
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            raise ConfigError("lag_grid_step must divide lag_threshold evenly")

    @property
    def half_width(self) -> int:
        return int(round(self.lag_threshold / self.lag_grid_step))

    @property
    def lags(self) -> np.ndarray:
        m = np.arange(-self.half_width, self.half_width + 1, dtype=np.float64)
        return m * self.lag_grid_step

    def with_bandwidth(self, h: float) -> "EstimatorConfig":
        return EstimatorConfig(h, self.smoothing_kernel, self.lag_threshold, self.lag_grid_step,
                               self.kernel_truncation_radius)


def scheduled_bandwidth(T: float, c1: float = 1.0) -> float:
    """Bandwidth ``c1 * T**(-1/5)``."""
    return c1 * float(T) ** -0.2


@dataclass(frozen=True)
class SpectralConfig:
    frequency: float = 1.0
    embed_dim: int = 2

    def __post_init__(self):
        if not math.isfinite(self.frequency):
            raise ConfigError("frequency must be finite")
        if self.embed_dim < 1:
            raise ConfigError("embed_dim must be positive")


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Record:
    patient_id: str
    events: EventSequence
    label: str | None = None
    covariates: Mapping[str, Any] | None = field(default=None, compare=False)

    @property
    def observation_time(self) -> float:
        return self.events.window_end


@dataclass(frozen=True)
class Dataset:
    records: tuple[Record, ...]
    dim: int | None = None

    def __post_init__(self):
        recs = tuple(self.records)
        dims = {r.events.dim for r in recs}
        if len(dims) > 1:
            raise ConfigError(f"records disagree on dimension: {sorted(dims)}")
        dim = self.dim if self.dim is not None else (dims.pop() if dims else None)
        if recs and dim != recs[0].events.dim:
            raise ConfigError("declared dimension does not match records")
        object.__setattr__(self, "records", recs)
        object.__setattr__(self, "dim", dim)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i: int) -> Record:
        return self.records[i]

    @property
    def labels(self) -> list[str | None]:
        return [r.label for r in self.records]

    def label_codes(self, alphabet: Sequence[str] | None = None) -> tuple[np.ndarray, list[str]]:
        """Map string labels to dense integers (alphabet sorted unless given)."""
        labels = self.labels
        if any(l is None for l in labels):
            raise ConfigError("dataset has unlabeled records")
        alphabet = list(alphabet) if alphabet is not None else sorted(set(labels))
        index = {g: i for i, g in enumerate(alphabet)}
        try:
            return np.array([index[l] for l in labels], dtype=np.int64), alphabet
        except KeyError as exc:
            raise ConfigError(f"label {exc.args[0]!r} not in alphabet {alphabet}") from None


# ---------------------------------------------------------------------------
# JSON config helpers
# ---------------------------------------------------------------------------

def _from_dict(cls, d: Mapping[str, Any] | None, where: str):
    d = dict(d or {})
    _check_keys(d, {f.name for f in fields(cls)}, where)
    return cls(**d)


def estimator_config_from_dict(d: Mapping[str, Any] | None) -> EstimatorConfig:
    return _from_dict(EstimatorConfig, d, "estimator")


def spectral_config_from_dict(d: Mapping[str, Any] | None) -> SpectralConfig:
    return _from_dict(SpectralConfig, d, "spectral")


def _check_keys(d: Mapping[str, Any], allowed: set[str], where: str) -> None:
    unknown = sorted(set(d) - allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}; allowed {sorted(allowed)}")


def model_from_dict(d: Mapping[str, Any], rng: np.random.Generator | None = None) -> ModelSpec:
    """Build a ModelSpec from JSON-like data.

    ``transfer.coefficients`` may be an explicit matrix or omitted, in which case
    ``transfer.d``/``transfer.k`` are drawn Unif(0, ``transfer.high``) from ``rng``.
    Groups are either an explicit list of ``{"label", "mu"}`` or a ``signal``
    block ``{"delta", "base"}`` describing the two-group design.
    """
    _check_keys(d, {"transfer", "baseline", "groups", "prior", "signal"}, "model")
    t = dict(d.get("transfer", {}))
    _check_keys(t, {"kernel", "coefficients", "d", "k", "high"}, "model.transfer")
    _check_keys(d.get("signal", {}), {"delta", "base"}, "model.signal")
    kernel = t.get("kernel", "gauss")
    if "coefficients" in t:
        transfer = TransferBank(np.asarray(t["coefficients"], dtype=np.float64), kernel)
    else:
        if rng is None:
            raise ConfigError("random transfer coefficients need an rng")
        transfer = TransferBank.random(int(t.get("d", 100)), int(t.get("k", 2)), rng, kernel,
                                       float(t.get("high", 0.5)))
    baseline = d.get("baseline", 0.1)
    nu = np.broadcast_to(np.asarray(baseline, dtype=np.float64), (transfer.d,)) \
        if np.ndim(baseline) == 0 else np.asarray(baseline, dtype=np.float64)
    if "groups" in d:
        groups = tuple((str(g["label"]), np.asarray(g["mu"], dtype=np.float64)) for g in d["groups"])
        prior = d.get("prior", [1.0 / len(groups)] * len(groups))
        return ModelSpec(transfer, nu, groups, np.asarray(prior))
    sig = dict(d.get("signal", {}))
    mu0, mu1 = two_group_means(float(sig.get("delta", 0.5)), sig.get("base", [1.0] * transfer.k))
    return ModelSpec(transfer, nu, (("0", mu0), ("1", mu1)), np.asarray(d.get("prior", [0.5, 0.5])))


def model_to_dict(model: ModelSpec) -> dict[str, Any]:
    return {
        "transfer": {"kernel": model.transfer.kernel,
                     "coefficients": model.transfer.coefficients.tolist()},
        "baseline": model.baseline.tolist(),
        "groups": [{"label": g, "mu": mu.tolist()} for g, mu in model.groups],
        "prior": model.prior.tolist(),
    }


def load_json(path: str) -> dict[str, Any]:
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
