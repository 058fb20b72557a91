"""Replicated simulation experiments: classification and clustering grids.

A grid cell is one (kernel, n, T, delta) combination. Each replication draws
a transfer bank, a balanced training cohort and an independent test cohort,
embeds both with every requested method, then records test AUC of a
logistic model and the adjusted Rand index of K-means on the training cohort.

Replication seeds depend on the replication index and the (kernel, n, T)
coordinates but not on delta, so cells along the signal axis share their
random numbers and can be compared pairwise.
"""

from __future__ import annotations

import logging
import math
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from itertools import product
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .baselines import count_embedding, pmi_embedding
from .core import (KERNEL_SUPPORT, ConfigError, Dataset, EstimatorConfig, SpectralConfig, TransferBank,
                   derive_seed, seeded_rng, two_group_model)
from .io import write_rows_csv
from .learn import adjusted_rand_index, auc, kmeans_spectral, predict_score, train_logistic
from .simulate import SimulationPlan, simulate_cohort
from .spectral import embed_sequences

log = logging.getLogger(__name__)

METHODS = ("fourier_eigen", "pmi", "counts")
TASKS = ("classification", "clustering")


@dataclass(frozen=True)
class ExperimentGrid:
    d: int = 100
    k: int = 2
    n_list: tuple[int, ...] = (500,)
    T_list: tuple[float, ...] = (100.0,)
    delta_list: tuple[float, ...] = (0.5,)
    kernels: tuple[str, ...] = ("gauss",)
    replications: int = 20
    test_size: int = 50
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    spectral: SpectralConfig = field(default_factory=SpectralConfig)
    methods: tuple[str, ...] = METHODS
    tasks: tuple[str, ...] = TASKS
    base_seed: int = 0
    mu_base: tuple[float, ...] = (1.0, 1.0)
    baseline: float = 0.1
    coef_high: float = 0.5
    pmi_window_frac: float = 1.0 / 20.0
    reg: float = 1e-4
    freeze_transfer: bool = False

    def __post_init__(self):
        for name in ("n_list", "T_list", "delta_list", "kernels", "methods", "tasks", "mu_base"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.d < 1 or self.k < 1 or self.replications < 1 or self.test_size < 2:
            raise ConfigError("grid sizes must be positive")
        if any(n < 2 for n in self.n_list) or any(t <= 0 for t in self.T_list):
            raise ConfigError("grid n and T values must be positive")
        if any(x < 0 for x in self.delta_list):
            raise ConfigError("signal strengths must be nonnegative")
        if not self.methods or set(self.methods) - set(METHODS):
            raise ConfigError(f"methods must be a nonempty subset of {METHODS}")
        if not self.tasks or set(self.tasks) - set(TASKS):
            raise ConfigError(f"tasks must be a nonempty subset of {TASKS}")
        if set(self.kernels) - set(KERNEL_SUPPORT):
            raise ConfigError(f"unknown kernel in {self.kernels}")
        if len(self.mu_base) != self.k:
            raise ConfigError("mu_base must have length k")
        if self.spectral.embed_dim > self.d:
            raise ConfigError("embed_dim cannot exceed d")

    def cells(self) -> list[dict[str, Any]]:
        return [{"kernel": kern, "n": n, "T": T, "delta": dl}
                for kern, n, T, dl in product(self.kernels, self.n_list, self.T_list, self.delta_list)]

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        return out

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ExperimentGrid":
        d = dict(d)
        try:
            if "estimator" in d:
                d["estimator"] = EstimatorConfig(**d["estimator"])
            if "spectral" in d:
                d["spectral"] = SpectralConfig(**d["spectral"])
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(f"bad experiment config: {exc}") from None


@dataclass(frozen=True)
class ResultRow:
    kernel: str
    n: int
    T: float
    delta: float
    method: str
    metric: str
    mean: float
    se: float
    replications: int
    failures: int = 0


@dataclass
class ResultTable:
    rows: list[ResultRow] = field(default_factory=list)
    failures: list[dict[str, Any]] = field(default_factory=list)
    raw: dict[tuple, list[float]] = field(default_factory=dict, repr=False)

    COLUMNS = ("kernel", "n", "T", "delta", "method", "metric", "mean", "se", "replications", "failures")

    def get(self, metric: str, method: str, **cell) -> ResultRow:
        for r in self.rows:
            if r.metric == metric and r.method == method and all(
                    getattr(r, key) == val for key, val in cell.items()):
                return r
        raise KeyError((metric, method, cell))

    def values(self, metric: str, method: str, **cell) -> np.ndarray:
        row = self.get(metric, method, **cell)
        return np.asarray(self.raw[(row.kernel, row.n, row.T, row.delta, method, metric)])

    @property
    def partial(self) -> bool:
        return bool(self.failures)

    def to_csv(self, path: str) -> None:
        if not self.rows:
            raise ConfigError("result table is empty")
        write_rows_csv(path, self.COLUMNS, ([getattr(r, c) for c in self.COLUMNS] for r in self.rows))

    @classmethod
    def from_csv(cls, path: str) -> "ResultTable":
        import csv
        rows = []
        with open(path, newline="") as fh:
            for rec in csv.DictReader(fh):
                rows.append(ResultRow(rec["kernel"], int(rec["n"]), float(rec["T"]), float(rec["delta"]),
                                      rec["method"], rec["metric"], float(rec["mean"]), float(rec["se"]),
                                      int(rec["replications"]), int(rec["failures"])))
        return cls(rows)


def _mean_se(x: Sequence[float]) -> tuple[float, float]:
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        return float("nan"), float("nan")
    se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else float("nan")
    return float(x.mean()), se


# ---------------------------------------------------------------------------
# one replication
# ---------------------------------------------------------------------------

def method_features(method: str, dataset: Dataset, grid: ExperimentGrid) -> np.ndarray:
    seqs = [r.events for r in dataset]
    if method == "fourier_eigen":
        return embed_sequences(seqs, grid.estimator, grid.spectral)
    if method == "pmi":
        k = grid.spectral.embed_dim
        return np.array([pmi_embedding(s, s.window_end * grid.pmi_window_frac, k).values for s in seqs])
    if method == "counts":
        return np.array([count_embedding(s) for s in seqs], dtype=np.float64)
    raise ConfigError(f"unknown method {method!r}")


def replication_seed(grid: ExperimentGrid, cell: Mapping[str, Any], rep: int) -> int:
    kidx = list(KERNEL_SUPPORT).index(cell["kernel"])
    return derive_seed(grid.base_seed, rep, kidx, int(cell["n"]), int(round(float(cell["T"]) * 1000)))


def run_replication(grid: ExperimentGrid, cell: Mapping[str, Any], rep: int) -> dict[tuple[str, str], float]:
    """Metrics ``{(method, metric): value}`` for one replication of one cell."""
    seed = replication_seed(grid, cell, rep)
    if grid.freeze_transfer:
        a_rng = seeded_rng(grid.base_seed, (1 << 20, list(KERNEL_SUPPORT).index(cell["kernel"])))
    else:
        a_rng = seeded_rng(seed, 0)
    tb = TransferBank.random(grid.d, grid.k, a_rng, cell["kernel"], grid.coef_high)
    model = two_group_model(tb, float(cell["delta"]), grid.mu_base, grid.baseline)
    T = float(cell["T"])
    train = simulate_cohort(SimulationPlan(model, int(cell["n"]), T, derive_seed(seed, 1), id_prefix="train"))
    y_train, alphabet = train.label_codes(model.labels)
    test = None
    if "classification" in grid.tasks:
        test = simulate_cohort(SimulationPlan(model, grid.test_size, T, derive_seed(seed, 2), id_prefix="test"))
        y_test, _ = test.label_codes(alphabet)
    out: dict[tuple[str, str], float] = {}
    for method in grid.methods:
        X_train = method_features(method, train, grid)
        if "classification" in grid.tasks:
            X_test = method_features(method, test, grid)
            clf = train_logistic(X_train, y_train, reg=grid.reg)
            out[(method, "auc")] = auc(predict_score(clf, X_test), y_test)
        if "clustering" in grid.tasks:
            res = kmeans_spectral(X_train, len(alphabet), seed=derive_seed(seed, 3))
            out[(method, "ari")] = adjusted_rand_index(y_train, res.assignments)
    return out


def _task(args):
    grid, ci, cell, rep = args
    try:
        return ci, rep, run_replication(grid, cell, rep), None
    except Exception as exc:  # recorded with provenance, grid continues
        return ci, rep, None, f"{type(exc).__name__}: {exc}\n{traceback.format_exc(limit=3)}"


def run_grid(grid: ExperimentGrid, threads: int = 1, progress: bool = False) -> ResultTable:
    """Run every (cell, replication) and aggregate means and standard errors."""
    cells = grid.cells()
    jobs = [(grid, ci, cell, rep) for ci, cell in enumerate(cells) for rep in range(grid.replications)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_task, jobs, chunksize=1))
    else:
        results = []
        for i, job in enumerate(jobs):
            results.append(_task(job))
            if progress:
                log.info("replication %d/%d done", i + 1, len(jobs))
    results.sort(key=lambda r: (r[0], r[1]))

    table = ResultTable()
    metrics = [m for task, m in (("classification", "auc"), ("clustering", "ari")) if task in grid.tasks]
    for ci, cell in enumerate(cells):
        got = [r for r in results if r[0] == ci]
        fails = [r for r in got if r[2] is None]
        for r in fails:
            table.failures.append({**cell, "replication": r[1], "error": r[3]})
            log.warning("cell %s replication %d failed: %s", cell, r[1], r[3].splitlines()[0])
        for method in grid.methods:
            for metric in metrics:
                vals = [r[2][(method, metric)] for r in got if r[2] is not None]
                key = (cell["kernel"], int(cell["n"]), float(cell["T"]), float(cell["delta"]), method, metric)
                table.raw[key] = vals
                mean, se = _mean_se(vals)
                table.rows.append(ResultRow(cell["kernel"], int(cell["n"]), float(cell["T"]),
                                            float(cell["delta"]), method, metric, mean, se,
                                            len(vals), len(fails)))
    return table


def run_classification_grid(grid: ExperimentGrid, threads: int = 1) -> ResultTable:
    return run_grid(replace(grid, tasks=("classification",)), threads)


def run_clustering_grid(grid: ExperimentGrid, threads: int = 1) -> ResultTable:
    return run_grid(replace(grid, tasks=("clustering",)), threads)


TABLE1_KERNELS = ("sinc_decay", "sqrt_ramp", "lin_ramp", "exp4")


def transfer_variants_grid(config: Mapping[str, Any] | None = None) -> ExperimentGrid:
    """Kernel-robustness study: d=100, k=2, T=100, n=500, delta=1.6 over four kernels."""
    base = dict(d=100, k=2, n_list=(500,), T_list=(100.0,), delta_list=(1.6,),
                kernels=TABLE1_KERNELS, mu_base=(1.5, 1.5))
    base.update(dict(config or {}))
    return ExperimentGrid.from_dict(base)


def run_transfer_variants(config: Mapping[str, Any] | None = None, threads: int = 1) -> ResultTable:
    return run_grid(transfer_variants_grid(config), threads)


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

def export_results(table: ResultTable, out_dir: str, stem: str = "results", svg: bool = True) -> list[str]:
    """Tidy CSV plus, for grids that vary delta, one SVG per metric (panels n x T)."""
    import os
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create {out_dir}: {exc}") from exc
    paths = []
    csv_path = os.path.join(out_dir, f"{stem}.csv")
    try:
        table.to_csv(csv_path)
    except OSError as exc:
        raise ConfigError(f"cannot write {csv_path}: {exc}") from exc
    paths.append(csv_path)
    if table.failures:
        fail_path = os.path.join(out_dir, f"{stem}_failures.csv")
        write_rows_csv(fail_path, ["kernel", "n", "T", "delta", "replication", "error"],
                       ([f["kernel"], f["n"], f["T"], f["delta"], f["replication"],
                         f["error"].splitlines()[0]] for f in table.failures))
        paths.append(fail_path)
    if svg:
        for metric in sorted({r.metric for r in table.rows}):
            for kernel in sorted({r.kernel for r in table.rows}):
                rows = [r for r in table.rows if r.metric == metric and r.kernel == kernel]
                if len({r.delta for r in rows}) < 2:
                    continue
                p = os.path.join(out_dir, f"{stem}_{metric}_{kernel}.svg")
                plot_metric_panels(rows, metric, p)
                paths.append(p)
    return paths


def plot_metric_panels(rows: Iterable[ResultRow], metric: str, path: str) -> int:
    """Metric versus delta, one panel per (n, T), one line per method. Returns panel count."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = list(rows)
    with matplotlib.rc_context({"svg.hashsalt": "lfpp"}):  # stable element ids
        return _draw_panels(plt, rows, metric, path)


def _draw_panels(plt, rows, metric, path):
    ns = sorted({r.n for r in rows})
    Ts = sorted({r.T for r in rows})
    methods = [m for m in METHODS if any(r.method == m for r in rows)]
    fig, axes = plt.subplots(len(ns), len(Ts), figsize=(3.2 * len(Ts), 2.6 * len(ns)),
                             squeeze=False, sharey=True)
    for a, n in enumerate(ns):
        for b, T in enumerate(Ts):
            ax = axes[a, b]
            for m in methods:
                pts = sorted((r.delta, r.mean, r.se) for r in rows if r.n == n and r.T == T and r.method == m)
                if pts:
                    x, y, e = map(np.asarray, zip(*pts))
                    ax.errorbar(x, y, yerr=np.nan_to_num(e), marker="o", ms=3, label=m)
            ax.set_title(f"n={n}, T={T:g}", fontsize=9)
            ax.set_xlabel("signal strength")
            if b == 0:
                ax.set_ylabel(metric.upper())
    axes[0, 0].legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return len(ns) * len(Ts)
