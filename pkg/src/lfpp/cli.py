"""Command line entry point ``lfpp``.

Exit codes: 0 success, 2 configuration or input error, 3 experiment grid with
failed replications.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from typing import Sequence

import numpy as np

from . import __version__
from .baselines import count_embedding, pmi_embedding
from .core import (ConfigError, Dataset, estimator_config_from_dict, load_json, model_from_dict,
                   model_to_dict, seeded_rng, spectral_config_from_dict)
from .harness import METHODS, ExperimentGrid, export_results, run_grid, transfer_variants_grid
from .io import (ingest_events, read_embeddings_csv, read_labels_csv, write_embeddings_csv,
                 write_events_csv, write_labels_csv, write_rows_csv)
from .learn import adjusted_rand_index, auc, kmeans_spectral, predict_score, train_logistic
from .simulate import SimulationPlan, simulate_cohort
from .spectral import embed_sequences

log = logging.getLogger("lfpp")

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL = 0, 2, 3

# transfer matrices drawn for the simulate command use a stream disjoint from patient streams
_TRANSFER_STREAM = (1 << 30,)


def _out_path(args, name: str | None, default: str) -> str:
    path = name or default
    if args.out_dir and not os.path.isabs(path):
        path = os.path.join(args.out_dir, path)
    parent = os.path.dirname(path)
    if parent:
        try:
            os.makedirs(parent, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"cannot create output directory {parent}: {exc}") from exc
    return path


_CONFIG_KEYS = {
    "simulate": {"model", "n", "T", "seed", "stratified", "burn_in", "id_prefix"},
    "embed": {"estimator", "spectral", "bandwidth_c1", "pmi_window_frac", "dim", "method"},
    "classify": {"reg"},
}


def _config(args) -> dict:
    cfg = load_json(args.config) if args.config else {}
    if not isinstance(cfg, dict):
        raise ConfigError(f"{args.config}: expected a JSON object")
    allowed = _CONFIG_KEYS.get(args.command)
    unknown = sorted(set(cfg) - allowed) if allowed is not None else []
    if unknown:
        raise ConfigError(f"{args.config}: unknown keys {unknown}; allowed {sorted(allowed)}")
    return cfg


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = _config(args)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    model = model_from_dict(cfg.get("model", {}), seeded_rng(seed, _TRANSFER_STREAM))
    T = cfg.get("T", 100.0)
    plan = SimulationPlan(model, int(cfg.get("n", 100)), T if np.isscalar(T) else tuple(T), seed,
                          bool(cfg.get("stratified", True)), bool(cfg.get("burn_in", True)),
                          str(cfg.get("id_prefix", "p")))
    data = simulate_cohort(plan)
    events = _out_path(args, args.out, "events.csv")
    labels = _out_path(args, args.labels, "labels.csv")
    write_events_csv(data, events)
    write_labels_csv(data, labels)
    if args.model_out:
        with open(_out_path(args, args.model_out, "model.json"), "w") as fh:
            json.dump(model_to_dict(model), fh, indent=1)
    print(f"simulated {len(data)} patients, {sum(r.events.total for r in data)} events -> {events}")
    return EXIT_OK


def _embed_chunk(payload):
    seqs, method, est, sp, c1, window_frac = payload
    if method == "fourier_eigen":
        return embed_sequences(seqs, est, sp, c1)
    if method == "pmi":
        return np.array([pmi_embedding(s, s.window_end * window_frac, sp.embed_dim).values for s in seqs])
    return np.array([count_embedding(s) for s in seqs], dtype=np.float64).reshape(len(seqs), -1)


def embed_dataset(data: Dataset, cfg: dict, method: str, threads: int = 1) -> np.ndarray:
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; choose from {METHODS}")
    est = estimator_config_from_dict(cfg.get("estimator"))
    sp = spectral_config_from_dict(cfg.get("spectral"))
    c1 = cfg.get("bandwidth_c1")
    frac = float(cfg.get("pmi_window_frac", 1.0 / 20.0))
    seqs = [r.events for r in data]
    if not seqs:
        width = data.dim if method == "counts" else sp.embed_dim
        return np.zeros((0, width))
    if threads <= 1:
        return _embed_chunk((seqs, method, est, sp, c1, frac))
    chunks = [seqs[i::threads] for i in range(threads)]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(_embed_chunk, [(c, method, est, sp, c1, frac) for c in chunks if c]))
    out = np.empty((len(seqs), parts[0].shape[1]))
    for i, part in enumerate(parts):
        out[i::threads] = part
    return out


def cmd_embed(args) -> int:
    cfg = _config(args)
    data = ingest_events(args.events, dim=cfg.get("dim"))
    method = args.method or cfg.get("method", "fourier_eigen")
    X = embed_dataset(data, cfg, method, args.threads)
    out = _out_path(args, args.out, "embeddings.csv")
    write_embeddings_csv(out, [r.patient_id for r in data], X)
    print(f"embedded {len(data)} patients with {method} -> {out}")
    return EXIT_OK


def _aligned_labels(ids: Sequence[str], labels: dict[str, str], path: str, required: bool):
    missing = [i for i in ids if not labels.get(i)]
    if missing:
        if required:
            raise ConfigError(f"{path}: no label for {len(missing)} patient(s), e.g. {missing[:3]}")
        return None
    return [labels[i] for i in ids]


def cmd_classify(args) -> int:
    cfg = _config(args)
    labels = read_labels_csv(args.labels)
    train_ids, X = read_embeddings_csv(args.train)
    y_raw = _aligned_labels(train_ids, labels, args.labels, required=True)
    alphabet = sorted(set(y_raw))
    if len(alphabet) != 2:
        raise ConfigError(f"classification needs exactly two labels, found {alphabet}")
    y = np.array([alphabet.index(v) for v in y_raw])
    model = train_logistic(X, y, reg=float(cfg.get("reg", 1e-4)))
    test_ids, Xt = (read_embeddings_csv(args.test) if args.test else (train_ids, X))
    scores = np.atleast_1d(predict_score(model, Xt))
    out = _out_path(args, args.out, "scores.csv")
    write_rows_csv(out, ["patient_id", "score"], zip(test_ids, scores.tolist()))
    yt = _aligned_labels(test_ids, labels, args.labels, required=False)
    if yt is not None and set(yt) <= set(alphabet) and len(set(yt)) == 2:
        value = auc(scores, [alphabet.index(v) for v in yt])
        print(f"AUC {value:.6f} (positive class {alphabet[1]!r})")
    print(f"scores -> {out}")
    return EXIT_OK


def cmd_cluster(args) -> int:
    ids, X = read_embeddings_csv(args.embeddings)
    seed = args.seed if args.seed is not None else 0
    res = kmeans_spectral(X, args.k, seed=seed)
    out = _out_path(args, args.out, "assignments.csv")
    write_rows_csv(out, ["patient_id", "cluster"], zip(ids, res.assignments.tolist()))
    if args.labels:
        truth = _aligned_labels(ids, read_labels_csv(args.labels), args.labels, required=True)
        print(f"ARI {adjusted_rand_index(truth, res.assignments):.6f}")
    print(f"objective {res.objective:.6g} after {res.iterations} iterations -> {out}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = _config(args)
    preset = args.preset or cfg.pop("preset", None)
    cfg.pop("preset", None)
    if args.seed is not None:
        cfg["base_seed"] = args.seed
    if preset == "transfer_variants":
        grid = transfer_variants_grid(cfg)
    elif preset is None:
        grid = ExperimentGrid.from_dict(cfg)
    else:
        raise ConfigError(f"unknown preset {preset!r}")
    table = run_grid(grid, threads=args.threads, progress=args.verbose)
    paths = export_results(table, args.out_dir or ".", stem=args.stem, svg=not args.no_svg)
    for row in table.rows:
        print(f"{row.kernel:>10} n={row.n} T={row.T:g} delta={row.delta:g} {row.method:>13} "
              f"{row.metric}={row.mean:.4f} (se {row.se:.4f}, R={row.replications})")
    print("wrote " + ", ".join(paths))
    if table.partial:
        print(f"{len(table.failures)} replication(s) failed; see failures file", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--seed", type=int, help="base random seed (overrides the config)")
    common.add_argument("--threads", type=int, default=1, help="worker processes (default 1)")
    common.add_argument("--out-dir", help="directory for relative output paths")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="lfpp", description="Latent factor point process embeddings")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="simulate a labelled cohort")
    s.add_argument("--out", help="events CSV (default events.csv)")
    s.add_argument("--labels", help="labels CSV (default labels.csv)")
    s.add_argument("--model-out", help="also write the realized model as JSON")
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("embed", parents=[common], help="embed patients from an events CSV")
    e.add_argument("--events", required=True)
    e.add_argument("--out", help="embeddings CSV (default embeddings.csv)")
    e.add_argument("--method", choices=METHODS)
    e.set_defaults(func=cmd_embed)

    c = sub.add_parser("classify", parents=[common], help="logistic regression on embeddings")
    c.add_argument("--train", required=True)
    c.add_argument("--labels", required=True)
    c.add_argument("--test")
    c.add_argument("--out", help="scores CSV (default scores.csv)")
    c.set_defaults(func=cmd_classify)

    k = sub.add_parser("cluster", parents=[common], help="spectral-init K-means on embeddings")
    k.add_argument("--embeddings", required=True)
    k.add_argument("--k", type=int, default=2)
    k.add_argument("--labels")
    k.add_argument("--out", help="assignments CSV (default assignments.csv)")
    k.set_defaults(func=cmd_cluster)

    x = sub.add_parser("experiment", parents=[common], help="run a replicated simulation grid")
    x.add_argument("--preset", choices=["transfer_variants"])
    x.add_argument("--stem", default="results")
    x.add_argument("--no-svg", action="store_true")
    x.set_defaults(func=cmd_experiment)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (ConfigError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
