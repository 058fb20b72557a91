"""CSV ingestion and export for events, labels, embeddings and covariance curves.

Floats are written with ``repr`` so a write/read round trip is bit-exact.
"""

from __future__ import annotations

import csv
from collections import defaultdict
from typing import Iterable, Sequence

import numpy as np

from .core import ConfigError, Dataset, EventSequence, Record
from .covariance import CovarianceCurve

EVENT_COLUMNS = ("patient_id", "code_index", "event_time")


def _fmt(x: float) -> str:
    return repr(float(x))


def write_events_csv(dataset: Dataset, path: str, observation_time: bool = True) -> None:
    """One row per event; patients without events get a row with empty code/time."""
    cols = list(EVENT_COLUMNS) + (["observation_time"] if observation_time else [])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for rec in dataset:
            T = [_fmt(rec.events.window_end)] if observation_time else []
            times, codes = rec.events.flatten()
            if times.size == 0:
                w.writerow([rec.patient_id, "", "", *T])
            for t, c in zip(times, codes):
                w.writerow([rec.patient_id, int(c), _fmt(t), *T])


def write_labels_csv(dataset: Dataset, path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["patient_id", "label"])
        for rec in dataset:
            w.writerow([rec.patient_id, "" if rec.label is None else rec.label])


def read_labels_csv(path: str) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"patient_id", "label"} <= set(reader.fieldnames):
            raise ConfigError(f"{path}: expected columns patient_id, label")
        for line, row in enumerate(reader, start=2):
            pid = (row["patient_id"] or "").strip()
            if not pid:
                raise ConfigError(f"{path}:{line}: missing patient_id")
            out[pid] = (row["label"] or "").strip()
    return out


def ingest_events(events_csv: str, labels_csv: str | None = None, dim: int | None = None) -> Dataset:
    """Read the event CSV (and optional labels) into a Dataset.

    Per-patient windows come from an ``observation_time`` column when present,
    otherwise from the patient's last event time. Patients are kept in order of
    first appearance; patients listed only in the labels file get empty sequences.
    """
    per_patient: dict[str, list[tuple[int, float]]] = defaultdict(list)
    obs_time: dict[str, float] = {}
    order: list[str] = []
    errors: list[str] = []
    with open(events_csv, newline="") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        missing = [c for c in EVENT_COLUMNS if c not in fields]
        if missing:
            raise ConfigError(f"{events_csv}: missing columns {missing}")
        has_T = "observation_time" in fields
        for line, row in enumerate(reader, start=2):
            pid = (row["patient_id"] or "").strip()
            if not pid:
                errors.append(f"line {line}: missing patient_id")
                continue
            if pid not in per_patient:
                per_patient[pid] = []
                order.append(pid)
            if has_T and (row.get("observation_time") or "").strip():
                try:
                    obs_time[pid] = float(row["observation_time"])
                except ValueError:
                    errors.append(f"line {line}: bad observation_time {row['observation_time']!r}")
            code, time = (row["code_index"] or "").strip(), (row["event_time"] or "").strip()
            if not code and not time:
                continue
            try:
                c, t = int(code), float(time)
            except ValueError:
                errors.append(f"line {line}: cannot parse code_index={code!r} event_time={time!r}")
                continue
            if c < 0 or not np.isfinite(t) or t < 0:
                errors.append(f"line {line}: negative code index or invalid time")
                continue
            per_patient[pid].append((c, t))
    if errors:
        shown = "; ".join(errors[:10])
        raise ConfigError(f"{events_csv}: {len(errors)} malformed row(s): {shown}")

    labels = read_labels_csv(labels_csv) if labels_csv else {}
    for pid in labels:
        if pid not in per_patient:
            per_patient[pid] = []
            order.append(pid)

    used = sorted({c for evs in per_patient.values() for c, _ in evs})
    if dim is None:
        dim = (used[-1] + 1) if used else 1
        if used and len(used) != dim:
            gaps = sorted(set(range(dim)) - set(used))[:10]
            raise ConfigError(f"code indices are not dense in [0, {dim}); unused: {gaps}. "
                              "Remap codes to 0..d-1 or pass dim explicitly.")
    elif used and used[-1] >= dim:
        raise ConfigError(f"code index {used[-1]} outside [0, {dim})")

    fallback = max((t for evs in per_patient.values() for _, t in evs), default=1.0) or 1.0
    fallback = max([fallback, *obs_time.values()])
    records = []
    for pid in order:
        evs = per_patient[pid]
        T = obs_time.get(pid) or (max(t for _, t in evs) if evs else 0.0) or fallback
        buckets: list[list[float]] = [[] for _ in range(dim)]
        for c, t in evs:
            buckets[c].append(t)
        try:
            seq = EventSequence.from_unsorted(dim, T, buckets)
        except ConfigError as exc:
            raise ConfigError(f"patient {pid}: {exc}") from None
        label = labels.get(pid) or None
        records.append(Record(pid, seq, label))
    return Dataset(tuple(records), dim)


def write_embeddings_csv(path: str, patient_ids: Sequence[str], X: np.ndarray,
                         method: str | None = None) -> None:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        head = ["patient_id"] + (["method"] if method else []) + [f"f_{i + 1}" for i in range(X.shape[1])]
        w.writerow(head)
        for pid, row in zip(patient_ids, X):
            w.writerow([pid] + ([method] if method else []) + [_fmt(v) for v in row])


def read_embeddings_csv(path: str) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        head = next(reader, None)
        if not head or head[0] != "patient_id":
            raise ConfigError(f"{path}: expected a patient_id column first")
        cols = [i for i, h in enumerate(head) if h.startswith("f_")]
        if not cols:
            raise ConfigError(f"{path}: no feature columns f_1..f_k")
        ids, rows = [], []
        for line, row in enumerate(reader, start=2):
            try:
                rows.append([float(row[i]) for i in cols])
            except (ValueError, IndexError):
                raise ConfigError(f"{path}:{line}: malformed embedding row") from None
            ids.append(row[0])
    return ids, np.array(rows, dtype=np.float64).reshape(len(ids), len(cols))


def write_curve_csv(curve: CovarianceCurve, path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tau", "j", "j_prime", "value"])
        d = curve.dim
        for m, tau in enumerate(curve.lags):
            for j in range(d):
                for jp in range(d):
                    w.writerow([_fmt(tau), j, jp, _fmt(curve.values[m, j, jp])])


def read_curve_csv(path: str) -> CovarianceCurve:
    rows = list(csv.DictReader(open(path, newline="")))
    lags = sorted({float(r["tau"]) for r in rows})
    d = 1 + max(int(r["j"]) for r in rows)
    index = {t: i for i, t in enumerate(lags)}
    V = np.zeros((len(lags), d, d))
    for r in rows:
        V[index[float(r["tau"])], int(r["j"]), int(r["j_prime"])] = float(r["value"])
    return CovarianceCurve(np.array(lags), V)


def write_rows_csv(path: str, header: Iterable[str], rows: Iterable[Iterable]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(header))
        for row in rows:
            w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
