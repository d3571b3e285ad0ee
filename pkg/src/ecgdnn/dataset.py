"""On-disk dataset format and the label / measurement / score CSV tables.

A dataset directory holds ``manifest.json`` (one object per exam) and a
binary tracings file of little-endian float32 samples, record-major and
lead-major within a record, leads in the standard order.
"""

import csv
import hashlib
import json
import math
from pathlib import Path

import numpy as np

from .consolidate import Measurements
from .errors import InputError
from .labels import CLASSES, N_LEADS
from .signal import EcgRecord

MANIFEST = "manifest.json"
TRACINGS = "tracings.bin"
LABELS_CSV = "labels.csv"
MEASUREMENTS_CSV = "measurements.csv"
MANIFEST_KEYS = ("exam_id", "patient_id", "sampling_rate", "n_samples", "age", "sex",
                 "tracing_file", "byte_offset")


def write_dataset(out_dir, records, tracing_file=TRACINGS):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest, offset = [], 0
    with open(out / tracing_file, "wb") as fh:
        for order, rec in enumerate(records):
            data = np.ascontiguousarray(rec.leads, dtype="<f4")
            fh.write(data.tobytes())
            manifest.append({
                "exam_id": rec.exam_id, "patient_id": rec.patient_id,
                "sampling_rate": int(rec.sampling_rate), "n_samples": int(rec.n_samples),
                "age": float(rec.age), "sex": rec.sex,
                "tracing_file": tracing_file, "byte_offset": offset,
                "acquired": order,
            })
            offset += data.nbytes
    with open(out / MANIFEST, "w") as fh:
        json.dump(manifest, fh, indent=1)
    return manifest


def read_manifest(data_dir):
    path = Path(data_dir) / MANIFEST
    if not path.is_file():
        raise InputError(f"no {MANIFEST} in {data_dir}")
    try:
        entries = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: {exc}") from None
    if not isinstance(entries, list):
        raise InputError(f"{path}: expected a JSON array")
    for i, e in enumerate(entries):
        missing = [k for k in MANIFEST_KEYS if k not in e]
        if missing:
            raise InputError(f"{path}: entry {i} lacks {missing}")
    return entries


def load_records(data_dir, entries=None):
    """Read every (or the given) manifest entry into :class:`EcgRecord` objects."""
    data_dir = Path(data_dir)
    entries = read_manifest(data_dir) if entries is None else entries
    blobs = {}
    records = []
    for e in entries:
        fname = e["tracing_file"]
        if fname not in blobs:
            blobs[fname] = np.memmap(data_dir / fname, dtype="<f4", mode="r")
        count = N_LEADS * int(e["n_samples"])
        start = int(e["byte_offset"]) // 4
        flat = blobs[fname][start:start + count]
        if flat.size != count:
            raise InputError(f"{fname}: record {e['exam_id']} runs past end of file")
        leads = np.array(flat, dtype=np.float32).reshape(N_LEADS, int(e["n_samples"]))
        records.append(EcgRecord(str(e["exam_id"]), str(e["patient_id"]), int(e["sampling_rate"]),
                                 leads, float(e["age"]), str(e["sex"])))
    return records


def _open_csv(path):
    path = Path(path)
    if not path.is_file():
        raise InputError(f"file not found: {path}")
    return open(path, newline="", encoding="utf-8")


def write_labels(path, exam_ids, labels):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("exam_id",) + CLASSES)
        for e, row in zip(exam_ids, np.asarray(labels, dtype=bool)):
            w.writerow((e,) + tuple(int(v) for v in row))


def read_labels(path):
    """``(exam_ids, bool array (N, 6))``; malformed rows raise with their line number."""
    ids, rows = [], []
    with _open_csv(path) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return [], np.zeros((0, len(CLASSES)), dtype=bool)
        if tuple(h.strip() for h in header) != ("exam_id",) + CLASSES:
            raise InputError(f"{path}: header must be exam_id,{','.join(CLASSES)}")
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 1 + len(CLASSES) or any(v.strip() not in ("0", "1") for v in row[1:]):
                raise InputError(f"{path}: malformed row {line}: {row}")
            ids.append(row[0])
            rows.append([v.strip() == "1" for v in row[1:]])
    return ids, np.array(rows, dtype=bool).reshape(-1, len(CLASSES))


MEAS_FIELDS = ("heart_rate", "pr_interval", "qrs_duration", "nn_sd")


def write_measurements(path, exam_ids, measurements):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("exam_id",) + MEAS_FIELDS)
        for e, m in zip(exam_ids, measurements):
            w.writerow((e,) + tuple("" if math.isnan(getattr(m, f)) else repr(getattr(m, f))
                                    for f in MEAS_FIELDS))


def read_measurements(path):
    """exam_id -> :class:`Measurements`; empty cells are missing values."""
    out = {}
    with _open_csv(path) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return out
        if tuple(h.strip() for h in header) != ("exam_id",) + MEAS_FIELDS:
            raise InputError(f"{path}: header must be exam_id,{','.join(MEAS_FIELDS)}")
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 1 + len(MEAS_FIELDS):
                raise InputError(f"{path}: malformed row {line}: {row}")
            try:
                vals = [float(v) if v.strip() else math.nan for v in row[1:]]
                out[row[0]] = Measurements(*vals)
            except ValueError as exc:
                raise InputError(f"{path}: malformed row {line}: {exc}") from None
    return out


def write_scores(path, exam_ids, probs):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("exam_id",) + CLASSES)
        for e, row in zip(exam_ids, probs):
            w.writerow((e,) + tuple(repr(float(v)) for v in row))


def read_scores(path):
    ids, rows = [], []
    with _open_csv(path) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return [], np.zeros((0, len(CLASSES)))
        if tuple(h.strip() for h in header) != ("exam_id",) + CLASSES:
            raise InputError(f"{path}: header must be exam_id,{','.join(CLASSES)}")
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                if len(row) != 1 + len(CLASSES):
                    raise ValueError("wrong number of columns")
                rows.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise InputError(f"{path}: malformed row {line}: {exc}") from None
            ids.append(row[0])
    return ids, np.array(rows, dtype=np.float64).reshape(-1, len(CLASSES))


def align(reference_ids, ids, values, what="file"):
    """Reorder ``values`` (indexed like ``ids``) to ``reference_ids``; ids must match as sets."""
    pos = {e: i for i, e in enumerate(ids)}
    if len(pos) != len(ids):
        raise InputError(f"{what}: duplicate exam ids")
    if set(pos) != set(reference_ids):
        missing = sorted(set(reference_ids) - set(pos))[:5]
        extra = sorted(set(pos) - set(reference_ids))[:5]
        raise InputError(f"{what}: exam ids do not match (missing {missing}, unexpected {extra})")
    return np.asarray(values)[[pos[e] for e in reference_ids]]


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
