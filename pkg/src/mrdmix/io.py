"""Dataset and artifact I/O.

The dataset CSV schema has one row per patient:

    id, age, gender, wbc, subtype, protocol, mrd15, mrd42,
    lc50_asp, lc50_pred, lc50_vcr, lc50_6tg, lc50_6mp

MRD fields take a numeric percentage or the literal token ``<0.01``;
numeric values below 0.01 (including 0) are treated as censored, and a
detectable day-42 value after an undetectable day-15 value is a hard
error.  WBC is stored raw and log10-transformed on access; LC50 values
are log10 already unless ``lc50_log10`` asks for the transform at
ingest.  Floats are written with ``repr`` so write -> parse
round-trips reproduce records exactly.
"""

from __future__ import annotations

import csv
import dataclasses
import glob as globmod
import hashlib
import json
import os
from dataclasses import dataclass, field, fields as dc_fields

import numpy as np

from .clustering import ImputedPanel
from .data import (DatasetError, DETECTION_LIMIT_PCT, LC50_COLUMNS,
                   MIN_SUBTYPE_COUNT, PH_LIKE_LABELS, PROTOCOLS,
                   PatientRecord, merge_subtypes)

CENSOR_TOKEN = "<0.01"
DATASET_COLUMNS = ("id", "age", "gender", "wbc", "subtype", "protocol",
                   "mrd15", "mrd42") + LC50_COLUMNS
_MISSING_TOKENS = ("", "NA", "NaN", "nan")


class UsageError(ValueError):
    """Raised for bad command-line or configuration input."""


@dataclass
class RunConfig:
    """Flat run configuration; every field mirrors a CLI flag.

    A config file holds ``key = value`` lines (``#`` comments allowed)
    with these exact field names; command-line flags override file
    values.
    """

    iterations: int = 15000
    burn_in: int = 5000
    thin: int = 2
    chains: int = 3
    seed: int = 0
    k: int = 3
    standardize_covariates: bool = True
    standardize_lc50: bool = True
    lc50_log10: bool = False
    merge_subtypes: bool = True
    min_subtype_count: int = MIN_SUBTYPE_COUNT
    censored_at_limit: bool = False
    kmeans_restarts: int = 25
    binder_orders: int = 64
    max_clusters: int = 8

    @classmethod
    def from_file(cls, path):
        values = {}
        types = {f.name: f.type for f in dc_fields(cls)}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise UsageError(f"{path}:{lineno}: expected key = value")
                key, _, raw = line.partition("=")
                key, raw = key.strip(), raw.strip()
                if key not in types:
                    raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
                values[key] = _coerce(raw, types[key],
                                      f"{path}:{lineno}: {key}")
        return cls(**values)

    def to_flat(self):
        return {f.name: getattr(self, f.name) for f in dc_fields(self)}


def _coerce(raw, typename, where):
    typename = str(typename)
    if "bool" in typename:
        if raw.lower() in ("true", "1", "yes", "on"):
            return True
        if raw.lower() in ("false", "0", "no", "off"):
            return False
        raise UsageError(f"{where}: expected a boolean, got {raw!r}")
    if "int" in typename:
        try:
            return int(raw)
        except ValueError as exc:
            raise UsageError(f"{where}: expected an integer, got "
                             f"{raw!r}") from exc
    return raw


@dataclass
class ValidationReport:
    """Row counts, error listing and data-completeness rates."""

    n_rows: int = 0
    n_records: int = 0
    errors: list = field(default_factory=list)
    censored_day15: int = 0
    censored_day42: int = 0
    missing_lc50_rate: dict = field(default_factory=dict)
    subtype_mapping: dict = field(default_factory=dict)

    def lines(self):
        out = [f"rows={self.n_rows} records={self.n_records} "
               f"censored_day15={self.censored_day15} "
               f"censored_day42={self.censored_day42}"]
        for drug, rate in self.missing_lc50_rate.items():
            out.append(f"missing {drug}: {100.0 * rate:.2f}%")
        return out


def _parse_mrd(raw, where, errors):
    raw = raw.strip()
    if raw == CENSOR_TOKEN:
        return None, True
    try:
        value = float(raw)
    except ValueError:
        errors.append(f"{where}: mrd value {raw!r} is neither numeric "
                      f"nor {CENSOR_TOKEN!r}")
        return None, False
    if value < 0:
        errors.append(f"{where}: negative mrd value {value!r}")
        return None, False
    if value < DETECTION_LIMIT_PCT:
        # includes exact zero: below the detection limit means censored
        return None, True
    return value, True


def parse_dataset(path, lc50_log10=False, allow_missing_lc50=False,
                  merge=True, min_subtype_count=MIN_SUBTYPE_COUNT,
                  ph_like_labels=PH_LIKE_LABELS):
    """Parse a dataset CSV; returns ``(records, ValidationReport)``.

    Collects every row-level problem and raises one
    :class:`DatasetError` listing them all; a detectable day-42 MRD
    with an undetectable day-15 MRD is reported the same way.  Subtype
    merging (Ph-like variants, then rare levels to "Other") applies
    after parsing unless ``merge`` is False.
    """
    report = ValidationReport()
    errors = []
    records = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in DATASET_COLUMNS if c not in header]
        if missing:
            raise DatasetError(f"{path}: missing columns: "
                               + ", ".join(missing))
        for rownum, row in enumerate(reader, start=2):
            report.n_rows += 1
            rid = (row.get("id") or "").strip()
            if not rid:
                errors.append(f"{path}:{rownum}: empty id")
                continue
            where = f"{path}:{rownum} (id {rid})"
            ok = True

            def _float(col):
                nonlocal ok
                try:
                    return float(row[col])
                except (TypeError, ValueError):
                    errors.append(f"{where}: non-numeric {col}: "
                                  f"{row[col]!r}")
                    ok = False
                    return np.nan

            age = _float("age")
            wbc = _float("wbc")
            gender = row["gender"].strip()
            gender = {"m": "M", "male": "M", "f": "F",
                      "female": "F"}.get(gender.lower(), gender)
            protocol = row["protocol"].strip()
            if protocol not in PROTOCOLS:
                errors.append(f"{where}: unknown protocol {protocol!r}")
                ok = False
            mrd1, ok1 = _parse_mrd(row["mrd15"], where, errors)
            mrd2, ok2 = _parse_mrd(row["mrd42"], where, errors)
            ok = ok and ok1 and ok2
            if ok and mrd1 is None and mrd2 is not None:
                errors.append(f"{where}: record {rid!r} has detectable "
                              f"day-42 MRD but undetectable day-15 MRD")
                ok = False

            lc50 = []
            for col in LC50_COLUMNS:
                raw = (row[col] or "").strip()
                if raw in _MISSING_TOKENS:
                    if not allow_missing_lc50:
                        errors.append(f"{where}: missing {col} (pass an "
                                      f"imputed panel to allow this)")
                        ok = False
                    lc50.append(np.nan)
                    continue
                try:
                    val = float(raw)
                except ValueError:
                    errors.append(f"{where}: non-numeric {col}: {raw!r}")
                    ok = False
                    continue
                if lc50_log10:
                    if val <= 0:
                        errors.append(f"{where}: {col} must be positive "
                                      f"to log10-transform")
                        ok = False
                        continue
                    val = float(np.log10(val))
                lc50.append(val)
            if not ok:
                continue
            try:
                records.append(PatientRecord(
                    id=rid, age=age, gender=gender, wbc=wbc,
                    subtype=row["subtype"].strip(), protocol=protocol,
                    mrd1=mrd1, mrd2=mrd2, lc50=tuple(lc50)))
            except DatasetError as exc:
                errors.append(f"{where}: {exc}")

    if errors:
        raise DatasetError(f"{path}: {len(errors)} invalid rows:\n  "
                           + "\n  ".join(errors))
    if not records:
        raise DatasetError(f"{path}: no data rows")

    if merge:
        records, report.subtype_mapping = merge_subtypes(
            records, min_count=min_subtype_count,
            ph_like_labels=ph_like_labels)
    report.n_records = len(records)
    report.censored_day15 = sum(1 for r in records if r.delta1 == 0)
    report.censored_day42 = sum(1 for r in records if r.delta2 == 0)
    lc = np.array([r.lc50 for r in records], dtype=float)
    report.missing_lc50_rate = {
        col: float(np.isnan(lc[:, i]).mean())
        for i, col in enumerate(LC50_COLUMNS)}
    return records, report


def _fmt(value):
    if value is None:
        return CENSOR_TOKEN
    if isinstance(value, float) and np.isnan(value):
        return ""
    return repr(float(value)) if isinstance(value, float) else str(value)


def write_dataset(records, path):
    """Write records to CSV; floats use ``repr`` for exact round-trips."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(DATASET_COLUMNS)
        for r in records:
            writer.writerow([
                r.id, repr(float(r.age)), r.gender, repr(float(r.wbc)),
                r.subtype, r.protocol, _fmt(r.mrd1), _fmt(r.mrd2),
                *[_fmt(float(v)) for v in r.lc50]])


# ---------------------------------------------------------------------------
# Imputed LC50 panels
# ---------------------------------------------------------------------------

def read_panel(pattern, ids=None, lc50_log10=False):
    """Read an imputed panel from CSV files matching a glob pattern.

    Each file needs columns ``id`` plus the five LC50 columns; files
    sort lexicographically into panel order.  When ``ids`` is given,
    every file must contain exactly those ids in the same order.
    """
    paths = sorted(globmod.glob(pattern))
    if not paths:
        raise DatasetError(f"no panel files match {pattern!r}")
    mats = []
    for p in paths:
        rows = []
        file_ids = []
        with open(p, encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            missing = [c for c in ("id",) + LC50_COLUMNS
                       if c not in (reader.fieldnames or [])]
            if missing:
                raise DatasetError(f"{p}: missing columns: "
                                   + ", ".join(missing))
            for row in reader:
                file_ids.append(row["id"].strip())
                try:
                    vals = [float(row[c]) for c in LC50_COLUMNS]
                except ValueError as exc:
                    raise DatasetError(f"{p}: non-numeric LC50 for id "
                                       f"{row['id']!r}") from exc
                rows.append(vals)
        mat = np.asarray(rows, dtype=float)
        if lc50_log10:
            if np.any(mat <= 0):
                raise DatasetError(f"{p}: LC50 must be positive to "
                                   f"log10-transform")
            mat = np.log10(mat)
        if ids is not None and list(ids) != file_ids:
            raise DatasetError(f"{p}: panel ids do not match the dataset")
        mats.append(mat)
    shapes = {m.shape for m in mats}
    if len(shapes) != 1:
        raise DatasetError(f"panel files disagree on shape: {shapes}")
    return ImputedPanel(matrices=np.stack(mats),
                        tags=[os.path.basename(p) for p in paths])


def write_panel(panel, directory, ids, prefix="imputed"):
    """Write each panel dataset as ``<prefix>_<m>.csv`` in a directory."""
    os.makedirs(directory, exist_ok=True)
    paths = []
    for mi in range(panel.m):
        p = os.path.join(directory, f"{prefix}_{mi:03d}.csv")
        with open(p, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(("id",) + LC50_COLUMNS)
            for i, rid in enumerate(ids):
                writer.writerow([rid] + [repr(float(v))
                                         for v in panel.matrices[mi, i]])
        paths.append(p)
    return paths


def complete_records(records, matrix):
    """Replace every record's LC50 vector from a (N, 5) matrix."""
    matrix = np.asarray(matrix, dtype=float)
    if matrix.shape != (len(records), len(LC50_COLUMNS)):
        raise DatasetError("imputed matrix shape does not match records")
    return [r.with_lc50(matrix[i]) for i, r in enumerate(records)]


# ---------------------------------------------------------------------------
# Draws, metadata, manifest
# ---------------------------------------------------------------------------

def write_draws(store, path):
    """Write retained draws as JSON lines.

    One record per (chain, retained iteration) holding a flat map from
    parameter name to scalar or list; integer allocation draws stay
    integers.  JSON float formatting is exact, so reading the file
    back reproduces the store bit for bit.
    """
    with open(path, "w", encoding="utf-8") as fh:
        for ci in range(store.n_chains):
            for ri in range(store.n_retained):
                row = {"chain": ci, "iteration": int(store.iterations[ri])}
                for name, arr in store.draws.items():
                    val = arr[ci, ri]
                    if np.isscalar(val) or val.ndim == 0:
                        row[name] = val.item() if hasattr(val, "item") \
                            else val
                    else:
                        row[name] = val.tolist()
                fh.write(json.dumps(row) + "\n")


def read_draws(path, metadata_path=None):
    """Rebuild a :class:`SampleStore` from JSONL draws and metadata."""
    from .sampler import McmcConfig, SampleStore

    if metadata_path is None:
        metadata_path = os.path.join(os.path.dirname(path), "metadata.txt")
    meta = read_metadata(metadata_path)

    rows_by_chain = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            row = json.loads(line)
            rows_by_chain.setdefault(row.pop("chain"), []).append(row)
    if not rows_by_chain:
        raise DatasetError(f"{path}: no draws")
    chains = sorted(rows_by_chain)
    n_keep = len(rows_by_chain[chains[0]])
    names = [k for k in rows_by_chain[chains[0]][0] if k != "iteration"]
    draws = {}
    for name in names:
        per_chain = []
        for ci in chains:
            vals = [row[name] for row in rows_by_chain[ci]]
            arr = np.asarray(vals)
            per_chain.append(arr)
        stacked = np.stack(per_chain)
        if name == "c":
            stacked = stacked.astype(np.int16)
        draws[name] = stacked
    iterations = np.array([row["iteration"]
                           for row in rows_by_chain[chains[0]]], dtype=int)
    config = McmcConfig(
        iterations=int(meta["config.iterations"]),
        burn_in=int(meta["config.burn_in"]), thin=int(meta["config.thin"]),
        chains=len(chains), seed=int(meta["config.seed"]),
        k=int(meta["config.k"]))
    labels = {
        "covariates": _split_list(meta.get("labels.covariates", "")),
        "drugs": _split_list(meta.get("labels.drugs", "")),
        "cens1_ids": _split_list(meta.get("labels.cens1_ids", "")),
        "cens2_ids": _split_list(meta.get("labels.cens2_ids", "")),
        "ids": _split_list(meta.get("labels.ids", "")),
    }
    return SampleStore(
        config=config, draws=draws, iterations=iterations, labels=labels,
        chain_streams=_split_list(meta.get("chain_streams", "")),
        relabel_counts=np.array(
            [int(v) for v in _split_list(meta.get("relabel_counts", ""))]
            or [0] * len(chains)),
        meta={"n_keep": n_keep})


def _split_list(raw):
    return [v for v in raw.split("|") if v != ""]


def write_metadata(store, path, extra=None):
    """Flat key=value sidecar describing a draws file."""
    lines = {}
    for fname, val in store.config.__dict__.items():
        lines[f"config.{fname}"] = val
    for key, vals in store.labels.items():
        lines[f"labels.{key}"] = "|".join(str(v) for v in vals)
    lines["chain_streams"] = "|".join(store.chain_streams)
    lines["relabel_counts"] = "|".join(str(int(v))
                                       for v in store.relabel_counts)
    for key, val in (extra or {}).items():
        lines[key] = val
    with open(path, "w", encoding="utf-8") as fh:
        for key in sorted(lines):
            fh.write(f"{key}={lines[key]}\n")


def read_metadata(path):
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            key, _, val = line.partition("=")
            out[key] = val
    return out


def write_draws_csv(store, path):
    """Scalar draws as CSV (text-only alternative to the JSONL file).

    Columns are chain, iteration, then every scalar parameter label;
    allocation vectors and imputed responses stay in the JSONL file.
    """
    labels = store.scalar_labels()
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["chain", "iteration"] + [lab for lab, _, _ in labels])
        for ci in range(store.n_chains):
            for ri in range(store.n_retained):
                row = [ci, int(store.iterations[ri])]
                for _, name, idx in labels:
                    row.append(repr(float(store.draws[name][(ci, ri) + idx])))
                writer.writerow(row)


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def config_hash(config):
    blob = json.dumps(config.to_flat() if hasattr(config, "to_flat")
                      else dict(config), sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def append_manifest(out_dir, command, config, input_paths):
    """Append a machine-readable run block to ``manifest.txt``.

    Content is deterministic (no timestamps, basenames only) so
    identical runs produce byte-identical manifests.
    """
    path = os.path.join(out_dir, "manifest.txt")
    flat = config.to_flat() if hasattr(config, "to_flat") else dict(config)
    lines = [f"command={command}",
             f"config_hash={config_hash(flat)}",
             f"seed={flat.get('seed', '')}"]
    for p in sorted(input_paths):
        lines.append(f"input.{os.path.basename(p)}={sha256_file(p)}")
    with open(path, "a", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n\n")
    return path
