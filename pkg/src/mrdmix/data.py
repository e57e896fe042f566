"""Patient records, category registries, and regression design matrices.

A :class:`PatientRecord` stores raw measurements (MRD as a percentage,
white-cell count in 10^9 cells/L) and derives the modelling scale
(log10) on access, so that a record written to CSV and re-parsed is
reproduced exactly field by field.  MRD below the 0.01% detection
limit is represented as ``None`` and treated as left-censored at
``Z_LOW = log10(0.01) = -2``.
"""

from __future__ import annotations

import dataclasses
from collections import Counter
from dataclasses import dataclass

import numpy as np

# Detection limit of the MRD assay on the log10 percent scale.
Z_LOW = -2.0
DETECTION_LIMIT_PCT = 0.01

DRUGS = ("asparaginase", "prednisone", "vincristine", "6TG", "6MP")
LC50_COLUMNS = ("lc50_asp", "lc50_pred", "lc50_vcr", "lc50_6tg", "lc50_6mp")
N_DRUGS = len(DRUGS)

PROTOCOLS = ("T15", "T16", "T17")
REFERENCE_PROTOCOL = "T16"

REFERENCE_SUBTYPE = "ETV6-RUNX1"
# Default registry of immunophenotype/genetic subtypes after merging;
# the first entry is the regression reference category.
DEFAULT_SUBTYPES = (
    "ETV6-RUNX1",
    "BCR-ABL1",
    "DUX4",
    "Hyperdiploid",
    "Hypodiploid",
    "KMT2A",
    "Other",
    "PAX5alt",
    "Ph-like",
    "T-ALL",
    "TCF3-PBX1",
    "iAMP21",
)

PH_LIKE_LABELS = ("Ph-like CRLF2", "Ph-like non-CRLF2")
PH_LIKE_MERGED = "Ph-like"
RARE_MERGED = "Other"
MIN_SUBTYPE_COUNT = 10

_GENDERS = ("M", "F")


class DatasetError(ValueError):
    """Raised when a dataset violates a structural or value constraint."""


@dataclass(frozen=True)
class PatientRecord:
    """One patient: covariates, two MRD measurements, five LC50 values.

    ``mrd1``/``mrd2`` are percentages; ``None`` means below the 0.01%
    detection limit (left-censored).  ``lc50`` holds log10 LC50 values
    in drug order :data:`DRUGS`; entries may be NaN only for datasets
    that will be completed from an imputed panel before modelling.
    """

    id: str
    age: float
    gender: str
    wbc: float
    subtype: str
    protocol: str
    mrd1: float | None
    mrd2: float | None
    lc50: tuple[float, ...]

    def __post_init__(self):
        if self.gender not in _GENDERS:
            raise DatasetError(f"record {self.id!r}: gender must be one of "
                               f"{_GENDERS}, got {self.gender!r}")
        if not np.isfinite(self.age) or self.age < 0:
            raise DatasetError(f"record {self.id!r}: bad age {self.age!r}")
        if not np.isfinite(self.wbc) or self.wbc <= 0:
            raise DatasetError(f"record {self.id!r}: wbc must be positive, "
                               f"got {self.wbc!r}")
        for name, val in (("mrd1", self.mrd1), ("mrd2", self.mrd2)):
            if val is not None:
                if not np.isfinite(val) or val < DETECTION_LIMIT_PCT:
                    raise DatasetError(
                        f"record {self.id!r}: uncensored {name} must be a "
                        f"finite percentage >= {DETECTION_LIMIT_PCT}, got "
                        f"{val!r}")
        if len(self.lc50) != N_DRUGS:
            raise DatasetError(f"record {self.id!r}: lc50 must have "
                               f"{N_DRUGS} entries, got {len(self.lc50)}")
        if any(np.isinf(v) for v in self.lc50):
            raise DatasetError(f"record {self.id!r}: infinite lc50 value")

    @property
    def log10_wbc(self) -> float:
        return float(np.log10(self.wbc))

    @property
    def z1(self) -> float | None:
        """Day-15 log10 MRD, or None when below the detection limit."""
        return None if self.mrd1 is None else float(np.log10(self.mrd1))

    @property
    def z2(self) -> float | None:
        return None if self.mrd2 is None else float(np.log10(self.mrd2))

    @property
    def delta1(self) -> int:
        return int(self.mrd1 is not None)

    @property
    def delta2(self) -> int:
        return int(self.mrd2 is not None)

    @property
    def has_missing_lc50(self) -> bool:
        return any(np.isnan(v) for v in self.lc50)

    def with_lc50(self, values) -> "PatientRecord":
        """Copy of the record with the LC50 vector replaced."""
        return dataclasses.replace(self, lc50=tuple(float(v) for v in values))


def require_complete_lc50(records):
    """Raise unless every record has a fully observed LC50 vector."""
    bad = [r.id for r in records if r.has_missing_lc50]
    if bad:
        raise DatasetError(
            "records with missing LC50 values (supply an imputed panel): "
            + ", ".join(bad[:20]) + ("..." if len(bad) > 20 else ""))


def subtype_merge_map(labels, min_count=MIN_SUBTYPE_COUNT,
                      ph_like_labels=PH_LIKE_LABELS):
    """Mapping raw subtype label -> merged label.

    First collapses the Ph-like variants into one label, then sends
    every label whose merged count falls below ``min_count`` to
    ``"Other"``.  The resulting map is idempotent: applying it to its
    own output changes nothing.
    """
    first = {lab: (PH_LIKE_MERGED if lab in ph_like_labels else lab)
             for lab in labels}
    counts = Counter(first[lab] for lab in labels)
    out = {}
    for lab in set(labels):
        merged = first[lab]
        if merged != RARE_MERGED and counts[merged] < min_count:
            merged = RARE_MERGED
        out[lab] = merged
    return out


def merge_subtypes(records, min_count=MIN_SUBTYPE_COUNT,
                   ph_like_labels=PH_LIKE_LABELS):
    """Apply subtype merging to a list of records.

    Returns ``(new_records, mapping)`` where ``mapping`` sends each raw
    label to its merged form.
    """
    mapping = subtype_merge_map([r.subtype for r in records],
                                min_count=min_count,
                                ph_like_labels=ph_like_labels)
    merged = [r if mapping[r.subtype] == r.subtype
              else dataclasses.replace(r, subtype=mapping[r.subtype])
              for r in records]
    return merged, mapping


@dataclass
class DesignMatrix:
    """Covariate matrix with column names and stored transforms.

    ``x`` is (N, p) with columns: standardized age, female dummy
    (reference Male), standardized log10 WBC, protocol dummies
    (reference T16), subtype dummies (reference first registry entry).
    ``transforms`` maps a continuous column name to the (mean, sd)
    pair that was subtracted/divided, so new data can reuse it.
    """

    x: np.ndarray
    columns: list[str]
    transforms: dict[str, tuple[float, float]]
    subtype_levels: tuple[str, ...]
    protocol_levels: tuple[str, ...]

    def __post_init__(self):
        if self.x.ndim != 2 or self.x.shape[1] != len(self.columns):
            raise DatasetError("design shape does not match column names")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]


def _standardize(values):
    """Center/scale by population mean and sd; returns (z, (mean, sd)).

    A zero-variance column is centered only (sd recorded as 1) so the
    design never contains NaN.
    """
    values = np.asarray(values, dtype=float)
    mean = float(values.mean())
    sd = float(values.std())
    if sd == 0.0:
        sd = 1.0
    return (values - mean) / sd, (mean, sd)


def build_design(records, standardize=True, subtype_levels=None,
                 protocol_levels=PROTOCOLS, transforms=None):
    """Build the regression design matrix for a list of records.

    Parameters
    ----------
    records : sequence of PatientRecord
    standardize : bool
        Standardize age and log10 WBC (population sd).  When False the
        raw values are used and ``transforms`` is empty.
    subtype_levels : sequence of str, optional
        Full subtype registry, reference category first.  Defaults to
        the levels present in the data with :data:`REFERENCE_SUBTYPE`
        first when present, the rest sorted.
    protocol_levels : sequence of str
        Protocol registry; :data:`REFERENCE_PROTOCOL` is the reference.
    transforms : dict, optional
        Previously stored (mean, sd) per continuous column, applied
        instead of refitting (for scoring new data on an old scale).
    """
    records = list(records)
    if not records:
        raise DatasetError("cannot build a design matrix from no records")

    if subtype_levels is None:
        seen = sorted({r.subtype for r in records})
        if REFERENCE_SUBTYPE in seen:
            seen.remove(REFERENCE_SUBTYPE)
            subtype_levels = (REFERENCE_SUBTYPE, *seen)
        else:
            subtype_levels = tuple(seen)
    subtype_levels = tuple(subtype_levels)
    protocol_levels = tuple(protocol_levels)

    bad = [(r.id, r.subtype) for r in records
           if r.subtype not in subtype_levels]
    if bad:
        raise DatasetError("subtype outside registry: " + ", ".join(
            f"{rid} ({lab})" for rid, lab in bad[:20]))
    bad = [(r.id, r.protocol) for r in records
           if r.protocol not in protocol_levels]
    if bad:
        raise DatasetError("protocol outside registry: " + ", ".join(
            f"{rid} ({lab})" for rid, lab in bad[:20]))

    age = np.array([r.age for r in records], dtype=float)
    lwbc = np.array([r.log10_wbc for r in records], dtype=float)
    out_transforms = {}
    if standardize:
        if transforms is not None:
            for name, vals in (("age", age), ("log10_wbc", lwbc)):
                mean, sd = transforms[name]
                out_transforms[name] = (mean, sd)
            age = (age - out_transforms["age"][0]) / out_transforms["age"][1]
            lwbc = ((lwbc - out_transforms["log10_wbc"][0])
                    / out_transforms["log10_wbc"][1])
        else:
            age, out_transforms["age"] = _standardize(age)
            lwbc, out_transforms["log10_wbc"] = _standardize(lwbc)

    cols = [age, np.array([1.0 if r.gender == "F" else 0.0
                           for r in records]), lwbc]
    names = ["age", "gender_F", "log10_wbc"]
    for level in protocol_levels:
        if level == REFERENCE_PROTOCOL:
            continue
        cols.append(np.array([1.0 if r.protocol == level else 0.0
                              for r in records]))
        names.append(f"protocol_{level}")
    for level in subtype_levels[1:]:
        cols.append(np.array([1.0 if r.subtype == level else 0.0
                              for r in records]))
        names.append(f"subtype_{level}")

    x = np.column_stack(cols) if cols else np.empty((len(records), 0))
    return DesignMatrix(x=x, columns=names, transforms=out_transforms,
                        subtype_levels=subtype_levels,
                        protocol_levels=protocol_levels)


def lc50_matrix(records):
    """(N, 5) array of log10 LC50 values in :data:`DRUGS` order."""
    return np.array([r.lc50 for r in records], dtype=float)


def standardize_lc50(matrix):
    """Column-standardize an LC50 matrix; returns (z, list of (mean, sd))."""
    matrix = np.asarray(matrix, dtype=float)
    out = np.empty_like(matrix)
    trans = []
    for j in range(matrix.shape[1]):
        out[:, j], ms = _standardize(matrix[:, j])
        trans.append(ms)
    return out, trans
