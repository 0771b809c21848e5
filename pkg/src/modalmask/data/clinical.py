"""Schema-validating loader for clinical delimited-text exports.

The expected file is comma-delimited with a header carrying the ten
clinical columns (age, sex, ethnicity, temperature, heart_rate,
respiration_rate, oxygen_saturation, systolic_bp, diastolic_bp,
description) followed by the fourteen label columns, each label one of
{0, 1, empty}. Empty fields mean missing. The description field holds a
|-separated token list; alternatively the file may carry a pre-expanded
multi-hot block of description:<token> binary columns in its place. Only
the schema is validated here; no data ships with the package.
"""

import csv
import io
from dataclasses import dataclass

import numpy as np

NUMERIC_COLUMNS = (
    "age",
    "temperature",
    "heart_rate",
    "respiration_rate",
    "oxygen_saturation",
    "systolic_bp",
    "diastolic_bp",
)
CATEGORICAL_COLUMNS = ("sex", "ethnicity")
DESCRIPTION_COLUMN = "description"
DESCRIPTION_PREFIX = "description:"

LABEL_COLUMNS = (
    "atelectasis",
    "cardiomegaly",
    "consolidation",
    "edema",
    "enlarged_cardiomediastinum",
    "fracture",
    "lung_lesion",
    "lung_opacity",
    "no_finding",
    "pleural_effusion",
    "pleural_other",
    "pneumonia",
    "pneumothorax",
    "support_devices",
)

DEFAULT_RANGES = {
    "temperature": (86.0, 113.0),
    "heart_rate": (25.0, 225.0),
    "respiration_rate": (7.0, 40.0),
    "oxygen_saturation": (50.0, 120.0),
}
IQR_FEATURES = ("systolic_bp", "diastolic_bp")


class ClinicalSchemaError(ValueError):
    pass


@dataclass
class ClinicalTable:
    numeric: dict
    categorical: dict
    description: list
    y: np.ndarray
    m_y: np.ndarray
    numeric_order: tuple = NUMERIC_COLUMNS
    categorical_order: tuple = CATEGORICAL_COLUMNS

    @property
    def n(self):
        return self.y.shape[0]


def default_cleaning_rules():
    from .clean import CleaningRules, FeatureRule

    rules = {name: FeatureRule(low=lo, high=hi) for name, (lo, hi) in DEFAULT_RANGES.items()}
    rules.update({name: FeatureRule(iqr=True) for name in IQR_FEATURES})
    return CleaningRules(per_feature=rules)


def _parse_float(cell, column, row_no):
    if cell == "":
        return np.nan
    try:
        return float(cell)
    except ValueError:
        raise ClinicalSchemaError(f"row {row_no}: column {column!r} expects a number, got {cell!r}")


def load_clinical_table(source):
    """Parse and validate; `source` is a path or a file-like object."""
    if hasattr(source, "read"):
        fh = source
        rows = list(csv.reader(fh))
    else:
        with open(source, "r", encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
    if not rows:
        raise ClinicalSchemaError("empty file")
    header = [h.strip() for h in rows[0]]
    desc_multihot = [h for h in header if h.startswith(DESCRIPTION_PREFIX)]
    base = list(NUMERIC_COLUMNS) + list(CATEGORICAL_COLUMNS)
    expected = set(base) | set(LABEL_COLUMNS)
    if desc_multihot:
        expected |= set(desc_multihot)
    else:
        expected.add(DESCRIPTION_COLUMN)
    actual = set(header)
    if actual != expected:
        missing = sorted(expected - actual)
        extra = sorted(actual - expected)
        raise ClinicalSchemaError(f"header mismatch: missing {missing}, unexpected {extra}")
    col = {name: header.index(name) for name in header}

    numeric = {name: [] for name in NUMERIC_COLUMNS}
    categorical = {name: [] for name in CATEGORICAL_COLUMNS}
    description = []
    y_rows, m_rows = [], []
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ClinicalSchemaError(f"row {r}: expected {len(header)} fields, got {len(row)}")
        for name in NUMERIC_COLUMNS:
            numeric[name].append(_parse_float(row[col[name]].strip(), name, r))
        for name in CATEGORICAL_COLUMNS:
            cell = row[col[name]].strip()
            categorical[name].append(cell if cell else None)
        if desc_multihot:
            toks = []
            any_present = False
            for h in desc_multihot:
                cell = row[col[h]].strip()
                if cell == "":
                    continue
                if cell not in ("0", "1"):
                    raise ClinicalSchemaError(f"row {r}: column {h!r} expects 0/1/empty, got {cell!r}")
                any_present = True
                if cell == "1":
                    toks.append(h[len(DESCRIPTION_PREFIX):])
            description.append(tuple(toks) if any_present else None)
        else:
            cell = row[col[DESCRIPTION_COLUMN]].strip()
            description.append(tuple(t for t in cell.split("|") if t) if cell else None)
        yv, mv = [], []
        for name in LABEL_COLUMNS:
            cell = row[col[name]].strip()
            if cell == "":
                yv.append(0.0)
                mv.append(0.0)
            elif cell in ("0", "1"):
                yv.append(float(cell))
                mv.append(1.0)
            else:
                raise ClinicalSchemaError(f"row {r}: label {name!r} expects 0/1/empty, got {cell!r}")
        y_rows.append(yv)
        m_rows.append(mv)

    return ClinicalTable(
        numeric={name: np.asarray(v, dtype=np.float64) for name, v in numeric.items()},
        categorical=categorical,
        description=description,
        y=np.asarray(y_rows, dtype=np.float64),
        m_y=np.asarray(m_rows, dtype=np.float64),
    )
