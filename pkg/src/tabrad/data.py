"""Tabular dataset loading, feature encoding, and the normal/anomaly split.

CSV contract: header row, comma delimiter, UTF-8, one label column (named
``label`` unless overridden) holding 0 for normal and 1 for anomaly. Rows
with missing cells are rejected. A column whose every value parses as a
number is numerical; anything else is categorical, with the vocabulary
fixed at load time in order of first appearance. Kind inference can be
overridden per column through a schema hint.

Normalization statistics (mean and population std) are fitted on the
training half of the split only and applied unchanged to validation.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

NUMERICAL = "numerical"
CATEGORICAL = "categorical"


class FormatError(ValueError):
    """Malformed input file (ragged row, missing cell, empty data...)."""


class EncodingError(ValueError):
    """A value cannot be encoded under the fitted column specs."""


@dataclass
class ColumnSpec:
    """Typing and encoding metadata for one feature column."""

    name: str
    kind: str
    vocabulary: tuple[str, ...] = ()  # categorical only, load-time order
    train_mean: float = 0.0
    train_std: float = 1.0

    @property
    def cardinality(self) -> int:
        """Encoded width: 1 for numerical, vocabulary size for categorical."""
        return 1 if self.kind == NUMERICAL else len(self.vocabulary)

    def index_of(self, value) -> int:
        try:
            return self.vocabulary.index(str(value))
        except ValueError:
            raise EncodingError(
                f"column {self.name!r}: category {value!r} not in fitted vocabulary"
            ) from None


@dataclass
class TabularDataset:
    """Column-typed table with binary normal/anomaly labels.

    ``subclasses`` optionally refines the anomaly label into named groups
    (used by the synthetic benchmark's per-class shares).
    """

    columns: list[ColumnSpec]
    rows: list[list]
    labels: np.ndarray
    subclasses: list[str] | None = None

    @property
    def n(self) -> int:
        return len(self.rows)

    @property
    def d(self) -> int:
        return len(self.columns)

    def __post_init__(self):
        if self.n == 0 or self.d == 0:
            raise FormatError("dataset must contain at least one row and one column")
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if not np.isin(self.labels, (0, 1)).all():
            raise FormatError("labels must be 0 (normal) or 1 (anomaly)")


@dataclass
class SplitDataset:
    """Train half (normals only) plus validation (remaining normals + all anomalies)."""

    train_rows: list[list]
    val_rows: list[list]
    val_labels: np.ndarray
    specs: list[ColumnSpec]
    split_seed: int
    val_subclasses: list[str] | None = None
    train_indices: np.ndarray = field(default=None, repr=False)
    val_indices: np.ndarray = field(default=None, repr=False)

    @property
    def d(self) -> int:
        return len(self.specs)

    def encoded_train(self) -> list[np.ndarray]:
        return encode_rows(self.train_rows, self.specs)

    def encoded_validation(self) -> list[np.ndarray]:
        return encode_rows(self.val_rows, self.specs)


def read_schema_file(path) -> dict[str, str]:
    """Parse a plain ``name=kind`` override file ('#' starts a comment)."""
    hints = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise FormatError(f"{path}:{lineno}: expected 'column=kind'")
            name, kind = (part.strip() for part in line.split("=", 1))
            if kind not in (NUMERICAL, CATEGORICAL):
                raise FormatError(f"{path}:{lineno}: kind must be numerical or categorical")
            hints[name] = kind
    return hints


def _parses_as_number(value: str) -> bool:
    try:
        float(value)
        return True
    except ValueError:
        return False


def load_csv(path, schema_hint: dict[str, str] | None = None,
             label_column: str | int = "label") -> TabularDataset:
    """Load a labeled CSV into a typed dataset.

    ``label_column`` may be a header name or a 0-based position.
    """
    schema_hint = schema_hint or {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty file") from None
        raw_rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise FormatError(
                    f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}")
            if any(cell.strip() == "" for cell in row):
                raise FormatError(f"{path}:{lineno}: missing cell")
            raw_rows.append([cell.strip() for cell in row])
    if not raw_rows:
        raise FormatError(f"{path}: no data rows")

    if isinstance(label_column, int):
        label_pos = label_column
        if not 0 <= label_pos < len(header):
            raise FormatError(f"{path}: label position {label_column} out of range")
    else:
        try:
            label_pos = header.index(label_column)
        except ValueError:
            raise FormatError(f"{path}: no column named {label_column!r}") from None

    labels = []
    for i, row in enumerate(raw_rows):
        value = row[label_pos]
        if value not in ("0", "1"):
            raise FormatError(f"{path}: row {i + 2}: label must be 0 or 1, got {value!r}")
        labels.append(int(value))

    columns = []
    rows: list[list] = [[] for _ in raw_rows]
    for j, name in enumerate(header):
        if j == label_pos:
            continue
        values = [row[j] for row in raw_rows]
        kind = schema_hint.get(name)
        if kind is None:
            kind = NUMERICAL if all(_parses_as_number(v) for v in values) else CATEGORICAL
        if kind == NUMERICAL:
            if not all(_parses_as_number(v) for v in values):
                bad = next(v for v in values if not _parses_as_number(v))
                raise FormatError(f"{path}: column {name!r} declared numerical "
                                  f"but holds {bad!r}")
            columns.append(ColumnSpec(name=name, kind=NUMERICAL))
            for row, v in zip(rows, values):
                row.append(float(v))
        else:
            vocab: list[str] = []
            seen = set()
            for v in values:
                if v not in seen:
                    seen.add(v)
                    vocab.append(v)
            columns.append(ColumnSpec(name=name, kind=CATEGORICAL, vocabulary=tuple(vocab)))
            for row, v in zip(rows, values):
                row.append(v)
    return TabularDataset(columns=columns, rows=rows, labels=np.array(labels))


def fit_normalization(specs: list[ColumnSpec], rows: list[list]) -> list[ColumnSpec]:
    """Return copies of ``specs`` with mean/population-std fitted on ``rows``."""
    fitted = []
    for j, spec in enumerate(specs):
        if spec.kind != NUMERICAL:
            fitted.append(ColumnSpec(spec.name, spec.kind, spec.vocabulary))
            continue
        values = np.array([row[j] for row in rows], dtype=np.float64)
        mu = float(values.mean())
        sd = float(values.std())  # population std (ddof=0)
        if sd == 0.0:
            warnings.warn(f"column {spec.name!r} has zero variance on the training "
                          "half; std forced to 1", stacklevel=2)
            sd = 1.0
        fitted.append(ColumnSpec(spec.name, NUMERICAL, train_mean=mu, train_std=sd))
    return fitted


def split(ds: TabularDataset, seed: int) -> SplitDataset:
    """Half the normals (chosen by ``seed``) train; the rest plus all anomalies validate."""
    normal_idx = np.flatnonzero(ds.labels == 0)
    anomaly_idx = np.flatnonzero(ds.labels == 1)
    if len(normal_idx) < 2:
        raise ValueError("split requires at least 2 normal samples")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(normal_idx)
    n_train = len(normal_idx) // 2
    train_idx = np.sort(perm[:n_train])
    held_out = np.sort(perm[n_train:])
    val_idx = np.concatenate([held_out, anomaly_idx])

    train_rows = [ds.rows[i] for i in train_idx]
    specs = fit_normalization(ds.columns, train_rows)
    subclasses = None
    if ds.subclasses is not None:
        subclasses = [ds.subclasses[i] for i in val_idx]
    return SplitDataset(
        train_rows=train_rows,
        val_rows=[ds.rows[i] for i in val_idx],
        val_labels=ds.labels[val_idx],
        specs=specs,
        split_seed=seed,
        val_subclasses=subclasses,
        train_indices=train_idx,
        val_indices=val_idx,
    )


def encode_sample(row: list, specs: list[ColumnSpec]) -> list[np.ndarray]:
    """Per-feature encoded vectors: standardized scalar or one-hot."""
    out = []
    for value, spec in zip(row, specs):
        if spec.kind == NUMERICAL:
            out.append(np.array([(float(value) - spec.train_mean) / spec.train_std]))
        else:
            vec = np.zeros(spec.cardinality)
            vec[spec.index_of(value)] = 1.0
            out.append(vec)
    return out


def encode_rows(rows: list[list], specs: list[ColumnSpec]) -> list[np.ndarray]:
    """Column-blocked encoding: one (n_rows, cardinality) array per feature."""
    blocks = []
    for j, spec in enumerate(specs):
        if spec.kind == NUMERICAL:
            col = np.array([float(row[j]) for row in rows], dtype=np.float64)
            blocks.append(((col - spec.train_mean) / spec.train_std)[:, None])
        else:
            block = np.zeros((len(rows), spec.cardinality))
            for i, row in enumerate(rows):
                block[i, spec.index_of(row[j])] = 1.0
            blocks.append(block)
    return blocks


def decode_sample(encoded: list[np.ndarray], specs: list[ColumnSpec]) -> list:
    """Inverse of :func:`encode_sample` (categorical by argmax)."""
    row = []
    for vec, spec in zip(encoded, specs):
        if spec.kind == NUMERICAL:
            row.append(float(vec[0]) * spec.train_std + spec.train_mean)
        else:
            row.append(spec.vocabulary[int(np.argmax(vec))])
    return row


def numeric_matrix(rows: list[list], specs: list[ColumnSpec]) -> np.ndarray:
    """Stacked normalized features, one-hot blocks included, shape (n, sum e_j)."""
    return np.concatenate(encode_rows(rows, specs), axis=1)
