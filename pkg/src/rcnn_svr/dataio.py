"""Datasets, CSV files, chronological splits, scaling and model files.

CSV layout
----------
UTF-8 text, comma separated, ``.`` as decimal point, LF or CRLF line endings::

    month,f1,f2,f3,f4,f5,f6,f7,f8,ev
    2012-01,30.1,121.5,...,37.42

``month`` is an opaque label and must be the first column. ``ev`` (the
electricity value, kWh/t) is the last column; it may be omitted for files
that only carry factors, e.g. input to ``predict``. Every column in between
is an influential factor, in order.

Model files
-----------
Plain text::

    RCNN-SVR-MODEL
    format-version: 1
    {...json payload...}
    sha256: <hex digest of every preceding byte>

Floats in the payload are written with ``repr`` so they round-trip exactly.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import (
    ConstantColumnError,
    CorruptFileError,
    MissingColumnError,
    NonFiniteError,
    NonNumericError,
    ParseError,
    SplitTooLargeError,
    VersionMismatchError,
)

MODEL_MAGIC = "RCNN-SVR-MODEL"
MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class Dataset:
    factor_names: tuple
    factors: np.ndarray
    targets: Optional[np.ndarray]
    month_labels: tuple

    def __post_init__(self):
        factors = np.array(self.factors, dtype=np.float64)
        if factors.ndim != 2:
            raise ValueError("factors must be a (months, factors) matrix")
        object.__setattr__(self, "factors", factors)
        object.__setattr__(self, "factor_names", tuple(self.factor_names))
        object.__setattr__(self, "month_labels", tuple(str(m) for m in self.month_labels))
        n = factors.shape[0]
        if n < 1:
            raise ValueError("a dataset needs at least one month")
        if len(self.month_labels) != n:
            raise ValueError(f"{len(self.month_labels)} month labels for {n} rows")
        if len(self.factor_names) != factors.shape[1]:
            raise ValueError(f"{len(self.factor_names)} factor names for {factors.shape[1]} columns")
        if not np.all(np.isfinite(factors)):
            raise NonFiniteError("factor values must be finite")
        if self.targets is not None:
            targets = np.array(self.targets, dtype=np.float64).reshape(-1)
            if targets.size != n:
                raise ValueError(f"{targets.size} targets for {n} rows")
            if not np.all(np.isfinite(targets)):
                raise NonFiniteError("targets must be finite")
            object.__setattr__(self, "targets", targets)

    def __len__(self):
        return self.factors.shape[0]

    @property
    def has_targets(self) -> bool:
        return self.targets is not None

    def rows(self, start: int, stop: int) -> "Dataset":
        return Dataset(
            self.factor_names,
            self.factors[start:stop],
            None if self.targets is None else self.targets[start:stop],
            self.month_labels[start:stop],
        )

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        if (self.targets is None) != (other.targets is None):
            return False
        return (
            self.factor_names == other.factor_names
            and self.month_labels == other.month_labels
            and np.array_equal(self.factors, other.factors)
            and (self.targets is None or np.array_equal(self.targets, other.targets))
        )


# --------------------------------------------------------------------------
# CSV

def _parse_float(cell: str, row: int, column: str) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise NonNumericError(
            f"row {row}, column {column!r}: {cell!r} is not a number"
        ) from None
    if not math.isfinite(value):
        raise NonNumericError(f"row {row}, column {column!r}: {cell!r} is not finite")
    return value


def read_csv_text(text: str, require_targets: bool = True, source: str = "<text>") -> Dataset:
    reader = csv.reader(io.StringIO(text))
    rows = [r for r in reader if r and any(c.strip() for c in r)]
    if not rows:
        raise ParseError(f"{source}: no header row")
    header = [h.strip() for h in rows[0]]
    if not header or header[0] != "month":
        raise MissingColumnError(f"{source}: first column must be 'month', got {header[:1]}")
    has_ev = header[-1] == "ev"
    if require_targets and not has_ev:
        raise MissingColumnError(f"{source}: last column must be 'ev'")
    factor_names = header[1:-1] if has_ev else header[1:]
    if not factor_names:
        raise MissingColumnError(f"{source}: no factor columns between 'month' and 'ev'")
    if len(set(header)) != len(header):
        raise ParseError(f"{source}: duplicate column names in header")
    data = rows[1:]
    if not data:
        raise ParseError(f"{source}: no data rows")
    factors, targets, months = [], [], []
    for i, row in enumerate(data, start=1):
        if len(row) != len(header):
            raise ParseError(
                f"{source}: row {i} has {len(row)} fields, header has {len(header)}"
            )
        months.append(row[0].strip())
        factors.append([_parse_float(c.strip(), i, name) for c, name in zip(row[1:], factor_names)])
        if has_ev:
            targets.append(_parse_float(row[-1].strip(), i, "ev"))
    return Dataset(factor_names, np.array(factors), np.array(targets) if has_ev else None, months)


def load_csv(path, require_targets: bool = True) -> Dataset:
    """Read a dataset in the documented CSV layout, preserving row order."""
    path = Path(path)
    with open(path, encoding="utf-8", newline="") as fh:
        text = fh.read()
    return read_csv_text(text, require_targets=require_targets, source=str(path))


def dataset_to_csv_text(d: Dataset) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = ["month", *d.factor_names] + (["ev"] if d.has_targets else [])
    writer.writerow(header)
    for i in range(len(d)):
        row = [d.month_labels[i], *(repr(float(v)) for v in d.factors[i])]
        if d.has_targets:
            row.append(repr(float(d.targets[i])))
        writer.writerow(row)
    return buf.getvalue()


def save_csv(d: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(dataset_to_csv_text(d))


def read_table(path):
    """Read a report CSV (epoch log, comparison, sweep) as ``(header, rows)``.

    Cells that parse as numbers become floats, empty cells ``None``, the
    rest stay strings. Every row must be as wide as the header.
    """
    path = Path(path)
    with open(path, encoding="utf-8", newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise ParseError(f"{path}: no header row")
    header, out = rows[0], []
    for i, row in enumerate(rows[1:], start=1):
        if len(row) != len(header):
            raise ParseError(f"{path}: row {i} has {len(row)} fields, header has {len(header)}")
        cells = []
        for cell in row:
            if cell == "":
                cells.append(None)
                continue
            try:
                cells.append(float(cell))
            except ValueError:
                cells.append(cell)
        out.append(cells)
    return header, out


# --------------------------------------------------------------------------
# splitting and scaling

@dataclass(frozen=True)
class SplitSpec:
    train_rows: int
    test_rows: int

    def __post_init__(self):
        if self.train_rows < 1 or self.test_rows < 1:
            raise ValueError("train_rows and test_rows must both be at least 1")


def split(d: Dataset, s: SplitSpec):
    """Chronological split: the first ``train_rows`` months, then the next ``test_rows``."""
    if s.train_rows + s.test_rows > len(d):
        raise SplitTooLargeError(
            f"split {s.train_rows}+{s.test_rows} exceeds the {len(d)} available months"
        )
    return d.rows(0, s.train_rows), d.rows(s.train_rows, s.train_rows + s.test_rows)


@dataclass(frozen=True)
class StandardizationStats:
    """Column means and population standard deviations of a training set."""

    factor_mean: np.ndarray
    factor_sd: np.ndarray
    target_mean: float
    target_sd: float

    def apply_factors(self, factors) -> np.ndarray:
        return (np.asarray(factors, dtype=np.float64) - self.factor_mean) / self.factor_sd

    def invert_factors(self, z) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) * self.factor_sd + self.factor_mean

    def apply_targets(self, targets) -> np.ndarray:
        return (np.asarray(targets, dtype=np.float64) - self.target_mean) / self.target_sd

    def invert_targets(self, z) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) * self.target_sd + self.target_mean

    def apply(self, d: Dataset) -> Dataset:
        targets = None if d.targets is None else self.apply_targets(d.targets)
        return replace(d, factors=self.apply_factors(d.factors), targets=targets)

    def to_dict(self) -> dict:
        return {
            "factor_mean": [float(v) for v in self.factor_mean],
            "factor_sd": [float(v) for v in self.factor_sd],
            "target_mean": float(self.target_mean),
            "target_sd": float(self.target_sd),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StandardizationStats":
        return cls(np.array(d["factor_mean"], dtype=np.float64),
                   np.array(d["factor_sd"], dtype=np.float64),
                   float(d["target_mean"]), float(d["target_sd"]))


def standardize(train: Dataset):
    """Fit per-column mean / population sd on ``train`` and return ``(stats, scaled train)``."""
    if not train.has_targets:
        raise ValueError("standardize needs a dataset with targets")
    mean = train.factors.mean(axis=0)
    sd = train.factors.std(axis=0)
    for name, s in zip(train.factor_names, sd):
        if not s > 0:
            raise ConstantColumnError(f"factor column {name!r} is constant on the training rows")
    t_sd = float(train.targets.std())
    if not t_sd > 0:
        raise ConstantColumnError("target column 'ev' is constant on the training rows")
    stats = StandardizationStats(mean, sd, float(train.targets.mean()), t_sd)
    return stats, stats.apply(train)


# --------------------------------------------------------------------------
# synthetic data

SYNTHETIC_FACTORS = (
    # name, base, seasonal amplitude, phase, factor noise sd
    ("ore_grade", 30.0, 2.0, 0.0, 0.8),
    ("crude_ore_kt", 120.0, 15.0, 1.0, 5.0),
    ("mill_fill_rate", 40.0, 3.0, 1.5707963267948966, 1.0),
    ("ambient_temp", 10.0, -15.0, 1.5707963267948966, 2.0),
    ("operating_hours", 650.0, 30.0, 2.0, 10.0),
    ("water_use_kt", 55.0, 6.0, -0.5, 2.0),
    ("grind_fineness", 70.0, 2.0, 0.7, 1.0),
    ("equipment_load", 80.0, 5.0, -1.0, 2.0),
)


def synthetic_target(factors, month_index) -> np.ndarray:
    """Noise-free electricity value of the synthetic generator.

    With ``z_j = (f_j - base_j) / (|amplitude_j| + noise_j)`` for factor ``j``
    (bases/amplitudes/noise in ``SYNTHETIC_FACTORS``) and month angle
    ``s = 2*pi*(month_index mod 12)/12``::

        ev = 37 + 1.5 tanh(z1) + 1.2 z2 + 0.8 max(z3, 0) + z4 + 0.5 z5
                + 0.6 log(1 + exp(z6)) + 0.4 z7 + 0.5 z8 + cos(s)
    """
    f = np.asarray(factors, dtype=np.float64)
    base = np.array([row[1] for row in SYNTHETIC_FACTORS])
    spread = np.array([abs(row[2]) + row[4] for row in SYNTHETIC_FACTORS])
    z = (f - base) / spread
    s = 2.0 * np.pi * (np.asarray(month_index) % 12) / 12.0
    return (37.0 + 1.5 * np.tanh(z[:, 0]) + 1.2 * z[:, 1] + 0.8 * np.maximum(z[:, 2], 0.0)
            + z[:, 3] + 0.5 * z[:, 4] + 0.6 * np.logaddexp(0.0, z[:, 5]) + 0.4 * z[:, 6]
            + 0.5 * z[:, 7] + np.cos(s))


def month_label(index: int, start_year: int = 2012) -> str:
    return f"{start_year + index // 12:04d}-{index % 12 + 1:02d}"


def generate_synthetic(months: int, seed: int = 7, noise_sd: float = 0.05) -> Dataset:
    """Seasonal synthetic factors plus :func:`synthetic_target` and Gaussian noise.

    Factor ``j`` in month ``t`` is ``base + amplitude * sin(s_t + phase) +
    N(0, noise_j)``; the target adds ``N(0, noise_sd)`` to the noise-free
    value. Months are labelled from 2012-01.
    """
    if months < 2:
        raise ValueError("months must be at least 2")
    if noise_sd < 0:
        raise ValueError("noise_sd must be non-negative")
    rng = np.random.default_rng(seed)
    t = np.arange(months)
    s = 2.0 * np.pi * (t % 12) / 12.0
    cols = []
    for _, base, amp, phase, sd in SYNTHETIC_FACTORS:
        cols.append(base + amp * np.sin(s + phase) + rng.normal(0.0, sd, size=months))
    factors = np.column_stack(cols)
    targets = synthetic_target(factors, t)
    if noise_sd > 0:
        targets = targets + rng.normal(0.0, noise_sd, size=months)
    names = [row[0] for row in SYNTHETIC_FACTORS]
    return Dataset(names, factors, targets, [month_label(i) for i in t])


# --------------------------------------------------------------------------
# model files

def encode_array(a) -> dict:
    a = np.asarray(a, dtype=np.float64)
    return {"shape": list(a.shape), "data": [float(v) for v in a.reshape(-1)]}


def decode_array(d) -> np.ndarray:
    return np.array(d["data"], dtype=np.float64).reshape(d["shape"])


def dumps_model(payload: dict) -> str:
    head = f"{MODEL_MAGIC}\nformat-version: {MODEL_FORMAT_VERSION}\n"
    body = head + json.dumps(payload, sort_keys=True, allow_nan=False) + "\n"
    digest = hashlib.sha256(body.encode("utf-8")).hexdigest()
    return body + f"sha256: {digest}\n"


def loads_model(text: str, source: str = "<text>") -> dict:
    lines = text.split("\n")
    if not lines or lines[0].rstrip("\r") != MODEL_MAGIC:
        raise CorruptFileError(f"{source}: not a model file (missing {MODEL_MAGIC!r} header)")
    if len(lines) < 2 or not lines[1].startswith("format-version:"):
        raise CorruptFileError(f"{source}: missing format-version line")
    try:
        version = int(lines[1].split(":", 1)[1])
    except ValueError:
        raise CorruptFileError(f"{source}: unreadable format version {lines[1]!r}") from None
    if version != MODEL_FORMAT_VERSION:
        raise VersionMismatchError(version, MODEL_FORMAT_VERSION, source)
    if text.endswith("\n"):
        text = text[:-1]
    body, sep, last = text.rpartition("\n")
    if not sep or not last.startswith("sha256: "):
        raise CorruptFileError(f"{source}: checksum line missing; file is truncated")
    digest = hashlib.sha256((body + "\n").encode("utf-8")).hexdigest()
    if last[len("sha256: "):].strip() != digest:
        raise CorruptFileError(f"{source}: checksum mismatch; file is corrupt")
    payload_text = body.split("\n", 2)[2] if body.count("\n") >= 2 else ""
    try:
        return json.loads(payload_text)
    except json.JSONDecodeError as exc:
        raise CorruptFileError(f"{source}: payload is not valid JSON ({exc})") from None


def save_model(p, path) -> None:
    """Write a fitted pipeline (anything with ``to_dict``) to ``path``."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(dumps_model(p.to_dict()))


def load_model(path):
    """Read a pipeline written by :func:`save_model`."""
    from .pipeline import FittedPipeline

    path = Path(path)
    with open(path, encoding="utf-8", newline="") as fh:
        text = fh.read()
    payload = loads_model(text, source=str(path))
    try:
        return FittedPipeline.from_dict(payload)
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptFileError(f"{path}: malformed model payload ({exc})") from None
