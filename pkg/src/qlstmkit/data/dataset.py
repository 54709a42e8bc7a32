"""Dataset tables loaded from CSV or generated synthetically.

Two CSV layouts are read (UTF-8, comma separated, header row required):

``smiles_csv``
    a ``smiles`` column plus one or more label columns; fingerprints are
    computed here.
``fingerprint_csv``
    an ``fp`` column holding a 0/1 string plus label columns; lets you feed
    fingerprints produced elsewhere.

Columns named ``id``, ``smiles`` and ``fp`` are never treated as labels.
Empty label cells are missing values and are masked out of loss/accuracy.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..errors import ConfigError, ParseError
from .fingerprint import DEFAULT_BITS, DEFAULT_RADIUS, morgan_fingerprint
from .smiles import parse_smiles

log = logging.getLogger(__name__)

FORMATS = ("smiles_csv", "fingerprint_csv")
RESERVED_COLUMNS = ("id", "smiles", "fp")


@dataclass
class DatasetTable:
    ids: list[str]
    fingerprints: np.ndarray  # (N, n_bits) uint8
    labels: np.ndarray  # (N, n_tasks) float, 0 where missing
    mask: np.ndarray  # (N, n_tasks) bool
    task_names: list[str]
    provenance: dict = field(default_factory=dict)
    smiles: list[str] | None = None

    def __post_init__(self):
        n = len(self.ids)
        if self.fingerprints.shape[0] != n or self.labels.shape[0] != n or self.mask.shape != self.labels.shape:
            raise ConfigError("dataset arrays disagree on row count or label shape")
        if self.labels.shape[1] != len(self.task_names):
            raise ConfigError("label arity does not match task names")

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def n_tasks(self) -> int:
        return self.labels.shape[1]

    @property
    def n_bits(self) -> int:
        return self.fingerprints.shape[1]

    def subset(self, rows: Sequence[int]) -> "DatasetTable":
        rows = np.asarray(rows)
        return DatasetTable(
            ids=[self.ids[i] for i in rows],
            fingerprints=self.fingerprints[rows],
            labels=self.labels[rows],
            mask=self.mask[rows],
            task_names=list(self.task_names),
            provenance=dict(self.provenance, subset=len(rows)),
            smiles=None if self.smiles is None else [self.smiles[i] for i in rows],
        )


def _parse_label(cell: str, line: int, column: str) -> tuple[float, bool]:
    cell = cell.strip()
    if cell == "":
        return 0.0, False
    try:
        value = float(cell)
    except ValueError:
        raise ParseError(f"label {column!r} is not numeric: {cell!r}", line=line) from None
    if value not in (0.0, 1.0):
        raise ParseError(f"label {column!r} must be 0 or 1, got {cell!r}", line=line)
    return value, True


def _read_rows(path: Path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError("file is empty; a header row is required", line=1) from None
        rows = [(reader.line_num, row) for row in reader]
    return header, rows


def load_dataset(path, format: str = "smiles_csv", radius: int = DEFAULT_RADIUS,
                 n_bits: int = DEFAULT_BITS, label_columns: Sequence[str] | None = None) -> DatasetTable:
    path = Path(path)
    if format not in FORMATS:
        raise ConfigError(f"format must be one of {FORMATS}, got {format!r}")
    if not path.is_file():
        raise FileNotFoundError(f"dataset file not found: {path}")
    header, rows = _read_rows(path)
    key = "smiles" if format == "smiles_csv" else "fp"
    if key not in header:
        raise ParseError(f"header must contain a {key!r} column", line=1)
    if label_columns is None:
        label_columns = [h for h in header if h not in RESERVED_COLUMNS]
    missing = [c for c in label_columns if c not in header]
    if missing:
        raise ParseError(f"label column(s) {missing} not in header", line=1)
    if not label_columns:
        raise ParseError("no label columns found", line=1)
    key_col = header.index(key)
    id_col = header.index("id") if "id" in header else None
    smiles_col = header.index("smiles") if "smiles" in header else None
    label_idx = [header.index(c) for c in label_columns]

    ids, fps, labels, masks, smiles = [], [], [], [], []
    skipped = []
    for line, row in rows:
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} columns, got {len(row)}", line=line)
        parsed = [_parse_label(row[i], line, header[i]) for i in label_idx]
        raw = row[key_col].strip()
        if format == "smiles_csv":
            try:
                fp = morgan_fingerprint(parse_smiles(raw), radius, n_bits).bits
            except (ParseError, ValueError) as exc:
                log.warning("line %d: skipping SMILES %r: %s", line, raw, exc)
                skipped.append(line)
                continue
        else:
            if len(raw) != n_bits or set(raw) - {"0", "1"}:
                raise ParseError(
                    f"fingerprint must be {n_bits} characters of 0/1, got {len(raw)} characters",
                    line=line,
                )
            fp = np.frombuffer(raw.encode("ascii"), dtype=np.uint8) - ord("0")
        ids.append(row[id_col].strip() if id_col is not None else str(len(ids)))
        smiles.append(row[smiles_col].strip() if smiles_col is not None else "")
        fps.append(fp)
        labels.append([v for v, _ in parsed])
        masks.append([ok for _, ok in parsed])

    n_tasks = len(label_columns)
    return DatasetTable(
        ids=ids,
        fingerprints=np.array(fps, dtype=np.uint8).reshape(len(fps), n_bits),
        labels=np.array(labels, dtype=float).reshape(len(labels), n_tasks),
        mask=np.array(masks, dtype=bool).reshape(len(masks), n_tasks),
        task_names=list(label_columns),
        provenance={
            "source": str(path),
            "format": format,
            "fingerprints": "computed" if format == "smiles_csv" else "ingested",
            "radius": radius if format == "smiles_csv" else None,
            "n_bits": n_bits,
            "rows_read": len(rows),
            "rows_skipped": len(skipped),
            "skipped_lines": skipped,
        },
        smiles=smiles if smiles_col is not None else None,
    )


def write_fingerprint_csv(table: DatasetTable, path) -> None:
    """Write ``id,smiles,fp,<labels>``; missing labels become empty cells."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "smiles", "fp", *table.task_names])
        for k in range(len(table)):
            fp = "".join("1" if b else "0" for b in table.fingerprints[k])
            labels = [
                str(int(table.labels[k, j])) if table.mask[k, j] else ""
                for j in range(table.n_tasks)
            ]
            smi = table.smiles[k] if table.smiles is not None else ""
            writer.writerow([table.ids[k], smi, fp, *labels])


def make_separable_dataset(n_samples: int = 200, n_bits: int = 256, seed: int = 0,
                           on_rate: float = 0.5, off_rate: float = 0.1) -> DatasetTable:
    """Two-cluster bit vectors split by a known linear rule.

    A fixed random half of the bit positions is "class-1" territory.  Class 1
    draws bits there at ``on_rate`` and elsewhere at ``off_rate``; class 0 the
    other way round.  Rows are redrawn until the sign of
    ``sum(x[class-1 bits]) - sum(x[other bits])`` matches the label, so a
    linear classifier separates the set exactly.
    """
    if n_samples < 2 or n_bits < 2:
        raise ConfigError("need at least 2 samples and 2 bits")
    rng = np.random.default_rng(seed)
    region = np.zeros(n_bits, dtype=bool)
    region[rng.permutation(n_bits)[: n_bits // 2]] = True
    direction = np.where(region, 1.0, -1.0)
    labels = np.arange(n_samples) % 2
    rng.shuffle(labels)
    fps = np.zeros((n_samples, n_bits), dtype=np.uint8)
    for k, y in enumerate(labels):
        rates = np.where(region == bool(y), on_rate, off_rate)
        while True:
            row = (rng.random(n_bits) < rates).astype(np.uint8)
            margin = direction @ row
            if (margin > 0) == bool(y) and margin != 0:
                break
        fps[k] = row
    return DatasetTable(
        ids=[f"syn{k}" for k in range(n_samples)],
        fingerprints=fps,
        labels=labels[:, None].astype(float),
        mask=np.ones((n_samples, 1), dtype=bool),
        task_names=["label"],
        provenance={"source": "synthetic", "seed": seed, "n_bits": n_bits,
                    "fingerprints": "generated"},
    )
