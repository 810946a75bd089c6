"""CSV ingestion."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .data import Dataset


class DataError(ValueError):
    """Malformed input data; messages carry the 1-based line number."""


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def _has_header(rows: list[list[str]]) -> bool:
    first = rows[0]
    if len(rows) == 1:
        return not all(_is_number(c) for c in first)
    second = rows[1]
    return any(
        not _is_number(a) and _is_number(b) for a, b in zip(first, second)
    )


def _resolve_target(target, header: list[str] | None, width: int) -> int:
    if isinstance(target, str) and not target.lstrip("-").isdigit():
        if header is None:
            raise DataError(f"target column {target!r} given by name but the file has no header")
        if target not in header:
            raise DataError(f"line 1: no column named {target!r}")
        return header.index(target)
    idx = int(target)
    if not -width <= idx < width:
        raise DataError(f"target column index {idx} out of range for {width} columns")
    return idx % width


def _encode_targets(labels: list[str], lines: list[int], one_hot: bool) -> np.ndarray:
    classes = sorted(set(labels), key=lambda s: (not _is_number(s), float(s) if _is_number(s) else 0.0, s))
    if len(classes) == 2:
        return np.where(np.array(labels) == classes[1], 1.0, -1.0)
    if one_hot:
        index = {c: k for k, c in enumerate(classes)}
        Y = np.zeros((len(labels), len(classes)))
        Y[np.arange(len(labels)), [index[s] for s in labels]] = 1.0
        return Y
    for label, line in zip(labels, lines):
        if not _is_number(label):
            raise DataError(f"line {line}: non-numeric target {label!r}; pass one_hot=True for class labels")
    return np.array([float(s) for s in labels])


def load_csv(path, target_column=-1, one_hot: bool = False) -> Dataset:
    """Read a numeric table; the target column is chosen by name or index.

    A header row is detected when its cells are not numbers while the row
    below holds numbers. Two-valued targets become ``-1/+1`` (in sorted label
    order); other label sets are one-hot encoded when ``one_hot`` is set and
    kept as numeric regression targets otherwise.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    with path.open(newline="") as fh:
        numbered = [(i + 1, row) for i, row in enumerate(csv.reader(fh)) if any(c.strip() for c in row)]
    if not numbered:
        raise DataError(f"{path}: file is empty")
    rows = [[c.strip() for c in row] for _, row in numbered]
    lines = [i for i, _ in numbered]
    header = rows[0] if _has_header(rows) else None
    if header is not None:
        rows, lines = rows[1:], lines[1:]
    if not rows:
        raise DataError(f"{path}: no data rows after the header")
    width = len(header) if header is not None else len(rows[0])
    for row, line in zip(rows, lines):
        if len(row) != width:
            raise DataError(f"line {line}: expected {width} columns, found {len(row)}")
    if width < 2:
        raise DataError(f"{path}: need at least one feature column and a target column")
    t = _resolve_target(target_column, header, width)

    features = np.empty((len(rows), width - 1))
    for r, (row, line) in enumerate(zip(rows, lines)):
        cells = row[:t] + row[t + 1:]
        for j, cell in enumerate(cells):
            try:
                features[r, j] = float(cell)
            except ValueError:
                col = j if j < t else j + 1
                raise DataError(f"line {line}, column {col + 1}: non-numeric value {cell!r}") from None
    targets = _encode_targets([row[t] for row in rows], lines, one_hot)
    names = None if header is None else header[:t] + header[t + 1:]
    try:
        return Dataset(features, targets, names)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None


def save_csv(path, dataset: Dataset) -> None:
    """Write features followed by target columns ``y`` (or ``y0, y1, ...``) with a header."""
    names = dataset.feature_names or [f"x{j}" for j in range(dataset.d)]
    targets = ["y"] if dataset.c == 1 else [f"y{k}" for k in range(dataset.c)]
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(names) + targets)
        for x, y in zip(dataset.features, dataset.targets):
            writer.writerow([repr(float(v)) for v in x] + [repr(float(v)) for v in y])
