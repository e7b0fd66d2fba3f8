"""CSV readers and writers for atoms, covariance matrices and dumps.

Atom files have a header row and one point per row; a final column named
``weight`` makes the rows atoms with probabilities, otherwise rows are
equally weighted samples and repeated rows are merged.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .types import EmpiricalDistribution, ValidationError, from_samples, validate_empirical


def _read_rows(path):
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc}") from None
    if not rows:
        raise ValidationError(f"{path} is empty")
    return rows


def _to_float(rows, path, first_line):
    try:
        return np.array([[float(c) for c in r] for r in rows], dtype=float)
    except ValueError as exc:
        raise ValidationError(f"{path}: non-numeric entry after line {first_line}: {exc}") from None


def read_atoms(path) -> EmpiricalDistribution:
    rows = _read_rows(path)
    header = [h.strip().lower() for h in rows[0]]
    body = rows[1:]
    if not body:
        raise ValidationError(f"{path}: no data rows after the header")
    if any(len(r) != len(header) for r in body):
        raise ValidationError(f"{path}: every row needs {len(header)} columns")
    data = _to_float(body, path, 1)
    if header[-1] == "weight":
        if data.shape[1] < 2:
            raise ValidationError(f"{path}: weight column without coordinates")
        return validate_empirical(data[:, :-1], data[:, -1])
    return from_samples(data)


def read_table(path) -> np.ndarray:
    """Numeric rows below a required header row."""
    rows = _read_rows(path)
    body = rows[1:]
    if not body or any(len(r) != len(rows[0]) for r in body):
        raise ValidationError(f"{path}: expected a header and rows of {len(rows[0])} columns")
    return _to_float(body, path, 1)


def read_matrix(path) -> np.ndarray:
    """Square numeric grid; a non-numeric first row is taken as a header."""
    rows = _read_rows(path)
    start = 0
    try:
        [float(c) for c in rows[0]]
    except ValueError:
        start = 1
    body = rows[start:]
    if not body or any(len(r) != len(body) for r in body):
        raise ValidationError(f"{path}: expected a square numeric grid")
    return _to_float(body, path, start)


def write_atoms(path, dist: EmpiricalDistribution):
    header = [f"x{i + 1}" for i in range(dist.dim)] + ["weight"]
    write_table(path, header, np.column_stack([dist.atoms, dist.weights]))


def write_matrix(path, m):
    m = np.atleast_2d(m)
    write_table(path, [f"c{i + 1}" for i in range(m.shape[1])], m)


def write_table(path, header, rows):
    with open(Path(path), "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(header)
        for r in rows:
            out.writerow([format(float(v), ".17g") for v in r])
