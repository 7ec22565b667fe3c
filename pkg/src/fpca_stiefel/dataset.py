"""Sparse longitudinal datasets and their CSV representation (``subject_id,t,y``)."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError, EmptyError, ParseError

HEADER = ("subject_id", "t", "y")


@dataclass(frozen=True, eq=False)
class Subject:
    subject_id: str
    times: np.ndarray
    values: np.ndarray

    @property
    def m(self) -> int:
        return self.times.size


@dataclass(frozen=True, eq=False)
class SparseDataset:
    """Subjects observed at irregular times, with times mapped to [0, 1].

    ``time_rescale`` holds the (min, max) of the original time axis; original
    time = t * (max - min) + min.
    """

    subjects: tuple[Subject, ...]
    time_rescale: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        subs = tuple(self.subjects)
        ids = [s.subject_id for s in subs]
        if len(set(ids)) != len(ids):
            raise DomainError("subject ids must be unique")
        for s in subs:
            if s.m < 1:
                raise DomainError(f"subject {s.subject_id} has no measurements")
            if s.times.shape != s.values.shape:
                raise DomainError(f"subject {s.subject_id}: times and values differ in length")
            if s.times.min() < 0.0 or s.times.max() > 1.0:
                raise DomainError(f"subject {s.subject_id}: times outside [0, 1]")
        object.__setattr__(self, "subjects", subs)

    @classmethod
    def from_arrays(cls, times_list, values_list, ids=None, time_rescale=(0.0, 1.0)):
        ids = ids if ids is not None else [str(i) for i in range(len(times_list))]
        subs = tuple(
            Subject(str(i), np.asarray(t, dtype=float), np.asarray(y, dtype=float))
            for i, t, y in zip(ids, times_list, values_list)
        )
        return cls(subs, tuple(float(v) for v in time_rescale))

    @property
    def n(self) -> int:
        return len(self.subjects)

    @property
    def m(self) -> np.ndarray:
        return np.array([s.m for s in self.subjects])

    @property
    def times(self) -> list[np.ndarray]:
        return [s.times for s in self.subjects]

    @property
    def values(self) -> list[np.ndarray]:
        return [s.values for s in self.subjects]

    def pooled(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Concatenated (times, values, subject index)."""
        t = np.concatenate(self.times)
        y = np.concatenate(self.values)
        idx = np.repeat(np.arange(self.n), self.m)
        return t, y, idx

    def without(self, i: int) -> "SparseDataset":
        return SparseDataset(self.subjects[:i] + self.subjects[i + 1:], self.time_rescale)

    def original_times(self, t: np.ndarray) -> np.ndarray:
        lo, hi = self.time_rescale
        return np.asarray(t) * (hi - lo) + lo


def load_csv(path) -> SparseDataset:
    """Read ``subject_id,t,y`` rows, grouping by subject in order of first appearance."""
    path = Path(path)
    groups: dict[str, tuple[list[float], list[float]]] = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyError(f"{path} is empty")
        if tuple(h.strip() for h in header) != HEADER:
            raise ParseError(f"expected header {','.join(HEADER)}, got {','.join(header)}", 1)
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise ParseError(f"expected 3 fields, got {len(row)}", lineno)
            sid = row[0].strip()
            if not sid:
                raise ParseError("empty subject_id", lineno)
            try:
                t, y = float(row[1]), float(row[2])
            except ValueError:
                raise ParseError(f"non-numeric value in {row[1:]!r}", lineno) from None
            if not (math.isfinite(t) and math.isfinite(y)):
                raise ParseError("NaN or infinite value", lineno)
            ts, ys = groups.setdefault(sid, ([], []))
            ts.append(t)
            ys.append(y)
    if not groups:
        raise EmptyError(f"{path} has no data rows")
    all_t = np.concatenate([np.asarray(ts) for ts, _ in groups.values()])
    lo, hi = float(all_t.min()), float(all_t.max())
    if lo >= 0.0 and hi <= 1.0:
        lo, hi = 0.0, 1.0
    elif hi == lo:
        raise DomainError("all measurement times are identical; cannot rescale")
    subs = []
    for sid, (ts, ys) in groups.items():
        t = (np.asarray(ts) - lo) / (hi - lo)
        subs.append(Subject(sid, np.clip(t, 0.0, 1.0), np.asarray(ys)))
    return SparseDataset(tuple(subs), (lo, hi))


def save_csv(dataset: SparseDataset, path) -> None:
    """Write the dataset on its original time scale, at full float precision."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HEADER)
        for s in dataset.subjects:
            for t, y in zip(dataset.original_times(s.times), s.values):
                w.writerow([s.subject_id, repr(float(t)), repr(float(y))])
