"""The evolving dataset and the population-mean query released over it."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class DatasetError(ValueError):
    pass


class BoundsViolation(DatasetError):
    def __init__(self, message: str, index=None, value: float | None = None):
        super().__init__(message)
        self.index = index
        self.value = value


class LengthMismatch(DatasetError):
    pass


class AllMissing(DatasetError):
    pass


class UnsoundSensitivity(DatasetError):
    pass


class IndexOutOfRange(IndexError):
    pass


def _as_column(values: Iterable) -> np.ndarray:
    # None and NaN both mean "no reading"
    return np.array([np.nan if v is None else float(v) for v in values], dtype=float)


@dataclass(frozen=True)
class EvolvingDataset:
    """An ``n x t`` matrix that grows one column (time step) at a time.

    Missing entries are stored as NaN. Appending returns a new dataset and
    leaves the original untouched, so earlier snapshots can be shared freely.
    """

    n: int
    value_bounds: tuple[float, float]
    columns: tuple[np.ndarray, ...] = ()
    labels: tuple[str, ...] = ()
    row_ids: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise DatasetError(f"n must be a positive integer, got {self.n}")
        lo, hi = self.value_bounds
        if not lo < hi:
            raise DatasetError(f"value bounds must satisfy lo < hi, got {self.value_bounds}")
        if self.row_ids and len(self.row_ids) != self.n:
            raise LengthMismatch(f"{len(self.row_ids)} row ids for n={self.n}")

    @property
    def t(self) -> int:
        return len(self.columns)

    def append_column(self, column: Sequence, label: str | None = None) -> "EvolvingDataset":
        col = _as_column(column)
        if col.shape != (self.n,):
            raise LengthMismatch(f"column has {col.size} entries, dataset has n={self.n}")
        lo, hi = self.value_bounds
        bad = np.flatnonzero(~np.isnan(col) & ((col < lo) | (col > hi)))
        if bad.size:
            i = int(bad[0])
            raise BoundsViolation(
                f"entry {i} of column {self.t + 1} is {col[i]!r}, outside [{lo}, {hi}]",
                index=i,
                value=float(col[i]),
            )
        col.setflags(write=False)
        label = str(self.t + 1) if label is None else str(label)
        return EvolvingDataset(
            self.n,
            self.value_bounds,
            self.columns + (col,),
            self.labels + (label,),
            self.row_ids,
        )

    def column(self, t: int) -> np.ndarray:
        if not 1 <= t <= self.t:
            raise IndexOutOfRange(f"t={t} outside 1..{self.t}")
        return self.columns[t - 1]

    def matrix(self) -> np.ndarray:
        if not self.columns:
            return np.empty((self.n, 0))
        return np.column_stack(self.columns)

    @property
    def has_missing(self) -> bool:
        return any(np.isnan(c).any() for c in self.columns)

    @classmethod
    def from_matrix(
        cls,
        matrix,
        value_bounds: tuple[float, float],
        labels: Sequence[str] | None = None,
        row_ids: Sequence[str] = (),
    ) -> "EvolvingDataset":
        m = np.asarray(matrix, dtype=float)
        if m.ndim != 2:
            raise DatasetError("matrix must be two-dimensional")
        ds = cls(m.shape[0], tuple(value_bounds), row_ids=tuple(row_ids))
        for j in range(m.shape[1]):
            ds = ds.append_column(m[:, j], None if labels is None else labels[j])
        return ds


class MissingPolicy(enum.Enum):
    EXCLUDE = "exclude"
    ZERO = "zero"


@dataclass(frozen=True)
class MeanQuery:
    """Population mean of one column.

    ``EXCLUDE`` averages the present entries only; ``ZERO`` counts a missing
    entry as 0 and always divides by ``n``. ``EXCLUDE`` on data with gaps has a
    data-dependent divisor, so the plain range/n sensitivity no longer bounds it;
    :func:`check_sensitivity` refuses that combination unless
    ``allow_unsound_missing`` is set.
    """

    value_bounds: tuple[float, float]
    missing_policy: MissingPolicy = MissingPolicy.EXCLUDE
    allow_unsound_missing: bool = False

    def __post_init__(self):
        lo, hi = self.value_bounds
        if not hi > lo:
            raise DatasetError(f"query bounds must satisfy hi > lo, got {self.value_bounds}")


def mean_at(ds: EvolvingDataset, q: MeanQuery, t: int) -> float:
    col = ds.column(t)
    present = col[~np.isnan(col)]
    if q.missing_policy is MissingPolicy.ZERO:
        return float(present.sum() / ds.n)
    if present.size == 0:
        raise AllMissing(f"every entry of column {t} is missing")
    return float(present.mean())


def sensitivity_mean(q: MeanQuery, n: int) -> float:
    """Largest change in the mean when one row is replaced.

    Replacing one present value by another moves the sum by at most
    ``hi - lo``. Under the ``ZERO`` policy a row may also flip between missing
    (counted as 0) and present, a change of up to ``max(|lo|, |hi|)``.
    """
    if int(n) != n or n < 1:
        raise DatasetError(f"n must be a positive integer, got {n}")
    lo, hi = map(float, q.value_bounds)
    spread = hi - lo
    if q.missing_policy is MissingPolicy.ZERO:
        spread = max(spread, abs(lo), abs(hi))
    return spread / n


def check_sensitivity(ds: EvolvingDataset, q: MeanQuery) -> None:
    """Raise if ``sensitivity_mean(q, ds.n)`` would understate the true sensitivity."""
    dlo, dhi = ds.value_bounds
    qlo, qhi = q.value_bounds
    if dlo < qlo or dhi > qhi:
        raise UnsoundSensitivity(
            f"dataset bounds {ds.value_bounds} exceed query bounds {q.value_bounds}"
        )
    if (
        q.missing_policy is MissingPolicy.EXCLUDE
        and not q.allow_unsound_missing
        and ds.has_missing
    ):
        raise UnsoundSensitivity(
            "dataset has missing entries and the mean excludes them; the divisor then "
            "depends on the data and range/n is not a valid sensitivity. Use the zero "
            "policy or pass allow_unsound_missing=True."
        )
