"""Observed-data model: units, datasets, fold assignment, reparametrization.

A unit is a tuple (y, a, x): outcome, arm index in {1, ..., p}, covariate
vector of length d. Arms are 1-based everywhere at the API surface.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError

LEVELS = "levels"
CONTRASTS = "contrasts_vs_baseline"


@dataclass(frozen=True)
class ObservedUnit:
    """One observation (y, a, x)."""

    y: float
    a: int
    x: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        object.__setattr__(self, "x", x)
        if not np.isfinite(self.y):
            raise DataError("outcome y must be finite")
        if not np.all(np.isfinite(x)):
            raise DataError("covariates x must be finite")
        if int(self.a) != self.a or self.a < 1:
            raise DataError(f"arm index must be a positive integer, got {self.a}")


@dataclass(frozen=True)
class Dataset:
    """A sample of n units with p arms and d covariates, stored columnwise.

    y: (n,) outcomes; a: (n,) 1-based arm indices; x: (n, d) covariates.
    Every arm in {1, ..., p} must appear at least once so per-arm regressions
    are fittable.
    """

    y: np.ndarray
    a: np.ndarray
    x: np.ndarray
    p: int

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        a = np.asarray(self.a, dtype=int)
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "x", x)
        if self.p < 2:
            raise DataError(f"need at least 2 arms, got p={self.p}")
        if not (len(y) == len(a) == len(x)):
            raise DataError("y, a, x must have equal length")
        if len(y) == 0:
            raise DataError("dataset is empty")
        if not np.all(np.isfinite(y)) or not np.all(np.isfinite(x)):
            raise DataError("non-finite value in dataset")
        bad = (a < 1) | (a > self.p)
        if bad.any():
            row = int(np.flatnonzero(bad)[0]) + 1
            raise DataError(f"arm out of range at row {row}")
        for arm in range(1, self.p + 1):
            if not (a == arm).any():
                raise DataError(f"arm {arm} unobserved")

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def units(self) -> list[ObservedUnit]:
        return [ObservedUnit(float(self.y[i]), int(self.a[i]), self.x[i]) for i in range(self.n)]

    @classmethod
    def from_units(cls, units: list[ObservedUnit], p: int) -> "Dataset":
        if not units:
            raise DataError("dataset is empty")
        d = len(units[0].x)
        for i, u in enumerate(units):
            if len(u.x) != d:
                raise DataError(f"covariate dimension mismatch at row {i + 1}")
        return cls(
            y=np.array([u.y for u in units]),
            a=np.array([u.a for u in units]),
            x=np.vstack([u.x for u in units]),
            p=p,
        )


@dataclass(frozen=True)
class FoldAssignment:
    """Balanced K-fold split: labels (n,) in {1, ..., K}, |size_b - n/K| < 1."""

    labels: np.ndarray
    K: int
    seed: int

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=int)
        object.__setattr__(self, "labels", labels)
        counts = np.bincount(labels, minlength=self.K + 1)[1:]
        if (counts == 0).any():
            raise ConfigError("every fold label in 1..K must be used")
        if counts.max() - counts.min() > 1:
            raise ConfigError("fold sizes must differ by at most one")

    @property
    def n(self) -> int:
        return len(self.labels)

    def mask(self, b: int) -> np.ndarray:
        """Boolean mask of the units in fold b."""
        return self.labels == b


@dataclass(frozen=True)
class CounterfactualMatrix:
    """n x p matrix of per-arm conditional mean values, one row per unit.

    In the "levels" parametrization column a holds the arm-a mean; under
    "contrasts_vs_baseline" column 1 holds the baseline level and columns
    2..p hold differences against it.
    """

    values: np.ndarray
    parametrization: str = LEVELS

    def __post_init__(self):
        values = np.atleast_2d(np.asarray(self.values, dtype=float))
        object.__setattr__(self, "values", values)
        if self.parametrization not in (LEVELS, CONTRASTS):
            raise ConfigError(f"unknown parametrization {self.parametrization!r}")
        if not np.all(np.isfinite(values)):
            raise DataError("counterfactual matrix has non-finite entries")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]


def load_dataset(path, p: int) -> Dataset:
    """Read a CSV with header ``y,a,x1,...,xd`` into a validated Dataset.

    Row order is preserved. Errors name the offending 1-based data row and
    column. Duplicated rows are accepted as-is.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if len(header) < 3 or header[0] != "y" or header[1] != "a":
            raise DataError(f"{path}: header must be y,a,x1,...,xd")
        d = len(header) - 2
        expected_x = [f"x{j}" for j in range(1, d + 1)]
        if header[2:] != expected_x:
            raise DataError(f"{path}: covariate columns must be named x1,...,x{d}")

        ys, arms, xs = [], [], []
        for i, row in enumerate(reader, start=1):
            if len(row) != d + 2:
                raise DataError(f"wrong number of cells at row {i}")
            vals = []
            for col_name, cell in zip(header, row):
                cell = cell.strip()
                if cell == "":
                    raise DataError(f"missing value at row {i}, column {col_name}")
                try:
                    value = float(cell)
                except ValueError:
                    raise DataError(
                        f"non-numeric value {cell!r} at row {i}, column {col_name}"
                    ) from None
                if not np.isfinite(value):
                    raise DataError(f"non-finite value at row {i}, column {col_name}")
                vals.append(value)
            a_val = vals[1]
            if a_val != int(a_val):
                raise DataError(f"non-integer arm at row {i}")
            a_int = int(a_val)
            if a_int < 1 or a_int > p:
                raise DataError(f"arm out of range at row {i}")
            ys.append(vals[0])
            arms.append(a_int)
            xs.append(vals[2:])

    if not ys:
        raise DataError(f"{path}: no data rows")
    return Dataset(y=np.array(ys), a=np.array(arms), x=np.array(xs), p=p)


def assign_folds(n: int, K: int, seed: int) -> FoldAssignment:
    """Uniformly shuffle a balanced label vector into K folds.

    Deterministic in (n, K, seed); fold sizes differ by at most one. Balanced
    labels (rather than independent per-unit draws) keep fold sizes fixed.
    """
    if K < 2 or K > n:
        raise ConfigError(f"need 2 <= K <= n, got K={K}, n={n}")
    base, extra = divmod(n, K)
    sizes = [base + (1 if b < extra else 0) for b in range(K)]
    labels = np.repeat(np.arange(1, K + 1), sizes)
    rng = np.random.default_rng(seed)
    rng.shuffle(labels)
    return FoldAssignment(labels=labels, K=K, seed=seed)


def reparametrize(m: CounterfactualMatrix, mode: str) -> CounterfactualMatrix:
    """Convert a counterfactual matrix to the requested parametrization.

    Levels -> contrasts maps each row (m1, ..., mp) to (m1, m2-m1, ...,
    mp-m1); the baseline level is kept as coordinate 1. Contrasts -> levels
    inverts that map exactly. Requesting the parametrization the matrix is
    already in is the identity, except that contrasts -> contrasts raises
    (a second application would corrupt the values).
    """
    if mode not in (LEVELS, CONTRASTS):
        raise ConfigError(f"unknown parametrization {mode!r}")
    if mode == m.parametrization:
        if mode == CONTRASTS:
            raise ValueError("matrix is already in the contrasts parametrization")
        return m
    v = m.values
    out = v.copy()
    if mode == CONTRASTS:
        out[:, 1:] = v[:, 1:] - v[:, :1]
    else:
        out[:, 1:] = v[:, 1:] + v[:, :1]
    return CounterfactualMatrix(values=out, parametrization=mode)
