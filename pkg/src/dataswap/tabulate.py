"""Two-way contingency tables, Pearson chi-square and Cramer's V."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InvalidBoundaries, SameVariable, UnorderedVariable
from .microdata import Dataset, Variable


@dataclass(frozen=True)
class ContingencyTable:
    row_variable: str
    col_variable: str
    counts: np.ndarray
    row_levels: tuple[str, ...] = ()
    col_levels: tuple[str, ...] = ()

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    @property
    def shape(self) -> tuple[int, int]:
        return self.counts.shape


@dataclass(frozen=True)
class AssociationResult:
    chi_square: float
    v: float | None  # None when V is undefined
    effective_k: int
    effective_r: int

    @property
    def defined(self) -> bool:
        return self.v is not None


def cross_tab(ds: Dataset, row_var: str, col_var: str) -> ContingencyTable:
    if row_var == col_var:
        raise SameVariable(f"row and column variable are both {row_var!r}")
    rv, cv = ds.schema.variable(row_var), ds.schema.variable(col_var)
    k, r = len(rv.levels), len(cv.levels)
    flat = ds.column(row_var).astype(np.int64) * r + ds.column(col_var)
    counts = np.bincount(flat, minlength=k * r).reshape(k, r)
    return ContingencyTable(row_var, col_var, counts, rv.levels, cv.levels)


def cross_tab_by_group(rows: np.ndarray, cols: np.ndarray, groups: np.ndarray,
                       k: int, r: int, n_groups: int) -> np.ndarray:
    """Stacked tables, shape ``(n_groups, k, r)``, from integer code arrays."""
    flat = (groups.astype(np.int64) * k + rows) * r + cols
    return np.bincount(flat, minlength=n_groups * k * r).reshape(n_groups, k, r)


def chi_square_v(counts: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised chi-square and V over the last two axes.

    Rows and columns with zero margin are dropped before computing, which is
    the same as skipping cells whose expected count is zero. Returns
    ``(chi2, v, effective_k, effective_r)``; ``v`` is NaN where undefined.
    """
    c = np.asarray(counts, dtype=np.float64)
    row_tot = c.sum(axis=-1)
    col_tot = c.sum(axis=-2)
    n = row_tot.sum(axis=-1)
    eff_k = (row_tot > 0).sum(axis=-1)
    eff_r = (col_tot > 0).sum(axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        expected = row_tot[..., :, None] * col_tot[..., None, :] / n[..., None, None]
        cell = np.where(expected > 0, (c - expected) ** 2 / expected, 0.0)
        chi2 = cell.sum(axis=(-2, -1))
        dof = np.minimum(eff_k, eff_r) - 1
        ok = (n > 0) & (dof >= 1)
        v = np.where(ok, np.sqrt(chi2 / n / np.where(ok, dof, 1)), np.nan)
    v = np.minimum(v, 1.0)  # rounding can overshoot by an ulp
    chi2 = np.where(n > 0, chi2, 0.0)
    return chi2, v, eff_k, eff_r


def cramers_v(t: ContingencyTable | np.ndarray | Sequence[Sequence[int]]) -> AssociationResult:
    counts = t.counts if isinstance(t, ContingencyTable) else np.asarray(t)
    if counts.ndim != 2:
        raise ValueError("expected a 2-way table")
    chi2, v, ek, er = chi_square_v(counts)
    v = float(v)
    return AssociationResult(float(chi2), None if math.isnan(v) else v, int(ek), int(er))


def bin_codes(var: Variable, boundaries: Sequence[str]) -> tuple[np.ndarray, Variable]:
    """Map each level of ``var`` to a bin index.

    Each boundary is a level label that starts a new bin, so ``b`` boundaries
    give ``b + 1`` bins. Bin labels are ``first-last`` of the levels they span.
    """
    if not var.ordered:
        raise UnorderedVariable(f"variable {var.name!r} is not ordered")
    if not boundaries:
        raise InvalidBoundaries("at least one boundary is required")
    pos = []
    for b in boundaries:
        try:
            pos.append(var.levels.index(str(b)))
        except ValueError:
            raise InvalidBoundaries(f"{b!r} is not a level of {var.name!r}") from None
    if pos[0] < 1 or any(b <= a for a, b in zip(pos, pos[1:])):
        raise InvalidBoundaries(f"boundaries must be increasing levels after the first: {list(boundaries)}")
    edges = [0] + pos + [len(var.levels)]
    mapping = np.zeros(len(var.levels), dtype=np.int32)
    labels = []
    for i, (lo, hi) in enumerate(zip(edges, edges[1:])):
        mapping[lo:hi] = i
        first, last = var.levels[lo], var.levels[hi - 1]
        labels.append(first if lo == hi - 1 else f"{first}-{last}")
    return mapping, Variable(var.name, tuple(labels), ordered=True)


def bin_variable(ds: Dataset, var: str, boundaries: Sequence[str]) -> Dataset:
    """Replace ``var`` by a coarser ordered variable with ``len(boundaries) + 1`` levels."""
    j = ds.schema.index(var)
    mapping, new_var = bin_codes(ds.schema.variables[j], boundaries)
    values = ds.values.copy()
    values[:, j] = mapping[values[:, j]]
    return ds.with_values(ds.schema.replace(var, new_var), values)


def write_table_csv(t: ContingencyTable, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow([f"{t.row_variable}\\{t.col_variable}", *t.col_levels])
        for label, row in zip(t.row_levels, t.counts):
            w.writerow([label, *(int(x) for x in row)])
