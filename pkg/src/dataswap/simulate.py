"""Replicated swap sweeps.

Every (rate, replication) cell swaps the original dataset with a seed derived
from ``(master_seed, rate, replication)``, tabulates each requested table in
every tract, and records Cramer's V and the ones-changed fraction. The raw
per-replication log is the source of truth; :func:`aggregate` turns it into
means and standard errors, and :func:`run_sweep` is just the two composed.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from . import __version__
from . import risk as risk_mod
from .errors import InsufficientRates, InvalidConfig
from .microdata import Dataset
from .swap import SwapConfig, SwapMode, ones_changed_by_group, swap
from .tabulate import bin_codes, chi_square_v, cross_tab_by_group


@dataclass(frozen=True)
class TableSpec:
    """A two-way table, optionally with binned variables.

    ``bins`` maps a variable name to the level labels that start new bins
    (see :func:`dataswap.tabulate.bin_codes`).
    """

    row_var: str
    col_var: str
    bins: tuple[tuple[str, tuple[str, ...]], ...] = ()

    @property
    def name(self) -> str:
        s = f"{self.row_var}*{self.col_var}"
        for var, bounds in self.bins:
            s += f";{var}={'|'.join(bounds)}"
        return s

    @classmethod
    def parse(cls, text: str) -> "TableSpec":
        """Parse ``row*col`` with optional ``;var=b1|b2`` binning clauses."""
        head, *clauses = [part.strip() for part in text.split(";")]
        try:
            row, col = (p.strip() for p in head.split("*"))
        except ValueError:
            raise InvalidConfig(f"table spec must look like 'row*col[;var=b1|b2]': {text!r}") from None
        bins = []
        for c in clauses:
            var, _, rest = c.partition("=")
            if not rest:
                raise InvalidConfig(f"bad binning clause {c!r} in {text!r}")
            bins.append((var.strip(), tuple(b.strip() for b in rest.split("|"))))
        return cls(row, col, tuple(bins))


@dataclass(frozen=True)
class SweepConfig:
    rates: tuple[float, ...]
    replications: int
    base_swap: SwapConfig
    table_specs: tuple[TableSpec, ...]
    tracts: tuple[str, ...] | None = None
    master_seed: int = 0
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "rates", tuple(float(r) for r in self.rates))
        object.__setattr__(self, "table_specs", tuple(self.table_specs))
        if not self.rates:
            raise InvalidConfig("sweep.rates must not be empty")
        if any(not 0.0 <= r <= 1.0 for r in self.rates):
            raise InvalidConfig("sweep.rates must lie in [0, 1]")
        if any(b <= a for a, b in zip(self.rates, self.rates[1:])):
            raise InvalidConfig("sweep.rates must be strictly increasing")
        if self.replications < 1:
            raise InvalidConfig("sweep.replications must be >= 1")
        if not self.table_specs:
            raise InvalidConfig("sweep.tables must not be empty")
        if self.master_seed < 0:
            raise InvalidConfig("sweep.master_seed must be non-negative")
        if self.workers < 1:
            raise InvalidConfig("sweep.workers must be >= 1")


def replication_seed(master_seed: int, rate: float, replication: int) -> int:
    """Stable 64-bit seed for one cell.

    Keyed on the rate value rather than its position, so adding rates or
    replications leaves existing cells untouched.
    """
    rate_key = int(round(rate * 1_000_000_000))
    ss = np.random.SeedSequence([master_seed, rate_key, replication])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


# -- per-replication work --------------------------------------------------------


@dataclass
class _Prepared:
    rows: list[np.ndarray]
    cols: list[np.ndarray]
    shapes: list[tuple[int, int]]
    baseline: list[np.ndarray]  # (n_tract_labels, k, r) per spec
    tract_codes: np.ndarray  # tracts reported, by code
    n_tract_labels: int
    scores: np.ndarray | None


def _prepare(ds: Dataset, cfg: SweepConfig) -> _Prepared:
    rows, cols, shapes, baseline = [], [], [], []
    for spec in cfg.table_specs:
        if spec.row_var == spec.col_var:
            raise InvalidConfig(f"table {spec.name}: row and column variable are the same")
        binmap = {}
        for var, bounds in spec.bins:
            if var not in (spec.row_var, spec.col_var):
                raise InvalidConfig(f"table {spec.name}: binned variable {var!r} is not in the table")
            binmap[var] = bin_codes(ds.schema.variable(var), bounds)
        codes, dims = [], []
        for var in (spec.row_var, spec.col_var):
            c = ds.column(var)
            if var in binmap:
                mapping, new_var = binmap[var]
                c, L = mapping[c], len(new_var.levels)
            else:
                L = len(ds.schema.variable(var).levels)
            codes.append(np.ascontiguousarray(c, dtype=np.int64))
            dims.append(L)
        rows.append(codes[0])
        cols.append(codes[1])
        shapes.append((dims[0], dims[1]))
        baseline.append(cross_tab_by_group(codes[0], codes[1], ds.person_tract, dims[0], dims[1],
                                           len(ds.tract_labels)))
    if cfg.tracts is None:
        tract_codes = np.array(sorted(set(ds.household_tract.tolist())), dtype=np.int64)
    else:
        tract_codes = np.array([ds.tract_code(t) for t in cfg.tracts], dtype=np.int64)
    scores = None
    if cfg.base_swap.mode is SwapMode.TARGETED:
        scores = risk_mod.score(ds, cfg.base_swap.risk)
    for v in cfg.base_swap.matching_variables:
        ds.schema.index(v)
    return _Prepared(rows, cols, shapes, baseline, tract_codes, len(ds.tract_labels), scores)


def _replicate(ds: Dataset, cfg: SweepConfig, prep: _Prepared, rate: float, rep: int):
    scfg = cfg.base_swap.with_rate(rate, seed=replication_seed(cfg.master_seed, rate, rep))
    out = swap(ds, scfg, scores=prep.scores)
    ptract = out.dataset.person_tract
    v_all, ones_all = [], []
    for rows, cols, (k, r), base in zip(prep.rows, prep.cols, prep.shapes, prep.baseline):
        tables = cross_tab_by_group(rows, cols, ptract, k, r, prep.n_tract_labels)
        _, v, _, _ = chi_square_v(tables)
        ones = ones_changed_by_group(base, tables)
        v_all.append(v[prep.tract_codes])
        ones_all.append(ones[prep.tract_codes])
    stats = (out.selected, len(out.swapped_household_pairs), out.unmatched_selected, out.achieved_rate)
    return np.array(v_all), np.array(ones_all), stats


_WORKER: dict = {}


def _init_worker(ds: Dataset, cfg: SweepConfig) -> None:
    _WORKER["ds"] = ds
    _WORKER["cfg"] = cfg
    _WORKER["prep"] = _prepare(ds, cfg)


def _run_chunk(task: tuple[int, float, list[int]]):
    ri, rate, reps = task
    ds, cfg, prep = _WORKER["ds"], _WORKER["cfg"], _WORKER["prep"]
    return ri, reps, [_replicate(ds, cfg, prep, rate, i) for i in reps]


# -- raw log -----------------------------------------------------------------------


@dataclass
class ReplicationLog:
    """Per-replication values.

    ``v`` and ``ones_changed`` have shape ``(specs, rates, replications,
    tracts)`` with NaN marking undefined values. ``swap_stats`` has shape
    ``(rates, replications, 4)``: selected persons, swapped pairs, unmatched
    selected persons, achieved rate.
    """

    rates: tuple[float, ...]
    tracts: tuple[str, ...]
    specs: tuple[str, ...]
    v: np.ndarray
    ones_changed: np.ndarray
    swap_stats: np.ndarray
    unswapped_v: np.ndarray  # (specs, tracts)
    reference_v: np.ndarray  # (specs, tracts): mean unswapped V over the tract's PUMA
    combined_v: np.ndarray  # (specs, tracts): V of the tract's whole-PUMA table
    tract_pumas: tuple[str, ...]

    @property
    def replications(self) -> int:
        return self.v.shape[2]

    def records(self) -> Iterator[dict]:
        """Flat records sorted by (spec, rate, replication, tract)."""
        for s, spec in enumerate(self.specs):
            for ri, rate in enumerate(self.rates):
                for rep in range(self.replications):
                    for t, tract in enumerate(self.tracts):
                        v = float(self.v[s, ri, rep, t])
                        o = float(self.ones_changed[s, ri, rep, t])
                        yield {
                            "tract": tract, "rate": rate, "spec": spec, "replication": rep,
                            "v": None if math.isnan(v) else v, "defined": not math.isnan(v),
                            "ones_changed": None if math.isnan(o) else o,
                        }


def raw_replication_log(ds: Dataset, cfg: SweepConfig) -> ReplicationLog:
    prep = _prepare(ds, cfg)
    R, N, S, T = len(cfg.rates), cfg.replications, len(cfg.table_specs), len(prep.tract_codes)
    v = np.full((S, R, N, T), np.nan)
    ones = np.full((S, R, N, T), np.nan)
    stats = np.zeros((R, N, 4))

    def store(ri, reps, results):
        for rep, (vv, oo, st) in zip(reps, results):
            v[:, ri, rep, :] = vv
            ones[:, ri, rep, :] = oo
            stats[ri, rep] = st

    workers = min(cfg.workers, R * N)
    if workers <= 1:
        for ri, rate in enumerate(cfg.rates):
            store(ri, range(N), [_replicate(ds, cfg, prep, rate, i) for i in range(N)])
    else:
        per = max(1, math.ceil(N / (2 * workers)))
        tasks = [(ri, rate, list(range(lo, min(N, lo + per))))
                 for ri, rate in enumerate(cfg.rates) for lo in range(0, N, per)]
        with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(ds, cfg)) as pool:
            for ri, reps, results in pool.map(_run_chunk, tasks):
                store(ri, reps, results)

    unswapped, reference, combined = _references(ds, prep)
    tc = prep.tract_codes
    tract_puma = ds.tract_puma
    return ReplicationLog(
        rates=cfg.rates,
        tracts=tuple(ds.tract_labels[t] for t in tc),
        specs=tuple(s.name for s in cfg.table_specs),
        v=v,
        ones_changed=ones,
        swap_stats=stats,
        unswapped_v=unswapped[:, tc],
        reference_v=reference[:, tc],
        combined_v=combined[:, tc],
        tract_pumas=tuple(ds.puma_labels[tract_puma[int(t)]] for t in tc),
    )


def _references(ds: Dataset, prep: _Prepared):
    """Unswapped V per tract, its PUMA's mean tract V, and its PUMA's pooled V."""
    L = prep.n_tract_labels
    present = np.bincount(ds.household_tract, minlength=L) > 0
    tract_puma = np.full(L, -1)
    for t, p in ds.tract_puma.items():
        tract_puma[t] = p
    S = len(prep.baseline)
    unswapped = np.full((S, L), np.nan)
    reference = np.full((S, L), np.nan)
    combined = np.full((S, L), np.nan)
    for s, base in enumerate(prep.baseline):
        _, v, _, _ = chi_square_v(base)
        v = np.where(present, v, np.nan)
        unswapped[s] = v
        for p in set(tract_puma[present].tolist()):
            in_p = tract_puma == p
            vals = v[in_p & ~np.isnan(v)]
            reference[s, in_p] = _mean(vals) if len(vals) else np.nan
            _, vp, _, _ = chi_square_v(base[in_p].sum(axis=0))
            combined[s, in_p] = vp
    return unswapped, reference, combined


# -- aggregation ---------------------------------------------------------------------


def _mean(vals: np.ndarray) -> float:
    # shifted so that n identical values average to exactly that value
    x0 = float(vals[0])
    return x0 + math.fsum((vals - x0).tolist()) / len(vals)


def mean_se(vals: np.ndarray) -> tuple[float, float]:
    """Mean and standard error (sample sd / sqrt(n)); NaN se for n < 2."""
    vals = np.asarray(vals, dtype=np.float64)
    n = len(vals)
    if n == 0:
        return math.nan, math.nan
    m = _mean(vals)
    if n < 2:
        return m, math.nan
    sd = math.sqrt(math.fsum(((vals - m) ** 2).tolist()) / (n - 1))
    return m, sd / math.sqrt(n)


@dataclass
class SweepResult:
    """Aggregates with shape ``(specs, rates, tracts)`` plus reference lines.

    ``reference_v`` is the mean unswapped V over the tracts of each tract's
    PUMA (the cross-tract mean); ``combined_v`` is V of the PUMA-level table.
    ``missing`` lists ``(tract, rate, spec)`` cells with no defined V.
    """

    rates: tuple[float, ...]
    tracts: tuple[str, ...]
    specs: tuple[str, ...]
    replications: int
    mean_v: np.ndarray
    se_v: np.ndarray
    n_defined: np.ndarray
    ones_changed_mean: np.ndarray
    ones_changed_se: np.ndarray
    n_ones_defined: np.ndarray
    unswapped_v: np.ndarray
    reference_v: np.ndarray
    combined_v: np.ndarray
    tract_pumas: tuple[str, ...]
    missing: list[tuple[str, float, str]] = field(default_factory=list)

    @property
    def cross_tract_mean_v(self) -> dict[str, dict[str, float]]:
        """spec -> PUMA -> mean unswapped tract V."""
        out: dict[str, dict[str, float]] = {}
        for s, spec in enumerate(self.specs):
            out[spec] = {p: float(self.reference_v[s, t]) for t, p in enumerate(self.tract_pumas)}
        return out

    def index(self, tract: str, rate: float, spec: str | None = None) -> tuple[int, int, int]:
        s = 0 if spec is None else self.specs.index(spec)
        return s, self.rates.index(rate), self.tracts.index(tract)

    def cell(self, tract: str, rate: float, spec: str | None = None) -> dict:
        i = self.index(tract, rate, spec)
        return {
            "mean_v": float(self.mean_v[i]), "se_v": float(self.se_v[i]),
            "n_defined": int(self.n_defined[i]),
            "ones_changed_mean": float(self.ones_changed_mean[i]),
            "ones_changed_se": float(self.ones_changed_se[i]),
        }

    def long_rows(self) -> Iterator[tuple]:
        """``(tract, rate, spec, statistic, value)``; reference rows have an empty rate."""
        stats = [("mean_v", self.mean_v), ("se_v", self.se_v), ("n_defined", self.n_defined),
                 ("ones_changed_mean", self.ones_changed_mean), ("ones_changed_se", self.ones_changed_se),
                 ("n_ones_defined", self.n_ones_defined)]
        for s, spec in enumerate(self.specs):
            for t, tract in enumerate(self.tracts):
                yield tract, "", spec, "unswapped_v", _num(self.unswapped_v[s, t])
                yield tract, "", spec, "cross_tract_mean_v", _num(self.reference_v[s, t])
                yield tract, "", spec, "combined_v", _num(self.combined_v[s, t])
                for ri, rate in enumerate(self.rates):
                    for name, arr in stats:
                        yield tract, rate, spec, name, _num(arr[s, ri, t])


def _num(x):
    if isinstance(x, (np.integer, int)):
        return int(x)
    x = float(x)
    return None if math.isnan(x) else x


def aggregate(log: ReplicationLog) -> SweepResult:
    S, R, N, T = log.v.shape
    shape = (S, R, T)
    mean_v, se_v = np.full(shape, np.nan), np.full(shape, np.nan)
    om, ose = np.full(shape, np.nan), np.full(shape, np.nan)
    n_def = np.zeros(shape, dtype=np.int64)
    n_ones = np.zeros(shape, dtype=np.int64)
    missing = []
    for s in range(S):
        for ri in range(R):
            for t in range(T):
                vals = log.v[s, ri, :, t]
                vals = vals[~np.isnan(vals)]
                n_def[s, ri, t] = len(vals)
                if len(vals):
                    mean_v[s, ri, t], se_v[s, ri, t] = mean_se(vals)
                else:
                    missing.append((log.tracts[t], log.rates[ri], log.specs[s]))
                o = log.ones_changed[s, ri, :, t]
                o = o[~np.isnan(o)]
                n_ones[s, ri, t] = len(o)
                if len(o):
                    om[s, ri, t], ose[s, ri, t] = mean_se(o)
    return SweepResult(
        rates=log.rates, tracts=log.tracts, specs=log.specs, replications=N,
        mean_v=mean_v, se_v=se_v, n_defined=n_def,
        ones_changed_mean=om, ones_changed_se=ose, n_ones_defined=n_ones,
        unswapped_v=log.unswapped_v, reference_v=log.reference_v, combined_v=log.combined_v,
        tract_pumas=log.tract_pumas, missing=missing,
    )


def run_sweep(ds: Dataset, cfg: SweepConfig) -> SweepResult:
    return aggregate(raw_replication_log(ds, cfg))


# -- convergence ---------------------------------------------------------------------


@dataclass
class ConvergenceSummary:
    """Signed distance of each tract's mean V to its cross-tract mean at the lowest and highest rate."""

    spec: str
    rate_low: float
    rate_high: float
    tracts: tuple[str, ...]
    side: tuple[str, ...]  # "below", "above" or "equal" (unswapped V vs reference)
    distance_low: np.ndarray
    distance_high: np.ndarray

    @property
    def shrunk(self) -> np.ndarray:
        return np.abs(self.distance_high) < np.abs(self.distance_low)

    def _fraction(self, mask: np.ndarray) -> float:
        ok = mask & ~np.isnan(self.distance_low) & ~np.isnan(self.distance_high)
        return float(self.shrunk[ok].mean()) if ok.any() else math.nan

    @property
    def shrink_fraction(self) -> float:
        return self._fraction(np.ones(len(self.tracts), dtype=bool))

    @property
    def shrink_fraction_below(self) -> float:
        return self._fraction(np.array(self.side) == "below")

    @property
    def shrink_fraction_above(self) -> float:
        return self._fraction(np.array(self.side) == "above")


def convergence_summary(res: SweepResult, spec: str | None = None) -> ConvergenceSummary:
    if len(res.rates) < 2:
        raise InsufficientRates("convergence needs at least two rates")
    s = 0 if spec is None else res.specs.index(spec)
    ref = res.reference_v[s]
    d_low = res.mean_v[s, 0] - ref
    d_high = res.mean_v[s, -1] - ref
    side = tuple("below" if u < r else "above" if u > r else "equal"
                 for u, r in zip(res.unswapped_v[s], ref))
    return ConvergenceSummary(res.specs[s], res.rates[0], res.rates[-1], res.tracts, side, d_low, d_high)


# -- output --------------------------------------------------------------------------


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_sweep_outputs(res: SweepResult, log: ReplicationLog, out_dir: str | Path,
                        metadata: dict | None = None) -> dict[str, Path]:
    """Write the long-format result CSV, raw log CSV, swap stats CSV and a JSON bundle."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "result_csv": out / "sweep_result.csv",
        "raw_log_csv": out / "raw_log.csv",
        "swap_stats_csv": out / "swap_stats.csv",
        "result_json": out / "sweep_result.json",
    }
    with open(paths["result_csv"], "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["tract", "rate", "spec", "statistic", "value"])
        for row in res.long_rows():
            w.writerow([_fmt(x) for x in row])
    with open(paths["raw_log_csv"], "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["tract", "rate", "spec", "replication", "v", "defined", "ones_changed"])
        for r in log.records():
            w.writerow([r["tract"], repr(r["rate"]), r["spec"], r["replication"], _fmt(r["v"]),
                        int(r["defined"]), _fmt(r["ones_changed"])])
    with open(paths["swap_stats_csv"], "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["rate", "replication", "selected", "pairs", "unmatched_selected", "achieved_rate"])
        for ri, rate in enumerate(log.rates):
            for rep in range(log.replications):
                sel, pairs, un, ach = log.swap_stats[ri, rep]
                w.writerow([repr(rate), rep, int(sel), int(pairs), int(un), repr(float(ach))])
    bundle = {
        "metadata": {"dataswap_version": __version__, **(metadata or {})},
        "rates": list(res.rates),
        "tracts": list(res.tracts),
        "tract_pumas": list(res.tract_pumas),
        "specs": list(res.specs),
        "replications": res.replications,
        "cross_tract_mean_v": res.cross_tract_mean_v,
        "missing": [list(m) for m in res.missing],
        "cells": [dict(zip(("tract", "rate", "spec", "statistic", "value"), row)) for row in res.long_rows()],
    }
    with open(paths["result_json"], "w", encoding="utf-8") as f:
        json.dump(bundle, f, indent=1)
    return paths


def sweep_config_dict(cfg: SweepConfig) -> dict:
    d = asdict(cfg)
    d["table_specs"] = [s.name for s in cfg.table_specs]
    d["base_swap"]["mode"] = cfg.base_swap.mode.value
    if cfg.base_swap.risk is not None:
        d["base_swap"]["risk"]["scorer"] = cfg.base_swap.risk.scorer.value
    return d


def default_workers() -> int:
    return max(1, (os.cpu_count() or 1))
