"""Household data swapping within PUMAs.

A swap selects ``floor(n * rate)`` persons (uniformly, or the riskiest ones
when targeting), visits them in random order, and for each person whose
household is still unswapped exchanges that household's tract with a
uniformly drawn compatible household. Compatible means: same PUMA, same
size, same multiset of matching-variable values across members, not yet
swapped, and not the household itself.
"""

from __future__ import annotations

import csv
import enum
import math
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Collection, Sequence

import numpy as np

from . import risk as risk_mod
from .errors import InvalidConfig, NoOnesInTable, UnknownHousehold
from .microdata import Dataset, subset_by_tract
from .risk import RiskConfig
from .tabulate import cross_tab

# rejection draws before falling back to an explicit candidate list
_MAX_REJECTIONS = 32


class SwapMode(str, enum.Enum):
    NON_TARGETED = "non_targeted"
    TARGETED = "targeted"


@dataclass(frozen=True)
class SwapConfig:
    rate: float
    matching_variables: tuple[str, ...] = ()
    mode: SwapMode = SwapMode.NON_TARGETED
    risk: RiskConfig | None = None
    seed: int = 0
    require_distinct_tracts: bool = False

    def __post_init__(self):
        object.__setattr__(self, "mode", SwapMode(self.mode))
        object.__setattr__(self, "matching_variables", tuple(self.matching_variables))
        if not isinstance(self.rate, (int, float)) or not 0.0 <= self.rate <= 1.0:
            raise InvalidConfig(f"swap.rate must be in [0, 1], got {self.rate}")
        if self.mode is SwapMode.TARGETED and self.risk is None:
            raise InvalidConfig("targeted swapping requires a risk configuration")

    def with_rate(self, rate: float, seed: int | None = None) -> "SwapConfig":
        return replace(self, rate=rate, seed=self.seed if seed is None else seed)


@dataclass
class SwapOutcome:
    dataset: Dataset
    swapped_household_pairs: list[tuple[str, str]]
    selected: int
    unmatched_selected: int
    achieved_rate: float
    pair_index: list[tuple[int, int]] = field(default_factory=list, repr=False)


def selection_count(n: int, rate: float) -> int:
    # tolerance so that e.g. 100 * 0.29 still selects 29
    return min(n, int(math.floor(n * rate + 1e-9)))


def compatibility_groups(ds: Dataset, matching_variables: Sequence[str]) -> np.ndarray:
    """Group id per household; equal ids mean the households may be swapped."""
    key = ("groups", tuple(matching_variables))
    cached = ds._cache.get(key)
    if cached is not None:
        return cached
    sizes = ds.household_sizes
    if matching_variables:
        cols = [ds.schema.index(v) for v in matching_variables]
        _, code = np.unique(ds.values[:, cols], axis=0, return_inverse=True)
        code = code.reshape(-1)
    else:
        code = np.zeros(ds.n, dtype=np.int64)
    ph = ds.person_household
    order = np.lexsort((code, ph))
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    slot = np.arange(ds.n) - starts[ph[order]]
    mat = np.full((ds.n_households, int(sizes.max())), -1, dtype=np.int64)
    mat[ph[order], slot] = code[order]
    keys = np.column_stack([ds.household_puma, sizes, mat])
    _, gid = np.unique(keys, axis=0, return_inverse=True)
    gid = gid.reshape(-1)
    gid.setflags(write=False)
    ds._cache[key] = gid
    return gid


def compatible_candidates(
    ds: Dataset,
    household_id: str,
    matching_variables: Sequence[str] = (),
    swapped: Collection[str] = (),
    require_distinct_tracts: bool = False,
) -> list[str]:
    """Ids of households ``household_id`` could be swapped with, in dataset order."""
    index = ds.household_index()
    if household_id not in index:
        raise UnknownHousehold(household_id)
    h = index[household_id]
    gid = compatibility_groups(ds, matching_variables)
    mask = gid == gid[h]
    mask[h] = False
    if require_distinct_tracts:
        mask &= ds.household_tract != ds.household_tract[h]
    out = []
    swapped = set(swapped)
    for c in np.flatnonzero(mask):
        hid = ds.household_ids[c]
        if hid not in swapped:
            out.append(hid)
    return out


def _initial_pools(ds: Dataset, matching_variables: Sequence[str]):
    key = ("pools", tuple(matching_variables))
    if key not in ds._cache:
        gid = compatibility_groups(ds, matching_variables).tolist()
        pools: list[list[int]] = [[] for _ in range(max(gid) + 1)]
        pos = []
        for h, g in enumerate(gid):
            pos.append(len(pools[g]))
            pools[g].append(h)
        ds._cache[key] = (gid, pools, pos)
    return ds._cache[key]


def swap(ds: Dataset, cfg: SwapConfig, scores: np.ndarray | None = None) -> SwapOutcome:
    """Run one swap of ``ds`` under ``cfg``.

    ``scores`` may carry precomputed risk scores for targeted mode; they are
    computed from ``cfg.risk`` otherwise. The result depends only on
    ``(ds, cfg)``.
    """
    for v in cfg.matching_variables:
        ds.schema.index(v)
    n = ds.n
    m = selection_count(n, cfg.rate)
    if m == 0:
        return SwapOutcome(ds, [], 0, 0, 0.0)

    rng = np.random.default_rng(cfg.seed)
    if cfg.mode is SwapMode.TARGETED:
        if scores is None:
            scores = risk_mod.score(ds, cfg.risk)
        chosen = risk_mod.select_top_risk(scores, m, rng)
        chosen = rng.permutation(chosen)
    else:
        chosen = rng.permutation(n)[:m]
    draw = random.Random(int(rng.integers(2**63))).randrange

    gid_l, pools0, pos0 = _initial_pools(ds, cfg.matching_variables)
    # mutable pools of unswapped households per group, with O(1) removal
    pools = [list(p) for p in pools0]
    pos = list(pos0)

    def remove(h: int) -> None:
        pool = pools[gid_l[h]]
        last = pool.pop()
        if last != h:
            i = pos[h]
            pool[i] = last
            pos[last] = i

    tract = ds.household_tract.tolist()
    new_tract = list(tract)
    swapped = [False] * ds.n_households
    hh_of = ds.person_household
    distinct = cfg.require_distinct_tracts
    pairs: list[tuple[int, int]] = []
    unmatched = 0

    for h in hh_of[chosen].tolist():
        if swapped[h]:
            continue
        pool = pools[gid_l[h]]
        k = len(pool)
        partner = -1
        if not distinct:
            if k >= 2:
                j = draw(k - 1)
                partner = pool[j] if pool[j] != h else pool[k - 1]
        elif k >= 2:
            th = tract[h]
            for _ in range(_MAX_REJECTIONS):
                c = pool[draw(k)]
                if tract[c] != th:
                    partner = c
                    break
            else:
                cands = [c for c in pool if tract[c] != th]
                if cands:
                    partner = cands[draw(len(cands))]
        if partner < 0:
            unmatched += 1
            continue
        new_tract[h], new_tract[partner] = tract[partner], tract[h]
        swapped[h] = swapped[partner] = True
        remove(h)
        remove(partner)
        pairs.append((h, partner))

    sizes = ds.household_sizes
    moved = int(sizes[np.asarray(pairs, dtype=np.int64).reshape(-1)].sum())
    hids = ds.household_ids
    return SwapOutcome(
        dataset=ds.with_tracts(np.asarray(new_tract, dtype=np.int64)),
        swapped_household_pairs=[(hids[a], hids[b]) for a, b in pairs],
        selected=m,
        unmatched_selected=unmatched,
        achieved_rate=moved / n,
        pair_index=pairs,
    )


def ones_changed_proportion(before: Dataset, after: Dataset, tract: str, row_var: str, col_var: str) -> float:
    """Fraction of the tract's 1-cells whose count differs after swapping."""
    t0 = cross_tab(subset_by_tract(before, tract), row_var, col_var).counts
    t1 = cross_tab(subset_by_tract(after, tract), row_var, col_var).counts if _has_tract(after, tract) \
        else np.zeros_like(t0)
    ones = t0 == 1
    if not ones.any():
        raise NoOnesInTable(f"tract {tract!r} has no cells equal to 1 in {row_var} x {col_var}")
    return float((t1[ones] != 1).sum() / ones.sum())


def _has_tract(ds: Dataset, tract: str) -> bool:
    return tract in ds.tract_labels and bool(np.any(ds.household_tract == ds.tract_labels.index(tract)))


def ones_changed_by_group(before: np.ndarray, after: np.ndarray) -> np.ndarray:
    """Vectorised ones-changed fraction over stacked ``(g, k, r)`` tables; NaN where no ones."""
    ones = before == 1
    n_ones = ones.sum(axis=(-2, -1))
    changed = (ones & (after != 1)).sum(axis=(-2, -1))
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(n_ones > 0, changed / np.maximum(n_ones, 1), np.nan)


def assign_synthetic_tracts(ds: Dataset, tracts_per_puma: int, seed: int = 0) -> Dataset:
    """Randomly partition each PUMA's households into ``tracts_per_puma`` tracts.

    Stands in for real tract geography when only PUMA is known. Tract labels
    are ``<puma>-<nn>``; tract sizes differ by at most one household.
    """
    if tracts_per_puma < 1:
        raise InvalidConfig("tracts_per_puma must be >= 1")
    rng = np.random.default_rng(seed)
    width = len(str(tracts_per_puma))
    labels: list[str] = []
    new = np.empty(ds.n_households, dtype=np.int64)
    for p in sorted(set(ds.household_puma.tolist())):
        hh = rng.permutation(np.flatnonzero(ds.household_puma == p))
        for i, chunk in enumerate(np.array_split(hh, tracts_per_puma)):
            new[chunk] = len(labels)
            labels.append(f"{ds.puma_labels[p]}-{i + 1:0{width}d}")
    out = ds.with_tracts(new)
    out.tract_labels = tuple(labels)
    return out


def write_pairs_csv(outcome: SwapOutcome, before: Dataset, path: str | Path) -> None:
    """Audit trail: each swapped pair with both households' original tracts."""
    idx = before.household_index()
    tl = before.tract_labels
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["household_a", "household_b", "tract_a_before", "tract_b_before", "size"])
        for a, b in outcome.swapped_household_pairs:
            ia, ib = idx[a], idx[b]
            w.writerow([a, b, tl[before.household_tract[ia]], tl[before.household_tract[ib]],
                        int(before.household_sizes[ia])])
