from __future__ import annotations

import collections

import numpy as np
import pytest

from dataswap.microdata import AttributeSchema, Dataset, Variable
from dataswap.risk import RiskConfig
from dataswap.swap import SwapConfig, selection_count


def make_dataset(schema: AttributeSchema, rows: list[tuple]) -> Dataset:
    """Rows are ``(household_id, puma, tract, *labels)``, one per person."""
    dict_rows = []
    for i, (hid, puma, tract, *labels) in enumerate(rows, start=1):
        d = {schema.household_column: hid, schema.puma_column: puma, schema.tract_column: tract}
        if schema.person_column:
            d[schema.person_column] = f"p{i}"
        d.update(zip(schema.names, labels))
        dict_rows.append(d)
    return Dataset.from_rows(schema, dict_rows)


def random_dataset(rng: np.random.Generator, max_households: int = 40) -> Dataset:
    """Small random household dataset: 1-2 PUMAs, 2-4 tracts each, sizes 1-3."""
    n_vars = int(rng.integers(2, 4))
    schema = AttributeSchema(tuple(
        Variable(f"v{j}", tuple(f"L{k}" for k in range(int(rng.integers(2, 5)))), ordered=True)
        for j in range(n_vars)
    ))
    n_pumas = int(rng.integers(1, 3))
    H = int(rng.integers(4, max_households + 1))
    rows = []
    for h in range(H):
        p = int(rng.integers(n_pumas))
        t = int(rng.integers(2 + p % 2 * 2))
        size = int(rng.choice([1, 1, 2, 3]))
        for _ in range(size):
            labels = [schema.variables[j].levels[int(rng.integers(len(schema.variables[j].levels)))]
                      for j in range(n_vars)]
            rows.append((f"h{h}", f"P{p}", f"P{p}T{t}", *labels))
    return make_dataset(schema, rows)


def random_config(rng: np.random.Generator, names) -> SwapConfig:
    k = int(rng.integers(0, len(names) + 1))
    matching = tuple(rng.choice(names, size=k, replace=False).tolist())
    targeted = bool(rng.integers(2))
    risk = RiskConfig(tuple(rng.choice(names, size=int(rng.integers(1, len(names) + 1)), replace=False).tolist()))
    return SwapConfig(
        rate=float(rng.choice([0.0, 0.1, 0.3, 0.5, 1.0, rng.random()])),
        matching_variables=matching,
        mode="targeted" if targeted else "non_targeted",
        risk=risk if targeted else None,
        seed=int(rng.integers(2**32)),
        require_distinct_tracts=bool(rng.integers(2)),
    )


def geo_counts(ds, geo: np.ndarray, cols) -> collections.Counter:
    return collections.Counter(zip(geo.tolist(), *(ds.values[:, c].tolist() for c in cols)))


def household_profile(ds, h, cols):
    members = np.flatnonzero(ds.person_household == h)
    return sorted(tuple(ds.values[p, cols].tolist()) for p in members)


def check_invariants(ds, cfg, out):
    after = out.dataset
    names = ds.schema.names
    all_cols = list(range(len(names)))
    s_cols = [ds.schema.index(v) for v in cfg.matching_variables]
    # (a) every PUMA-level table, via the full joint distribution per PUMA
    assert geo_counts(ds, ds.person_puma, all_cols) == geo_counts(after, after.person_puma, all_cols)
    # (b) tract-level joint distribution over the matching variables
    assert geo_counts(ds, ds.person_tract, s_cols) == geo_counts(after, after.person_tract, s_cols)
    # (c) attributes never move between persons
    assert np.array_equal(ds.values, after.values)
    assert np.array_equal(ds.person_household, after.person_household)
    # pairs: disjoint, compatible, tracts exchanged
    seen = set()
    for a, b in out.pair_index:
        assert a != b and a not in seen and b not in seen
        seen |= {a, b}
        assert ds.household_puma[a] == ds.household_puma[b]
        assert ds.household_sizes[a] == ds.household_sizes[b]
        assert household_profile(ds, a, s_cols) == household_profile(ds, b, s_cols)
        assert after.household_tract[a] == ds.household_tract[b]
        assert after.household_tract[b] == ds.household_tract[a]
        if cfg.require_distinct_tracts:
            assert ds.household_tract[a] != ds.household_tract[b]
    untouched = [h for h in range(ds.n_households) if h not in seen]
    assert np.array_equal(ds.household_tract[untouched], after.household_tract[untouched])
    assert out.selected == selection_count(ds.n, cfg.rate)
    moved = sum(int(ds.household_sizes[h]) for h in seen)
    assert out.achieved_rate == moved / ds.n


@pytest.fixture
def marital_sex_schema() -> AttributeSchema:
    return AttributeSchema((
        Variable("marital", ("married", "single")),
        Variable("sex", ("male", "female")),
    ))


@pytest.fixture
def fifty_people(marital_sex_schema) -> Dataset:
    """50 single-person households: 10 married, 25 male, overlapping on 5."""
    rows = []
    for i in range(50):
        marital = "married" if i < 10 else "single"
        sex = "male" if 5 <= i < 30 else "female"
        rows.append((f"h{i}", "P1", f"T{i % 5}", marital, sex))
    return make_dataset(marital_sex_schema, rows)
