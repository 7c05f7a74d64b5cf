import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dataswap.errors import InvalidBoundaries, SameVariable, UnorderedVariable
from dataswap.microdata import AttributeSchema, Variable, subset_by_tract
from dataswap.synthgen import DummyConfig, PumsLikeConfig, generate_dummy, generate_pums_like
from dataswap.tabulate import bin_variable, chi_square_v, cramers_v, cross_tab, write_table_csv

from conftest import make_dataset, random_dataset


def chi_square_oracle(counts) -> tuple[Fraction, int, int]:
    """Exact chi-square after dropping zero-margin rows/columns, by explicit loops."""
    rows = [r for r in counts if sum(r) > 0]
    cols = [j for j in range(len(counts[0])) if sum(r[j] for r in rows) > 0]
    table = [[r[j] for j in cols] for r in rows]
    n = sum(map(sum, table))
    chi = Fraction(0)
    for i, r in enumerate(table):
        for j, o in enumerate(r):
            e = Fraction(sum(r) * sum(row[j] for row in table), n)
            chi += (o - e) ** 2 / e
    return chi, len(rows), len(cols)


def phi_oracle(a, b, c, d) -> float:
    return abs(a * d - b * c) / math.sqrt((a + b) * (c + d) * (a + c) * (b + d))


def test_perfect_association():
    r = cramers_v([[2, 0], [0, 2]])
    assert r.chi_square == 4.0
    assert r.v == 1.0


def test_exact_independence():
    r = cramers_v([[1, 1], [1, 1]])
    assert r.chi_square == 0.0
    assert r.v == 0.0


def test_hand_computed_two_by_two():
    # 100 * (10*40 - 20*30)^2 / (30*70*40*60) = 50/63
    r = cramers_v([[10, 20], [30, 40]])
    assert r.chi_square == pytest.approx(50 / 63, abs=1e-12)
    assert r.v == pytest.approx(0.0890870806374748, abs=1e-9)


def test_degenerate_margin_is_undefined():
    r = cramers_v([[5, 0], [7, 0]])
    assert r.v is None and not r.defined
    assert (r.effective_k, r.effective_r) == (2, 1)
    assert cramers_v(np.zeros((3, 3), dtype=int)).v is None


def test_zero_margins_are_dropped():
    t = [[3, 0, 1], [0, 0, 0], [1, 0, 4]]
    r = cramers_v(t)
    chi, k, rr = chi_square_oracle(t)
    assert (r.effective_k, r.effective_r) == (k, rr) == (2, 2)
    assert r.chi_square == pytest.approx(float(chi), rel=1e-12)


tables = st.integers(1, 5).flatmap(
    lambda k: st.integers(1, 5).flatmap(lambda r: arrays(np.int64, (k, r), elements=st.integers(0, 30))))


@settings(max_examples=300, deadline=None)
@given(tables)
def test_matches_exact_chi_square_oracle(t):
    r = cramers_v(t)
    if t.sum() == 0:
        assert r.v is None
        return
    chi, k, rr = chi_square_oracle(t.tolist())
    assert r.chi_square == pytest.approx(float(chi), rel=1e-9, abs=1e-9)
    if min(k, rr) <= 1:
        assert r.v is None
    else:
        expected = math.sqrt(float(chi) / int(t.sum()) / (min(k, rr) - 1))
        assert r.v == pytest.approx(expected, rel=1e-9, abs=1e-12)
        assert 0.0 <= r.v <= 1.0


@settings(max_examples=200, deadline=None)
@given(tables, st.randoms(use_true_random=False))
def test_v_invariant_to_permutation_and_transpose(t, rnd):
    base = cramers_v(t).v
    rows = list(range(t.shape[0]))
    cols = list(range(t.shape[1]))
    rnd.shuffle(rows)
    rnd.shuffle(cols)
    for other in (t[rows][:, cols], t.T):
        v = cramers_v(other).v
        if base is None:
            assert v is None
        else:
            assert v == pytest.approx(base, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(tables, st.integers(2, 7))
def test_v_invariant_to_scaling(t, c):
    base = cramers_v(t).v
    v = cramers_v(t * c).v
    assert (base is None) == (v is None)
    if base is not None:
        assert v == pytest.approx(base, abs=1e-12)


@settings(max_examples=300, deadline=None)
@given(arrays(np.int64, (2, 2), elements=st.integers(1, 50)))
def test_two_by_two_equals_abs_phi(t):
    (a, b), (c, d) = t.tolist()
    assert cramers_v(t).v == pytest.approx(phi_oracle(a, b, c, d), abs=1e-12)


def test_batched_matches_single():
    rng = np.random.default_rng(0)
    stack = rng.integers(0, 4, size=(50, 3, 4))
    stack[3] = 0
    stack[4, :, 1:] = 0
    chi, v, ek, er = chi_square_v(stack)
    for i, t in enumerate(stack):
        r = cramers_v(t)
        assert chi[i] == pytest.approx(r.chi_square)
        assert (ek[i], er[i]) == (r.effective_k, r.effective_r)
        if r.v is None:
            assert np.isnan(v[i])
        else:
            assert v[i] == pytest.approx(r.v)


def test_cross_tab_direct_count():
    schema = AttributeSchema((Variable("r", ("a", "b")), Variable("c", ("x", "y"))))
    ds = make_dataset(schema, [("h1", "P", "T", "a", "x"), ("h2", "P", "T", "a", "x"),
                               ("h3", "P", "T", "b", "y"), ("h4", "P", "T", "b", "y")])
    t = cross_tab(ds, "r", "c")
    assert t.counts.tolist() == [[2, 0], [0, 2]]
    assert t.n == 4
    with pytest.raises(SameVariable):
        cross_tab(ds, "r", "r")


def test_cross_tab_of_empty_view_is_all_zero():
    ds = generate_dummy(DummyConfig(n_tracts=2, persons_per_tract=10))
    none = type(ds)(ds.schema, [], [], np.zeros((0, len(ds.schema.names)), dtype=np.int64), [], [], [],
                    ds.puma_labels, ds.tract_labels, validate=False)
    t = cross_tab(none, "Poor", "Young")
    assert t.counts.tolist() == [[0, 0], [0, 0]] and t.n == 0


def test_dummy_tract_poor_by_young():
    ds = generate_dummy(DummyConfig())
    t = cross_tab(subset_by_tract(ds, "T01"), "Poor", "Young")
    assert t.shape == (2, 2) and t.n == 200


@pytest.mark.parametrize("seed", range(5))
def test_puma_table_is_sum_of_tract_tables(seed):
    ds = random_dataset(np.random.default_rng(seed))
    for puma in ds.pumas():
        p = ds.puma_labels.index(puma)
        keep = ds.person_puma == p
        whole = np.bincount(ds.column("v0")[keep] * 10 + ds.column("v1")[keep], minlength=100)
        total = np.zeros(100, dtype=int)
        for t in ds.tracts():
            if ds.tract_puma[ds.tract_labels.index(t)] == p:
                sub = subset_by_tract(ds, t)
                c = cross_tab(sub, "v0", "v1").counts
                padded = np.zeros((10, 10), dtype=int)
                padded[:c.shape[0], :c.shape[1]] = c
                total += padded.reshape(-1)
        assert np.array_equal(whole, total)


def test_bin_age_into_two_levels_gives_ten_cells():
    ds = generate_pums_like(PumsLikeConfig(n_pumas=1, households_per_puma=200, tracts_per_puma=2))
    binned = bin_variable(ds, "age", ["40"])
    assert binned.schema.variable("age").levels == ("<=16-39", "40->=94")
    t = cross_tab(binned, "marital", "age")
    assert t.counts.size == 10
    assert t.n == cross_tab(ds, "marital", "age").n == ds.n


def test_bin_with_empty_side():
    schema = AttributeSchema((Variable("age", ("1", "2", "3"), ordered=True), Variable("s", ("m", "f"))))
    ds = make_dataset(schema, [("h1", "P", "T", "1", "m"), ("h2", "P", "T", "2", "f")])
    binned = bin_variable(ds, "age", ["3"])
    t = cross_tab(binned, "age", "s")
    assert t.counts.tolist() == [[1, 1], [0, 0]]
    assert cramers_v(t).effective_k == 1


def test_bin_errors():
    ds = generate_pums_like(PumsLikeConfig(n_pumas=1, households_per_puma=20, tracts_per_puma=2))
    with pytest.raises(UnorderedVariable):
        bin_variable(ds, "marital", ["Widowed"])
    for bad in (["<=16"], ["50", "40"], ["200"], []):
        with pytest.raises(InvalidBoundaries):
            bin_variable(ds, "age", bad)


def test_write_table_csv(tmp_path):
    t = cross_tab(generate_dummy(DummyConfig(n_tracts=1, persons_per_tract=50)), "Poor", "Young")
    write_table_csv(t, tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "Poor\\Young,no,yes"
    assert sum(int(x) for line in lines[1:] for x in line.split(",")[1:]) == 50
