"""Synthetic microdata.

``generate_dummy`` builds a single-PUMA dataset in which income depends on
age through a tract-specific slope, so the Poor x Young association differs
from tract to tract. ``generate_pums_like`` builds a multi-PUMA dataset of
multi-person households with sparse age x marital tables, for exercising
matching and targeting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfig, MissingVariable
from .microdata import AttributeSchema, Dataset, Variable
from .tabulate import chi_square_v, cross_tab_by_group

NO_YES = ("no", "yes")


@dataclass(frozen=True)
class DummyConfig:
    """Parameters of the dummy generator.

    The slope, age and noise defaults were calibrated so that a little over
    half of the tracts have a weaker Poor x Young association than the
    pooled table.
    """

    n_tracts: int = 50
    persons_per_tract: int = 200
    slope_low: float = 2.0
    slope_high: float = 5.0
    age_min: int = 0
    age_max: int = 90
    noise_mean: float = 5.0
    poor_quantile: float = 0.235
    young_quantile: float = 0.327
    seed: int = 2

    def validate(self) -> None:
        if self.n_tracts < 1 or self.persons_per_tract < 1:
            raise InvalidConfig("n_tracts and persons_per_tract must be >= 1")
        if not 0 < self.poor_quantile < 1 or not 0 < self.young_quantile < 1:
            raise InvalidConfig("poor_quantile and young_quantile must be in (0, 1)")
        if not self.noise_mean > 0:
            raise InvalidConfig("noise_mean must be > 0")
        if not self.slope_low < self.slope_high:
            raise InvalidConfig("slope_low must be < slope_high")
        if not self.age_min < self.age_max:
            raise InvalidConfig("age_min must be < age_max")


def below_quantile(x: np.ndarray, q: float) -> np.ndarray:
    """``x < c`` for the cut ``c`` whose below-fraction is closest to ``q``.

    Cuts are restricted to observed values (plus "everything"), so tied
    values always land on the same side.
    """
    s = np.sort(x)
    cuts = np.unique(s)
    frac = np.searchsorted(s, cuts, side="left") / len(s)
    cuts = np.append(cuts, s[-1] + 1)
    frac = np.append(frac, 1.0)
    c = cuts[int(np.argmin(np.abs(frac - q)))]
    return x < c


def generate_dummy(cfg: DummyConfig = DummyConfig()) -> Dataset:
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    T, per = cfg.n_tracts, cfg.persons_per_tract
    n = T * per
    slopes = rng.uniform(cfg.slope_low, cfg.slope_high, size=T)
    tract = np.repeat(np.arange(T), per)
    age = rng.integers(cfg.age_min, cfg.age_max + 1, size=n)
    income = np.rint(slopes[tract] * age).astype(np.int64) + rng.poisson(cfg.noise_mean, size=n)
    poor = below_quantile(income, cfg.poor_quantile).astype(np.int32)
    young = below_quantile(age, cfg.young_quantile).astype(np.int32)

    inc_lo, inc_hi = int(income.min()), int(income.max())
    schema = AttributeSchema((
        Variable("Age", tuple(str(a) for a in range(cfg.age_min, cfg.age_max + 1)), ordered=True),
        Variable("Income", tuple(str(v) for v in range(inc_lo, inc_hi + 1)), ordered=True),
        Variable("Poor", NO_YES, ordered=True),
        Variable("Young", NO_YES, ordered=True),
    ))
    values = np.column_stack([age - cfg.age_min, income - inc_lo, poor, young])
    w = len(str(T))
    return Dataset(
        schema,
        person_ids=[str(i + 1) for i in range(n)],
        person_household=np.arange(n),
        values=values,
        household_ids=[f"H{i + 1:06d}" for i in range(n)],
        household_puma=np.zeros(n, dtype=np.int64),
        household_tract=tract,
        puma_labels=("P01",),
        tract_labels=[f"T{t + 1:0{w}d}" for t in range(T)],
    )


def tract_and_combined_v(ds: Dataset, row_var: str = "Poor", col_var: str = "Young"
                         ) -> tuple[np.ndarray, float]:
    """Per-tract V (NaN if undefined, indexed by tract code) and the pooled-table V."""
    for v in (row_var, col_var):
        if v not in ds.schema:
            raise MissingVariable(v)
    k = len(ds.schema.variable(row_var).levels)
    r = len(ds.schema.variable(col_var).levels)
    rows, cols = ds.column(row_var), ds.column(col_var)
    tables = cross_tab_by_group(rows, cols, ds.person_tract, k, r, len(ds.tract_labels))
    _, v, _, _ = chi_square_v(tables)
    _, v_all, _, _ = chi_square_v(tables.sum(axis=0))
    present = np.bincount(ds.household_tract, minlength=len(ds.tract_labels)) > 0
    return np.where(present, v, np.nan), float(v_all)


def combined_vs_tract_v_share(ds: Dataset, row_var: str = "Poor", col_var: str = "Young") -> float:
    """Share of tracts whose V is strictly below the V of the pooled table.

    Tracts with undefined V count in the denominator but never as below.
    """
    v, v_all = tract_and_combined_v(ds, row_var, col_var)
    present = np.bincount(ds.household_tract, minlength=len(ds.tract_labels)) > 0
    below = np.nan_to_num(v, nan=np.inf) < v_all
    return float(below[present].sum() / present.sum())


AGE_LEVELS = ("<=16",) + tuple(str(a) for a in range(17, 94)) + (">=94",)
MARITAL_LEVELS = ("Married", "Widowed", "Divorced", "Separated", "Never married")
SEX_LEVELS = ("Male", "Female")
RACE_LEVELS = ("White", "Black", "Asian", "Other", "Two or more")

# marital-status probabilities (order of MARITAL_LEVELS) by adult age band
_MARITAL_BY_AGE = [
    (24, (0.08, 0.00, 0.01, 0.01, 0.90)),
    (34, (0.45, 0.00, 0.06, 0.03, 0.46)),
    (64, (0.58, 0.03, 0.14, 0.03, 0.22)),
    (79, (0.55, 0.22, 0.12, 0.02, 0.09)),
    (200, (0.30, 0.58, 0.06, 0.01, 0.05)),
]


@dataclass(frozen=True)
class PumsLikeConfig:
    """Multi-PUMA household microdata with a PUMS-style variable set.

    Household sizes follow ``size_probs`` (sizes 1, 2, ...). Tracts are
    assigned at random within each PUMA, as when only PUMA geography is
    published.
    """

    n_pumas: int = 2
    households_per_puma: int = 1200
    tracts_per_puma: int = 8
    size_probs: tuple[float, ...] = (0.28, 0.34, 0.16, 0.13, 0.09)
    race_probs: tuple[float, ...] = (0.80, 0.13, 0.03, 0.02, 0.02)
    seed: int = 2011

    def validate(self) -> None:
        if self.n_pumas < 1 or self.households_per_puma < 1 or self.tracts_per_puma < 1:
            raise InvalidConfig("n_pumas, households_per_puma and tracts_per_puma must be >= 1")
        for name in ("size_probs", "race_probs"):
            p = np.asarray(getattr(self, name))
            if np.any(p < 0) or not np.isclose(p.sum(), 1.0):
                raise InvalidConfig(f"{name} must be a probability vector")
        if len(self.race_probs) != len(RACE_LEVELS):
            raise InvalidConfig(f"race_probs needs {len(RACE_LEVELS)} entries")


def _adult_age(rng: np.random.Generator, size: int) -> np.ndarray:
    # roughly flat 18-65 with a thinning tail to 100
    young = rng.integers(18, 66, size=size)
    old = 65 + np.floor(rng.exponential(9.0, size=size)).astype(np.int64)
    return np.where(rng.random(size) < 0.78, young, np.minimum(old, 100))


def _marital(rng: np.random.Generator, age: int) -> int:
    if age < 17:
        return MARITAL_LEVELS.index("Never married")
    for upper, probs in _MARITAL_BY_AGE:
        if age <= upper:
            return int(rng.choice(len(MARITAL_LEVELS), p=probs))
    raise AssertionError("unreachable")


def generate_pums_like(cfg: PumsLikeConfig = PumsLikeConfig()) -> Dataset:
    from .swap import assign_synthetic_tracts

    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    H = cfg.n_pumas * cfg.households_per_puma
    sizes = rng.choice(np.arange(1, len(cfg.size_probs) + 1), size=H, p=cfg.size_probs)
    heads = _adult_age(rng, H)
    married = MARITAL_LEVELS.index("Married")
    rows, person_hh = [], []
    for h in range(H):
        race = int(rng.choice(len(RACE_LEVELS), p=cfg.race_probs))
        head_age = int(heads[h])
        head_sex = int(rng.integers(2))
        head_mar = _marital(rng, head_age)
        members = [(head_age, head_sex, head_mar)]
        if sizes[h] >= 2:
            if head_mar == married and rng.random() < 0.9:
                age = int(np.clip(head_age + rng.normal(0, 4), 18, 100))
                members.append((age, 1 - head_sex, married))
            else:
                age = int(_adult_age(rng, 1)[0])
                members.append((age, int(rng.integers(2)), _marital(rng, age)))
        for _ in range(sizes[h] - len(members)):
            age = int(rng.integers(0, 23))
            members.append((age, int(rng.integers(2)), _marital(rng, age)))
        for age, sex, mar in members:
            # a few mixed-race households
            r = race if rng.random() > 0.05 else int(rng.choice(len(RACE_LEVELS), p=cfg.race_probs))
            rows.append((min(max(age, 16), 94) - 16, sex, mar, r))
            person_hh.append(h)
    n = len(rows)
    schema = AttributeSchema((
        Variable("age", AGE_LEVELS, ordered=True),
        Variable("sex", SEX_LEVELS),
        Variable("marital", MARITAL_LEVELS),
        Variable("race", RACE_LEVELS),
    ), person_column="person_id")
    wp = len(str(cfg.n_pumas))
    ds = Dataset(
        schema,
        person_ids=[f"P{i + 1:07d}" for i in range(n)],
        person_household=person_hh,
        values=np.asarray(rows, dtype=np.int32),
        household_ids=[f"H{h + 1:06d}" for h in range(H)],
        household_puma=np.repeat(np.arange(cfg.n_pumas), cfg.households_per_puma),
        household_tract=np.repeat(np.arange(cfg.n_pumas), cfg.households_per_puma),
        puma_labels=[f"PUMA{p + 1:0{wp}d}" for p in range(cfg.n_pumas)],
        tract_labels=[f"PUMA{p + 1:0{wp}d}" for p in range(cfg.n_pumas)],
    )
    return assign_synthetic_tracts(ds, cfg.tracts_per_puma, seed=cfg.seed + 1)
