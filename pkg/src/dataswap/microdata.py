"""Categorical microdata with households and PUMA > tract geography.

Attribute values are stored as dense integer level indices in an ``(n, p)``
array; the schema holds the label text. Geography lives on households, so a
swap only has to rewrite one integer per household.
"""

from __future__ import annotations

import configparser
import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import (
    EmptyDataset,
    HouseholdGeographyConflict,
    InvalidConfig,
    MissingColumn,
    MissingVariable,
    TractSpansPumas,
    UnknownLevel,
    UnknownTract,
)


@dataclass(frozen=True)
class Variable:
    name: str
    levels: tuple[str, ...]
    ordered: bool = False

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(str(lv) for lv in self.levels))
        if len(self.levels) < 2:
            raise InvalidConfig(f"variable {self.name!r} needs at least 2 levels")
        if len(set(self.levels)) != len(self.levels):
            raise InvalidConfig(f"variable {self.name!r} has duplicate levels")

    def code(self, label: str) -> int:
        return self.levels.index(label)


@dataclass(frozen=True)
class AttributeSchema:
    """Ordered categorical variables plus the names of the geography columns.

    ``person_column`` is optional. When it is ``None`` person ids are the
    1-based data row numbers and are not written back out.
    """

    variables: tuple[Variable, ...]
    household_column: str = "household_id"
    puma_column: str = "puma"
    tract_column: str = "tract"
    person_column: str | None = None
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise InvalidConfig("variable names must be unique")
        geo = [self.household_column, self.puma_column, self.tract_column]
        if self.person_column is not None:
            geo.append(self.person_column)
        if len(set(geo)) != len(geo):
            raise InvalidConfig("geography/id columns must be distinct")
        clash = set(geo) & set(names)
        if clash:
            raise InvalidConfig(f"columns used both as geography and attribute: {sorted(clash)}")
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(names)})

    @property
    def names(self) -> list[str]:
        return [v.name for v in self.variables]

    def __len__(self) -> int:
        return len(self.variables)

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise MissingVariable(name) from None

    def variable(self, name: str) -> Variable:
        return self.variables[self.index(name)]

    def replace(self, name: str, new: Variable) -> "AttributeSchema":
        i = self.index(name)
        vs = list(self.variables)
        vs[i] = new
        return AttributeSchema(
            tuple(vs),
            household_column=self.household_column,
            puma_column=self.puma_column,
            tract_column=self.tract_column,
            person_column=self.person_column,
        )

    def columns(self) -> list[str]:
        """CSV column order used when writing."""
        cols = [] if self.person_column is None else [self.person_column]
        return cols + [self.household_column, self.puma_column, self.tract_column] + self.names


@dataclass(frozen=True)
class PersonRecord:
    person_id: str
    household_id: str
    values: tuple[int, ...]


@dataclass(frozen=True)
class Household:
    household_id: str
    puma: str
    tract: str
    member_ids: tuple[str, ...]

    @property
    def size(self) -> int:
        return len(self.member_ids)


def _frozen(a, dtype) -> np.ndarray:
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


class Dataset:
    """Immutable microdata.

    Persons reference households by integer index; households carry PUMA and
    tract codes into ``puma_labels`` / ``tract_labels``. ``with_tracts`` is
    the only way to derive a dataset with different geography.
    """

    def __init__(
        self,
        schema: AttributeSchema,
        person_ids: Sequence[str],
        person_household: Sequence[int],
        values: np.ndarray,
        household_ids: Sequence[str],
        household_puma: Sequence[int],
        household_tract: Sequence[int],
        puma_labels: Sequence[str],
        tract_labels: Sequence[str],
        *,
        validate: bool = True,
    ):
        self.schema = schema
        self.person_ids = _frozen(person_ids, object)
        self.person_household = _frozen(person_household, np.int64)
        self.values = _frozen(values, np.int32).reshape(len(self.person_ids), len(schema))
        self.household_ids = _frozen(household_ids, object)
        self.household_puma = _frozen(household_puma, np.int64)
        self.household_tract = _frozen(household_tract, np.int64)
        self.puma_labels = tuple(puma_labels)
        self.tract_labels = tuple(tract_labels)
        self._cache: dict = {}
        if validate:
            self._validate()

    def _validate(self) -> None:
        n, H = self.n, self.n_households
        if n == 0:
            raise EmptyDataset("dataset has no persons")
        if len(set(self.person_ids.tolist())) != n:
            raise InvalidConfig("person ids must be unique")
        if len(set(self.household_ids.tolist())) != H:
            raise InvalidConfig("household ids must be unique")
        if self.person_household.min() < 0 or self.person_household.max() >= H:
            raise InvalidConfig("person household index out of range")
        if np.any(self.household_sizes == 0):
            raise InvalidConfig("every household needs at least one member")
        for j, var in enumerate(self.schema.variables):
            col = self.values[:, j]
            if col.min() < 0 or col.max() >= len(var.levels):
                raise InvalidConfig(f"level index out of range for {var.name!r}")
        self.tract_puma  # raises TractSpansPumas

    # -- sizes and derived arrays -------------------------------------------------

    @property
    def n(self) -> int:
        return len(self.person_ids)

    @property
    def n_households(self) -> int:
        return len(self.household_ids)

    @property
    def household_sizes(self) -> np.ndarray:
        if "sizes" not in self._cache:
            self._cache["sizes"] = np.bincount(self.person_household, minlength=self.n_households)
        return self._cache["sizes"]

    @property
    def person_tract(self) -> np.ndarray:
        return self.household_tract[self.person_household]

    @property
    def person_puma(self) -> np.ndarray:
        return self.household_puma[self.person_household]

    @property
    def tract_puma(self) -> dict[int, int]:
        """Tract code -> PUMA code for every tract in use."""
        if "tract_puma" not in self._cache:
            pairs = np.unique(np.stack([self.household_tract, self.household_puma], axis=1), axis=0)
            tracts, counts = np.unique(pairs[:, 0], return_counts=True)
            if np.any(counts > 1):
                raise TractSpansPumas(self.tract_labels[int(tracts[counts > 1][0])])
            self._cache["tract_puma"] = {int(t): int(p) for t, p in pairs}
        return self._cache["tract_puma"]

    def tracts(self) -> list[str]:
        """Labels of tracts that contain at least one household, in code order."""
        return [self.tract_labels[t] for t in sorted(set(self.household_tract.tolist()))]

    def pumas(self) -> list[str]:
        return [self.puma_labels[p] for p in sorted(set(self.household_puma.tolist()))]

    def tract_code(self, label: str) -> int:
        try:
            code = self.tract_labels.index(label)
        except ValueError:
            raise UnknownTract(label) from None
        if not np.any(self.household_tract == code):
            raise UnknownTract(label)
        return code

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.schema.index(name)]

    def household_index(self) -> dict[str, int]:
        if "hh_index" not in self._cache:
            self._cache["hh_index"] = {h: i for i, h in enumerate(self.household_ids.tolist())}
        return self._cache["hh_index"]

    def members(self, h: int) -> np.ndarray:
        """Person indices of household ``h`` in person order."""
        if "members" not in self._cache:
            order = np.argsort(self.person_household, kind="stable")
            starts = np.concatenate([[0], np.cumsum(self.household_sizes)])
            self._cache["members"] = (order, starts)
        order, starts = self._cache["members"]
        return order[starts[h]:starts[h + 1]]

    # -- record views -------------------------------------------------------------

    def persons(self) -> Iterator[PersonRecord]:
        hids = self.household_ids
        for pid, h, vals in zip(self.person_ids, self.person_household, self.values):
            yield PersonRecord(pid, hids[h], tuple(int(v) for v in vals))

    def households(self) -> list[Household]:
        out = []
        for h, hid in enumerate(self.household_ids):
            out.append(Household(
                hid,
                self.puma_labels[self.household_puma[h]],
                self.tract_labels[self.household_tract[h]],
                tuple(self.person_ids[self.members(h)]),
            ))
        return out

    def labelled_rows(self) -> Iterator[dict[str, str]]:
        """One dict per person keyed by schema column names, labels not codes."""
        s = self.schema
        levels = [v.levels for v in s.variables]
        for i in range(self.n):
            h = self.person_household[i]
            row = {}
            if s.person_column is not None:
                row[s.person_column] = self.person_ids[i]
            row[s.household_column] = self.household_ids[h]
            row[s.puma_column] = self.puma_labels[self.household_puma[h]]
            row[s.tract_column] = self.tract_labels[self.household_tract[h]]
            for name, lv, code in zip(s.names, levels, self.values[i]):
                row[name] = lv[code]
            yield row

    # -- derivation ---------------------------------------------------------------

    def with_tracts(self, household_tract: np.ndarray) -> "Dataset":
        """Same persons and households with new household tract codes."""
        out = Dataset.__new__(Dataset)
        out.__dict__.update(self.__dict__)
        out.household_tract = _frozen(household_tract, np.int64)
        # attribute-only caches stay valid; geography-dependent ones do not
        out._cache = {k: v for k, v in self._cache.items()
                      if k in ("sizes", "members", "hh_index") or isinstance(k, tuple)}
        return out

    def with_values(self, schema: AttributeSchema, values: np.ndarray) -> "Dataset":
        out = Dataset.__new__(Dataset)
        out.__dict__.update(self.__dict__)
        out.schema = schema
        out.values = _frozen(values, np.int32)
        out._cache = {k: v for k, v in self._cache.items() if k in ("sizes", "members", "hh_index", "tract_puma")}
        return out

    def __getstate__(self):
        state = self.__dict__.copy()
        state["_cache"] = {}
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        for name in ("person_ids", "person_household", "values", "household_ids",
                     "household_puma", "household_tract"):
            getattr(self, name).setflags(write=False)

    def __repr__(self) -> str:
        return (f"Dataset(n={self.n}, households={self.n_households}, "
                f"pumas={len(self.pumas())}, tracts={len(self.tracts())}, variables={self.schema.names})")

    # -- construction -------------------------------------------------------------

    @classmethod
    def from_rows(cls, schema: AttributeSchema, rows: Iterable[Mapping[str, str]]) -> "Dataset":
        """Build a dataset from label-valued rows (e.g. ``csv.DictReader`` output).

        Row numbers in error messages are 1-based data rows (header excluded).
        """
        lookup = [{lv: k for k, lv in enumerate(v.levels)} for v in schema.variables]
        names = schema.names
        person_ids, person_hh, vals = [], [], []
        hh_index: dict[str, int] = {}
        hh_geo: list[tuple[str, str]] = []
        for rownum, row in enumerate(rows, start=1):
            hid = row[schema.household_column]
            geo = (row[schema.puma_column], row[schema.tract_column])
            h = hh_index.get(hid)
            if h is None:
                h = hh_index[hid] = len(hh_geo)
                hh_geo.append(geo)
            elif hh_geo[h] != geo:
                raise HouseholdGeographyConflict(hid)
            rec = []
            for name, lk in zip(names, lookup):
                label = row[name]
                code = lk.get(label)
                if code is None:
                    raise UnknownLevel(rownum, name, label)
                rec.append(code)
            pid = str(rownum) if schema.person_column is None else row[schema.person_column]
            person_ids.append(pid)
            person_hh.append(h)
            vals.append(rec)
        if not person_ids:
            raise EmptyDataset("dataset has no persons")
        puma_labels = sorted({p for p, _ in hh_geo})
        tract_labels = sorted({t for _, t in hh_geo})
        pcode = {p: i for i, p in enumerate(puma_labels)}
        tcode = {t: i for i, t in enumerate(tract_labels)}
        return cls(
            schema,
            person_ids,
            person_hh,
            np.asarray(vals, dtype=np.int32),
            list(hh_index),
            [pcode[p] for p, _ in hh_geo],
            [tcode[t] for _, t in hh_geo],
            puma_labels,
            tract_labels,
        )


# -- file I/O ---------------------------------------------------------------------


def load_csv(path: str | Path, schema: AttributeSchema) -> Dataset:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        header = reader.fieldnames or []
        required = [schema.household_column, schema.puma_column, schema.tract_column] + schema.names
        if schema.person_column is not None:
            required.append(schema.person_column)
        for col in required:
            if col not in header:
                raise MissingColumn(col)
        return Dataset.from_rows(schema, reader)


def write_csv(ds: Dataset, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=ds.schema.columns(), lineterminator="\n")
        w.writeheader()
        w.writerows(ds.labelled_rows())


def load_schema(path: str | Path) -> AttributeSchema:
    """Read a schema file.

    The format is INI-style::

        [geography]
        household = household_id
        puma = puma
        tract = tract
        person = person_id        ; optional

        [variable:marital]
        levels = Married, Widowed, Divorced, Separated, Never married
        ordered = false

    Variables keep the order of their sections.
    """
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    if not cp.read(path, encoding="utf-8"):
        raise InvalidConfig(f"cannot read schema file {path}")
    geo = cp["geography"] if cp.has_section("geography") else {}
    variables = []
    for sec in cp.sections():
        if not sec.startswith("variable:"):
            continue
        name = sec.split(":", 1)[1].strip()
        levels = [lv.strip() for lv in cp[sec].get("levels", "").split(",") if lv.strip()]
        ordered = cp[sec].getboolean("ordered", fallback=False)
        variables.append(Variable(name, tuple(levels), ordered))
    if not variables:
        raise InvalidConfig(f"schema file {path} defines no variables")
    return AttributeSchema(
        tuple(variables),
        household_column=geo.get("household", "household_id"),
        puma_column=geo.get("puma", "puma"),
        tract_column=geo.get("tract", "tract"),
        person_column=geo.get("person") or None,
    )


def write_schema(schema: AttributeSchema, path: str | Path) -> None:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp["geography"] = {
        "household": schema.household_column,
        "puma": schema.puma_column,
        "tract": schema.tract_column,
    }
    if schema.person_column is not None:
        cp["geography"]["person"] = schema.person_column
    for v in schema.variables:
        cp[f"variable:{v.name}"] = {"levels": ", ".join(v.levels), "ordered": str(v.ordered).lower()}
    with open(path, "w", encoding="utf-8") as f:
        cp.write(f)


def subset_by_tract(ds: Dataset, tract: str) -> Dataset:
    """Persons whose household is in ``tract``; schema and label tables unchanged."""
    code = ds.tract_code(tract)
    keep_hh = np.flatnonzero(ds.household_tract == code)
    remap = np.full(ds.n_households, -1, dtype=np.int64)
    remap[keep_hh] = np.arange(len(keep_hh))
    keep_p = np.flatnonzero(remap[ds.person_household] >= 0)
    return Dataset(
        ds.schema,
        ds.person_ids[keep_p],
        remap[ds.person_household[keep_p]],
        ds.values[keep_p],
        ds.household_ids[keep_hh],
        ds.household_puma[keep_hh],
        ds.household_tract[keep_hh],
        ds.puma_labels,
        ds.tract_labels,
        validate=False,
    )
