"""Exception hierarchy.

Everything raised on purpose by the library derives from ``DataswapError``.
The CLI maps ``ConfigError`` to exit code 3 and ``DataError`` to exit code 4.
"""

from __future__ import annotations


class DataswapError(Exception):
    """Base class for library errors."""


class ConfigError(DataswapError, ValueError):
    """A configuration value is missing or invalid."""


class InvalidConfig(ConfigError):
    pass


class DataError(DataswapError, ValueError):
    """Input data is malformed or inconsistent with the request."""


class MissingColumn(DataError):
    def __init__(self, column: str):
        super().__init__(f"missing column: {column!r}")
        self.column = column


class UnknownLevel(DataError):
    def __init__(self, row: int, column: str, label: str):
        super().__init__(f"row {row}: unknown level {label!r} for column {column!r}")
        self.row = row
        self.column = column
        self.label = label


class EmptyDataset(DataError):
    pass


class TractSpansPumas(DataError):
    def __init__(self, tract: str):
        super().__init__(f"tract {tract!r} appears in more than one PUMA")
        self.tract = tract


class HouseholdGeographyConflict(DataError):
    def __init__(self, household: str):
        super().__init__(f"household {household!r} has members in different geographies")
        self.household = household


class UnknownTract(DataError, KeyError):
    def __init__(self, tract: str):
        super().__init__(f"unknown tract: {tract!r}")
        self.tract = tract

    def __str__(self) -> str:
        return self.args[0]


class UnknownHousehold(DataError, KeyError):
    def __init__(self, household: str):
        super().__init__(f"unknown household: {household!r}")
        self.household = household

    def __str__(self) -> str:
        return self.args[0]


class MissingVariable(DataError, KeyError):
    def __init__(self, name: str):
        super().__init__(f"variable not in schema: {name!r}")
        self.name = name

    def __str__(self) -> str:
        return self.args[0]


class SameVariable(DataError):
    pass


class UnorderedVariable(DataError):
    pass


class InvalidBoundaries(DataError):
    pass


class CountTooLarge(DataError):
    pass


class NoOnesInTable(DataError):
    """The before-table has no cells equal to 1, so the metric is undefined."""


class InsufficientRates(DataError):
    pass


class NoDefinedReplications(DataError):
    def __init__(self, tract: str, rate: float, spec: str):
        super().__init__(f"no defined Cramer's V for tract {tract!r}, rate {rate}, table {spec}")
        self.tract = tract
        self.rate = rate
        self.spec = spec
