"""Household data swapping and its effect on contingency-table association."""

__version__ = "0.1.0"

from .microdata import AttributeSchema, Dataset, Variable, load_csv, load_schema, subset_by_tract, write_csv
from .tabulate import ContingencyTable, bin_variable, cramers_v, cross_tab
from .risk import RiskConfig, Scorer
from .swap import SwapConfig, SwapMode, swap
from .simulate import SweepConfig, TableSpec, convergence_summary, raw_replication_log, run_sweep

__all__ = [
    "AttributeSchema", "Dataset", "Variable", "load_csv", "load_schema", "subset_by_tract", "write_csv",
    "ContingencyTable", "bin_variable", "cramers_v", "cross_tab",
    "RiskConfig", "Scorer", "SwapConfig", "SwapMode", "swap",
    "SweepConfig", "TableSpec", "convergence_summary", "raw_replication_log", "run_sweep",
]
