"""Per-record disclosure risk scores and at-risk table cells.

Both scorers use the same orientation: lower score means riskier. Selection
therefore never needs to know which scorer produced the scores.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import CountTooLarge, InvalidConfig, UnorderedVariable
from .microdata import Dataset
from .tabulate import ContingencyTable


class Scorer(str, enum.Enum):
    LOG_FREQUENCY = "log_frequency"
    QUANTILE_EXTREMITY = "quantile_extremity"


@dataclass(frozen=True)
class RiskConfig:
    risk_variables: tuple[str, ...]
    scorer: Scorer = Scorer.LOG_FREQUENCY
    q: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "scorer", Scorer(self.scorer))
        object.__setattr__(self, "risk_variables", tuple(self.risk_variables))
        if not self.risk_variables:
            raise InvalidConfig("risk.variables must not be empty")
        if self.scorer is Scorer.QUANTILE_EXTREMITY:
            if self.q is None or not 0.0 < self.q < 0.5:
                raise InvalidConfig(f"risk.q must be in (0, 0.5), got {self.q}")


@dataclass(frozen=True)
class RiskScore:
    person_id: str
    score: float
    rank: int


def log_frequency_score(ds: Dataset, cfg: RiskConfig | Sequence[str]) -> np.ndarray:
    """Sum over risk variables of log(relative frequency of the person's level).

    Frequencies are taken over the whole dataset.
    """
    names = cfg.risk_variables if isinstance(cfg, RiskConfig) else tuple(cfg)
    score = np.zeros(ds.n)
    for name in names:
        col = ds.column(name)
        freq = np.bincount(col, minlength=len(ds.schema.variable(name).levels)) / ds.n
        score += np.log(freq[col])
    return score


def extreme_mask(values: np.ndarray, q: float) -> np.ndarray:
    """True where a value sits in the bottom or top ``q`` tail.

    A value is in the bottom tail when every record at or below it falls
    within the lowest ``q * n`` records, and symmetrically for the top. A tie
    block is never split: if it crosses the cut, none of it is extreme.
    """
    n = len(values)
    limit = q * n * (1 + 1e-12)
    s = np.sort(values)
    at_or_below = np.searchsorted(s, values, side="right")
    at_or_above = n - np.searchsorted(s, values, side="left")
    return (at_or_below <= limit) | (at_or_above <= limit)


def quantile_extremity_score(ds: Dataset, cfg: RiskConfig) -> np.ndarray:
    """Negated count of risk variables on which the person is extreme."""
    if cfg.q is None:
        raise InvalidConfig("quantile extremity scoring needs q")
    count = np.zeros(ds.n)
    for name in cfg.risk_variables:
        var = ds.schema.variable(name)
        if not var.ordered:
            raise UnorderedVariable(f"variable {name!r} is not ordered")
        count += extreme_mask(ds.column(name), cfg.q)
    return -count


def score(ds: Dataset, cfg: RiskConfig) -> np.ndarray:
    if cfg.scorer is Scorer.LOG_FREQUENCY:
        return log_frequency_score(ds, cfg)
    return quantile_extremity_score(ds, cfg)


def risk_order(scores: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Person indices from most to least at risk; ties broken by a uniform draw."""
    tiebreak = rng.random(len(scores))
    return np.lexsort((tiebreak, scores))


def select_top_risk(scores: np.ndarray, m: int, seed: int | np.random.Generator = 0) -> np.ndarray:
    """Indices of the ``m`` lowest-scoring persons, in risk order."""
    scores = np.asarray(scores, dtype=np.float64)
    if m < 0 or m > len(scores):
        raise CountTooLarge(f"cannot select {m} of {len(scores)} records")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return risk_order(scores, rng)[:m]


def score_records(ds: Dataset, cfg: RiskConfig, seed: int = 0) -> list[RiskScore]:
    """Scores with 1-based ranks, in dataset person order."""
    s = score(ds, cfg)
    order = risk_order(s, np.random.default_rng(seed))
    rank = np.empty(ds.n, dtype=np.int64)
    rank[order] = np.arange(1, ds.n + 1)
    return [RiskScore(str(pid), float(v), int(r)) for pid, v, r in zip(ds.person_ids, s, rank)]


def find_at_risk_cells(t: ContingencyTable | np.ndarray, thresholds: Iterable[int] = (1, 2)
                       ) -> list[tuple[int, int, int]]:
    """``(row, col, count)`` for every cell whose count is a threshold value, row-major."""
    counts = t.counts if isinstance(t, ContingencyTable) else np.asarray(t)
    hit = np.isin(counts, list(thresholds))
    return [(int(i), int(j), int(counts[i, j])) for i, j in zip(*np.nonzero(hit))]


def write_scores_csv(scores: list[RiskScore], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["person_id", "score", "rank"])
        for s in scores:
            w.writerow([s.person_id, repr(s.score), s.rank])
