"""Forecast and error-chain estimation from a month-by-day generation panel.

Values are scaled, the forecast for day ``j`` is the mean over months, the
deviations are snapped to a fixed set of levels, and transition
probabilities are empirical frequencies of consecutive-day level pairs.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .model import ForecastChain


class IncompletePanel(ValueError):
    """Some (month, day) pair is missing or duplicated."""


class EmptySupport(ValueError):
    """No support levels were given."""


@dataclass(frozen=True)
class GenerationRecord:
    month: int
    day: int
    value: float


@dataclass
class IngestReport:
    """Side information from :func:`estimate_forecast_and_chain`."""

    levels: np.ndarray  # (months, days) snapped level indices
    pair_counts: np.ndarray  # (m, m)
    unvisited_rows: list[int] = field(default_factory=list)

    def exact_transition(self) -> list[list[Fraction]]:
        """Rows as exact fractions; unvisited rows are uniform."""
        m = len(self.pair_counts)
        out = []
        for r, row in enumerate(self.pair_counts):
            total = int(row.sum())
            out.append([Fraction(int(c), total) if total else Fraction(1, m) for c in row])
        return out


def read_panel_csv(path) -> list[GenerationRecord]:
    """Records from a CSV with header ``month,day,value``."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"month", "day", "value"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"panel CSV lacks columns {sorted(missing)}")
        return [GenerationRecord(int(r["month"]), int(r["day"]), float(r["value"])) for r in reader]


def panel_array(records) -> np.ndarray:
    """``(months, days)`` array; months and days are taken in sorted order."""
    months = sorted({r.month for r in records})
    days = sorted({r.day for r in records})
    arr = np.full((len(months), len(days)), np.nan)
    mi = {m: k for k, m in enumerate(months)}
    di = {d: k for k, d in enumerate(days)}
    for r in records:
        if r.value < 0:
            raise ValueError(f"negative generation at month {r.month}, day {r.day}")
        cell = (mi[r.month], di[r.day])
        if not np.isnan(arr[cell]):
            raise IncompletePanel(f"duplicate record for month {r.month}, day {r.day}")
        arr[cell] = r.value
    if np.isnan(arr).any():
        m, d = np.argwhere(np.isnan(arr))[0]
        raise IncompletePanel(f"missing record for month {months[m]}, day {days[d]}")
    return arr


def snap(deviations, levels) -> np.ndarray:
    """Index of the nearest level for every deviation; exact ties go to the lower level."""
    levels = np.asarray(levels, dtype=float)
    x = np.asarray(deviations, dtype=float)[..., None]
    dist = np.abs(x - levels)
    best = dist.min(-1, keepdims=True)
    # among tied levels take the numerically smallest
    cand = np.where(dist == best, levels, np.inf)
    return np.argmin(cand, axis=-1)


def transition_counts(level_paths, m: int) -> np.ndarray:
    """``(m, m)`` counts of consecutive pairs along each row of ``level_paths``."""
    idx = np.atleast_2d(np.asarray(level_paths, dtype=np.int64))
    counts = np.zeros((m, m), dtype=np.int64)
    np.add.at(counts, (idx[:, :-1].ravel(), idx[:, 1:].ravel()), 1)
    return counts


def counts_to_transition(counts) -> tuple[np.ndarray, list[int]]:
    """Row-normalized counts; rows with no departures become uniform and are listed."""
    counts = np.asarray(counts)
    m = len(counts)
    totals = counts.sum(1, keepdims=True)
    unvisited = [int(r) for r in np.flatnonzero(totals[:, 0] == 0)]
    return np.where(totals > 0, counts / np.maximum(totals, 1), 1.0 / m), unvisited


def estimate_forecast_and_chain(records, scale: float = 0.1, support_levels=(20, 0, -20), return_report: bool = False):
    """Forecast sequence and error chain from a complete panel.

    Transition rows count consecutive-day pairs leaving each level and
    divide by the number of such pairs. A level never left becomes a
    uniform row with a warning. The support order is kept as given.
    """
    levels = np.asarray(support_levels, dtype=float)
    if levels.size == 0:
        raise EmptySupport("support_levels is empty")
    zeta = panel_array(records) * scale
    forecast = zeta.mean(0)
    idx = snap(zeta - forecast, levels)
    counts = transition_counts(idx, len(levels))
    trans, unvisited = counts_to_transition(counts)
    if unvisited:
        warnings.warn(f"levels {levels[unvisited].tolist()} are never left; using uniform rows", UserWarning, stacklevel=2)
    chain = ForecastChain(predicted=forecast, error_support=levels, transition=trans)
    if return_report:
        return chain, IngestReport(idx, counts, unvisited)
    return chain


class ForecastChainEstimator(BaseEstimator):
    """Estimator front end for :func:`estimate_forecast_and_chain`.

    ``fit`` takes a list of :class:`GenerationRecord` or a ``(months, days)``
    array. ``predict`` returns the forecast for day indices.
    """

    def __init__(self, scale=0.1, support_levels=(20, 0, -20)):
        self.scale = scale
        self.support_levels = support_levels

    def fit(self, X, y=None):
        if isinstance(X, np.ndarray):
            X = [GenerationRecord(m + 1, d + 1, float(v)) for (m, d), v in np.ndenumerate(X)]
        self.chain_, self.report_ = estimate_forecast_and_chain(
            X, scale=self.scale, support_levels=self.support_levels, return_report=True
        )
        self.transition_ = self.chain_.transition[0] if self.chain_.horizon > 1 else None
        self.forecast_ = self.chain_.predicted
        return self

    def predict(self, X):
        check_is_fitted(self, "chain_")
        return self.forecast_[np.asarray(X, dtype=np.int64)]
