"""Leader-side grid search over the price parameters."""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import ConvergenceWarning
from sklearn.utils.validation import check_is_fitted

from ._validation import InvalidGameError, Violation
from .model import GameG1, LeaderParams, build_reduced_game
from .mpg import fip_solve
from .payoff import leader_payoff
from .policies import random_profile, stack_profile, zero_profile

SELECTION_CAVEAT = (
    "Leader payoffs depend on which user equilibrium the solver selects; "
    "every cell starts the improvement path from the same deterministic profile."
)


def worker_count(n_tasks: int, env: str = "GRIDSTACK_THREADS") -> int:
    """Worker threads for ``n_tasks`` jobs, capped by ``$GRIDSTACK_THREADS`` when set."""
    limit = os.cpu_count() or 1
    raw = os.environ.get(env)
    if raw:
        try:
            limit = max(1, int(raw))
        except ValueError:
            raise ValueError(f"{env} must be a positive integer, got {raw!r}") from None
    return max(1, min(limit, n_tasks))


@dataclass(frozen=True)
class PricingGrid:
    alpha_values: tuple[float, ...]
    beta_values: tuple[float, ...]
    leader: LeaderParams | None = None

    def __post_init__(self):
        object.__setattr__(self, "alpha_values", tuple(float(a) for a in self.alpha_values))
        object.__setattr__(self, "beta_values", tuple(float(b) for b in self.beta_values))
        bad = []
        for name in ("alpha_values", "beta_values"):
            vals = getattr(self, name)
            if not vals:
                bad.append(Violation("EmptyGrid", f"grid.{name}", "needs at least one value"))
            elif min(vals) <= 0:
                bad.append(Violation("NonPositivePrice", f"grid.{name}", "values must be > 0"))
        if bad:
            raise InvalidGameError(bad)

    def cells(self) -> list[tuple[float, float]]:
        """Row-major order: alpha outer, beta inner."""
        return [(a, b) for a in self.alpha_values for b in self.beta_values]


@dataclass
class CellOutcome:
    alpha: float
    beta: float
    payoff: float
    converged: bool
    iterations: int
    aggregate_demand: np.ndarray  # (T, m)


@dataclass
class PricingResult:
    best_alpha: float | None
    best_beta: float | None
    best_payoff: float | None
    cells: list[CellOutcome] = field(default_factory=list)
    init: str = "zeros"
    shape: tuple[int, int] | None = None  # (len(alpha), len(beta)); one row if omitted

    @property
    def table(self) -> np.ndarray:
        """``(len(alpha), len(beta))`` leader payoffs."""
        return np.array([c.payoff for c in self.cells]).reshape(self.shape or (1, -1))

    @property
    def row_alphas(self) -> list[float]:
        n_beta = self.table.shape[1]
        return [self.cells[r * n_beta].alpha for r in range(self.table.shape[0])]

    def row_argmax(self) -> list[float]:
        """Best beta for each alpha, first wins on ties, non-converged cells skipped."""
        out = []
        n_beta = self.table.shape[1]
        for r in range(self.table.shape[0]):
            row = self.cells[r * n_beta:(r + 1) * n_beta]
            out.append(_argmax_cell(row).beta if any(c.converged for c in row) else None)
        return out

    def flagged(self) -> list[tuple[float, float]]:
        return [(c.alpha, c.beta) for c in self.cells if not c.converged]

    def to_dict(self) -> dict:
        return {
            "best_alpha": self.best_alpha,
            "best_beta": self.best_beta,
            "best_payoff": self.best_payoff,
            "init": self.init,
            "row_argmax_beta": self.row_argmax(),
            "flagged_cells": [list(c) for c in self.flagged()],
            "caveat": SELECTION_CAVEAT,
            "cells": [
                {
                    "alpha": c.alpha,
                    "beta": c.beta,
                    "payoff": c.payoff,
                    "converged": c.converged,
                    "iterations": c.iterations,
                    "aggregate_demand": c.aggregate_demand.tolist(),
                }
                for c in self.cells
            ],
        }

    def csv_rows(self) -> list[tuple]:
        return [(c.alpha, c.beta, c.payoff, c.converged) for c in self.cells]


def _argmax_cell(cells: list[CellOutcome]) -> CellOutcome | None:
    best = None
    for c in cells:
        if c.converged and (best is None or c.payoff > best.payoff):
            best = c
    return best


def _initial_profile(g2, init: str, random_state):
    if init == "zeros":
        return zero_profile(g2)
    if init == "random":
        return random_profile(g2, random_state)
    raise ValueError(f"init must be 'zeros' or 'random', got {init!r}")


def evaluate_cell(g1: GameG1, alpha: float, beta: float, leader: LeaderParams, k_max=10_000, init="zeros", random_state=None) -> CellOutcome:
    game = g1.with_pricing(alpha=alpha, beta=beta)
    g2 = build_reduced_game(game)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        res = fip_solve(g2, _initial_profile(g2, init, random_state), k_max=k_max)
    return CellOutcome(
        alpha=alpha,
        beta=beta,
        payoff=leader_payoff(res.policies, game, leader),
        converged=res.converged,
        iterations=res.n_iter,
        aggregate_demand=stack_profile(res.policies).sum(0),
    )


def grid_search_pricing(
    g1_template: GameG1,
    grid: PricingGrid,
    k_max: int = 10_000,
    init: str = "zeros",
    random_state=None,
    n_workers: int | None = None,
) -> PricingResult:
    """Solve the user game at every grid cell and pick the leader's best.

    Cells run on a thread pool; results are assembled in row-major order so
    the outcome does not depend on scheduling. Non-converged cells are kept
    in the table, flagged and excluded from the argmax.
    """
    leader = grid.leader or g1_template.leader
    if leader is None:
        raise InvalidGameError([Violation("MissingField", "leader", "leader parameters required for pricing")])
    cells = grid.cells()
    workers = n_workers or worker_count(len(cells))
    # random starts are drawn up front so they do not depend on scheduling
    seeds = np.random.SeedSequence(random_state).spawn(len(cells)) if init == "random" else [None] * len(cells)

    def job(k):
        a, b = cells[k]
        rs = np.random.default_rng(seeds[k]) if seeds[k] is not None else None
        return evaluate_cell(g1_template, a, b, leader, k_max=k_max, init=init, random_state=rs)

    if workers == 1:
        outcomes = [job(k) for k in range(len(cells))]
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            outcomes = list(ex.map(job, range(len(cells))))
    best = _argmax_cell(outcomes)
    return PricingResult(
        best_alpha=None if best is None else best.alpha,
        best_beta=None if best is None else best.beta,
        best_payoff=None if best is None else best.payoff,
        cells=outcomes,
        init=init,
        shape=(len(grid.alpha_values), len(grid.beta_values)),
    )


def discrepancy_report(result: PricingResult, expected_best=None, expected_row_argmax=None) -> dict:
    """Compare a grid result with reference winners; ``matches`` is False on any difference."""
    issues = []
    if expected_best is not None and (result.best_alpha, result.best_beta) != tuple(map(float, expected_best)):
        issues.append({"kind": "best", "expected": list(expected_best), "got": [result.best_alpha, result.best_beta]})
    if expected_row_argmax is not None:
        got = result.row_argmax()
        for alpha, exp, g in zip(result.row_alphas, expected_row_argmax, got):
            if g is None or float(exp) != g:
                issues.append({"kind": "row_argmax", "alpha": alpha, "expected": exp, "got": g})
    for a, b in result.flagged():
        issues.append({"kind": "not_converged", "alpha": a, "beta": b})
    return {"matches": not issues, "issues": issues, "table": result.table.tolist(), "caveat": SELECTION_CAVEAT}


class PricingGridSearch(BaseEstimator):
    """Estimator front end for :func:`grid_search_pricing`.

    Attributes
    ----------
    result_ : PricingResult
    best_params_ : dict with ``alpha`` and ``beta``
    best_score_ : float
    table_ : ndarray of leader payoffs
    """

    def __init__(self, alpha_values=(19, 20, 21), beta_values=(19, 20, 21), max_iter=10_000, init="zeros", random_state=None, n_workers=None):
        self.alpha_values = alpha_values
        self.beta_values = beta_values
        self.max_iter = max_iter
        self.init = init
        self.random_state = random_state
        self.n_workers = n_workers

    def fit(self, game: GameG1, y=None):
        grid = PricingGrid(self.alpha_values, self.beta_values)
        self.result_ = grid_search_pricing(
            game, grid, k_max=self.max_iter, init=self.init, random_state=self.random_state, n_workers=self.n_workers
        )
        self.best_params_ = {"alpha": self.result_.best_alpha, "beta": self.result_.best_beta}
        self.best_score_ = self.result_.best_payoff
        self.table_ = self.result_.table
        return self

    def predict(self, X=None):
        """The chosen ``(alpha, beta)``."""
        check_is_fitted(self, "result_")
        return np.array([self.result_.best_alpha, self.result_.best_beta])
