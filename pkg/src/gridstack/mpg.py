"""Pure equilibria of the reduced demand game by finite improvement.

The reduced game is an exact potential game stage by stage, and its
transitions do not depend on actions, so a best response decomposes into
independent per-cell problems. Each cell maximizes a strictly concave
quadratic in the user's own demand.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import ConvergenceWarning
from sklearn.utils.validation import check_is_fitted

from .model import GameG1, GameG2, build_reduced_game, reach_probabilities
from .payoff import potential_columns, price_coefficients, value_g2, value_table_g2
from .policies import (
    PMSProfile,
    PurePublicPolicy,
    action_table,
    check_profile,
    pure_pms,
    random_profile,
    stack_profile,
    unstack_profile,
    zero_profile,
)


class NotConverged(RuntimeError):
    """Raised by callers that treat an exhausted iteration budget as an error."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


def _best_demand(theta, slope, base, opponent_sum, d_max):
    """Elementwise integer maximizer of ``(theta - base - slope*S) d - slope d^2``.

    Ties go to the smaller demand.
    """
    margin = theta - base - slope * opponent_sum
    d_opt = np.clip(margin / (2.0 * slope), 0, d_max)
    lo = np.floor(d_opt)
    hi = np.minimum(lo + 1, d_max)
    f_lo = margin * lo - slope * lo * lo
    f_hi = margin * hi - slope * hi * hi
    return np.where(f_hi > f_lo, hi, lo).astype(np.int64)


def continuous_response(i: int, e: float, opponent_sum, g2: GameG2):
    """Unconstrained maximizer of the demand-dependent part of the stage potential.

    The concave objective is ``m d - s d^2`` with margin ``m = theta_i -
    beta/(e+g2) - s * S`` and slope ``s = alpha/(n e + g1)``; its stationary
    point is ``m / (2 s)``.
    """
    slope, base = price_coefficients(e, g2.pricing, g2.n_users)
    return (g2.thetas[i] - base - slope * opponent_sum) / (2.0 * slope)


def accelerated_best_response(i: int, e: float, opponent_sum: int, g2: GameG2) -> int:
    """Best integer demand of user ``i`` at output ``e`` given the others' total."""
    slope, base = price_coefficients(e, g2.pricing, g2.n_users)
    return int(_best_demand(g2.thetas[i], slope, base, opponent_sum, g2.d_max[i]))


def best_response_all(profile, g2: GameG2) -> np.ndarray:
    """Cell-wise best response of every user to the rest of ``profile``: ``(n, T, m)``."""
    D = check_profile(profile, g2)
    slope, base = price_coefficients(g2.chain.public_states, g2.pricing, g2.n_users)
    opp = D.sum(0)[None] - D
    return _best_demand(g2.thetas[:, None, None], slope, base, opp, g2.d_max[:, None, None])


def best_response_policy(i: int, profile, g2: GameG2) -> PurePublicPolicy:
    """Best response of user ``i`` to the other entries of ``profile``.

    ``profile`` is the full list of ``n`` policies; entry ``i`` is ignored.
    """
    D = check_profile(profile, g2)
    slope, base = price_coefficients(g2.chain.public_states, g2.pricing, g2.n_users)
    opp = D.sum(0) - D[i]
    return PurePublicPolicy(_best_demand(g2.thetas[i], slope, base, opp, g2.d_max[i]))


def improvement_delta(i: int, current, best_response: PurePublicPolicy, g2: GameG2, initial_index: int) -> float:
    D = stack_profile(current).copy()
    before = value_g2(D, g2, initial_index)[i]
    D[i] = best_response.demand
    return float(value_g2(D, g2, initial_index)[i] - before)


@dataclass
class EquilibriumResult:
    """Output of :func:`fip_solve`.

    ``trace`` rows are ``(iteration, updated_user, max_improvement,
    potential)``; ``updated_user`` is ``None`` on the final, converged sweep.
    """

    policies: list[PurePublicPolicy]
    per_state_values: np.ndarray  # (n, m)
    potential_per_state: np.ndarray  # (m,)
    trace: list[tuple] = field(default_factory=list)
    converged: bool = False

    @property
    def demand(self) -> np.ndarray:
        return stack_profile(self.policies)

    @property
    def n_iter(self) -> int:
        return len(self.trace)

    def to_dict(self) -> dict:
        return {
            "converged": self.converged,
            "iterations": self.n_iter,
            "demand": self.demand.tolist(),
            "per_state_values": self.per_state_values.tolist(),
            "potential_per_state": self.potential_per_state.tolist(),
        }


def fip_solve(
    g2: GameG2, initial=None, k_max: int = 10_000, tol: float = 1e-12, raise_on_failure: bool = False
) -> EquilibriumResult:
    """Finite-improvement best-response dynamics.

    Every iteration computes all users' best responses and their value
    improvements; the improvement of a user is the maximum over the
    chain's initial states. Only the user with the largest improvement
    (lowest index on ties) switches. Stops when no improvement exceeds
    ``tol``. An exhausted budget returns ``converged=False`` and warns,
    or raises :class:`NotConverged` carrying the result when
    ``raise_on_failure`` is set.
    """
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    D = check_profile(zero_profile(g2) if initial is None else initial, g2).copy()
    chain = g2.chain
    starts = chain.initial_states
    weights = chain.initial_dist[starts]
    R = reach_probabilities(chain, starts)
    slope, base = price_coefficients(chain.public_states, g2.pricing, g2.n_users)
    thetas = g2.thetas

    def weighted_potential(D):
        return float(weights @ np.einsum("stm,tm->s", R, potential_columns(D, g2)))

    trace = []
    converged = False
    for k in range(1, k_max + 1):
        B = best_response_all(D, g2)
        opp = D.sum(0)[None] - D
        g_cur = (thetas[:, None, None] - slope * (opp + D) - base) * D
        g_br = (thetas[:, None, None] - slope * (opp + B) - base) * B
        diff = np.where(B == D, 0.0, g_br - g_cur)
        gains = np.einsum("stm,ntm->ns", R, diff).max(1)
        j = int(np.argmax(gains))
        if gains[j] <= tol:
            converged = True
            trace.append((k, None, float(max(gains[j], 0.0)), weighted_potential(D)))
            break
        D[j] = B[j]
        trace.append((k, j, float(gains[j]), weighted_potential(D)))

    result = EquilibriumResult(
        policies=unstack_profile(D),
        per_state_values=value_table_g2(D, g2).T,
        potential_per_state=np.einsum("stm,tm->s", reach_probabilities(chain), potential_columns(D, g2)),
        trace=trace,
        converged=converged,
    )
    if not converged:
        msg = f"FIP did not converge within {k_max} iterations"
        if raise_on_failure:
            raise NotConverged(msg, result)
        warnings.warn(msg, ConvergenceWarning, stacklevel=2)
    return result


def lift_to_pme(policies, g1: GameG1) -> PMSProfile:
    """Pure private strategy: demand from the public table, consume demand plus storage."""
    D = stack_profile(policies)
    tables = []
    for i, user in enumerate(g1.users):
        tab = action_table(user)
        b = np.arange(user.n_storage)
        d = D[i][:, :, None]
        c = np.minimum(d + b, user.c_max)
        idx = d * (user.c_max + 1) + (user.c_max - c)
        assert np.all(tab.demand[idx] == d) and np.all(tab.consumption[idx] == c)
        tables.append(idx)
    return pure_pms(tables, g1)


def _as_reduced(game) -> tuple[GameG2, GameG1 | None]:
    if isinstance(game, GameG2):
        return game, None
    if isinstance(game, GameG1):
        return build_reduced_game(game), game
    raise TypeError(f"expected GameG1 or GameG2, got {type(game).__name__}")


class FIPSolver(BaseEstimator):
    """Estimator front end for :func:`fip_solve`.

    Parameters
    ----------
    max_iter : int
        Iteration budget.
    init : {"zeros", "random"}
        Starting profile. ``"random"`` draws uniform demands using ``random_state``.
    random_state : int, Generator or None
    tol : float
        Improvements at or below this count as zero.

    Attributes
    ----------
    result_ : EquilibriumResult
    demand_ : ndarray of shape (n_users, T, m)
    pme_ : PMSProfile or None
        Lifted private strategy profile when fitted on a :class:`GameG1`.
    """

    def __init__(self, max_iter=10_000, init="zeros", random_state=None, tol=1e-12):
        self.max_iter = max_iter
        self.init = init
        self.random_state = random_state
        self.tol = tol

    def fit(self, game, y=None):
        g2, g1 = _as_reduced(game)
        if self.init == "zeros":
            start = zero_profile(g2)
        elif self.init == "random":
            start = random_profile(g2, self.random_state)
        else:
            raise ValueError(f"init must be 'zeros' or 'random', got {self.init!r}")
        self.result_ = fip_solve(g2, start, k_max=self.max_iter, tol=self.tol)
        self.demand_ = self.result_.demand
        self.n_iter_ = self.result_.n_iter
        self.converged_ = self.result_.converged
        self.pme_ = lift_to_pme(self.result_.policies, g1) if g1 is not None else None
        return self

    def predict(self, X):
        """Equilibrium demands ``(n_samples, n_users)`` for rows ``(stage, error_index)``."""
        check_is_fitted(self, "demand_")
        X = np.asarray(X, dtype=np.int64).reshape(-1, 2)
        return self.demand_[:, X[:, 0], X[:, 1]].T

    def score(self, game, y=None):
        """Initial-distribution weighted potential of the fitted profile on ``game``."""
        check_is_fitted(self, "demand_")
        g2, _ = _as_reduced(game)
        return float(g2.chain.initial_dist @ self.result_.potential_per_state)
