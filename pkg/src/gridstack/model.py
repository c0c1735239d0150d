"""Domain data for the two-level pricing game.

The lower level is a finite-horizon Markov game between storage users
(``GameG1``). Its public state is the renewable output ``e = forecast +
error``, where the forecast error follows a Markov chain over a fixed
support. ``GameG2`` is the demand-only reduction whose pure equilibria lift
back to equilibria of ``GameG1``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ._validation import (
    STOCHASTIC_ATOL,
    InvalidGameError,
    Violation,
    as_float_array,
    check_probability_vector,
    frozen,
    nonstochastic_rows,
)


@dataclass(frozen=True, eq=False)
class ForecastChain:
    """Forecast sequence plus a Markov chain on the forecast error.

    ``transition`` may be a single ``m x m`` matrix (used at every stage) or
    a stack of ``T - 1`` matrices. Entries may be rational strings.
    ``initial_dist`` defaults to uniform over the error support.
    """

    predicted: np.ndarray
    error_support: np.ndarray
    transition: np.ndarray
    initial_dist: np.ndarray | None = None

    def __post_init__(self):
        predicted = as_float_array(self.predicted, 1, "predicted")
        support = as_float_array(self.error_support, 1, "error_support")
        T, m = len(predicted), len(support)
        trans = as_float_array(self.transition, name="transition")
        if trans.ndim == 2:
            trans = np.broadcast_to(trans, (max(T - 1, 0), *trans.shape))
        if trans.ndim != 3 or trans.shape[1:] != (m, m) or trans.shape[0] != max(T - 1, 0):
            raise ValueError(
                f"transition must be ({m}, {m}) or ({max(T - 1, 0)}, {m}, {m}), got {trans.shape}"
            )
        if self.initial_dist is None:
            init = np.full(m, 1.0 / m) if m else np.zeros(0)
        else:
            init = as_float_array(self.initial_dist, 1, "initial_dist")
        object.__setattr__(self, "predicted", frozen(predicted))
        object.__setattr__(self, "error_support", frozen(support))
        object.__setattr__(self, "transition", frozen(trans))
        object.__setattr__(self, "initial_dist", frozen(init))

    @property
    def horizon(self) -> int:
        return len(self.predicted)

    @property
    def n_errors(self) -> int:
        return len(self.error_support)

    @property
    def public_states(self) -> np.ndarray:
        """``(T, m)`` array of renewable output values."""
        return self.predicted[:, None] + self.error_support[None, :]

    @property
    def initial_states(self) -> np.ndarray:
        """Error indices carrying positive initial probability."""
        return np.flatnonzero(self.initial_dist > 0)

    def violations(self) -> list[Violation]:
        out = []
        if self.horizon < 1:
            out.append(Violation("BadHorizon", "chain.predicted", "horizon must be >= 1"))
        if self.n_errors < 1:
            out.append(Violation("EmptySupport", "chain.error_support", "support is empty"))
        if len(np.unique(self.error_support)) != self.n_errors:
            out.append(Violation("DuplicateSupport", "chain.error_support", "values must be distinct"))
        if np.any(self.predicted < 0):
            out.append(Violation("NegativeForecast", "chain.predicted", "forecasts must be >= 0"))
        for t, mat in enumerate(self.transition):
            for row in nonstochastic_rows(mat):
                out.append(
                    Violation(
                        "RowNotStochastic",
                        f"chain.transition[{t}][{row}]",
                        f"row {mat[row].tolist()} sums to {mat[row].sum():.15g}",
                    )
                )
        if len(self.initial_dist) != self.n_errors or not check_probability_vector(self.initial_dist):
            out.append(Violation("BadInitialDist", "chain.initial_dist", "must be a probability vector of length m"))
        for t, j in zip(*np.nonzero(self.public_states < 0)):
            out.append(
                Violation(
                    "NegativePublicState",
                    f"stage {t}, error index {j}",
                    f"renewable output {self.public_states[t, j]:g} < 0",
                )
            )
        return out

    def with_initial_dist(self, initial_dist) -> "ForecastChain":
        return replace(self, initial_dist=initial_dist)

    def pinned(self, error_index: int) -> "ForecastChain":
        """Copy of the chain started deterministically at ``error_index``."""
        init = np.zeros(self.n_errors)
        init[error_index] = 1.0
        return self.with_initial_dist(init)


@dataclass(frozen=True)
class PricingParams:
    alpha: float
    beta: float
    gamma1: float = 1.0
    gamma2: float = 1.0

    def violations(self) -> list[Violation]:
        return [
            Violation("NonPositivePrice", f"pricing.{name}", f"{name} must be > 0, got {getattr(self, name)}")
            for name in ("alpha", "beta", "gamma1", "gamma2")
            if not getattr(self, name) > 0
        ]


@dataclass(frozen=True)
class LeaderParams:
    """Aggregator cost data: unit generation cost, penalty weight and target."""

    unit_cost: float
    penalty_weight: float
    target: float = 0.0

    def violations(self) -> list[Violation]:
        out = []
        if not self.unit_cost > 0:
            out.append(Violation("NonPositiveLeader", "leader.unit_cost", "must be > 0"))
        if not self.penalty_weight > 0:
            out.append(Violation("NonPositiveLeader", "leader.penalty_weight", "must be > 0"))
        return out


@dataclass(frozen=True, eq=False)
class UserSpec:
    """One storage user.

    Exactly one of ``theta`` (linear benefit ``theta * c``) or ``utility``
    (a table indexed by consumption ``0..c_max``) is given. A linear user
    also gets the degenerate table ``utility[c] = theta * c`` so that both
    cases share one evaluation path.
    """

    d_max: int
    c_max: int
    b_max: int
    theta: float | None = None
    utility: np.ndarray | None = None

    def __post_init__(self):
        if (self.theta is None) == (self.utility is None):
            raise ValueError("give exactly one of theta or utility")
        if self.utility is None:
            table = float(self.theta) * np.arange(self.c_max + 1, dtype=float)
        else:
            table = as_float_array(self.utility, 1, "utility")
        object.__setattr__(self, "utility", frozen(table))

    @property
    def is_linear(self) -> bool:
        return self.theta is not None

    @property
    def n_storage(self) -> int:
        return self.b_max + 1

    def violations(self, index: int) -> list[Violation]:
        where = f"users[{index}]"
        out = []
        if min(self.d_max, self.c_max, self.b_max) < 0:
            out.append(Violation("NegativeCap", where, "caps must be >= 0"))
        if self.c_max < self.b_max + self.d_max:
            out.append(
                Violation(
                    "CapViolation",
                    where,
                    f"c_max={self.c_max} < b_max + d_max = {self.b_max + self.d_max}",
                )
            )
        if self.theta is not None and not self.theta > 0:
            out.append(Violation("NonPositiveTheta", where, "theta must be > 0"))
        if len(self.utility) != self.c_max + 1:
            out.append(Violation("BadUtility", where, f"utility needs {self.c_max + 1} entries"))
        elif np.any(np.diff(self.utility) < 0):
            out.append(Violation("BadUtility", where, "utility must be nondecreasing"))
        return out


@dataclass(frozen=True, eq=False)
class GameG1:
    """The private-state user game."""

    chain: ForecastChain
    users: tuple[UserSpec, ...]
    pricing: PricingParams
    initial_storage: tuple[int, ...] | None = None
    leader: LeaderParams | None = None

    def __post_init__(self):
        object.__setattr__(self, "users", tuple(self.users))
        if self.initial_storage is None:
            object.__setattr__(self, "initial_storage", (0,) * len(self.users))
        else:
            object.__setattr__(self, "initial_storage", tuple(int(b) for b in self.initial_storage))

    @property
    def n_users(self) -> int:
        return len(self.users)

    @property
    def horizon(self) -> int:
        return self.chain.horizon

    def with_pricing(self, **changes) -> "GameG1":
        return replace(self, pricing=replace(self.pricing, **changes))


@dataclass(frozen=True, eq=False)
class GameG2:
    """Demand-only game on the public state (built by :func:`build_reduced_game`)."""

    chain: ForecastChain
    thetas: np.ndarray
    d_max: np.ndarray
    pricing: PricingParams

    def __post_init__(self):
        object.__setattr__(self, "thetas", frozen(np.asarray(self.thetas, dtype=float)))
        object.__setattr__(self, "d_max", frozen(np.asarray(self.d_max, dtype=int)))

    @property
    def n_users(self) -> int:
        return len(self.thetas)

    @property
    def horizon(self) -> int:
        return self.chain.horizon

    @property
    def n_cells(self) -> int:
        return self.chain.horizon * self.chain.n_errors

    def action_set(self, i: int) -> range:
        return range(int(self.d_max[i]) + 1)


def validate_game(game: GameG1) -> GameG1:
    """Return ``game`` unchanged if every invariant holds.

    Raises :class:`InvalidGameError` listing all violations otherwise.
    """
    out = list(game.chain.violations())
    out += game.pricing.violations()
    if game.leader is not None:
        out += game.leader.violations()
    if game.n_users < 1:
        out.append(Violation("NoUsers", "users", "need at least one user"))
    for i, user in enumerate(game.users):
        out += user.violations(i)
    if len(game.initial_storage) != game.n_users:
        out.append(Violation("BadInitialStorage", "initial_storage", "one entry per user required"))
    else:
        for i, (b, user) in enumerate(zip(game.initial_storage, game.users)):
            if not 0 <= b <= user.b_max:
                out.append(Violation("BadInitialStorage", f"initial_storage[{i}]", f"{b} not in [0, {user.b_max}]"))
    if out:
        raise InvalidGameError(out)
    return game


def build_reduced_game(g1: GameG1) -> GameG2:
    validate_game(g1)
    nonlinear = [i for i, u in enumerate(g1.users) if not u.is_linear]
    if nonlinear:
        raise InvalidGameError(
            [Violation("NonlinearUtility", f"users[{i}]", "the demand reduction needs a linear benefit") for i in nonlinear]
        )
    return GameG2(
        chain=g1.chain,
        thetas=np.array([u.theta for u in g1.users], dtype=float),
        d_max=np.array([u.d_max for u in g1.users], dtype=int),
        pricing=g1.pricing,
    )


def chain_marginals(chain: ForecastChain, initial_dist=None) -> np.ndarray:
    """``(T, m)`` array of error-state marginals, row ``t`` at stage ``t``."""
    mu = chain.initial_dist if initial_dist is None else np.asarray(initial_dist, dtype=float)
    out = np.empty((chain.horizon, chain.n_errors))
    out[0] = mu
    for t in range(1, chain.horizon):
        out[t] = out[t - 1] @ chain.transition[t - 1]
    return out


def reach_probabilities(chain: ForecastChain, initial_indices=None) -> np.ndarray:
    """``(k, T, m)`` marginals for each deterministic start in ``initial_indices``."""
    if initial_indices is None:
        initial_indices = range(chain.n_errors)
    eye = np.eye(chain.n_errors)
    return np.stack([chain_marginals(chain, eye[j]) for j in initial_indices])


__all__ = [
    "ForecastChain",
    "PricingParams",
    "LeaderParams",
    "UserSpec",
    "GameG1",
    "GameG2",
    "validate_game",
    "build_reduced_game",
    "chain_marginals",
    "reach_probabilities",
    "STOCHASTIC_ATOL",
]
