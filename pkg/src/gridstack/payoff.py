"""Prices, stage rewards, the stage potential and exact value recursions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ForecastChain, GameG1, GameG2, LeaderParams, PricingParams, chain_marginals
from .policies import check_profile, stack_profile


class InfeasibleAction(ValueError):
    """An action breaks the storage constraint or a cap."""


def price_coefficients(e, pricing: PricingParams, n: int):
    """Slope and intercept of the price as a function of total demand at output ``e``."""
    e = np.asarray(e, dtype=float)
    return pricing.alpha / (n * e + pricing.gamma1), pricing.beta / (e + pricing.gamma2)


def price(d_total, e, pricing: PricingParams, n: int):
    """Unit price ``alpha * D / (n e + gamma1) + beta / (e + gamma2)``."""
    slope, base = price_coefficients(e, pricing, n)
    return slope * d_total + base


@dataclass(frozen=True)
class JointState:
    stage: int
    error_index: int
    storages: tuple[int, ...]


@dataclass(frozen=True)
class ActionProfile:
    demands: tuple[int, ...]
    consumptions: tuple[int, ...]

    @classmethod
    def from_pairs(cls, pairs) -> "ActionProfile":
        d, c = zip(*pairs)
        return cls(tuple(d), tuple(c))


def check_feasible(state: JointState, profile: ActionProfile, g1: GameG1) -> None:
    for i, (user, b, d, c) in enumerate(zip(g1.users, state.storages, profile.demands, profile.consumptions)):
        if not 0 <= b <= user.b_max:
            raise InfeasibleAction(f"user {i}: storage {b} outside 0..{user.b_max}")
        if not 0 <= d <= user.d_max or not 0 <= c <= user.c_max:
            raise InfeasibleAction(f"user {i}: action ({d}, {c}) outside caps")
        if not b + d - user.b_max <= c <= b + d:
            raise InfeasibleAction(f"user {i}: need {b + d - user.b_max} <= c <= {b + d}, got c={c}")


def stage_reward_r(i: int, state: JointState, profile: ActionProfile, g1: GameG1) -> float:
    """Benefit of consumption minus the cost of purchased energy for user ``i``."""
    check_feasible(state, profile, g1)
    e = g1.chain.public_states[state.stage, state.error_index]
    p = price(sum(profile.demands), e, g1.pricing, g1.n_users)
    return float(g1.users[i].utility[profile.consumptions[i]] - p * profile.demands[i])


def stage_reward_g(i: int, e: float, demands, g2: GameG2) -> float:
    """Demand-only stage payoff ``theta_i d_i - P(D, e) d_i``."""
    demands = np.asarray(demands)
    p = price(demands.sum(), e, g2.pricing, g2.n_users)
    return float(g2.thetas[i] * demands[i] - p * demands[i])


def stage_potential(e: float, demands, g2: GameG2) -> float:
    demands = np.asarray(demands, dtype=float)
    slope, base = price_coefficients(e, g2.pricing, g2.n_users)
    total = demands.sum()
    cross = (total * total - (demands * demands).sum()) / 2.0
    return float(((g2.thetas - base) * demands).sum() - slope * (demands * demands).sum() - slope * cross)


def step_state(state: JointState, profile: ActionProfile, g1: GameG1) -> list[tuple[float, JointState]]:
    """Successor distribution as ``(probability, state)`` pairs with positive probability."""
    if state.stage >= g1.horizon - 1:
        raise ValueError("no successor after the last stage")
    check_feasible(state, profile, g1)
    storages = tuple(b + d - c for b, d, c in zip(state.storages, profile.demands, profile.consumptions))
    row = g1.chain.transition[state.stage][state.error_index]
    return [(float(p), JointState(state.stage + 1, j, storages)) for j, p in enumerate(row) if p > 0]


def demand_columns(profile, g2: GameG2) -> np.ndarray:
    """``g_i`` evaluated on every cell: array ``(n, T, m)``."""
    D = check_profile(profile, g2).astype(float)
    slope, base = price_coefficients(g2.chain.public_states, g2.pricing, g2.n_users)
    total = D.sum(0)
    return g2.thetas[:, None, None] * D - (slope * total + base) * D


def potential_columns(profile, g2: GameG2) -> np.ndarray:
    """Stage potential on every cell: array ``(T, m)``."""
    D = check_profile(profile, g2).astype(float)
    slope, base = price_coefficients(g2.chain.public_states, g2.pricing, g2.n_users)
    total = D.sum(0)
    sq = (D * D).sum(0)
    linear = ((g2.thetas[:, None, None] - base) * D).sum(0)
    return linear - slope * sq - slope * (total * total - sq) / 2.0


@dataclass(frozen=True, eq=False)
class ChainOperators:
    """Transition operators used by the value recursion.

    ``row(j)`` is the stage-2 distribution started from error index ``j``
    and ``Q[t]`` maps stage ``t`` to stage ``t + 1``.
    """

    Q: np.ndarray

    @classmethod
    def from_chain(cls, chain: ForecastChain) -> "ChainOperators":
        return cls(chain.transition)

    def row(self, initial_index: int) -> np.ndarray:
        return self.Q[0][initial_index]

    def expect(self, columns: np.ndarray, initial_index: int) -> np.ndarray:
        """``c^1[j] + p c^2 + p Q c^3 + ...`` for columns shaped ``(..., T, m)``."""
        total = columns[..., 0, initial_index].astype(float)
        if columns.shape[-2] == 1:
            return total
        weights = self.row(initial_index)
        for t in range(1, columns.shape[-2]):
            total = total + columns[..., t, :] @ weights
            if t < len(self.Q):
                weights = weights @ self.Q[t]
        return total


def value_g2(profile, g2: GameG2, initial_index: int) -> np.ndarray:
    """Values of all users under a pure demand profile, started at ``initial_index``."""
    return ChainOperators.from_chain(g2.chain).expect(demand_columns(profile, g2), initial_index)


def potential_value_g2(profile, g2: GameG2, initial_index: int) -> float:
    return float(ChainOperators.from_chain(g2.chain).expect(potential_columns(profile, g2), initial_index))


def value_table_g2(profile, g2: GameG2, reach=None) -> np.ndarray:
    """``(m, n)`` values of every user from every initial error index.

    ``reach`` may carry precomputed ``(k, T, m)`` marginals for ``k`` starts.
    """
    from .model import reach_probabilities

    R = reach_probabilities(g2.chain) if reach is None else reach
    return np.einsum("stm,ntm->sn", R, demand_columns(profile, g2))


def leader_stage_payoff(total_demand, e, pricing: PricingParams, n: int, leader: LeaderParams):
    """Revenue minus controllable-generation cost minus the imbalance penalty."""
    residual = total_demand - e
    return (
        price(total_demand, e, pricing, n) * total_demand
        - leader.unit_cost * residual
        - 0.5 * leader.penalty_weight * (residual - leader.target) ** 2
    )


def leader_payoff(demand_policy, g1: GameG1, leader: LeaderParams | None = None, initial_dist=None) -> float:
    """Expected leader payoff under a public demand profile.

    Exact: per-stage error marginals are propagated from ``initial_dist``
    (the chain's own by default), no sampling.
    """
    leader = leader if leader is not None else g1.leader
    if leader is None:
        raise ValueError("leader parameters required")
    D = stack_profile(demand_policy).astype(float)
    total = D.sum(0)
    stage = leader_stage_payoff(total, g1.chain.public_states, g1.pricing, g1.n_users, leader)
    mu = chain_marginals(g1.chain, initial_dist)
    return float((mu * stage).sum())
