"""Finite-horizon MDPs: backward induction and the two constructions the games need.

A :class:`FiniteMDP` stores dense per-stage arrays. States at stage ``t``
are ``0..S_t-1`` and every state shares one action index set ``0..A-1``
with a feasibility mask.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import StateSpaceTooLarge
from .model import GameG1
from .payoff import price_coefficients
from .policies import PMSProfile, action_table

DEFAULT_CAP = 10_000_000


@dataclass(frozen=True, eq=False)
class FiniteMDP:
    """``rewards[t]`` and ``feasible[t]`` are ``(S_t, A)``; ``transitions[t]`` is ``(S_t, A, S_{t+1})``.

    There are ``T - 1`` transition arrays; the last stage has no successor.
    """

    rewards: tuple[np.ndarray, ...]
    feasible: tuple[np.ndarray, ...]
    transitions: tuple[np.ndarray, ...]

    def __post_init__(self):
        object.__setattr__(self, "rewards", tuple(np.asarray(r, dtype=float) for r in self.rewards))
        object.__setattr__(self, "feasible", tuple(np.asarray(f, dtype=bool) for f in self.feasible))
        object.__setattr__(self, "transitions", tuple(np.asarray(p, dtype=float) for p in self.transitions))

    @property
    def horizon(self) -> int:
        return len(self.rewards)

    @property
    def n_actions(self) -> int:
        return self.rewards[0].shape[1]

    def n_states(self, t: int) -> int:
        return self.rewards[t].shape[0]

    def check(self, atol: float = 1e-9) -> None:
        T = self.horizon
        if len(self.feasible) != T or len(self.transitions) != T - 1:
            raise ValueError("need T reward/feasibility arrays and T-1 transition arrays")
        for t in range(T):
            if self.feasible[t].shape != self.rewards[t].shape:
                raise ValueError(f"stage {t}: feasibility mask shape mismatch")
            if not np.all(self.feasible[t].any(1)):
                raise ValueError(f"stage {t}: some state has no feasible action")
        for t, P in enumerate(self.transitions):
            if P.shape != (*self.rewards[t].shape, self.n_states(t + 1)):
                raise ValueError(f"stage {t}: transition shape {P.shape}")
            sums = P.sum(-1)[self.feasible[t]]
            if np.any(np.abs(sums - 1.0) > atol) or np.any(P < 0):
                raise ValueError(f"stage {t}: transition rows must be distributions")


@dataclass(frozen=True, eq=False)
class MDPSolution:
    value: tuple[np.ndarray, ...]  # value[t][s]
    policy: tuple[np.ndarray, ...]  # policy[t][s], action index


def _pick(Q: np.ndarray, tie_tol: float):
    """First action within ``tie_tol`` of the row maximum, and its exact Q value."""
    best = Q.max(-1, keepdims=True)
    choice = np.argmax(Q >= best - tie_tol, axis=-1)
    return choice, np.take_along_axis(Q, choice[..., None], -1)[..., 0]


def backward_induction(mdp: FiniteMDP, tie_tol: float = 0.0) -> MDPSolution:
    """Optimal values and a deterministic optimal policy.

    Values past the last stage are zero, so the last stage takes the best
    immediate reward. Ties go to the lowest action index; ``tie_tol`` widens
    what counts as a tie.
    """
    T = mdp.horizon
    values, policies = [None] * T, [None] * T
    nxt = None
    for t in range(T - 1, -1, -1):
        Q = mdp.rewards[t].copy()
        if nxt is not None:
            Q += mdp.transitions[t] @ nxt
        Q = np.where(mdp.feasible[t], Q, -np.inf)
        policies[t], values[t] = _pick(Q, tie_tol)
        nxt = values[t]
    return MDPSolution(tuple(values), tuple(policies))


def policy_values(mdp: FiniteMDP, policy) -> tuple[np.ndarray, ...]:
    """Values of a deterministic policy ``policy[t][s]``."""
    T = mdp.horizon
    out = [None] * T
    nxt = None
    for t in range(T - 1, -1, -1):
        a = np.asarray(policy[t], dtype=np.int64)
        s = np.arange(mdp.n_states(t))
        if not np.all(mdp.feasible[t][s, a]):
            raise ValueError(f"stage {t}: policy picks an infeasible action")
        v = mdp.rewards[t][s, a]
        if nxt is not None:
            v = v + mdp.transitions[t][s, a] @ nxt
        out[t] = v
        nxt = v
    return tuple(out)


def expected_price_reward(i: int, opp_mean, g1: GameG1) -> np.ndarray:
    """``(T, m, ..., A_i)`` reward ``U_i(c) - E[P] d`` given opponents' mean total demand.

    ``opp_mean`` has shape ``(T, m, ...)``; the price is linear in total
    demand, so only the mean of the opponents' total enters.
    """
    user = g1.users[i]
    tab = action_table(user)
    slope, base = price_coefficients(g1.chain.public_states, g1.pricing, g1.n_users)
    extra = np.ndim(opp_mean) - 2
    slope = slope.reshape(slope.shape + (1,) * (extra + 1))
    base = base.reshape(base.shape + (1,) * (extra + 1))
    d = tab.demand.astype(float)
    p = slope * (d + np.asarray(opp_mean, dtype=float)[..., None]) + base
    return user.utility[tab.consumption] - p * d


def build_br_mdp(i: int, estimate, g1: GameG1) -> FiniteMDP:
    """User ``i``'s model given a belief over the opponents' aggregate demand.

    ``estimate`` is an ``AggregateEstimate`` or the user's own ``(T, m, K+1)``
    table. States at every stage are private states ``(error_index, b)``
    flattened as ``error_index * B + b``.
    """
    est = estimate.tables[i] if hasattr(estimate, "tables") else np.asarray(estimate, dtype=float)
    user = g1.users[i]
    tab = action_table(user)
    T, m, B, A = g1.horizon, g1.chain.n_errors, user.n_storage, tab.n_actions
    mean = est @ np.arange(est.shape[-1], dtype=float)  # (T, m)
    r = expected_price_reward(i, mean, g1)  # (T, m, A)
    rewards = np.broadcast_to(r[:, :, None, :], (T, m, B, A)).reshape(T, m * B, A)
    feas = np.broadcast_to(tab.feasible, (m, B, A)).reshape(m * B, A)
    storage_step = np.zeros((B, A, B))
    bb, aa = np.nonzero(tab.feasible)
    storage_step[bb, aa, tab.next_storage[bb, aa]] = 1.0
    transitions = []
    for t in range(T - 1):
        P = np.einsum("jk,bac->jbakc", g1.chain.transition[t], storage_step)
        transitions.append(P.reshape(m * B, A, m * B))
    return FiniteMDP(tuple(rewards), (feas,) * T, tuple(transitions))


@dataclass(frozen=True, eq=False)
class JointBestResponse:
    """Full-information best response of one user.

    ``values[j]`` is the best-response value from error index ``j`` with the
    game's initial storage. ``policy[t]`` has shape ``(m, B_i, *B_opp)``.
    """

    user: int
    values: np.ndarray
    policy: tuple[np.ndarray, ...]


def joint_state_count(g1: GameG1) -> int:
    return g1.chain.n_errors * int(np.prod([u.n_storage for u in g1.users], dtype=object))


def _check_cap(g1: GameG1, cap: int) -> None:
    size = joint_state_count(g1)
    if size > cap:
        raise StateSpaceTooLarge(f"{size} joint states per stage exceed the cap of {cap}")


def _opponent_terms(i: int, profile: PMSProfile, g1: GameG1):
    """Opponent mean-demand total ``(T, m, *B_opp)`` and per-opponent storage kernels."""
    others = [k for k in range(g1.n_users) if k != i]
    T, m = g1.horizon, g1.chain.n_errors
    shape = tuple(g1.users[k].n_storage for k in others)
    total = np.zeros((T, m, *shape))
    for pos, k in enumerate(others):
        md = profile.mean_demand(k, g1)  # (T, m, B_k)
        view = [1] * len(shape)
        view[pos] = shape[pos]
        total = total + md.reshape(T, m, *view)
    kernels = [profile.storage_kernel(k, g1) for k in others]
    return others, total, kernels


def _propagate(W, t, kernels, g1: GameG1):
    """Expectation of next-stage values ``W[j', b_i', *b_opp']`` given stage-``t`` opponents' policies.

    Returns ``(m, B_i, *B_opp)`` indexed by the current error and the
    current opponent storages, still by the next own storage.
    """
    out = np.tensordot(g1.chain.transition[t], W, axes=(1, 0))  # (m, B_i, *opp')
    for pos, K in enumerate(kernels):
        axis = 2 + pos
        out = np.moveaxis(out, axis, -1)  # (m, ..., b_k')
        out = np.einsum("j...c,jbc->j...b", out, K[t])
        out = np.moveaxis(out, -1, axis)
    return out


def _joint_recursion(i: int, profile: PMSProfile, g1: GameG1, best: bool, tie_tol: float = 0.0):
    user = g1.users[i]
    tab = action_table(user)
    T, B = g1.horizon, user.n_storage
    others, opp_total, kernels = _opponent_terms(i, profile, g1)
    R = np.moveaxis(expected_price_reward(i, opp_total, g1), -1, 2)  # (T, m, A, *opp)
    nxt_b = np.where(tab.feasible, tab.next_storage, 0)  # (B, A)
    W = None
    policy = [None] * T
    for t in range(T - 1, -1, -1):
        Q = np.repeat(R[t][:, None], B, axis=1)  # (m, B, A, *opp)
        if W is not None:
            Q += _propagate(W, t, kernels, g1)[:, nxt_b]
        mask = tab.feasible.reshape(1, B, -1, *([1] * len(others)))
        if best:
            Q = np.where(mask, Q, -np.inf)
            choice, V = _pick(np.moveaxis(Q, 2, -1), tie_tol)
            policy[t] = choice
        else:
            pol = profile.policies[i][t]  # (m, B, A)
            Qz = np.where(mask, Q, 0.0)
            V = np.einsum("jba,jba...->jb...", pol, Qz)
        W = V
    return W, policy


def _initial_values(W, g1: GameG1, i: int) -> np.ndarray:
    """Values at every error index with the game's initial storage, ``(m,)``."""
    b0 = g1.initial_storage
    idx = (slice(None), b0[i], *[b0[k] for k in range(g1.n_users) if k != i])
    return W[idx]


def full_info_best_response(i: int, profile: PMSProfile, g1: GameG1, cap: int = DEFAULT_CAP, tie_tol: float = 0.0) -> JointBestResponse:
    """Exact best response of user ``i`` over the joint state against ``profile``."""
    _check_cap(g1, cap)
    profile.check(g1)
    W, policy = _joint_recursion(i, profile, g1, best=True, tie_tol=tie_tol)
    return JointBestResponse(i, _initial_values(W, g1, i), tuple(policy))


def user_values(i: int, profile: PMSProfile, g1: GameG1, cap: int = DEFAULT_CAP) -> np.ndarray:
    """``(m,)`` value of user ``i`` under ``profile`` from each error index and the initial storage."""
    _check_cap(g1, cap)
    profile.check(g1)
    return _initial_values(_joint_recursion(i, profile, g1, best=False)[0], g1, i)


def profile_values(profile: PMSProfile, g1: GameG1, cap: int = DEFAULT_CAP) -> np.ndarray:
    """``(n, m)`` values of every user; see :func:`user_values`."""
    return np.stack([user_values(i, profile, g1, cap=cap) for i in range(g1.n_users)])
