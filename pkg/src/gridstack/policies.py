"""Strategy representations.

A user's G1 action is a pair ``(d, c)``. Actions are indexed in one fixed
order per user, demand ascending and, within a demand, consumption
descending. Lowest-index tie-breaking therefore prefers small demand and,
for equal demand, consuming everything available.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ._validation import frozen
from .model import GameG1, GameG2, UserSpec


@dataclass(frozen=True, eq=False)
class PurePublicPolicy:
    """Demand table ``demand[t, j]`` of one user in the reduced game."""

    demand: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.demand)
        if arr.ndim != 2:
            raise ValueError(f"demand table must be (T, m), got shape {arr.shape}")
        if not np.issubdtype(arr.dtype, np.integer):
            if not np.all(arr == np.round(arr)):
                raise ValueError("demands must be integers")
        object.__setattr__(self, "demand", frozen(arr.astype(np.int64)))

    def __getitem__(self, key):
        return self.demand[key]

    def __eq__(self, other):
        return isinstance(other, PurePublicPolicy) and np.array_equal(self.demand, other.demand)

    __hash__ = None


def stack_profile(profile) -> np.ndarray:
    """``(n, T, m)`` integer array from a list of policies or an array."""
    if isinstance(profile, np.ndarray):
        return profile.astype(np.int64, copy=False)
    return np.stack([p.demand if isinstance(p, PurePublicPolicy) else np.asarray(p) for p in profile]).astype(np.int64)


def unstack_profile(demands: np.ndarray) -> list[PurePublicPolicy]:
    return [PurePublicPolicy(d) for d in np.asarray(demands)]


def check_profile(profile, g2: GameG2) -> np.ndarray:
    D = stack_profile(profile)
    expected = (g2.n_users, g2.horizon, g2.chain.n_errors)
    if D.shape != expected:
        raise ValueError(f"profile must cover {expected} (users, stages, errors), got {D.shape}")
    if np.any(D < 0) or np.any(D > g2.d_max[:, None, None]):
        raise ValueError("profile demand outside 0..d_max")
    return D


def zero_profile(g2: GameG2) -> list[PurePublicPolicy]:
    shape = (g2.horizon, g2.chain.n_errors)
    return [PurePublicPolicy(np.zeros(shape, dtype=np.int64)) for _ in range(g2.n_users)]


def random_profile(g2: GameG2, random_state=None) -> list[PurePublicPolicy]:
    rng = np.random.default_rng(random_state)
    shape = (g2.horizon, g2.chain.n_errors)
    return [PurePublicPolicy(rng.integers(0, dm + 1, size=shape)) for dm in g2.d_max]


@dataclass(frozen=True)
class ActionTable:
    """All ``(d, c)`` pairs of one user and their feasibility per storage level."""

    demand: np.ndarray  # (A,)
    consumption: np.ndarray  # (A,)
    feasible: np.ndarray  # (B, A) bool
    next_storage: np.ndarray  # (B, A), -1 where infeasible

    @property
    def n_actions(self) -> int:
        return len(self.demand)

    def index(self, d: int, c: int) -> int:
        hits = np.flatnonzero((self.demand == d) & (self.consumption == c))
        if not len(hits):
            raise KeyError(f"no action (d={d}, c={c})")
        return int(hits[0])


@lru_cache(maxsize=None)
def _action_table(d_max: int, c_max: int, b_max: int) -> ActionTable:
    d = np.repeat(np.arange(d_max + 1), c_max + 1)
    c = np.tile(np.arange(c_max, -1, -1), d_max + 1)
    b = np.arange(b_max + 1)[:, None]
    feasible = (c[None, :] <= b + d[None, :]) & (c[None, :] >= b + d[None, :] - b_max)
    nxt = np.where(feasible, b + d[None, :] - c[None, :], -1)
    return ActionTable(frozen(d), frozen(c), frozen(feasible), frozen(nxt))


def action_table(user: UserSpec) -> ActionTable:
    return _action_table(user.d_max, user.c_max, user.b_max)


@dataclass(frozen=True, eq=False)
class PMSProfile:
    """Private Markovian strategies, one table per user.

    ``policies[i][t, j, b, a]`` is the probability user ``i`` plays action
    ``a`` (see :func:`action_table`) at stage ``t``, error index ``j`` and
    own storage ``b``.
    """

    policies: tuple[np.ndarray, ...]

    def __post_init__(self):
        object.__setattr__(self, "policies", tuple(np.asarray(p, dtype=float) for p in self.policies))

    @property
    def n_users(self) -> int:
        return len(self.policies)

    def replace_user(self, i: int, table: np.ndarray) -> "PMSProfile":
        pols = list(self.policies)
        pols[i] = np.asarray(table, dtype=float)
        return PMSProfile(tuple(pols))

    def check(self, g1: GameG1, atol: float = 1e-9) -> None:
        """Raise ``ValueError`` unless every row is a distribution on feasible actions."""
        if self.n_users != g1.n_users:
            raise ValueError("one policy table per user required")
        for i, (pol, user) in enumerate(zip(self.policies, g1.users)):
            tab = action_table(user)
            shape = (g1.horizon, g1.chain.n_errors, user.n_storage, tab.n_actions)
            if pol.shape != shape:
                raise ValueError(f"user {i}: policy shape {pol.shape}, expected {shape}")
            if np.any(pol < -atol):
                raise ValueError(f"user {i}: negative probability")
            if np.any(np.abs(pol.sum(-1) - 1.0) > atol):
                raise ValueError(f"user {i}: rows do not sum to 1")
            if np.any(pol[..., ~tab.feasible] > atol):
                raise ValueError(f"user {i}: mass on infeasible actions")

    def mean_demand(self, i: int, g1: GameG1) -> np.ndarray:
        """Expected demand ``(T, m, B_i)`` of user ``i``."""
        return self.policies[i] @ action_table(g1.users[i]).demand

    def storage_kernel(self, i: int, g1: GameG1) -> np.ndarray:
        """``(T, m, B_i, B_i)`` own-storage transition of user ``i``."""
        user = g1.users[i]
        tab = action_table(user)
        B = user.n_storage
        onehot = np.zeros((B, tab.n_actions, B))
        bb, aa = np.nonzero(tab.feasible)
        onehot[bb, aa, tab.next_storage[bb, aa]] = 1.0
        return np.einsum("tjba,bac->tjbc", self.policies[i], onehot)


def uniform_pms(g1: GameG1) -> PMSProfile:
    """Uniform over feasible actions at every private state."""
    pols = []
    for user in g1.users:
        feas = action_table(user).feasible.astype(float)
        row = feas / feas.sum(-1, keepdims=True)
        pols.append(np.broadcast_to(row, (g1.horizon, g1.chain.n_errors, *row.shape)).copy())
    return PMSProfile(tuple(pols))


def pure_pms(action_indices, g1: GameG1) -> PMSProfile:
    """Point-mass profile from per-user integer tables ``(T, m, B_i)`` of action indices."""
    pols = []
    for idx, user in zip(action_indices, g1.users):
        idx = np.asarray(idx, dtype=np.int64)
        n_act = action_table(user).n_actions
        pols.append(np.eye(n_act)[idx])
    return PMSProfile(tuple(pols))


def pure_actions(profile: PMSProfile) -> list[np.ndarray]:
    """Inverse of :func:`pure_pms`; raises if some row is not a point mass."""
    out = []
    for pol in profile.policies:
        if not np.all(np.isclose(pol.max(-1), 1.0)):
            raise ValueError("profile is not pure")
        out.append(pol.argmax(-1))
    return out
