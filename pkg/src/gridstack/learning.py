"""Decentralized fictitious play with model-based best responses.

Each user keeps a belief over the opponents' aggregate demand at every
public cell, best-responds to it by backward induction on its private
MDP, and then averages its policy toward that best response. Beliefs move
toward the observed aggregate only at the cells an episode visits.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_random_state
from .analysis import nashconv
from .mdp import DEFAULT_CAP, backward_induction, build_br_mdp
from .model import GameG1
from .payoff import price
from .policies import PMSProfile, action_table, pure_pms, uniform_pms

BR_TIE_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class AggregateEstimate:
    """``tables[i][t, j, k]``: belief that the others demand ``k`` in total at cell ``(t, j)``."""

    tables: tuple[np.ndarray, ...]

    @classmethod
    def uniform(cls, g1: GameG1) -> "AggregateEstimate":
        total = sum(u.d_max for u in g1.users)
        tables = []
        for u in g1.users:
            k = total - u.d_max + 1
            tables.append(np.full((g1.horizon, g1.chain.n_errors, k), 1.0 / k))
        return cls(tuple(tables))

    def replace_user(self, i: int, table) -> "AggregateEstimate":
        tables = list(self.tables)
        tables[i] = np.asarray(table, dtype=float)
        return AggregateEstimate(tuple(tables))


@dataclass(frozen=True)
class Step:
    stage: int
    error_index: int
    storages: tuple[int, ...]
    demands: tuple[int, ...]
    consumptions: tuple[int, ...]
    opponent_sums: tuple[int, ...]
    rewards: tuple[float, ...]


@dataclass(frozen=True)
class Trajectory:
    steps: tuple[Step, ...]

    def __len__(self):
        return len(self.steps)

    def returns(self) -> np.ndarray:
        return np.sum([s.rewards for s in self.steps], axis=0)


def simulate_episode(profile: PMSProfile, g1: GameG1, seed=None) -> Trajectory:
    """Play one episode. ``seed`` may be an int or a shared ``numpy.random.Generator``."""
    rng = check_random_state(seed)
    tabs = [action_table(u) for u in g1.users]
    n = g1.n_users
    j = int(rng.choice(g1.chain.n_errors, p=g1.chain.initial_dist))
    b = list(g1.initial_storage)
    steps = []
    for t in range(g1.horizon):
        acts = []
        for i in range(n):
            row = profile.policies[i][t, j, b[i]]
            a = int(np.searchsorted(np.cumsum(row), rng.random() * row.sum(), side="right"))
            acts.append(min(a, len(row) - 1))
        d = [int(tabs[i].demand[a]) for i, a in enumerate(acts)]
        c = [int(tabs[i].consumption[a]) for i, a in enumerate(acts)]
        total = sum(d)
        p = float(price(total, g1.chain.public_states[t, j], g1.pricing, n))
        rewards = tuple(float(g1.users[i].utility[c[i]] - p * d[i]) for i in range(n))
        steps.append(Step(t, j, tuple(b), tuple(d), tuple(c), tuple(total - x for x in d), rewards))
        b = [int(tabs[i].next_storage[b[i], a]) for i, a in enumerate(acts)]
        if t < g1.horizon - 1:
            j = int(rng.choice(g1.chain.n_errors, p=g1.chain.transition[t][j]))
    return Trajectory(tuple(steps))


def update_policy(current: np.ndarray, best_response: np.ndarray, step: float) -> np.ndarray:
    """Convex step of a policy table toward a (pure) best-response table at every private state."""
    if not 0 < step <= 1:
        raise ValueError("step must lie in (0, 1]")
    return (1.0 - step) * np.asarray(current, dtype=float) + step * np.asarray(best_response, dtype=float)


def update_estimate(current: np.ndarray, trajectory: Trajectory, i: int, step: float) -> np.ndarray:
    """Move user ``i``'s belief toward the observed aggregate at the visited cells only."""
    if not 0 < step <= 1:
        raise ValueError("step must lie in (0, 1]")
    out = np.array(current, dtype=float, copy=True)
    for s in trajectory.steps:
        row = (1.0 - step) * out[s.stage, s.error_index]
        row[s.opponent_sums[i]] += step
        out[s.stage, s.error_index] = row
    return out


def harmonic_step(k: int) -> float:
    """Step applied after episode ``k`` (1-based): ``1 / (k + 1)``."""
    return 1.0 / (k + 1)


def best_response_tables(estimate: AggregateEstimate, g1: GameG1, tie_tol: float = BR_TIE_TOL) -> list[np.ndarray]:
    """Pure best-response action tables ``(T, m, B_i)`` of every user to its belief."""
    out = []
    for i, user in enumerate(g1.users):
        sol = backward_induction(build_br_mdp(i, estimate, g1), tie_tol=tie_tol)
        out.append(np.stack(sol.policy).reshape(g1.horizon, g1.chain.n_errors, user.n_storage))
    return out


@dataclass
class LearningResult:
    """Final profile and beliefs plus the evaluation trace.

    ``trace`` rows are ``(iteration, nashconv, max_policy_change_per_user)``
    where the change is the largest L1 distance over private states between
    consecutive policies of that user (zero at iteration 0).
    """

    profile: PMSProfile
    estimate: AggregateEstimate
    trace: list[tuple] = field(default_factory=list)

    @property
    def nashconv_curve(self) -> np.ndarray:
        return np.array([[row[0], row[1]] for row in self.trace])


def fp_mdp_solve(
    g1: GameG1,
    n_iter: int,
    schedule=harmonic_step,
    seed=None,
    eval_every: int = 50,
    cap: int = DEFAULT_CAP,
    initial_profile: PMSProfile | None = None,
) -> LearningResult:
    """Fictitious play for ``n_iter`` iterations.

    Iteration ``k`` best-responds to the current beliefs, plays one episode
    with the best responses, then applies ``schedule(k)`` to the policy
    (every private state) and to the beliefs (visited cells). NashConv is
    evaluated before the first iteration and after every ``eval_every``-th.
    """
    if n_iter < 1 or eval_every < 1:
        raise ValueError("n_iter and eval_every must be >= 1")
    rng = check_random_state(seed)
    profile = initial_profile if initial_profile is not None else uniform_pms(g1)
    estimate = AggregateEstimate.uniform(g1)
    n = g1.n_users
    eyes = [np.eye(action_table(u).n_actions) for u in g1.users]
    trace = [(0, nashconv(profile, g1, cap=cap), (0.0,) * n)]
    for k in range(1, n_iter + 1):
        br = best_response_tables(estimate, g1)
        traj = simulate_episode(pure_pms(br, g1), g1, rng)
        step = schedule(k)
        new_pols, change = [], []
        for i in range(n):
            new = update_policy(profile.policies[i], eyes[i][br[i]], step)
            change.append(float(np.abs(new - profile.policies[i]).sum(-1).max()))
            new_pols.append(new)
        profile = PMSProfile(tuple(new_pols))
        estimate = AggregateEstimate(tuple(update_estimate(estimate.tables[i], traj, i, step) for i in range(n)))
        if k % eval_every == 0:
            trace.append((k, nashconv(profile, g1, cap=cap), tuple(change)))
    return LearningResult(profile, estimate, trace)


def moving_average(values, window: int = 5) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if len(values) < window:
        return values.copy()
    return np.convolve(values, np.ones(window) / window, mode="valid")


class FictitiousPlayLearner(BaseEstimator):
    """Estimator front end for :func:`fp_mdp_solve`.

    Attributes
    ----------
    result_ : LearningResult
    profile_ : PMSProfile
    nashconv_ : float
        Last evaluated NashConv.
    """

    def __init__(self, n_iter=1000, eval_every=50, random_state=0, cap=DEFAULT_CAP):
        self.n_iter = n_iter
        self.eval_every = eval_every
        self.random_state = random_state
        self.cap = cap

    def fit(self, game: GameG1, y=None):
        self.result_ = fp_mdp_solve(
            game, self.n_iter, seed=self.random_state, eval_every=self.eval_every, cap=self.cap
        )
        self.game_ = game
        self.profile_ = self.result_.profile
        self.nashconv_ = self.result_.trace[-1][1]
        return self

    def predict(self, X):
        """Expected demands ``(n_samples, n_users)`` at private rows ``(stage, error_index, storage)``.

        Every user is evaluated at the same storage level.
        """
        check_is_fitted(self, "profile_")
        X = np.asarray(X, dtype=np.int64).reshape(-1, 3)
        cols = [self.profile_.mean_demand(i, self.game_)[X[:, 0], X[:, 1], X[:, 2]] for i in range(self.game_.n_users)]
        return np.stack(cols, axis=1)

    def score(self, game=None, y=None):
        """Negative NashConv of the learned profile."""
        check_is_fitted(self, "profile_")
        return -nashconv(self.profile_, game if game is not None else self.game_, cap=self.cap)
