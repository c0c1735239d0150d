"""Verification instruments: NashConv, the potential identity and storage dominance."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_random_state
from .mdp import DEFAULT_CAP, full_info_best_response, profile_values, user_values
from .model import GameG1, GameG2, chain_marginals, reach_probabilities
from .payoff import demand_columns, potential_columns, price_coefficients
from .policies import PMSProfile, action_table, pure_pms, random_profile, stack_profile

NASHCONV_CLAMP = 1e-9


def exploitability_gaps(profile: PMSProfile, g1: GameG1, cap: int = DEFAULT_CAP) -> np.ndarray:
    """``(n, k)`` best-response gains at each of the ``k`` initial error indices."""
    own = profile_values(profile, g1, cap=cap)
    starts = g1.chain.initial_states
    br = np.stack([full_info_best_response(i, profile, g1, cap=cap).values for i in range(g1.n_users)])
    return br[:, starts] - own[:, starts]


def nashconv(profile: PMSProfile, g1: GameG1, cap: int = DEFAULT_CAP) -> float:
    """Mean best-response gain over initial states and users.

    Initial states are the error indices with positive initial probability,
    each with the game's initial storage. Values in ``[-1e-9, 0)`` are
    clamped to zero; anything lower signals a bug and raises.
    """
    value = float(exploitability_gaps(profile, g1, cap=cap).mean())
    if value < -NASHCONV_CLAMP:
        raise ArithmeticError(f"negative NashConv {value!r}")
    return max(value, 0.0)


def potential_discrepancy(D, i: int, deviation, g2: GameG2) -> float:
    """``max_j |dV_i(j) - dPhi(j)|`` for user ``i`` switching to ``deviation``."""
    D = stack_profile(D)
    D2 = D.copy()
    D2[i] = np.asarray(deviation)
    R = reach_probabilities(g2.chain)
    dv = np.einsum("stm,tm->s", R, demand_columns(D2, g2)[i] - demand_columns(D, g2)[i])
    dphi = np.einsum("stm,tm->s", R, potential_columns(D2, g2) - potential_columns(D, g2))
    return float(np.abs(dv - dphi).max())


def verify_potential_property(g2: GameG2, trials: int, seed=None) -> float:
    """Largest ``|dV_i - dPhi|`` over random profiles and unilateral deviations."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = check_random_state(seed)
    worst = 0.0
    for _ in range(trials):
        D = stack_profile(random_profile(g2, rng))
        i = int(rng.integers(g2.n_users))
        dev = rng.integers(0, g2.d_max[i] + 1, size=D.shape[1:])
        worst = max(worst, potential_discrepancy(D, i, dev, g2))
    return worst


@dataclass
class DominanceReport:
    """Outcome of :func:`check_storage_dominance`.

    ``min_gap`` is the smallest value advantage of the storage strategy over
    all comparisons; ``counterexample`` holds the first comparison whose gap
    is not positive.
    """

    condition_c1_holds: bool
    dominated_strategy_count: int
    family_size: int
    comparisons: int = 0
    min_gap: float = float("inf")
    counterexample: dict | None = None
    per_user: list[int] = field(default_factory=list)

    @property
    def strictly_dominates(self) -> bool:
        return self.counterexample is None

    def to_dict(self) -> dict:
        return {
            "condition_c1_holds": self.condition_c1_holds,
            "dominated_strategy_count": self.dominated_strategy_count,
            "family_size": self.family_size,
            "comparisons": self.comparisons,
            "min_gap": self.min_gap,
            "counterexample": self.counterexample,
            "per_user": self.per_user,
        }


def constant_action_table(actions, g1: GameG1, i: int) -> np.ndarray:
    """Pure table for user ``i`` playing ``actions[t] = (d, c)`` at every error and storage.

    Where ``(d, c)`` is infeasible at some storage level the fallback keeps
    the demand and consumes as much as allowed.
    """
    user = g1.users[i]
    tab = action_table(user)
    T, m, B = g1.horizon, g1.chain.n_errors, user.n_storage
    out = np.empty((T, m, B), dtype=np.int64)
    for t, (d, c) in enumerate(actions):
        for b in range(B):
            a = tab.index(d, c)
            if not tab.feasible[b, a]:
                c_ok = min(max(c, b + d - user.b_max), b + d)
                a = tab.index(d, c_ok)
            out[t, :, b] = a
    return out


def non_storage_strategies(g1: GameG1, i: int, demands=(1, 2, 3)):
    """Yield pure tables where user ``i`` consumes exactly its demand, one level per stage."""
    for combo in itertools.product(demands, repeat=g1.horizon):
        yield combo, constant_action_table([(d, d) for d in combo], g1, i)


def example_storage_strategy(g1: GameG1, i: int, first=(3, 2), later=(1, 2)) -> np.ndarray:
    """Buy extra at stage one, keep it, consume it later."""
    return constant_action_table([first] + [later] * (g1.horizon - 1), g1, i)


def condition_c1(g1: GameG1, i: int, demands=(1, 2, 3), first_total=5, later_total=3, level=0.9) -> bool:
    """Sufficient price condition for storage dominance on a two-stage game.

    Checks ``P1 < level < P2`` where ``P1`` is the stage-one price with
    ``first_total`` units from user ``i`` and ``P2`` the stage-two price
    with ``later_total`` units, over every reachable output and every
    total the opponents can demand.
    """
    if g1.horizon != 2:
        raise ValueError("condition C1 is stated for two stages")
    mu = chain_marginals(g1.chain)
    e = g1.chain.public_states
    n_opp = g1.n_users - 1
    opp_totals = sorted({sum(c) for c in itertools.product(demands, repeat=n_opp)}) if n_opp else [0]
    opp = np.array(opp_totals, dtype=float)
    s1, b1 = price_coefficients(e[0][mu[0] > 0], g1.pricing, g1.n_users)
    s2, b2 = price_coefficients(e[1][mu[1] > 0], g1.pricing, g1.n_users)
    left = s1[:, None] * (first_total + opp[None]) + b1[:, None]
    right = s2[:, None] * (later_total + opp[None]) + b2[:, None]
    return bool(left.max() < level and level < right.min())


def check_storage_dominance(
    g1: GameG1,
    storage_strategy=None,
    non_storage_set=None,
    cap: int = DEFAULT_CAP,
    **c1_kwargs,
) -> DominanceReport:
    """Compare a storage strategy against a non-storage family by exact values.

    ``storage_strategy`` maps user index to a pure action table
    ``(T, m, B_i)`` (default :func:`example_storage_strategy`).
    ``non_storage_set`` maps user index to an iterable of ``(label, table)``
    (default :func:`non_storage_strategies`). Each opponent ranges over its
    own family. A comparison is a win when the storage strategy's value
    exceeds the alternative's at every initial state.
    """
    storage_strategy = storage_strategy or (lambda i: example_storage_strategy(g1, i))
    non_storage_set = non_storage_set or (lambda i: non_storage_strategies(g1, i))
    families = [list(non_storage_set(i)) for i in range(g1.n_users)]
    starts = g1.chain.initial_states
    c1 = all(condition_c1(g1, i, **c1_kwargs) for i in range(g1.n_users)) if g1.horizon == 2 else False
    report = DominanceReport(c1, 0, sum(len(f) for f in families))
    for i in range(g1.n_users):
        mine = storage_strategy(i)
        others = [k for k in range(g1.n_users) if k != i]
        dominated = 0
        for label, alt in families[i]:
            strict = True
            for opp in itertools.product(*(families[k] for k in others)):
                tables = [None] * g1.n_users
                for k, (_, tab) in zip(others, opp):
                    tables[k] = tab
                tables[i] = mine
                v_store = user_values(i, pure_pms(tables, g1), g1, cap=cap)[starts]
                tables[i] = alt
                v_alt = user_values(i, pure_pms(tables, g1), g1, cap=cap)[starts]
                gap = float((v_store - v_alt).min())
                report.comparisons += 1
                report.min_gap = min(report.min_gap, gap)
                if gap <= 0:
                    strict = False
                    if report.counterexample is None:
                        report.counterexample = {
                            "user": i,
                            "alternative": list(label),
                            "opponents": [list(lab) for lab, _ in opp],
                            "gap": gap,
                        }
            dominated += strict
        report.per_user.append(dominated)
        report.dominated_strategy_count += dominated
    return report


def _reachable_errors(g1: GameG1):
    """Per stage, the error indices with positive probability from the initial support."""
    mu = chain_marginals(g1.chain)
    return [np.flatnonzero(mu[t] > 0) for t in range(g1.horizon)]


def pure_deviation_gains(profile: PMSProfile, g1: GameG1, i: int, cap: int = DEFAULT_CAP):
    """Largest gain of user ``i`` over all pure private deviations, by enumeration.

    Enumerates every assignment of feasible actions to the private states
    ``(e, b_i)`` user ``i`` can reach; unreachable states keep the original
    action. Returns, per initial error index with positive probability, the
    largest gain over all deviations.
    """
    user = g1.users[i]
    tab = action_table(user)
    base_values = user_values(i, profile, g1, cap=cap)
    starts = g1.chain.initial_states
    reach_e = _reachable_errors(g1)
    original = profile.policies[i].argmax(-1)
    best = np.full(len(starts), -np.inf)

    def recurse(t, table, storages):
        nonlocal best
        if t == g1.horizon:
            v = user_values(i, profile.replace_user(i, np.eye(tab.n_actions)[table]), g1, cap=cap)
            best = np.maximum(best, v[starts] - base_values[starts])
            return
        cells = [(j, b) for j in reach_e[t] for b in sorted(storages)]
        choices = [np.flatnonzero(tab.feasible[b]) for _, b in cells]
        for combo in itertools.product(*choices):
            new = table.copy()
            nxt = set()
            for (j, b), a in zip(cells, combo):
                new[t, j, b] = a
                nxt.add(int(tab.next_storage[b, a]))
            recurse(t + 1, new, nxt)

    recurse(0, original.copy(), {g1.initial_storage[i]})
    return best
