import itertools
from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_g1
from gridstack.learning import AggregateEstimate
from gridstack.mdp import (
    FiniteMDP,
    StateSpaceTooLarge,
    backward_induction,
    build_br_mdp,
    expected_price_reward,
    full_info_best_response,
    policy_values,
    profile_values,
    user_values,
)
from gridstack.model import ForecastChain, GameG1, PricingParams, UserSpec
from gridstack.payoff import ActionProfile, JointState, price, stage_reward_r, step_state
from gridstack.policies import PMSProfile, action_table, pure_pms, uniform_pms


def random_mdp(rng, T=3, S=3, A=3):
    rewards = [rng.normal(size=(S, A)) for _ in range(T)]
    feas = [rng.random((S, A)) < 0.7 for _ in range(T)]
    for f in feas:
        f[:, 0] = True
    trans = [rng.dirichlet(np.ones(S), size=(S, A)) for _ in range(T - 1)]
    return FiniteMDP(rewards, feas, trans)


def test_single_stage_takes_best_reward():
    mdp = FiniteMDP([[[1.0, 3.0], [2.0, -1.0]]], [np.ones((2, 2), bool)], [])
    sol = backward_induction(mdp)
    np.testing.assert_array_equal(sol.value[0], [3.0, 2.0])
    np.testing.assert_array_equal(sol.policy[0], [1, 0])


def test_hand_built_two_stage():
    # stage 0: a0 gives 1 and goes to s0, a1 gives 0 and goes to s1 w.p. 0.8
    rewards = [np.array([[1.0, 0.0], [0.0, 0.5]]), np.array([[0.0, 1.0], [4.0, 2.0]])]
    trans = [np.array([[[1.0, 0.0], [0.2, 0.8]], [[0.5, 0.5], [0.0, 1.0]]])]
    sol = backward_induction(FiniteMDP(rewards, [np.ones((2, 2), bool)] * 2, trans))
    np.testing.assert_allclose(sol.value[1], [1.0, 4.0])
    # s0: a0 -> 1 + 1 = 2, a1 -> 0 + 0.2*1 + 0.8*4 = 3.4 ; s1: a0 -> 0 + 2.5, a1 -> 0.5 + 4
    np.testing.assert_allclose(sol.value[0], [3.4, 4.5])
    np.testing.assert_array_equal(sol.policy[0], [1, 1])


def test_ties_go_to_lowest_action():
    mdp = FiniteMDP([[[1.0, 1.0, 0.5]]], [np.ones((1, 3), bool)], [])
    assert backward_induction(mdp).policy[0][0] == 0
    near = FiniteMDP([[[1.0, 1.0 + 1e-12]]], [np.ones((1, 2), bool)], [])
    assert backward_induction(near).policy[0][0] == 1
    assert backward_induction(near, tie_tol=1e-9).policy[0][0] == 0


def _enumerate_policies(mdp):
    per_stage = []
    for t in range(mdp.horizon):
        choices = [np.flatnonzero(mdp.feasible[t][s]) for s in range(mdp.n_states(t))]
        per_stage.append(list(itertools.product(*choices)))
    return itertools.product(*per_stage)


def test_random_mdps_match_policy_enumeration():
    for seed in range(50):
        rng = np.random.default_rng(seed)
        mdp = random_mdp(rng, T=2, S=2, A=3)
        mdp.check()
        sol = backward_induction(mdp)
        best = np.full(2, -np.inf)
        for pol in _enumerate_policies(mdp):
            best = np.maximum(best, policy_values(mdp, pol)[0])
        np.testing.assert_allclose(sol.value[0], best, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 100_000))
def test_bellman_consistency_and_dominance(seed):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng)
    sol = backward_induction(mdp)
    again = policy_values(mdp, sol.policy)
    for t in range(mdp.horizon):
        np.testing.assert_array_equal(again[t], sol.value[t])
    other = [np.array([rng.choice(np.flatnonzero(f)) for f in mdp.feasible[t]]) for t in range(mdp.horizon)]
    assert np.all(policy_values(mdp, other)[0] <= sol.value[0] + 1e-12)


def test_check_rejects_bad_rows():
    bad = FiniteMDP([np.zeros((1, 1)), np.zeros((1, 1))], [np.ones((1, 1), bool)] * 2, [np.array([[[0.5]]])])
    with pytest.raises(ValueError):
        bad.check()
    empty = FiniteMDP([np.zeros((1, 2))], [np.zeros((1, 2), bool)], [])
    with pytest.raises(ValueError):
        empty.check()


def _ex2_like(T=1, e=5.0):
    chain = ForecastChain([e] * T, [0.0], np.ones((T - 1, 1, 1)))
    users = [UserSpec(d_max=4, c_max=6, b_max=2, theta=th) for th in (0.9, 1.0, 1.1)]
    return GameG1(chain, users, PricingParams(1.5, 1.5))


def test_expected_price_example():
    g1 = _ex2_like()
    # belief 0.5 on 2 and 0.5 on 4: the mean price at own demand 1
    p = 0.5 * price(3, 5.0, g1.pricing, 3) + 0.5 * price(5, 5.0, g1.pricing, 3)
    assert p == pytest.approx(0.625, abs=1e-15)
    r = expected_price_reward(0, np.array([[3.0]]), g1)
    tab = action_table(g1.users[0])
    a = tab.index(1, 1)
    assert r[0, 0, a] == pytest.approx(0.9 - 0.625, abs=1e-14)


def test_point_mass_estimate_reproduces_stage_reward():
    g1 = _ex2_like()
    est = np.zeros((1, 1, 9))
    est[0, 0, 3] = 1.0
    mdp = build_br_mdp(1, est, g1)
    mdp.check()
    tab = action_table(g1.users[1])
    for b in range(3):
        for a in np.flatnonzero(tab.feasible[b]):
            d, c = int(tab.demand[a]), int(tab.consumption[a])
            # opponents split the observed total of 3 among themselves
            r = stage_reward_r(1, JointState(0, 0, (0, b, 0)), ActionProfile((2, d, 1), (2, c, 1)), g1)
            assert mdp.rewards[0][b, a] == pytest.approx(r, abs=1e-13)


def test_storage_transition_in_br_mdp(ex2):
    mdp = build_br_mdp(0, AggregateEstimate.uniform(ex2), ex2)
    mdp.check()
    tab = action_table(ex2.users[0])
    a = tab.index(2, 3)
    row = mdp.transitions[0][0 * 3 + 1, a].reshape(3, 3)  # from error 0, storage 1
    np.testing.assert_allclose(row[:, 0], ex2.chain.transition[0][0], atol=1e-15)
    assert row[:, 1:].sum() == 0.0


def _random_mixed(g1, rng):
    pols = []
    for user in g1.users:
        tab = action_table(user)
        raw = rng.random((g1.horizon, g1.chain.n_errors, user.n_storage, tab.n_actions)) * tab.feasible
        pols.append(raw / raw.sum(-1, keepdims=True))
    return PMSProfile(tuple(pols))


def _joint_values_oracle(profile, g1):
    """Oracle: explicit recursion over joint states and joint actions."""
    tabs = [action_table(u) for u in g1.users]
    n = g1.n_users

    @lru_cache(maxsize=None)
    def V(t, j, b):
        supports = [np.flatnonzero(profile.policies[i][t, j, b[i]] > 0) for i in range(n)]
        out = np.zeros(n)
        for acts in itertools.product(*supports):
            w = np.prod([profile.policies[i][t, j, b[i], a] for i, a in enumerate(acts)])
            ap = ActionProfile(tuple(int(tabs[i].demand[a]) for i, a in enumerate(acts)),
                               tuple(int(tabs[i].consumption[a]) for i, a in enumerate(acts)))
            state = JointState(t, j, b)
            r = np.array([stage_reward_r(i, state, ap, g1) for i in range(n)])
            if t < g1.horizon - 1:
                r = r + sum(p * V(s.stage, s.error_index, s.storages) for p, s in step_state(state, ap, g1))
            out += w * r
        return out

    return np.stack([V(0, j, tuple(g1.initial_storage)) for j in range(g1.chain.n_errors)], axis=1)


@pytest.mark.parametrize("seed", range(4))
def test_user_values_match_explicit_recursion(seed):
    rng = np.random.default_rng(seed)
    g1 = random_g1(rng, n=2, T=2, m=2, d_max=2, b_max=1)
    prof = _random_mixed(g1, rng)
    np.testing.assert_allclose(profile_values(prof, g1), _joint_values_oracle(prof, g1), atol=1e-11)


def test_single_user_br_equals_own_mdp():
    rng = np.random.default_rng(7)
    g1 = random_g1(rng, n=1, T=3, m=2, d_max=3, b_max=2)
    own = backward_induction(build_br_mdp(0, np.ones((3, 2, 1)), g1))
    br = full_info_best_response(0, uniform_pms(g1), g1)
    B = g1.users[0].n_storage
    np.testing.assert_allclose(br.values, own.value[0].reshape(2, B)[:, 0], atol=1e-12)


def _enumerate_reachable_pure(g1, i):
    """Every pure table of user ``i`` over its reachable private states."""
    tab = action_table(g1.users[i])
    T, m = g1.horizon, g1.chain.n_errors
    B = g1.users[i].n_storage

    def rec(t, table, storages):
        if t == T:
            yield table
            return
        cells = [(j, b) for j in range(m) for b in sorted(storages)]
        for combo in itertools.product(*[np.flatnonzero(tab.feasible[b]) for _, b in cells]):
            new = table.copy()
            for (j, b), a in zip(cells, combo):
                new[t, j, b] = a
            yield from rec(t + 1, new, {int(tab.next_storage[b, a]) for (_, b), a in zip(cells, combo)})

    first = tab.feasible.argmax(1)  # a feasible filler for unreachable cells
    start = np.broadcast_to(first, (T, m, B)).copy()
    yield from rec(0, start, {g1.initial_storage[i]})


def test_br_matches_pure_enumeration():
    rng = np.random.default_rng(11)
    chain = ForecastChain([4.0, 6.0], [-1.0, 1.0], [[0.4, 0.6], [0.7, 0.3]])
    users = [UserSpec(d_max=1, c_max=2, b_max=1, theta=float(th)) for th in (0.9, 1.0, 1.1)]
    g1 = GameG1(chain, users, PricingParams(1.5, 1.5))
    prof = _random_mixed(g1, rng)
    for i in range(3):
        best = np.full(2, -np.inf)
        for table in _enumerate_reachable_pure(g1, i):
            one = pure_pms([table] * 3, g1).policies[i]
            best = np.maximum(best, user_values(i, prof.replace_user(i, one), g1))
        br = full_info_best_response(i, prof, g1)
        np.testing.assert_allclose(br.values, best, atol=1e-12)
        assert np.all(br.values >= user_values(i, prof, g1) - 1e-12)


def test_state_space_cap(ex2):
    with pytest.raises(StateSpaceTooLarge):
        full_info_best_response(0, uniform_pms(ex2), ex2, cap=10)
    with pytest.raises(StateSpaceTooLarge):
        user_values(0, uniform_pms(ex2), ex2, cap=80)
    assert user_values(0, uniform_pms(ex2), ex2, cap=81).shape == (3,)
