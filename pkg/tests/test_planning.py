from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from embedagents.bayes import mixture
from embedagents.core import EMPTY, Alphabet, History, all_histories, interact, random_environment, random_policy
from embedagents.planning import (
    DiscountedTask,
    PlanBudget,
    Planner,
    PlannerPolicy,
    argmax_lowest,
    embedded_best_response,
    planner_policy_value,
    planner_universe,
    policy_value,
    within_eps_lowest,
)

A = Alphabet(("a0", "a1"), "action")
E = Alphabet(("o:0", "o:1"), "percept", (Fraction(0), Fraction(1)))


def model(seed, n=2, depth=3):
    lams = [interact(random_policy(A, E, depth, seed + j, grid=4), random_environment(A, E, depth, seed + 7 + j, grid=4))
            for j in range(n)]
    return mixture(lams, [Fraction(1, n)] * n)


def percept_prob(rho, h, a, e):
    return rho.mass(h.extend(a, e)) / rho.mass_action(h, a)


def brute_expectimax(rho, h, H, gamma, reward):
    """max_a Σ_e ρ(e|ha)[(1-γ) r + γ V(hae)], straight from masses."""
    if H == 0:
        return Fraction(0)
    return max(brute_q(rho, h, a, H, gamma, reward) for a in range(2))


def brute_q(rho, h, a, H, gamma, reward):
    total = Fraction(0)
    for e in range(2):
        p = percept_prob(rho, h, a, e)
        total += p * ((1 - gamma) * reward[e] + gamma * brute_expectimax(rho, h.extend(a, e), H - 1, gamma, reward))
    return total


def brute_self_value(rho, h, H, gamma, reward):
    """Σ over length-H continuations of ρ(cont|h) Σ_i γ^i (1-γ) r_i."""
    total = Fraction(0)
    base = rho.mass(h)
    for cont in all_histories(2, 2, H):
        full = History(tuple(h) + tuple(cont))
        m = rho.mass(full) / base
        total += m * sum(gamma ** i * (1 - gamma) * reward[e] for i, (_, e) in enumerate(cont))
    return total


@pytest.mark.parametrize("gamma", [Fraction(0), Fraction(3, 10), Fraction(9, 10)])
def test_expectimax_matches_brute_force(gamma):
    rho = model(5)
    task = DiscountedTask.for_percepts(E, gamma)
    p = Planner(rho, task)
    for h in [EMPTY, History([(1, 0)])]:
        H = 3 - len(h)
        for a in range(2):
            assert p.q_opt(h, a, H) == brute_q(rho, h, a, H, gamma, E.rewards)


@pytest.mark.parametrize("gamma", [Fraction(0), Fraction(1, 2)])
def test_on_policy_value_matches_enumeration(gamma):
    rho = model(9)
    task = DiscountedTask.for_percepts(E, gamma)
    assert policy_value(rho, EMPTY, task, PlanBudget(3)).value == brute_self_value(rho, EMPTY, 3, gamma, E.rewards)


def test_gamma_zero_is_immediate_reward_and_k_independent():
    rho = model(2)
    task = DiscountedTask.for_percepts(E, 0)
    p = Planner(rho, task)
    for a in range(2):
        immediate = rho.conditional_percept(EMPTY, a)[1]
        assert p.q_opt(EMPTY, a, 1) == immediate
        assert {p.q_k(EMPTY, a, k, 1) for k in (1, 2, 3)} == {immediate}


def test_k_one_is_on_policy_q():
    rho = model(4)
    p = Planner(rho, DiscountedTask.for_percepts(E, Fraction(1, 2)))
    for a in range(2):
        assert p.q_k(EMPTY, a, 1, 3) == p.q_self(EMPTY, a, 3)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10 ** 5), st.integers(1, 3), st.sampled_from([Fraction(3, 10), Fraction(7, 10)]))
def test_planner_value_two_routes_agree(seed, k, gamma):
    """Direct recursion against the interaction universe of the planner policy."""
    rho = model(seed)
    task = DiscountedTask.for_percepts(E, gamma)
    direct = planner_policy_value(rho, EMPTY, k, task, 3)
    via_universe = Planner(planner_universe(rho, task, PlanBudget(3), k, end=3), task).value_self(EMPTY, 3)
    assert direct == via_universe


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10 ** 5))
def test_optimal_dominates_every_k(seed):
    rho = model(seed)
    p = Planner(rho, DiscountedTask.for_percepts(E, Fraction(7, 10)))
    for a in range(2):
        for k in (1, 2, 3):
            assert p.q_k(EMPTY, a, k, 3) <= p.q_opt(EMPTY, a, 3)
        assert p.q_k(EMPTY, a, 3, 3) == p.q_opt(EMPTY, a, 3)  # k = horizon is full expectimax


def test_budget_from_tolerance():
    assert PlanBudget.from_tolerance(1e-6, 0.5).horizon == 20
    assert PlanBudget.from_tolerance(1e-6, 0).horizon == 1
    assert PlanBudget(4).error_bound(Fraction(1, 2)) == Fraction(1, 16)
    with pytest.raises(ValueError):
        PlanBudget(0)


def test_ties_break_to_lowest_index():
    assert argmax_lowest([1, 3, 3]) == 1
    assert within_eps_lowest([Fraction(9, 10), 1], Fraction(1, 5)) == 0
    assert within_eps_lowest([Fraction(9, 10), 1], Fraction(1, 20)) == 1


def test_embedded_best_response_and_planner_policy_agree():
    rho = model(12)
    task = DiscountedTask.for_percepts(E, Fraction(1, 2))
    budget = PlanBudget(3)
    a, est = embedded_best_response(rho, EMPTY, task, budget)
    pol = PlannerPolicy(rho, task, budget, "optimal")
    assert pol.choose(EMPTY) == a
    assert pol.distribution(EMPTY)[a] == 1
    assert est.error_bound == Fraction(1, 8)


def test_raw_values_undo_the_reward_scale():
    task = DiscountedTask.for_percepts(E, 0, reward_scale=3)
    assert task.raw(task.reward(1)) == 3
    with pytest.raises(ValueError):
        DiscountedTask.for_percepts(E, 1)
