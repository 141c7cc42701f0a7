import json
from fractions import Fraction

import pytest

from embedagents import scenarios as sc
from embedagents.bayes import mixture
from embedagents.core import EMPTY, Alphabet, deterministic_policy, interact, random_environment, uniform_policy
from embedagents.equilibria import (
    DependencyDistribution,
    InconsistentCompletion,
    check_dependency_eq,
    check_ee,
    check_nash,
    check_see,
    ee_infeasibility_search,
    see_not_ee_beliefs,
    subjective_br_gap,
)
from embedagents.planning import DiscountedTask

HALF = Fraction(1, 2)


def test_matching_pennies_has_only_the_mixed_equilibrium():
    g = sc.matching_pennies()
    a, b = g.actions
    mixed = [{x: HALF for x in a}, {x: HALF for x in b}]
    assert check_nash(g, mixed).passed
    for x in a:
        for y in b:
            assert not check_nash(g, [x, y]).passed


def test_pd_nash_witness_names_the_deviation():
    v = check_nash(sc.prisoner_dilemma(), ["C", "C"])
    assert not v.passed
    assert {w["deviation"] for w in v.witnesses} == {"D"}
    assert all(w["gap"] == 1 for w in v.witnesses)


def test_missing_off_path_completion_raises():
    g = sc.prisoner_dilemma()
    with pytest.raises(InconsistentCompletion):
        DependencyDistribution(g, {("C", "C"): Fraction(1)})


def test_completion_disagreeing_with_joint_raises():
    g = sc.prisoner_dilemma()
    joint = {("C", "C"): HALF, ("D", "D"): HALF}
    bad = {(0, "C"): {"D": Fraction(1)}}
    with pytest.raises(InconsistentCompletion):
        DependencyDistribution(g, joint, bad)


def test_from_profile_is_a_product():
    g = sc.prisoner_dilemma()
    dep = DependencyDistribution.from_profile(g, [{"C": HALF, "D": HALF}, "D"])
    assert dep.joint[("C", "D")] == HALF and dep.joint[("C", "C")] == 0
    assert dep.conditional(0, "C") == dep.conditional(0, "D")
    assert check_dependency_eq(g, DependencyDistribution.from_profile(g, ["D", "D"])).passed


def test_pd_mutual_cooperation_is_a_dependency_equilibrium():
    g = sc.prisoner_dilemma()
    dep = DependencyDistribution.from_limit(g, {("C", "C"): "1 - 1/r", ("D", "D"): "1/r",
                                                ("C", "D"): "0", ("D", "C"): "0"})
    assert dep.joint[("C", "C")] == 1
    assert dep.conditional(0, "D") == {("C",): 0, ("D",): 1}
    assert check_dependency_eq(g, dep).passed
    assert check_ee(g, ["C", "C"], dep).passed


def test_pd_cooperation_is_not_ruled_out_by_the_lp():
    rep = ee_infeasibility_search(sc.prisoner_dilemma(), ("C", "C"))
    assert not rep.infeasible_everywhere


def test_see_not_ee_game():
    g = sc.see_not_ee_game()
    assert check_see(g, ["A", "A"], see_not_ee_beliefs(g)).passed
    rep = ee_infeasibility_search(g, ("A", "A"), slack=1)
    assert rep.infeasible_everywhere


def test_verdict_record_is_json():
    v = check_nash(sc.prisoner_dilemma(), ["C", "C"])
    rec = v.to_record()
    text = json.dumps(rec)
    assert json.loads(text)["pass"] is False
    assert rec["witnesses"][0]["gap"] == "1"


def test_subjective_gap_is_zero_for_the_optimal_choice_and_positive_otherwise():
    A = Alphabet(("a0", "a1"), "action")
    E = Alphabet(("o:0", "o:1"), "percept", (Fraction(0), Fraction(1)))
    env = random_environment(A, E, 2, 3)
    rho = mixture([interact(uniform_policy(A, E, 2), env)], [Fraction(1)])
    task = DiscountedTask.for_percepts(E, 0)
    q = [rho.conditional_percept(EMPTY, a)[1] for a in range(2)]
    best = max(range(2), key=lambda a: q[a])
    good = deterministic_policy(A, E, 2, lambda h: best, one=Fraction(1))
    bad = deterministic_policy(A, E, 2, lambda h: 1 - best, one=Fraction(1))
    assert subjective_br_gap(good, rho, EMPTY, task, 1) == 0
    assert subjective_br_gap(bad, rho, EMPTY, task, 1) == abs(q[0] - q[1])
