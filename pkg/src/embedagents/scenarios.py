"""Worked constructions as parameterised factories.

Prisoner's dilemma family, the twin prior and its copy-environment twin,
the up/down trap environment, the dogmatic mixture, and a 3x3 game whose
subjective equilibrium has no objective counterpart.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping, Sequence

from .bayes import MixtureEnvironment, MixtureUniverse, mixture
from .core import (
    Alphabet,
    Completion,
    Environment,
    FactorCompletion,
    History,
    MultiAgentEnv,
    Policy,
    RuleEnvironment,
    RulePolicy,
    deterministic_policy,
    interact,
    is_zero,
    perturb_policy,
    personal_environment,
    uniform_environment,
    uniform_policy,
    uniform_universe,
)
from .planning import DiscountedTask


# ---------------------------------------------------------------------------
# normal-form games


@dataclass(frozen=True)
class NormalFormGame:
    actions: tuple  # per player: tuple of labels
    payoffs: Mapping  # joint label tuple -> payoff tuple
    name: str = "game"

    def __post_init__(self):
        object.__setattr__(self, "actions", tuple(tuple(a) for a in self.actions))
        table = {tuple(k): tuple(v) for k, v in self.payoffs.items()}
        for joint in itertools.product(*self.actions):
            if joint not in table:
                raise ValueError(f"payoff missing for {joint}")
            if len(table[joint]) != self.n_players:
                raise ValueError(f"payoff for {joint} needs {self.n_players} entries")
        object.__setattr__(self, "payoffs", table)

    @property
    def n_players(self) -> int:
        return len(self.actions)

    def payoff(self, i: int, joint: Sequence[str]):
        return self.payoffs[tuple(joint)][i]

    def joint_actions(self):
        return list(itertools.product(*self.actions))


def prisoner_dilemma() -> NormalFormGame:
    r = {("C", "C"): 2, ("D", "D"): 1, ("D", "C"): 3, ("C", "D"): 0}
    return NormalFormGame((("D", "C"), ("D", "C")),
                          {(a, b): (r[(a, b)], r[(b, a)]) for a in "DC" for b in "DC"}, "pd")


def see_not_ee_game() -> NormalFormGame:
    rows = {
        "A": [(2, 2), (0, 7), (0, 7)],
        "B": [(7, 0), (6, 1), (1, 6)],
        "C": [(7, 0), (1, 6), (6, 1)],
    }
    payoffs = {(a, b): rows[a][j] for a in "ABC" for j, b in enumerate("ABC")}
    return NormalFormGame((("A", "B", "C"), ("A", "B", "C")), payoffs, "see-not-ee")


def matching_pennies() -> NormalFormGame:
    payoffs = {(a, b): ((1, -1) if a == b else (-1, 1)) for a in "HT" for b in "HT"}
    return NormalFormGame((("H", "T"), ("H", "T")), payoffs, "matching-pennies")


# ---------------------------------------------------------------------------
# repeated prisoner's dilemma

PD_SCALE = 3
PD_ACTIONS = Alphabet(("D", "C"), "action")
_PD_PERCEPTS = (("D", 0), ("D", 1), ("C", 2), ("C", 3))
PD_PERCEPTS = Alphabet(tuple(f"{o}:{r}" for o, r in _PD_PERCEPTS), "percept",
                       tuple(Fraction(r, PD_SCALE) for _, r in _PD_PERCEPTS))
DEFECT, COOPERATE = 0, 1


def pd_reward(own: int, other: int) -> int:
    return prisoner_dilemma().payoff(0, (PD_ACTIONS.labels[own], PD_ACTIONS.labels[other]))


def pd_percept(own: int, other: int) -> int:
    """Percept index seen by a player who played ``own`` against ``other``."""
    return PD_PERCEPTS.index(f"{PD_ACTIONS.labels[other]}:{pd_reward(own, other)}")


def pd_task(gamma=0) -> DiscountedTask:
    return DiscountedTask.for_percepts(PD_PERCEPTS, gamma, reward_scale=PD_SCALE)


def pd_environment(depth: int) -> MultiAgentEnv:
    """Two-player repeated PD with perfect monitoring."""

    def rule(joint_history, joint_action):
        a, b = joint_action
        return {(pd_percept(a, b), pd_percept(b, a)): Fraction(1)}

    return MultiAgentEnv([PD_ACTIONS, PD_ACTIONS], [PD_PERCEPTS, PD_PERCEPTS], depth, rule)


def opponent_actions(h: History) -> tuple[int, ...]:
    return tuple(PD_ACTIONS.index(PD_PERCEPTS.labels[e].split(":")[0]) for _, e in h)


def switch_policy(T: int, depth: int) -> Policy:
    """Defect for the first ``T`` rounds, cooperate from then on."""
    return deterministic_policy(PD_ACTIONS, PD_PERCEPTS, depth,
                                lambda h: DEFECT if len(h) < T else COOPERATE,
                                key=lambda h: min(len(h), T), one=Fraction(1))


def always_defect(depth: int) -> Policy:
    return deterministic_policy(PD_ACTIONS, PD_PERCEPTS, depth, lambda h: DEFECT, key=lambda h: (), one=Fraction(1))


def switch_policy_class(K: int, depth: int) -> list[tuple[str, Policy]]:
    """``[(label, policy)]`` for ``π_0 .. π_K`` followed by AllD."""
    if K < 0:
        raise ValueError("K must be non-negative")
    out = [(f"pi{T}", switch_policy(T, depth)) for T in range(K + 1)]
    out.append(("allD", always_defect(depth)))
    return out


def symmetric_history(actions: Sequence[int]) -> History:
    return History((a, pd_percept(a, a)) for a in actions)


def m_value(policies: Sequence[Policy], weights: Sequence, h: History, action: int | None = None):
    """``m(h) = Σ_π w̃(π) [π reproduces the agent's actions in h]`` (optionally then ``action``)."""
    total = 0 * weights[0]
    for pol, w in zip(policies, weights):
        ok = all(is_zero(pol.prob(History(h[:t]), a) - 1) for t, (a, _) in enumerate(h))
        if ok and action is not None:
            ok = is_zero(pol.prob(h, action) - 1)
        if ok:
            total += w
    return total


def m_defect(policies, weights, k: int):
    return m_value(policies, weights, symmetric_history([DEFECT] * k))


def m_star(policies, weights, t: int):
    """``max_h m(h)`` over symmetric histories of length ``t``."""
    return max(m_value(policies, weights, symmetric_history(acts))
               for acts in itertools.product((DEFECT, COOPERATE), repeat=t))


def cooperation_threshold(m):
    return m / (1 + m)


def cooperation_onset(policies, weights, alpha, limit: int | None = None):
    """Smallest ``k`` with ``α > m_k/(1+m_k)``; ``math.inf`` if none within ``limit``.

    The agents then defect on rounds ``1..k`` and cooperate from round ``k+1``.
    """
    limit = limit if limit is not None else min(p.depth for p in policies) - 1
    for k in range(limit + 1):
        if alpha > cooperation_threshold(m_defect(policies, weights, k)):
            return k
    return math.inf


class TwinCompletion(Completion):
    """Off-path percepts of a twin universe: with probability ``copy_share`` the
    opponent mirrors the deviating action, otherwise it follows its own policy."""

    def __init__(self, pi: Policy, independent: Environment, copy_env: Environment, copy_share):
        self.pi = pi
        self.independent = independent
        self.copy_env = copy_env
        self.copy_share = copy_share

    def action(self, h):
        return self.pi.distribution(h)

    def percept(self, h, a):
        c = self.copy_share
        ind = self.independent.distribution(h, a)
        cp = self.copy_env.distribution(h, a)
        return [c * x + (1 - c) * y for x, y in zip(cp, ind)]


def copy_environment(depth: int) -> Environment:
    """The opponent plays whatever the agent just played."""

    def rule(h, a):
        out = [Fraction(0)] * len(PD_PERCEPTS)
        out[pd_percept(a, a)] = Fraction(1)
        return out

    return RuleEnvironment(PD_ACTIONS, PD_PERCEPTS, depth, rule, key=lambda h: ())


@dataclass
class TwinPD:
    alpha: Fraction
    labels: list
    policies: list
    tilde_w: list
    rho: MixtureUniverse
    pair_labels: list
    depth: int

    def pair_weight(self, a: str, b: str):
        label = f"{a}|{b}"
        if label not in self.pair_labels:
            return Fraction(0)
        return self.rho.weights[self.pair_labels.index(label)]


def _as_fraction(x):
    return x if isinstance(x, Fraction) else Fraction(str(x))


def twin_pd_prior(K: int, alpha, depth: int, tilde_w: Sequence | None = None, agent: int = 0,
                  check_onset: bool = True) -> TwinPD:
    """Mixture over ``λ_{π,π'}`` with weight ``α w̃(π) δ(π=π') + (1-α) w̃(π) w̃(π')``.

    Each ``λ_{π,π'}`` is ``π`` run against the personal environment where the
    co-player follows ``π'``.  Off the play path the twin universes use
    :class:`TwinCompletion` and the mixture uses its posterior completion.
    """
    alpha = _as_fraction(alpha)
    if not 0 <= alpha <= 1:
        raise ValueError("alpha must lie in [0, 1]")
    cls = switch_policy_class(K, depth)
    labels = [lab for lab, _ in cls]
    policies = [pol for _, pol in cls]
    n = len(policies)
    tilde_w = [Fraction(1, n)] * n if tilde_w is None else [_as_fraction(w) for w in tilde_w]
    if sum(tilde_w) != 1 or any(w <= 0 for w in tilde_w):
        raise ValueError("tilde_w must be a proper positive distribution")
    if check_onset:
        onset = cooperation_onset(policies, tilde_w, alpha, limit=K + 1)
        if onset == K + 1:
            raise ValueError(f"alpha={alpha} cooperates after round {K + 1}, outside the class (K={K})")
    bar_nu = pd_environment(depth)
    other = 1 - agent
    copy_env = copy_environment(depth)
    members, weights, pair_labels = [], [], []
    for (la, pa, wa), (lb, pb, wb) in itertools.product(zip(labels, policies, tilde_w), repeat=2):
        w = alpha * wa * (pa is pb) + (1 - alpha) * wa * wb
        if w == 0:
            continue
        env = personal_environment(bar_nu, {other: pb}, agent)
        if pa is pb:
            completion = TwinCompletion(pa, env, copy_env, alpha * wa / w)
        else:
            completion = FactorCompletion(pa, env)
        members.append(interact(pa, env, depth))
        members[-1].completion = completion
        weights.append(w)
        pair_labels.append(f"{la}|{lb}")
    rho = mixture(members, weights, pair_labels, posterior_completion=True)
    return TwinPD(alpha, labels, policies, tilde_w, rho, pair_labels, depth)


def copy_mixture(K: int, alpha, depth: int, tilde_w: Sequence | None = None, agent: int = 0) -> MixtureEnvironment:
    """Decoupled opponent model ``ξ``: ``ν_copy`` with weight α plus each ``ν_π`` with ``(1-α) w̃(π)``."""
    alpha = _as_fraction(alpha)
    cls = switch_policy_class(K, depth)
    n = len(cls)
    tilde_w = [Fraction(1, n)] * n if tilde_w is None else [_as_fraction(w) for w in tilde_w]
    bar_nu = pd_environment(depth)
    envs, weights, labels = [], [], []
    if alpha > 0:
        envs.append(copy_environment(depth))
        weights.append(alpha)
        labels.append("copy")
    if alpha < 1:
        for (lab, pol), w in zip(cls, tilde_w):
            envs.append(personal_environment(bar_nu, {1 - agent: pol}, agent))
            weights.append((1 - alpha) * w)
            labels.append(lab)
    return MixtureEnvironment(envs, weights, labels)


def decoupled_agent_model(xi: Environment) -> MixtureUniverse:
    """A universe whose environment part is ``xi``; the policy factor is never consulted for planning."""
    lam = interact(uniform_policy(xi.actions, xi.percepts, xi.depth), xi, factor_completion=True)
    return mixture([lam], [Fraction(1)], ["decoupled"])


# ---------------------------------------------------------------------------
# up/down trap


UP, DOWN = 0, 1
RK_ACTIONS = Alphabet(("up", "down"), "action")


def rk_percepts(R) -> Alphabet:
    return Alphabet(("o:0", f"o:{float(R):g}", "o:1"), "percept", (0 * R, R, 0 * R + 1))


def _rk_state(actions: Sequence[int], k: int) -> tuple[bool, int]:
    all_up = all(a == UP for a in actions)
    trailing = 0
    for a in reversed(actions):
        if a != DOWN:
            break
        trailing += 1
    return all_up, min(trailing, k + 1)


def mu_Rk(R, k: int, depth: int) -> Environment:
    """Reward ``R`` while every action so far is up, ``1`` once the last ``k+1`` are down, else 0."""
    if not 0 < R < 1:
        raise ValueError("R must lie in (0, 1)")
    if k < 1:
        raise ValueError("k must be at least 1")
    percepts = rk_percepts(R)
    one = 0 * R + 1

    def rule(h, a):
        all_up, trailing = _rk_state(h.actions + (a,), k)
        out = [0 * R] * 3
        if all_up:
            out[1] = one
        elif trailing >= k + 1:
            out[2] = one
        else:
            out[0] = one
        return out

    return RuleEnvironment(RK_ACTIONS, percepts, depth, rule, key=lambda h: _rk_state(h.actions, k))


def rk_policy(action: int, R, depth: int) -> Policy:
    one = 0 * R + 1
    return deterministic_policy(RK_ACTIONS, rk_percepts(R), depth, lambda h: action, key=lambda h: (), one=one)


def pi_up(R, depth):
    return rk_policy(UP, R, depth)


def pi_down(R, depth):
    return rk_policy(DOWN, R, depth)


def rk_self_model(R, k: int, depth: int, tremble=1e-9, model_eps=0) -> MixtureUniverse:
    """Singleton mixture on ``π_up`` (trembling by ``tremble``) against ``μ_{R,k}``.

    ``model_eps`` additionally perturbs both factors by that total variation
    per node.
    """
    env = mu_Rk(R, k, depth)
    pol = perturb_policy(pi_up(R, depth), tremble)
    if model_eps:
        from .core import perturb_environment
        env = perturb_environment(env, model_eps)
        pol = perturb_policy(pol, model_eps)
    return mixture([interact(pol, env, depth)], [0 * R + 1], ["self:up"])


def rk_task(gamma, R) -> DiscountedTask:
    return DiscountedTask.for_percepts(rk_percepts(R), gamma)


# ---------------------------------------------------------------------------
# dogmatic mixture


def _deviated(pi: Policy, h: History) -> bool:
    for t, (a, _) in enumerate(h):
        if is_zero(pi.prob(History(h[:t]), a)):
            return True
    return False


def dogmatic_environment(pi: Policy, percepts: Alphabet, depth: int, exact=True) -> Environment:
    """Uniform percepts while ``π`` is followed; zero-reward percepts only from the first deviation on."""
    if percepts.rewards is None:
        raise ValueError("percepts need rewards")
    zero_set = [e for e, r in enumerate(percepts.rewards) if r == 0]
    if not zero_set:
        raise ValueError("the dogmatic construction needs a zero-reward percept")
    n = len(percepts)
    one = Fraction(1) if exact else 1.0

    def rule(h, a):
        if _deviated(pi, h) or is_zero(pi.prob(h, a)):
            return [one / len(zero_set) if e in zero_set else 0 * one for e in range(n)]
        return [one / n] * n

    return RuleEnvironment(pi.actions, percepts, depth, rule)


def dogmatic_mixture(pi: Policy, mu: Environment, eps, depth: int | None = None) -> MixtureUniverse:
    """``(1-ε-ε²) μ^π + ε λ_dogmatic + ε² λ_random``; zero-weight parts are dropped."""
    depth = min(pi.depth, mu.depth) if depth is None else depth
    if eps < 0 or eps + eps * eps >= 1:
        raise ValueError("need 0 <= eps and eps + eps^2 < 1")
    exact = isinstance(eps, (Fraction, int))
    one = Fraction(1) if exact else 1.0
    parts = [
        ("truth", interact(pi, mu, depth), one - eps - eps * eps),
        ("dogmatic", interact(uniform_policy(pi.actions, pi.percepts, depth, exact),
                              dogmatic_environment(pi, mu.percepts, depth, exact), depth), eps),
        ("random", uniform_universe(pi.actions, pi.percepts, depth, exact), eps * eps),
    ]
    parts = [p for p in parts if p[2] > 0]
    return mixture([p[1] for p in parts], [p[2] for p in parts], [p[0] for p in parts])


# ---------------------------------------------------------------------------
# registry


@dataclass
class ScenarioParams:
    id: str
    params: dict = field(default_factory=dict)

    def get(self, key, default=None):
        return self.params.get(key, default)


SCENARIO_IDS = ("pd", "see-not-ee", "twin-pd", "copy-pd", "mu-rk", "dogmatic")


def validate(sp: ScenarioParams) -> None:
    if sp.id not in SCENARIO_IDS:
        raise ValueError(f"unknown scenario {sp.id!r}; choose from {', '.join(SCENARIO_IDS)}")
    p = sp.params
    if sp.id in ("twin-pd", "copy-pd"):
        a = _as_fraction(p.get("alpha", "0.4"))
        if not 0 <= a <= 1:
            raise ValueError("alpha must lie in [0, 1]")
        if int(p.get("K", 2)) < 0:
            raise ValueError("K must be non-negative")
    if sp.id == "mu-rk":
        R = float(p.get("R", 0.2))
        if not 0 < R < 1 or int(p.get("k", 2)) < 1:
            raise ValueError("mu-rk needs 0 < R < 1 and k >= 1")
    g = p.get("gamma")
    if g is not None and not 0 <= float(g) < 1:
        raise ValueError("gamma must lie in [0, 1)")
