"""Finite-horizon values, embedded best responses and k-step planners.

All values are normalised: ``V = (1-γ) Σ_{i<H} γ^i E[r]`` with rewards in
[0, 1], so truncating at horizon ``H`` costs at most ``γ^H``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

from .core import (
    Alphabet,
    EnvironmentPart,
    History,
    Number,
    Policy,
    Universe,
    interact,
    is_zero,
)


@dataclass(frozen=True)
class DiscountedTask:
    gamma: Number
    rewards: tuple
    reward_scale: Number = 1

    def __post_init__(self):
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        object.__setattr__(self, "rewards", tuple(self.rewards))

    @classmethod
    def for_percepts(cls, percepts: Alphabet, gamma, reward_scale=1) -> "DiscountedTask":
        if percepts.rewards is None:
            raise ValueError("percept alphabet carries no rewards")
        return cls(gamma, percepts.rewards, reward_scale)

    def reward(self, e: int) -> Number:
        return self.rewards[e]

    def raw(self, value: Number) -> Number:
        """Value in the scenario's original payoff units."""
        return value * self.reward_scale


@dataclass(frozen=True)
class PlanBudget:
    horizon: int

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")

    @classmethod
    def from_tolerance(cls, eps_plan: float, gamma) -> "PlanBudget":
        if not 0 < eps_plan < 1:
            raise ValueError("plan tolerance must lie in (0, 1)")
        if gamma == 0:
            return cls(1)
        return cls(max(1, math.ceil(math.log(eps_plan) / math.log(float(gamma)))))

    def error_bound(self, gamma) -> Number:
        return gamma ** self.horizon


@dataclass(frozen=True)
class ValueEstimate:
    value: Number
    error_bound: Number

    def __float__(self):
        return float(self.value)


class Planner:
    """Memoised value recursions over one universe ``ρ``.

    Caches key on ``ρ.state_key(h)`` plus the remaining horizon, so
    histories that leave ``ρ`` in the same state share work.  Cache fills
    are idempotent, so sharing a planner between readers is harmless.
    """

    def __init__(self, rho: Universe, task: DiscountedTask):
        if len(task.rewards) != len(rho.percepts):
            raise ValueError("one reward per percept required")
        self.rho = rho
        self.task = task
        self.gamma = task.gamma
        self._v_self: dict = {}
        self._q_opt: dict = {}
        self._q_k: dict = {}
        self.truncated_branches = 0

    def _zero(self):
        return 0 * self.gamma

    def _backup(self, h, a, H, continuation):
        """``Σ_e ρ(e|ha)[(1-γ) r(e) + γ · continuation(hae)]``."""
        g = self.gamma
        total = self._zero()
        for e, p in enumerate(self.rho.conditional_percept(h, a)):
            if is_zero(p):
                continue
            step = (1 - g) * self.task.reward(e)
            if H > 1 and not is_zero(g):
                step = step + g * continuation(h.extend(a, e))
            total = total + p * step
        return total

    # on-policy rollout of ρ's own conditionals
    def value_self(self, h: History, H: int):
        if H <= 0:
            return self._zero()
        key = (self.rho.state_key(h), H)
        try:
            return self._v_self[key]
        except KeyError:
            pass
        total = self._zero()
        dist = self.rho.conditional_action(h)
        if sum(dist) < 1:
            self.truncated_branches += 1
        for a, p in enumerate(dist):
            if not is_zero(p):
                total = total + p * self.q_self(h, a, H)
        self._v_self[key] = total
        return total

    def q_self(self, h: History, a: int, H: int):
        if H <= 0:
            return self._zero()
        return self._backup(h, a, H, lambda nxt: self.value_self(nxt, H - 1))

    # expectimax over the environment part
    def q_opt(self, h: History, a: int, H: int):
        if H <= 0:
            return self._zero()
        key = (self.rho.state_key(h), a, H)
        try:
            return self._q_opt[key]
        except KeyError:
            pass
        value = self._backup(h, a, H, lambda nxt: self.value_opt(nxt, H - 1))
        self._q_opt[key] = value
        return value

    def value_opt(self, h: History, H: int):
        if H <= 0:
            return self._zero()
        return max(self.q_opt(h, a, H) for a in range(len(self.rho.actions)))

    # k-step lookahead with on-policy terminal value
    def q_k(self, h: History, a: int, k: int, H: int):
        if k < 1:
            raise ValueError("k must be at least 1")
        if k == 1:
            return self.q_self(h, a, H)
        if H <= 0:
            return self._zero()
        key = (self.rho.state_key(h), a, k, H)
        try:
            return self._q_k[key]
        except KeyError:
            pass
        nA = len(self.rho.actions)
        value = self._backup(h, a, H, lambda nxt: max(self.q_k(nxt, b, k - 1, H - 1) for b in range(nA)))
        self._q_k[key] = value
        return value

    def q_values(self, h: History, H: int, kind: str = "optimal", k: int = 1) -> list:
        nA = len(self.rho.actions)
        if kind == "optimal":
            return [self.q_opt(h, a, H) for a in range(nA)]
        if kind == "self":
            return [self.q_self(h, a, H) for a in range(nA)]
        if kind == "k-step":
            return [self.q_k(h, a, k, H) for a in range(nA)]
        raise ValueError(f"unknown Q kind {kind!r}")


def argmax_lowest(values: Sequence) -> int:
    best = 0
    for i, v in enumerate(values):
        if v > values[best]:
            best = i
    return best


def within_eps_lowest(values: Sequence, eps) -> int:
    top = max(values)
    for i, v in enumerate(values):
        if v >= top - eps:
            return i
    return 0


def _est(value, task, budget):
    return ValueEstimate(value, budget.error_bound(task.gamma))


def policy_value(lam: Universe, h: History, task: DiscountedTask, budget: PlanBudget,
                 planner: Planner | None = None) -> ValueEstimate:
    """``V_λ(h)`` by exact tree enumeration to ``budget.horizon`` turns."""
    planner = planner or Planner(lam, task)
    return _est(planner.value_self(h, budget.horizon), task, budget)


def q_value(rho: Universe, h: History, a: int, task: DiscountedTask, budget: PlanBudget,
            continuation: str = "optimal", planner: Planner | None = None) -> ValueEstimate:
    planner = planner or Planner(rho, task)
    if continuation == "optimal":
        value = planner.q_opt(h, a, budget.horizon)
    elif continuation == "self":
        value = planner.q_self(h, a, budget.horizon)
    else:
        raise ValueError("continuation must be 'self' or 'optimal'")
    return _est(value, task, budget)


def embedded_best_response(rho: Universe, h: History, task: DiscountedTask, budget: PlanBudget,
                           planner: Planner | None = None) -> tuple[int, ValueEstimate]:
    """Lowest-index maximiser of the expectimax Q over ``ρ(e|ha)``."""
    planner = planner or Planner(rho, task)
    qs = planner.q_values(h, budget.horizon, "optimal")
    a = argmax_lowest(qs)
    return a, _est(qs[a], task, budget)


def k_step_q(rho: Universe, h: History, a: int, k: int, task: DiscountedTask, budget: PlanBudget,
             planner: Planner | None = None) -> ValueEstimate:
    planner = planner or Planner(rho, task)
    return _est(planner.q_k(h, a, k, budget.horizon), task, budget)


def k_step_action(rho: Universe, h: History, k: int, task: DiscountedTask, budget: PlanBudget,
                  planner: Planner | None = None) -> int:
    planner = planner or Planner(rho, task)
    return argmax_lowest(planner.q_values(h, budget.horizon, "k-step", k))


def approx_agent_step(rho: Universe, h: History, k_t: int, eps_t, task: DiscountedTask, budget: PlanBudget,
                      planner: Planner | None = None) -> int:
    """Lowest-index action within ``eps_t`` of ``max_a Q^{k_t}``."""
    planner = planner or Planner(rho, task)
    return within_eps_lowest(planner.q_values(h, budget.horizon, "k-step", k_t), eps_t)


class PlannerPolicy(Policy):
    """A planning agent exposed as a deterministic policy over its own histories.

    ``kind`` is ``"optimal"`` (embedded best response), ``"k-step"`` or
    ``"approx"``.  The horizon recedes (``budget.horizon`` turns from each
    history) unless ``end`` fixes a common final length, in which case it
    shrinks as the history grows.
    """

    def __init__(self, rho: Universe, task: DiscountedTask, budget: PlanBudget, kind: str = "optimal",
                 k: int | Callable[[int], int] = 1, eps: Number | Callable[[int], Number] = 0,
                 end: int | None = None, depth: int | None = None, planner: Planner | None = None):
        depth = rho.depth if depth is None else depth
        super().__init__(rho.actions, rho.percepts, depth, proper=True)
        if kind not in ("optimal", "k-step", "approx"):
            raise ValueError(f"unknown planner kind {kind!r}")
        self.rho = rho
        self.task = task
        self.budget = budget
        self.kind = kind
        self.k = k
        self.eps = eps
        self.end = end
        self.planner = planner or Planner(rho, task)
        self._one = Fraction(1) if isinstance(task.gamma, (Fraction, int)) else 1.0

    def horizon_at(self, h: History) -> int:
        if self.end is None:
            return self.budget.horizon
        return self.end - len(h)

    def _schedule(self, value, t):
        return value(t) if callable(value) else value

    def q_values(self, h: History) -> list:
        H = self.horizon_at(h)
        t = len(h) + 1
        if self.kind == "optimal":
            return self.planner.q_values(h, H, "optimal")
        return self.planner.q_values(h, H, "k-step", self._schedule(self.k, t))

    def choose(self, h: History) -> int:
        qs = self.q_values(h)
        if self.kind == "approx":
            return within_eps_lowest(qs, self._schedule(self.eps, len(h) + 1))
        return argmax_lowest(qs)

    def _distribution(self, h):
        a = self.choose(h)
        out = [0 * self._one] * len(self.actions)
        out[a] = self._one
        return out


def planner_policy_value(rho: Universe, h: History, k: int, task: DiscountedTask, H: int) -> Number:
    """``V_{ρ^π}(h)`` for the k-step planner ``π`` with horizon shrinking to ``len(h)+H``.

    Computed by direct recursion: ``π`` picks its action, ``ρ(e|ha)`` moves
    the world.
    """
    planner = Planner(rho, task)
    g = task.gamma
    end = len(h) + H
    memo: dict = {}

    def value(node: History):
        rem = end - len(node)
        if rem <= 0:
            return 0 * g
        key = (rho.state_key(node), rem)
        if key in memo:
            return memo[key]
        a = argmax_lowest(planner.q_values(node, rem, "k-step", k))
        total = 0 * g
        for e, p in enumerate(rho.conditional_percept(node, a)):
            if is_zero(p):
                continue
            step = (1 - g) * task.reward(e)
            if rem > 1:
                step = step + g * value(node.extend(a, e))
            total = total + p * step
        memo[key] = total
        return total

    return value(h)


def planner_universe(rho: Universe, task: DiscountedTask, budget: PlanBudget, k: int, end: int) -> Universe:
    """``ρ^π``: the k-step planner run against the environment part of ``ρ``."""
    pi = PlannerPolicy(rho, task, budget, "k-step", k=k, end=end)
    return interact(pi, EnvironmentPart(rho), factor_completion=True)


def q_table_rows(rho: Universe, histories, task: DiscountedTask, budget: PlanBudget, ks: Sequence[int]) -> list[dict]:
    """Rows for CSV export: history tokens, action, ``Q^k`` per k, ``Q*``, error bound."""
    planner = Planner(rho, task)
    rows = []
    for h in histories:
        for a in range(len(rho.actions)):
            row = {"history": h.to_tokens(rho.actions, rho.percepts), "action": rho.actions.labels[a]}
            for k in ks:
                row[f"q{k}"] = planner.q_k(h, a, k, budget.horizon)
            row["q_opt"] = planner.q_opt(h, a, budget.horizon)
            row["error_bound"] = budget.error_bound(task.gamma)
            rows.append(row)
    return rows
