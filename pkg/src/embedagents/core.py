"""Alphabets, histories, policies, environments and universes over finite,
depth-bounded interaction trees.

A *universe* is a semimeasure over interleaved action/percept histories.  It
answers two kinds of query: the mass of a history ``h`` and the mass of a
history followed by a dangling action ``h a``.  Every other quantity used by
the package (conditionals, posteriors, values, distances) is derived from
those two.

Numbers are either :class:`fractions.Fraction` (the exact backend) or
``float``.  Nothing in this module converts between the two; whatever the
caller supplies is propagated.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Hashable, Iterable, Iterator, Mapping, Sequence

import numpy as np

Number = Fraction | float


class UndefinedConditional(ValueError):
    """A conditional was requested at a zero-mass prefix with no completion."""

    def __init__(self, message: str, history=None, action=None):
        super().__init__(message)
        self.history = history
        self.action = action


class DepthExceeded(ValueError):
    """A query went past the declared depth of an evaluator."""


class AlphabetMismatch(ValueError):
    """Two objects that must share alphabets do not."""


class ImproperPolicy(ValueError):
    """A co-player policy used for marginalisation is not proper."""


# ---------------------------------------------------------------------------
# alphabets and histories


@dataclass(frozen=True)
class Percept:
    observation: str
    reward: Number

    def __post_init__(self):
        if not 0 <= self.reward <= 1:
            raise ValueError(f"reward {self.reward} outside [0, 1]")


@dataclass(frozen=True)
class Alphabet:
    """Ordered, duplicate-free symbol set.  Label ``i`` has index ``i``.

    Percept alphabets may carry a reward per symbol, normalised to [0, 1].
    """

    labels: tuple[str, ...]
    kind: str = "action"
    rewards: tuple[Number, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        if not self.labels:
            raise ValueError("alphabet must be non-empty")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError(f"duplicate labels in {self.labels}")
        if self.kind not in ("action", "percept"):
            raise ValueError(f"unknown alphabet kind {self.kind!r}")
        for label in self.labels:
            if not label or any(c.isspace() for c in label) or "/" in label:
                raise ValueError(f"label {label!r} may not be empty or contain '/' or spaces")
        if self.rewards is not None:
            object.__setattr__(self, "rewards", tuple(self.rewards))
            if len(self.rewards) != len(self.labels):
                raise ValueError("one reward per percept label required")
            if any(not 0 <= r <= 1 for r in self.rewards):
                raise ValueError("percept rewards must lie in [0, 1]")

    @classmethod
    def from_percepts(cls, percepts: Sequence[Percept], labels: Sequence[str] | None = None):
        if labels is None:
            labels = [f"{p.observation}:{p.reward}" for p in percepts]
        return cls(tuple(labels), "percept", tuple(p.reward for p in percepts))

    def __len__(self):
        return len(self.labels)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise KeyError(f"{label!r} not in alphabet {self.labels}") from None

    def percept(self, index: int) -> Percept:
        if self.rewards is None:
            raise ValueError("alphabet carries no rewards")
        label = self.labels[index]
        return Percept(label.split(":", 1)[0], self.rewards[index])


class History(tuple):
    """Immutable sequence of ``(action_index, percept_index)`` turns.

    Being a tuple, a history hashes and compares by value, which is what the
    memoisation caches throughout the package key on.
    """

    __slots__ = ()

    def __new__(cls, turns: Iterable[tuple[int, int]] = ()):
        return super().__new__(cls, (tuple(t) for t in turns))

    def extend(self, action: int, percept: int) -> "History":
        return History(tuple(self) + ((action, percept),))

    @property
    def actions(self) -> tuple[int, ...]:
        return tuple(a for a, _ in self)

    @property
    def percepts(self) -> tuple[int, ...]:
        return tuple(e for _, e in self)

    def prefix(self, n: int) -> "History":
        return History(self[:n])

    def to_tokens(self, actions: Alphabet, percepts: Alphabet) -> str:
        return " ".join(f"{actions.labels[a]}/{percepts.labels[e]}" for a, e in self)

    @classmethod
    def from_tokens(cls, text: str, actions: Alphabet, percepts: Alphabet) -> "History":
        turns = []
        for token in text.split():
            a, _, e = token.partition("/")
            turns.append((actions.index(a), percepts.index(e)))
        return cls(turns)

    def __repr__(self):
        return f"History({list(self)!r})"


EMPTY = History()


def all_histories(n_actions: int, n_percepts: int, length: int) -> Iterator[History]:
    """Every history of exactly ``length`` turns, in canonical order."""
    turns = list(itertools.product(range(n_actions), range(n_percepts)))
    for combo in itertools.product(turns, repeat=length):
        yield History(combo)


def histories_up_to(n_actions: int, n_percepts: int, depth: int) -> Iterator[History]:
    for length in range(depth + 1):
        yield from all_histories(n_actions, n_percepts, length)


def _check_alphabets(a, b, what: str):
    if a.actions != b.actions or a.percepts != b.percepts:
        raise AlphabetMismatch(f"alphabets differ between {what}")


def is_zero(x: Number) -> bool:
    return x == 0


# ---------------------------------------------------------------------------
# policies


class Policy:
    """Conditional (semi)distribution over actions given a history.

    Subclasses implement :meth:`_distribution`.  Results are cached per
    history; evaluators are pure, so concurrent fills of the cache write
    identical values and need no lock.
    """

    def __init__(self, actions: Alphabet, percepts: Alphabet, depth: int, proper: bool = True):
        self.actions = actions
        self.percepts = percepts
        self.depth = depth
        self.proper = proper
        self._cache: dict = {}

    def distribution(self, h: History) -> tuple[Number, ...]:
        if len(h) >= self.depth:
            raise DepthExceeded(f"policy queried at length {len(h)} with depth {self.depth}")
        try:
            return self._cache[h]
        except KeyError:
            dist = tuple(self._distribution(h))
            self._cache[h] = dist
            return dist

    def prob(self, h: History, a: int) -> Number:
        return self.distribution(h)[a]

    def state_key(self, h: History) -> Hashable:
        """Summary of ``h`` that determines all future conditionals."""
        return h

    def _distribution(self, h: History) -> Sequence[Number]:
        raise NotImplementedError


class TabularPolicy(Policy):
    """Policy given by an explicit table ``history -> distribution``."""

    def __init__(self, actions, percepts, depth, table: Mapping[History, Sequence[Number]], proper=True):
        super().__init__(actions, percepts, depth, proper)
        self.table = {History(h): tuple(v) for h, v in table.items()}

    def _distribution(self, h):
        try:
            return self.table[h]
        except KeyError:
            raise KeyError(f"no table row for history {h}") from None


class RulePolicy(Policy):
    """Policy given by a pure function of the history."""

    def __init__(self, actions, percepts, depth, rule: Callable[[History], Sequence[Number]],
                 proper=True, key: Callable[[History], Hashable] | None = None):
        super().__init__(actions, percepts, depth, proper)
        self.rule = rule
        self._key = key

    def _distribution(self, h):
        return self.rule(h)

    def state_key(self, h):
        return h if self._key is None else self._key(h)


def deterministic_policy(actions, percepts, depth, choose: Callable[[History], int],
                         key=None, one=1) -> RulePolicy:
    n = len(actions)

    def rule(h):
        dist = [0 * one] * n
        dist[choose(h)] = one
        return dist

    return RulePolicy(actions, percepts, depth, rule, key=key)


def uniform_policy(actions, percepts, depth, exact=True) -> RulePolicy:
    p = Fraction(1, len(actions)) if exact else 1.0 / len(actions)
    return RulePolicy(actions, percepts, depth, lambda h: [p] * len(actions), key=lambda h: ())


# ---------------------------------------------------------------------------
# environments


class Environment:
    """Conditional (semi)distribution over percepts given history and action."""

    def __init__(self, actions: Alphabet, percepts: Alphabet, depth: int, proper: bool = True):
        self.actions = actions
        self.percepts = percepts
        self.depth = depth
        self.proper = proper
        self._cache: dict = {}

    def distribution(self, h: History, a: int) -> tuple[Number, ...]:
        if len(h) >= self.depth:
            raise DepthExceeded(f"environment queried at length {len(h)} with depth {self.depth}")
        key = (h, a)
        try:
            return self._cache[key]
        except KeyError:
            dist = tuple(self._distribution(h, a))
            self._cache[key] = dist
            return dist

    def prob(self, h: History, a: int, e: int) -> Number:
        return self.distribution(h, a)[e]

    def state_key(self, h: History) -> Hashable:
        return h

    def _distribution(self, h: History, a: int) -> Sequence[Number]:
        raise NotImplementedError


class TabularEnvironment(Environment):
    def __init__(self, actions, percepts, depth, table: Mapping[tuple[History, int], Sequence[Number]], proper=True):
        super().__init__(actions, percepts, depth, proper)
        self.table = {(History(h), a): tuple(v) for (h, a), v in table.items()}

    def _distribution(self, h, a):
        try:
            return self.table[(h, a)]
        except KeyError:
            raise KeyError(f"no table row for history {h} and action {a}") from None


class RuleEnvironment(Environment):
    def __init__(self, actions, percepts, depth, rule: Callable[[History, int], Sequence[Number]],
                 proper=True, key: Callable[[History], Hashable] | None = None):
        super().__init__(actions, percepts, depth, proper)
        self.rule = rule
        self._key = key

    def _distribution(self, h, a):
        return self.rule(h, a)

    def state_key(self, h):
        return h if self._key is None else self._key(h)


def uniform_environment(actions, percepts, depth, exact=True) -> RuleEnvironment:
    p = Fraction(1, len(percepts)) if exact else 1.0 / len(percepts)
    return RuleEnvironment(actions, percepts, depth, lambda h, a: [p] * len(percepts), key=lambda h: ())


def perturb_policy(pi: Policy, eps: Number) -> RulePolicy:
    """Mix ``pi`` with the uniform policy: total variation at most ``eps`` per node."""
    n = len(pi.actions)
    share = eps / n

    def rule(h):
        return [(1 - eps) * p + share for p in pi.distribution(h)]

    return RulePolicy(pi.actions, pi.percepts, pi.depth, rule, pi.proper, key=pi.state_key)


def perturb_environment(nu: Environment, eps: Number) -> RuleEnvironment:
    """Mix ``nu`` with the uniform environment: total variation at most ``eps`` per node."""
    n = len(nu.percepts)
    share = eps / n

    def rule(h, a):
        return [(1 - eps) * p + share for p in nu.distribution(h, a)]

    return RuleEnvironment(nu.actions, nu.percepts, nu.depth, rule, nu.proper, key=nu.state_key)


# ---------------------------------------------------------------------------
# seeded random instances (used by property tests and the CLI)


def _history_seed(seed: int, h: History, extra: int = 0) -> list[int]:
    flat = [seed, extra, len(h)]
    for a, e in h:
        flat.extend((a, e))
    return flat


def _random_dist(rng, n, exact, grid, full_support):
    lo = 1 if full_support else 0
    weights = rng.integers(lo, grid + 1, size=n)
    if weights.sum() == 0:
        weights[rng.integers(0, n)] = 1
    total = int(weights.sum())
    if exact:
        return [Fraction(int(w), total) for w in weights]
    return [float(w) / total for w in weights]


def random_policy(actions, percepts, depth, seed, exact=True, grid=8, full_support=True) -> RulePolicy:
    """Lazily generated random policy; each row is seeded from the history."""

    def rule(h):
        rng = np.random.default_rng(_history_seed(seed, h))
        return _random_dist(rng, len(actions), exact, grid, full_support)

    return RulePolicy(actions, percepts, depth, rule)


def random_deterministic_policy(actions, percepts, depth, seed, exact=True) -> RulePolicy:
    def choose(h):
        rng = np.random.default_rng(_history_seed(seed, h))
        return int(rng.integers(0, len(actions)))

    return deterministic_policy(actions, percepts, depth, choose, one=Fraction(1) if exact else 1.0)


def random_environment(actions, percepts, depth, seed, exact=True, grid=8, full_support=True) -> RuleEnvironment:
    def rule(h, a):
        rng = np.random.default_rng(_history_seed(seed, h, extra=a + 1))
        return _random_dist(rng, len(percepts), exact, grid, full_support)

    return RuleEnvironment(actions, percepts, depth, rule)


# ---------------------------------------------------------------------------
# universes


class Completion:
    """Conditionals used where the universe itself has zero mass."""

    def action(self, h: History) -> tuple[Number, ...]:
        raise NotImplementedError

    def percept(self, h: History, a: int) -> tuple[Number, ...]:
        raise NotImplementedError


class FactorCompletion(Completion):
    """Read conditionals straight off a policy and an environment."""

    def __init__(self, pi: Policy, nu: Environment):
        self.pi = pi
        self.nu = nu

    def action(self, h):
        return self.pi.distribution(h)

    def percept(self, h, a):
        return self.nu.distribution(h, a)


class Universe:
    """Semimeasure over action/percept histories.

    Subclasses implement :meth:`mass` and :meth:`mass_action`.  Conditionals
    are ratios of masses; at zero-mass prefixes they fall back to the
    attached completion or raise :class:`UndefinedConditional`.
    """

    def __init__(self, actions: Alphabet, percepts: Alphabet, depth: int, completion: Completion | None = None):
        self.actions = actions
        self.percepts = percepts
        self.depth = depth
        self.completion = completion

    def mass(self, h: History) -> Number:
        raise NotImplementedError

    def mass_action(self, h: History, a: int) -> Number:
        raise NotImplementedError

    def state_key(self, h: History) -> Hashable:
        return h

    def _check(self, h: History, dangling: bool = False):
        limit = self.depth - 1 if dangling else self.depth
        if len(h) > limit:
            raise DepthExceeded(f"universe queried at length {len(h)} with depth {self.depth}")

    def conditional_action(self, h: History) -> tuple[Number, ...]:
        total = self.mass(h)
        if is_zero(total):
            if self.completion is None:
                raise UndefinedConditional(f"zero mass at history {h}", history=h)
            return tuple(self.completion.action(h))
        return tuple(self.mass_action(h, a) / total for a in range(len(self.actions)))

    def conditional_percept(self, h: History, a: int) -> tuple[Number, ...]:
        total = self.mass_action(h, a)
        if is_zero(total):
            if self.completion is None:
                raise UndefinedConditional(f"zero mass at history {h} with action {a}", history=h, action=a)
            return tuple(self.completion.percept(h, a))
        return tuple(self.mass(h.extend(a, e)) / total for e in range(len(self.percepts)))


class InteractionUniverse(Universe):
    """The universe generated by running policy ``pi`` against environment ``nu``."""

    def __init__(self, pi: Policy, nu: Environment, depth: int | None = None, completion: Completion | None = None):
        if pi.actions != nu.actions or pi.percepts != nu.percepts:
            raise AlphabetMismatch("policy and environment alphabets differ")
        depth = min(pi.depth, nu.depth) if depth is None else depth
        super().__init__(pi.actions, pi.percepts, depth, completion)
        self.pi = pi
        self.nu = nu
        self._mass: dict = {EMPTY: _one_like(pi, nu)}
        self._reach: dict = {EMPTY: True}

    def reachable(self, h: History) -> bool:
        """``λ(h) > 0`` decided from the factors, immune to float underflow."""
        try:
            return self._reach[h]
        except KeyError:
            pass
        parent = History(h[:-1])
        a, e = h[-1]
        ok = (self.reachable(parent) and not is_zero(self.pi.prob(parent, a))
              and not is_zero(self.nu.prob(parent, a, e)))
        self._reach[h] = ok
        return ok

    def mass(self, h):
        self._check(h)
        try:
            return self._mass[h]
        except KeyError:
            pass
        parent = History(h[:-1])
        a, e = h[-1]
        m = self.mass(parent)
        if not is_zero(m):
            m = m * self.pi.prob(parent, a)
            if not is_zero(m):
                m = m * self.nu.prob(parent, a, e)
        self._mass[h] = m
        return m

    def mass_action(self, h, a):
        self._check(h, dangling=True)
        m = self.mass(h)
        return m if is_zero(m) else m * self.pi.prob(h, a)

    def conditional_action(self, h):
        self._check(h)
        if not self.reachable(h):
            return super().conditional_action(h)
        return self.pi.distribution(h)

    def conditional_percept(self, h, a):
        self._check(h, dangling=True)
        if not self.reachable(h) or is_zero(self.pi.prob(h, a)):
            return super().conditional_percept(h, a)
        return self.nu.distribution(h, a)

    def state_key(self, h):
        return (self.pi.state_key(h), self.nu.state_key(h))


def _one_like(pi: Policy, nu: Environment) -> Number:
    """``1`` in the arithmetic the factors use (probe the empty history)."""
    try:
        sample = pi.distribution(EMPTY)[0]
    except (DepthExceeded, KeyError):
        return Fraction(1)
    return 1.0 if isinstance(sample, float) else Fraction(1)


def interact(pi: Policy, nu: Environment, depth: int | None = None, factor_completion: bool = False) -> InteractionUniverse:
    """Universe with ``λ(h) = Π π(a_i|h_<i) ν(e_i|h_<i a_i)``.

    With ``factor_completion`` the factors also answer conditionals at
    zero-mass prefixes.
    """
    completion = FactorCompletion(pi, nu) if factor_completion else None
    return InteractionUniverse(pi, nu, depth, completion)


def uniform_universe(actions, percepts, depth, exact=True) -> InteractionUniverse:
    return interact(uniform_policy(actions, percepts, depth, exact),
                    uniform_environment(actions, percepts, depth, exact))


class TabularUniverse(Universe):
    """Universe given by explicit masses ``λ(h)`` and ``λ(h a)``."""

    def __init__(self, actions, percepts, depth, masses: Mapping[History, Number],
                 action_masses: Mapping[tuple[History, int], Number], completion=None):
        super().__init__(actions, percepts, depth, completion)
        self.masses = {History(h): v for h, v in masses.items()}
        self.action_masses = {(History(h), a): v for (h, a), v in action_masses.items()}

    def mass(self, h):
        self._check(h)
        return self.masses.get(h, 0 * self.masses[EMPTY])

    def mass_action(self, h, a):
        self._check(h, dangling=True)
        return self.action_masses.get((h, a), 0 * self.masses[EMPTY])


class EnvironmentPart(Environment):
    """``ν(e|h,a) := λ(e|h a)``: the environment seen through a universe."""

    def __init__(self, universe: Universe):
        super().__init__(universe.actions, universe.percepts, universe.depth, proper=True)
        self.universe = universe

    def _distribution(self, h, a):
        return self.universe.conditional_percept(h, a)

    def state_key(self, h):
        return self.universe.state_key(h)


class PolicyPart(Policy):
    """``π(a|h) := λ(a|h)``: the agent part of a universe."""

    def __init__(self, universe: Universe):
        super().__init__(universe.actions, universe.percepts, universe.depth, proper=True)
        self.universe = universe

    def _distribution(self, h):
        return self.universe.conditional_action(h)

    def state_key(self, h):
        return self.universe.state_key(h)


def conditional_action(universe: Universe, h: History) -> tuple[Number, ...]:
    return universe.conditional_action(h)


def conditional_percept(universe: Universe, h: History, a: int) -> tuple[Number, ...]:
    return universe.conditional_percept(h, a)


def check_semimeasure(universe: Universe, depth: int | None = None) -> list[tuple]:
    """Exhaustively list violations of ``λ(h) ≥ Σ_a λ(ha) ≥ ...``; empty when valid."""
    depth = universe.depth if depth is None else depth
    nA, nE = len(universe.actions), len(universe.percepts)
    bad = []
    if universe.mass(EMPTY) != 1:
        bad.append(("initial", EMPTY))
    for h in histories_up_to(nA, nE, depth - 1):
        m = universe.mass(h)
        ha = [universe.mass_action(h, a) for a in range(nA)]
        if sum(ha) > m or any(x < 0 for x in ha):
            bad.append(("action", h))
        for a in range(nA):
            hae = sum(universe.mass(h.extend(a, e)) for e in range(nE))
            if hae > ha[a]:
                bad.append(("percept", h, a))
    return bad


# ---------------------------------------------------------------------------
# distances


def total_variation_k(p1: Universe, p2: Universe, h: History, k: int) -> Number:
    """``½ Σ |P1(h'|h) − P2(h'|h)|`` over all ``k``-turn continuations ``h'``.

    Conditional path masses are built from chained conditionals, so an
    attached completion is honoured and branches where both universes have
    zero mass are pruned.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    _check_alphabets(p1, p2, "the two universes")
    zero = 0 * p1.conditional_action(h)[0]
    nA, nE = len(p1.actions), len(p1.percepts)
    diff = zero

    stack = [(h, 1 + zero, 1 + zero, 0)]
    while stack:
        node, m1, m2, depth = stack.pop()
        if depth == k:
            diff += abs(m1 - m2)
            continue
        c1 = p1.conditional_action(node) if not is_zero(m1) else None
        c2 = p2.conditional_action(node) if not is_zero(m2) else None
        for a in range(nA):
            x1 = m1 * c1[a] if c1 is not None else zero
            x2 = m2 * c2[a] if c2 is not None else zero
            if is_zero(x1) and is_zero(x2):
                continue
            d1 = p1.conditional_percept(node, a) if not is_zero(x1) else None
            d2 = p2.conditional_percept(node, a) if not is_zero(x2) else None
            for e in range(nE):
                y1 = x1 * d1[e] if d1 is not None else zero
                y2 = x2 * d2[e] if d2 is not None else zero
                if is_zero(y1) and is_zero(y2):
                    continue
                stack.append((node.extend(a, e), y1, y2, depth + 1))
    return diff / 2


# ---------------------------------------------------------------------------
# multi-agent environments


JointHistory = tuple  # of (joint_action tuple, joint_percept tuple)


class MultiAgentEnv:
    """``N``-slot environment ``ν̄(ē | h̄, ā)`` returned as a sparse mapping."""

    def __init__(self, actions: Sequence[Alphabet], percepts: Sequence[Alphabet], depth: int,
                 rule: Callable[[JointHistory, tuple], Mapping[tuple, Number]], proper: bool = True):
        if len(actions) != len(percepts) or not actions:
            raise ValueError("need one action and one percept alphabet per agent")
        self.actions = tuple(actions)
        self.percepts = tuple(percepts)
        self.n_agents = len(actions)
        self.depth = depth
        self.rule = rule
        self.proper = proper

    def distribution(self, joint_history: JointHistory, joint_action: tuple) -> Mapping[tuple, Number]:
        if len(joint_history) >= self.depth:
            raise DepthExceeded("multi-agent environment depth exceeded")
        return self.rule(joint_history, joint_action)

    @staticmethod
    def personal(joint_history: JointHistory, i: int) -> History:
        return History((acts[i], percs[i]) for acts, percs in joint_history)


def single_agent_env(nu: Environment) -> MultiAgentEnv:
    """Wrap a single-agent environment as a one-slot multi-agent environment."""

    def rule(joint_history, joint_action):
        h = MultiAgentEnv.personal(joint_history, 0)
        dist = nu.distribution(h, joint_action[0])
        return {(e,): p for e, p in enumerate(dist) if not is_zero(p)}

    return MultiAgentEnv([nu.actions], [nu.percepts], nu.depth, rule, nu.proper)


class PersonalEnvironment(Environment):
    """Agent ``i``'s view of ``ν̄`` after the co-players' policies are fixed.

    For each personal history we keep the distribution over the joint
    histories consistent with it (weights are joint probabilities with the
    agent's own actions conditioned on, not sampled).  The percept
    conditional is a ratio of summed weights.
    """

    def __init__(self, bar_nu: MultiAgentEnv, co_policies: Mapping[int, Policy], i: int, depth: int | None = None):
        others = set(range(bar_nu.n_agents)) - {i}
        if set(co_policies) != others:
            raise ValueError(f"need policies for agents {sorted(others)}")
        for j, pol in co_policies.items():
            if not pol.proper:
                raise ImproperPolicy(f"co-player {j} policy is not proper")
            if pol.actions != bar_nu.actions[j] or pol.percepts != bar_nu.percepts[j]:
                raise AlphabetMismatch(f"co-player {j} alphabets do not match the environment")
        depth = bar_nu.depth if depth is None else min(depth, bar_nu.depth)
        for pol in co_policies.values():
            depth = min(depth, pol.depth)
        super().__init__(bar_nu.actions[i], bar_nu.percepts[i], depth, proper=bar_nu.proper)
        self.bar_nu = bar_nu
        self.co_policies = dict(co_policies)
        self.i = i
        self._weights: dict = {}
        self._steps: dict = {}
        self._order = sorted(others)

    def joint_weights(self, h: History) -> dict:
        """Joint histories consistent with personal history ``h`` and their weights."""
        try:
            return self._weights[h]
        except KeyError:
            pass
        if not h:
            result = {(): Fraction(1)}
        else:
            parent = History(h[:-1])
            a, e = h[-1]
            result = {}
            for joint, weight in self.joint_weights(parent).items():
                for j_h, p in self._step(joint, a).items():
                    if j_h[-1][1][self.i] != e:
                        continue
                    result[j_h] = result.get(j_h, 0) + weight * p
        self._weights[h] = result
        return result

    def _step(self, joint: tuple, a: int) -> dict:
        """One joint turn from ``joint`` when agent ``i`` plays ``a``."""
        cached = self._steps.get((joint, a))
        if cached is not None:
            return cached
        choices = []
        for j in self._order:
            dist = self.co_policies[j].distribution(MultiAgentEnv.personal(joint, j))
            choices.append([(b, p) for b, p in enumerate(dist) if not is_zero(p)])
        out = {}
        for combo in itertools.product(*choices):
            acts = [None] * self.bar_nu.n_agents
            acts[self.i] = a
            prob = 1
            for j, (b, p) in zip(self._order, combo):
                acts[j] = b
                prob = prob * p
            acts = tuple(acts)
            for percs, q in self.bar_nu.distribution(joint, acts).items():
                if is_zero(q):
                    continue
                out[joint + ((acts, tuple(percs)),)] = prob * q
        self._steps[(joint, a)] = out
        return out

    def _distribution(self, h, a):
        weights = self.joint_weights(h)
        total = sum(weights.values())
        if is_zero(total):
            raise UndefinedConditional(f"personal history {h} is unreachable", history=h)
        out = [0 * total] * len(self.percepts)
        for joint, weight in weights.items():
            for j_h, p in self._step(joint, a).items():
                out[j_h[-1][1][self.i]] += weight * p
        return [x / total for x in out]


def personal_environment(bar_nu: MultiAgentEnv, co_policies: Mapping[int, Policy], i: int,
                         depth: int | None = None) -> PersonalEnvironment:
    return PersonalEnvironment(bar_nu, co_policies, i, depth)


def joint_universe_mass(bar_nu: MultiAgentEnv, policies: Sequence[Policy], joint_history: JointHistory) -> Number:
    """``ν̄^{π¹..πᴺ}(h̄)`` by direct product; used as a brute-force oracle."""
    m = Fraction(1)
    for t, (acts, percs) in enumerate(joint_history):
        prefix = tuple(joint_history[:t])
        for j, pol in enumerate(policies):
            m *= pol.prob(MultiAgentEnv.personal(prefix, j), acts[j])
        m *= bar_nu.distribution(prefix, acts).get(tuple(percs), 0)
        if m == 0:
            return m
    return m
