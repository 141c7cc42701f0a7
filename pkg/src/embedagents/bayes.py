"""Mixture universes, posterior updates on actions and percepts, decoupled
mixtures, prediction-loss ledgers and structural-similarity diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from math import gcd
from typing import Hashable, Iterable, Sequence

import mpmath

from .core import (
    EMPTY,
    AlphabetMismatch,
    Completion,
    Environment,
    History,
    InteractionUniverse,
    Number,
    Policy,
    Universe,
    UndefinedConditional,
    all_histories,
    histories_up_to,
    interact,
    is_zero,
)


class ZeroPredictiveMass(ValueError):
    """The mixture assigns zero predictive probability to an observed symbol."""

    def __init__(self, message, history=None, symbol=None):
        super().__init__(message)
        self.history = history
        self.symbol = symbol


class SupportViolation(ValueError):
    """The reference universe charges a history the mixture rules out."""


class NotFullySupported(ValueError):
    """A class member has a zero conditional, so its factorisation is not unique."""


# ---------------------------------------------------------------------------
# mixture universe


class MixtureUniverse(Universe):
    """``ρ = Σ_λ w(λ) λ`` over a finite labelled class.

    The prior may be a semiprior (weights summing to less than one).
    """

    def __init__(self, members: Sequence[Universe], weights: Sequence[Number],
                 labels: Sequence[str] | None = None, completion=None):
        if not members:
            raise ValueError("hypothesis class must be non-empty")
        if len(members) != len(weights):
            raise ValueError("one weight per member required")
        first = members[0]
        for m in members[1:]:
            if m.actions != first.actions or m.percepts != first.percepts:
                raise AlphabetMismatch("class members must share alphabets")
        if any(w <= 0 for w in weights):
            raise ValueError("prior weights must be positive")
        total = sum(weights)
        if total > 1 and not math.isclose(total, 1, rel_tol=0, abs_tol=1e-12):
            raise ValueError(f"prior weights sum to {total} > 1")
        labels = list(labels) if labels is not None else [f"u{i}" for i in range(len(members))]
        if len(set(labels)) != len(labels):
            raise ValueError("member labels must be unique")
        super().__init__(first.actions, first.percepts, min(m.depth for m in members), completion)
        self.members = list(members)
        self.weights = tuple(weights)
        self.labels = labels
        self._mass: dict = {}
        self._post: dict = {}
        self._cond: dict = {}

    @property
    def normalization(self) -> Number:
        return sum(self.weights)

    @property
    def is_proper_prior(self) -> bool:
        return self.normalization == 1

    def mass(self, h):
        try:
            return self._mass[h]
        except KeyError:
            pass
        self._check(h)
        m = sum(w * u.mass(h) for w, u in zip(self.weights, self.members))
        self._mass[h] = m
        return m

    def mass_action(self, h, a):
        self._check(h, dangling=True)
        return sum(w * u.mass_action(h, a) for w, u in zip(self.weights, self.members))

    def closed_form_posterior(self, h: History, action: int | None = None) -> tuple[Number, ...]:
        """``w(λ) λ(h) ρ(ε) / ρ(h)`` (or on ``h a``) straight from the masses."""
        if action is None:
            masses = [u.mass(h) for u in self.members]
        else:
            masses = [u.mass_action(h, action) for u in self.members]
        joint = [w * m for w, m in zip(self.weights, masses)]
        total = sum(joint)
        if is_zero(total):
            raise ZeroPredictiveMass(f"mixture has zero mass at {h}", history=h, symbol=action)
        z = self.normalization
        return tuple(x * z / total for x in joint)

    def posterior(self, h: History, action: int | None = None) -> tuple[Number, ...]:
        """Posterior weights after ``h`` (or ``h a``), summing to ``ρ(ε)``.

        Built by turn-by-turn renormalised updates.  Under rationals this
        equals :meth:`closed_form_posterior` exactly; under floats it avoids
        the underflow of long products of small masses.
        """
        if action is not None:
            return self._update(self.posterior(h), h, action, None)
        try:
            return self._post[h]
        except KeyError:
            pass
        if not h:
            post = self.weights
        else:
            parent = History(h[:-1])
            a, e = h[-1]
            post = self._update(self._update(self.posterior(parent), parent, a, None), parent, a, e)
        self._post[h] = post
        return post

    def _update(self, post, h, a, e):
        lik = []
        for u, w in zip(self.members, post):
            if is_zero(w):
                lik.append(0 * w)
            elif e is None:
                lik.append(u.conditional_action(h)[a])
            else:
                lik.append(u.conditional_percept(h, a)[e])
        joint = [w * l for w, l in zip(post, lik)]
        total = sum(joint)
        if is_zero(total):
            raise ZeroPredictiveMass(f"mixture has zero mass at {h} (action {a}, percept {e})",
                                     history=h, symbol=a if e is None else e)
        z = self.normalization
        return tuple(x * z / total for x in joint)

    def conditional_action(self, h):
        try:
            return self._cond[h]
        except KeyError:
            pass
        out = self._conditional_action(h)
        self._cond[h] = out
        return out

    def conditional_percept(self, h, a):
        key = (h, a)
        try:
            return self._cond[key]
        except KeyError:
            pass
        out = self._conditional_percept(h, a)
        self._cond[key] = out
        return out

    def _conditional_action(self, h):
        self._check(h)
        try:
            post = self.posterior(h)
        except ZeroPredictiveMass:
            return super().conditional_action(h)
        z = self.normalization
        out = [0 * z] * len(self.actions)
        for u, w in zip(self.members, post):
            if not is_zero(w):
                for a, p in enumerate(u.conditional_action(h)):
                    out[a] += w * p
        return tuple(x / z for x in out)

    def _conditional_percept(self, h, a):
        self._check(h, dangling=True)
        try:
            post = self.posterior(h)
        except ZeroPredictiveMass:
            return super().conditional_percept(h, a)
        zero = 0 * self.normalization
        out = [zero] * len(self.percepts)
        norm = zero
        for u, w in zip(self.members, post):
            if is_zero(w):
                continue
            pa = u.conditional_action(h)[a]
            if is_zero(pa):
                continue
            norm += w * pa
            for e, p in enumerate(u.conditional_percept(h, a)):
                out[e] += w * pa * p
        if is_zero(norm):
            if self.completion is None:
                raise UndefinedConditional(f"zero mass at history {h} with action {a}", history=h, action=a)
            return tuple(self.completion.percept(h, a))
        return tuple(x / norm for x in out)

    def state_key(self, h):
        try:
            post = self.posterior(h)
        except ZeroPredictiveMass:
            return ("off-support", h)
        return (tuple(u.state_key(h) if not is_zero(p) else None for u, p in zip(self.members, post)), post)


class PosteriorCompletion(Completion):
    """Off-path conditionals of a mixture: ``Σ_λ w(λ|h) λ(·|h a)``.

    Used where ``ρ(h) > 0`` but ``ρ(h a) = 0``.  Each member answers with its
    own (completed) conditional, weighted by the posterior at ``h``.  This is
    the limit obtained when every member's policy trembles onto ``a`` with the
    same small probability.
    """

    def __init__(self):
        self.rho: MixtureUniverse | None = None

    def _post(self, h):
        try:
            return self.rho.posterior(h)
        except ZeroPredictiveMass:
            raise UndefinedConditional(f"mixture has zero mass at {h}", history=h) from None

    def action(self, h):
        post = self._post(h)
        z = self.rho.normalization
        out = [0 * z] * len(self.rho.actions)
        for u, w in zip(self.rho.members, post):
            if not is_zero(w):
                for a, p in enumerate(u.conditional_action(h)):
                    out[a] += w * p / z
        return out

    def percept(self, h, a):
        post = self._post(h)
        z = self.rho.normalization
        out = [0 * z] * len(self.rho.percepts)
        for u, w in zip(self.rho.members, post):
            if not is_zero(w):
                for e, p in enumerate(u.conditional_percept(h, a)):
                    out[e] += w * p / z
        return out


def mixture(members, weights, labels=None, posterior_completion: bool = False) -> MixtureUniverse:
    """Build ``ρ``; with ``posterior_completion`` off-path conditionals are defined."""
    completion = PosteriorCompletion() if posterior_completion else None
    rho = MixtureUniverse(members, weights, labels, completion)
    if completion is not None:
        completion.rho = rho
    return rho


# ---------------------------------------------------------------------------
# belief states and updates


@dataclass(frozen=True)
class BeliefState:
    """Posterior weights after conditioning on ``history`` (and a dangling action)."""

    weights: tuple
    history: History = field(default_factory=History)
    dangling: int | None = None

    @property
    def total(self):
        return sum(self.weights)


def initial_belief(rho: MixtureUniverse) -> BeliefState:
    return BeliefState(tuple(rho.weights), EMPTY, None)


def update_on_action(rho: MixtureUniverse, belief: BeliefState, a: int) -> BeliefState:
    """``w(λ|ha) = w(λ|h) λ(a|h) / ρ(a|h)``."""
    if belief.dangling is not None:
        raise ValueError("belief already conditions on a dangling action")
    h = belief.history
    likelihood = [u.conditional_action(h)[a] if not is_zero(w) else 0 * w
                  for u, w in zip(rho.members, belief.weights)]
    norm = sum(w * l for w, l in zip(belief.weights, likelihood)) / belief.total
    if is_zero(norm):
        raise ZeroPredictiveMass(f"ρ(a|h) = 0 for action {a} at {h}", history=h, symbol=a)
    weights = tuple(w * l / norm for w, l in zip(belief.weights, likelihood))
    return BeliefState(weights, h, a)


def update_on_percept(rho: MixtureUniverse, belief: BeliefState, e: int) -> BeliefState:
    """``w(λ|hae) = w(λ|ha) λ(e|ha) / ρ(e|ha)``."""
    if belief.dangling is None:
        raise ValueError("a percept update needs a preceding action update")
    h, a = belief.history, belief.dangling
    likelihood = [u.conditional_percept(h, a)[e] if not is_zero(w) else 0 * w
                  for u, w in zip(rho.members, belief.weights)]
    norm = sum(w * l for w, l in zip(belief.weights, likelihood)) / belief.total
    if is_zero(norm):
        raise ZeroPredictiveMass(f"ρ(e|ha) = 0 for percept {e} at {h}, action {a}", history=h, symbol=e)
    weights = tuple(w * l / norm for w, l in zip(belief.weights, likelihood))
    return BeliefState(weights, h.extend(a, e), None)


def predict(rho: MixtureUniverse, belief: BeliefState) -> tuple[Number, ...]:
    """Posterior-weighted predictive distribution for the next symbol."""
    h = belief.history
    total = belief.total
    if belief.dangling is None:
        n = len(rho.actions)
        out = [0 * total] * n
        for u, w in zip(rho.members, belief.weights):
            if not is_zero(w):
                for a, p in enumerate(u.conditional_action(h)):
                    out[a] += w * p
    else:
        n = len(rho.percepts)
        out = [0 * total] * n
        for u, w in zip(rho.members, belief.weights):
            if not is_zero(w):
                for e, p in enumerate(u.conditional_percept(h, belief.dangling)):
                    out[e] += w * p
    return tuple(x / total for x in out)


def belief_along(rho: MixtureUniverse, h: History) -> list[BeliefState]:
    """Beliefs after every half-step of ``h`` (action updates then percept updates)."""
    b = initial_belief(rho)
    trace = [b]
    for a, e in h:
        b = update_on_action(rho, b, a)
        trace.append(b)
        b = update_on_percept(rho, b, e)
        trace.append(b)
    return trace


# ---------------------------------------------------------------------------
# decoupled mixtures


class MixtureEnvironment(Environment):
    """``ξ = Σ_ν w(ν) ν``; posteriors update on percepts only."""

    def __init__(self, envs: Sequence[Environment], weights: Sequence[Number], labels=None):
        if not envs or len(envs) != len(weights):
            raise ValueError("need one weight per environment")
        super().__init__(envs[0].actions, envs[0].percepts, min(e.depth for e in envs))
        self.envs = list(envs)
        self.weights = tuple(weights)
        self.labels = list(labels) if labels is not None else [f"nu{i}" for i in range(len(envs))]
        self._lik: dict = {}

    def likelihood(self, j: int, h: History) -> Number:
        """``ν_j(e_{1:t} || a_{1:t})``."""
        key = (j, h)
        try:
            return self._lik[key]
        except KeyError:
            pass
        if not h:
            value = 1 + 0 * self.weights[0]
        else:
            parent = History(h[:-1])
            a, e = h[-1]
            value = self.likelihood(j, parent)
            if not is_zero(value):
                value = value * self.envs[j].prob(parent, a, e)
        self._lik[key] = value
        return value

    def posterior(self, h: History) -> tuple[Number, ...]:
        joint = [w * self.likelihood(j, h) for j, w in enumerate(self.weights)]
        total = sum(joint)
        if is_zero(total):
            raise ZeroPredictiveMass(f"environment mixture rules out {h}", history=h)
        return tuple(x / total for x in joint)

    def _distribution(self, h, a):
        post = self.posterior(h)
        out = [0 * post[0]] * len(self.percepts)
        for env, w in zip(self.envs, post):
            if not is_zero(w):
                for e, p in enumerate(env.distribution(h, a)):
                    out[e] += w * p
        return out

    def state_key(self, h):
        try:
            post = self.posterior(h)
        except ZeroPredictiveMass:
            return ("off-support", h)
        return (tuple(env.state_key(h) if not is_zero(p) else None for env, p in zip(self.envs, post)), post)


class MixturePolicy(Policy):
    """``ζ = Σ_π w(π) π``; posteriors update on actions only."""

    def __init__(self, policies: Sequence[Policy], weights: Sequence[Number], labels=None):
        if not policies or len(policies) != len(weights):
            raise ValueError("need one weight per policy")
        super().__init__(policies[0].actions, policies[0].percepts, min(p.depth for p in policies))
        self.policies = list(policies)
        self.weights = tuple(weights)
        self.labels = list(labels) if labels is not None else [f"pi{i}" for i in range(len(policies))]
        self._lik: dict = {}

    def likelihood(self, j: int, h: History) -> Number:
        key = (j, h)
        try:
            return self._lik[key]
        except KeyError:
            pass
        if not h:
            value = 1 + 0 * self.weights[0]
        else:
            parent = History(h[:-1])
            value = self.likelihood(j, parent)
            if not is_zero(value):
                value = value * self.policies[j].prob(parent, h[-1][0])
        self._lik[key] = value
        return value

    def posterior(self, h: History) -> tuple[Number, ...]:
        joint = [w * self.likelihood(j, h) for j, w in enumerate(self.weights)]
        total = sum(joint)
        if is_zero(total):
            raise ZeroPredictiveMass(f"policy mixture rules out {h}", history=h)
        return tuple(x / total for x in joint)

    def _distribution(self, h):
        post = self.posterior(h)
        out = [0 * post[0]] * len(self.actions)
        for pol, w in zip(self.policies, post):
            if not is_zero(w):
                for a, p in enumerate(pol.distribution(h)):
                    out[a] += w * p
        return out


@dataclass
class DecoupledFactorization:
    policies: list
    policy_weights: tuple
    environments: list
    environment_weights: tuple
    zeta: MixturePolicy
    xi: MixtureEnvironment
    is_product: bool


def _distinct(items) -> list:
    out = []
    for x in items:
        if not any(x is y for y in out):
            out.append(x)
    return out


def _index_of(items, x) -> int:
    return next(i for i, y in enumerate(items) if y is x)


def factor_decoupled(pairs: Sequence[tuple[Policy, Environment]], weights: Sequence[Number]) -> DecoupledFactorization:
    """Split a prior over explicit ``(π, ν)`` pairs into its two marginals."""
    pols = _distinct(p for p, _ in pairs)
    envs = _distinct(e for _, e in pairs)
    zero = 0 * weights[0]
    wp = [zero] * len(pols)
    we = [zero] * len(envs)
    joint = {}
    for (p, e), w in zip(pairs, weights):
        i, j = _index_of(pols, p), _index_of(envs, e)
        wp[i] += w
        we[j] += w
        joint[(i, j)] = joint.get((i, j), zero) + w
    is_product = all(joint.get((i, j), zero) == wp[i] * we[j]
                     for i in range(len(pols)) for j in range(len(envs)))
    return DecoupledFactorization(pols, tuple(wp), envs, tuple(we),
                                  MixturePolicy(pols, wp), MixtureEnvironment(envs, we), is_product)


def pair_mixture(pairs, weights, labels=None) -> MixtureUniverse:
    return MixtureUniverse([interact(p, e) for p, e in pairs], weights, labels)


def decoupled_mixture(pairs, weights) -> MixtureUniverse:
    """``ρ_d``: every policy against every environment with prior ``w(π) w(ν)``."""
    f = factor_decoupled(pairs, weights)
    members, ws = [], []
    for p, wp in zip(f.policies, f.policy_weights):
        for e, we in zip(f.environments, f.environment_weights):
            members.append(interact(p, e))
            ws.append(wp * we)
    return MixtureUniverse(members, ws)


# ---------------------------------------------------------------------------
# grain of uncertainty


@dataclass(frozen=True)
class GrainReport:
    holds: bool
    witness: tuple | None = None

    def __bool__(self):
        return self.holds


def grain_of_uncertainty(rho: Universe, depth: int, reachable_only: bool = False) -> GrainReport:
    """Check ``ρ(h a) > 0`` for every history shorter than ``depth`` and every action.

    By default every history counts, as in the definition.  With
    ``reachable_only`` histories of zero mass are skipped.
    """
    nA, nE = len(rho.actions), len(rho.percepts)
    for h in histories_up_to(nA, nE, depth - 1):
        if reachable_only and is_zero(rho.mass(h)):
            continue
        for a in range(nA):
            if is_zero(rho.mass_action(h, a)):
                return GrainReport(False, (h, a))
    return GrainReport(True)


# ---------------------------------------------------------------------------
# exact logarithms


class LogLinear:
    """Exact linear combination ``Σ c_n log n`` over integers ``n > 1``.

    Coefficients are rationals.  Two combinations are compared exactly by
    rewriting their difference over a pairwise coprime base; logarithms of
    pairwise coprime integers are linearly independent over the rationals, so
    the difference vanishes iff every coefficient does.
    """

    __slots__ = ("terms",)

    def __init__(self, terms: dict | None = None):
        self.terms = dict(terms or {})

    def add_log(self, coef: Fraction, q: Fraction) -> "LogLinear":
        """Add ``coef · log q`` for a positive rational ``q``."""
        q = Fraction(q)
        if q <= 0:
            raise ValueError("log of a non-positive number")
        if coef == 0:
            return self
        for n, sign in ((q.numerator, 1), (q.denominator, -1)):
            if n != 1:
                self.terms[n] = self.terms.get(n, 0) + sign * coef
        return self

    def __add__(self, other: "LogLinear") -> "LogLinear":
        out = LogLinear(self.terms)
        for n, c in other.terms.items():
            out.terms[n] = out.terms.get(n, 0) + c
        return out

    def scale(self, c: Fraction) -> "LogLinear":
        return LogLinear({n: c * v for n, v in self.terms.items()})

    def __sub__(self, other: "LogLinear") -> "LogLinear":
        return self + other.scale(Fraction(-1))

    def reduced(self) -> dict:
        """Coefficients over a coprime base, zero entries dropped.

        Small primes are divided out first; the gcd refinement only sees the
        remaining cofactors.
        """
        live = {n: c for n, c in self.terms.items() if c != 0}
        if not live:
            return {}
        out: dict = {}
        cofactors: dict = {}
        for n, c in live.items():
            rest = n
            for p in _SMALL_PRIMES:
                if p * p > rest:
                    break
                k = 0
                while rest % p == 0:
                    rest //= p
                    k += 1
                if k:
                    out[p] = out.get(p, 0) + k * c
            if rest > 1:
                cofactors[rest] = cofactors.get(rest, 0) + c
        if cofactors:
            base = coprime_base(cofactors)
            for n, c in cofactors.items():
                rest = n
                for b in base:
                    k = 0
                    while rest % b == 0:
                        rest //= b
                        k += 1
                    if k:
                        out[b] = out.get(b, 0) + k * c
                if rest != 1:
                    raise ArithmeticError(f"{n} does not factor over the coprime base")
        return {b: c for b, c in out.items() if c != 0}

    def is_zero(self) -> bool:
        return not self.reduced()

    def value(self, digits: int = 60) -> mpmath.mpf:
        with mpmath.workdps(digits):
            return mpmath.fsum(mpmath.mpf(c.numerator) / c.denominator * mpmath.log(n)
                               for n, c in self.terms.items() if c != 0)

    def sign(self, digits: int = 80) -> int:
        """Exact sign: zero is decided symbolically, nonzero values numerically."""
        if self.is_zero():
            return 0
        v = self.value(digits)
        if abs(v) < mpmath.mpf(10) ** (-(digits - 20)):
            raise ArithmeticError("sign undecided at the working precision")
        return 1 if v > 0 else -1

    def __float__(self):
        return float(self.value(30))


def _primes_below(n: int) -> tuple[int, ...]:
    sieve = bytearray([1]) * n
    sieve[:2] = b"\x00\x00"
    for i in range(2, int(n ** 0.5) + 1):
        if sieve[i]:
            sieve[i * i::i] = bytearray(len(sieve[i * i::i]))
    return tuple(i for i, v in enumerate(sieve) if v)


_SMALL_PRIMES = _primes_below(1000)


def coprime_base(numbers: Iterable[int]) -> list[int]:
    """Pairwise coprime integers over which every input factors (gcd refinement)."""
    base: list[int] = []
    for n in numbers:
        stack = [n]
        while stack:
            x = stack.pop()
            if x == 1:
                continue
            for idx, b in enumerate(base):
                g = gcd(x, b)
                if g > 1:
                    base.pop(idx)
                    stack.extend(y for y in (g, b // g, x // g) if y > 1)
                    break
            else:
                base.append(x)
    return sorted(set(base))


def _log_term(acc, coef, x, y, exact):
    """Accumulate ``coef · log(x / y)``."""
    if exact:
        acc.add_log(coef, Fraction(x) / Fraction(y))
        return acc
    return acc + coef * math.log(x / y)


# ---------------------------------------------------------------------------
# prediction loss


@dataclass
class LossReport:
    loss: float
    kl: float
    exact_loss: LogLinear | None = None
    exact_kl: LogLinear | None = None

    def identity_holds(self, tol: float = 1e-9) -> bool:
        if self.exact_loss is not None:
            return (self.exact_loss - self.exact_kl).is_zero()
        return abs(self.loss - self.kl) <= tol


def _is_exact(*xs) -> bool:
    return all(isinstance(x, (Fraction, int)) for x in xs)


def prediction_loss(rho: Universe, lam: Universe, n: int) -> LossReport:
    """Accumulated per-symbol KL ``L_n(ρ, λ)`` and the joint KL on length-``n`` histories.

    The first is summed from conditionals turn by turn; the second from the
    joint masses of complete histories.  Both are returned so the caller can
    check they agree.
    """
    exact = _is_exact(rho.mass(EMPTY), lam.mass(EMPTY))
    loss = LogLinear() if exact else 0.0
    nA, nE = len(lam.actions), len(lam.percepts)

    frontier = [EMPTY]
    for _ in range(n):
        nxt = []
        for h in frontier:
            m = lam.mass(h)
            if is_zero(m):
                continue
            la = lam.conditional_action(h)
            ra = _conditional_or_violation(rho.conditional_action, h)
            for a in range(nA):
                if is_zero(la[a]):
                    continue
                if is_zero(ra[a]):
                    raise SupportViolation(f"λ charges action {a} at {h} but ρ does not")
                loss = _log_term(loss, m * la[a], la[a], ra[a], exact)
                le = lam.conditional_percept(h, a)
                re = rho.conditional_percept(h, a)
                for e in range(nE):
                    if is_zero(le[e]):
                        continue
                    if is_zero(re[e]):
                        raise SupportViolation(f"λ charges percept {e} at {h}, {a} but ρ does not")
                    loss = _log_term(loss, m * la[a] * le[e], le[e], re[e], exact)
                    nxt.append(h.extend(a, e))
        frontier = nxt

    kl = LogLinear() if exact else 0.0
    rho0, lam0 = rho.mass(EMPTY), lam.mass(EMPTY)
    for h in all_histories(nA, nE, n):
        m = lam.mass(h)
        if is_zero(m):
            continue
        r = rho.mass(h)
        if is_zero(r):
            raise SupportViolation(f"λ charges {h} but ρ does not")
        kl = _log_term(kl, m / lam0, m / lam0, r / rho0, exact)

    if exact:
        return LossReport(float(loss), float(kl), loss, kl)
    return LossReport(loss, kl)


def _conditional_or_violation(fn, h):
    try:
        return fn(h)
    except UndefinedConditional as exc:
        raise SupportViolation(str(exc)) from exc


def kl_histories(p: Universe, q: Universe, n: int):
    """``KL(p ‖ q)`` on length-``n`` histories; exact :class:`LogLinear` under rationals."""
    exact = _is_exact(p.mass(EMPTY), q.mass(EMPTY))
    acc = LogLinear() if exact else 0.0
    nA, nE = len(p.actions), len(p.percepts)
    for h in all_histories(nA, nE, n):
        m = p.mass(h)
        if is_zero(m):
            continue
        r = q.mass(h)
        if is_zero(r):
            raise SupportViolation(f"{h} charged by the first measure only")
        acc = _log_term(acc, m, m, r, exact)
    return acc


def solomonoff_bound_holds(rho: MixtureUniverse, index: int, n: int) -> tuple[bool, LossReport]:
    """``L_n(ρ, λ) ≤ −log w(λ)``, decided exactly under rationals."""
    lam = rho.members[index]
    report = prediction_loss(rho, lam, n)
    w = rho.weights[index]
    if report.exact_loss is not None:
        slack = LogLinear(report.exact_loss.terms).add_log(Fraction(1), Fraction(w))
        return slack.sign() <= 0, report
    return report.loss <= -math.log(w) + 1e-12, report


# ---------------------------------------------------------------------------
# coupled versus decoupled loss


@dataclass
class GapReport:
    gap: float
    kl: float
    kl_reverse: float
    exact_gap: LogLinear | None = None
    exact_kl: LogLinear | None = None

    def identity_holds(self, tol: float = 1e-9) -> bool:
        if self.exact_gap is not None:
            return (self.exact_gap - self.exact_kl).is_zero()
        return abs(self.gap - self.kl) <= tol


def avg_loss_gap(pairs, weights, n: int, depth: int | None = None) -> GapReport:
    """``Σ_λ w(λ)(L_n(ρ_d, λ) − L_n(ρ, λ))`` next to ``KL(ρ ‖ ρ_d)`` on length-``n`` histories.

    ``ρ_d`` uses the product of the two marginal priors.  The reverse
    divergence ``KL(ρ_d ‖ ρ)`` is reported as well for comparison.
    """
    rho = pair_mixture(pairs, weights)
    rho_d = decoupled_mixture(pairs, weights)
    for u in rho.members:
        require_fully_supported(u, depth or n)
    exact = _is_exact(*weights)
    gap = LogLinear() if exact else 0.0
    for w, lam in zip(rho.weights, rho.members):
        a = prediction_loss(rho_d, lam, n)
        b = prediction_loss(rho, lam, n)
        if exact:
            gap = gap + (a.exact_loss - b.exact_loss).scale(Fraction(w))
        else:
            gap += w * (a.loss - b.loss)
    kl = kl_histories(rho, rho_d, n)
    kl_rev = kl_histories(rho_d, rho, n)
    if exact:
        return GapReport(float(gap), float(kl), float(kl_rev), gap, kl)
    return GapReport(gap, kl, kl_rev)


# ---------------------------------------------------------------------------
# structural similarity


def fully_supported(universe: Universe, depth: int) -> bool:
    try:
        require_fully_supported(universe, depth)
    except NotFullySupported:
        return False
    return True


def require_fully_supported(universe: Universe, depth: int) -> None:
    nA, nE = len(universe.actions), len(universe.percepts)
    for h in histories_up_to(nA, nE, depth - 1):
        if any(is_zero(p) for p in universe.conditional_action(h)):
            raise NotFullySupported(f"zero action conditional at {h}")
        for a in range(nA):
            if any(is_zero(p) for p in universe.conditional_percept(h, a)):
                raise NotFullySupported(f"zero percept conditional at {h}, action {a}")


def factor_signatures(universe: Universe, depth: int) -> tuple[Hashable, Hashable]:
    """Exhaustive conditional tables of the policy and environment factors."""
    require_fully_supported(universe, depth)
    nA, nE = len(universe.actions), len(universe.percepts)
    pol, env = [], []
    for h in histories_up_to(nA, nE, depth - 1):
        pol.append(tuple(universe.conditional_action(h)))
        env.append(tuple(tuple(universe.conditional_percept(h, a)) for a in range(nA)))
    return tuple(pol), tuple(env)


def _marginals(rho: MixtureUniverse, depth: int):
    sigs = [factor_signatures(u, depth) for u in rho.members]
    wp, we = {}, {}
    for (sp, se), w in zip(sigs, rho.weights):
        wp[sp] = wp.get(sp, 0) + w
        we[se] = we.get(se, 0) + w
    return sigs, wp, we


def _log(x, bits):
    return math.log2(x) if bits else math.log(x)


def structural_similarity(rho: MixtureUniverse, index: int, depth: int | None = None, bits: bool = False) -> float:
    """``log w(λ) / (w(π) w(ν))`` with marginals taken over the class."""
    depth = rho.depth if depth is None else depth
    sigs, wp, we = _marginals(rho, depth)
    sp, se = sigs[index]
    w = rho.weights[index]
    return _log(w / (wp[sp] * we[se]), bits)


def avg_structural_similarity(rho: MixtureUniverse, depth: int | None = None, bits: bool = False) -> float:
    """``Σ_λ w(λ) S(λ, w)``: the mutual information between policy and environment."""
    depth = rho.depth if depth is None else depth
    sigs, wp, we = _marginals(rho, depth)
    joint: dict = {}
    for s, w in zip(sigs, rho.weights):
        joint[s] = joint.get(s, 0) + w
    return sum(float(w) * _log(w / (wp[sp] * we[se]), bits) for (sp, se), w in joint.items())
