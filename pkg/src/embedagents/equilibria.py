"""Equilibrium checkers for one-shot games and sequential universes, plus a
linear-feasibility search certifying that no full-support dependency
distribution supports a profile."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.optimize import linprog

from .core import EMPTY, EnvironmentPart, History, Policy, Universe, UndefinedConditional, interact, is_zero, total_variation_k
from .planning import DiscountedTask, PlanBudget, Planner, argmax_lowest
from .scenarios import NormalFormGame, dogmatic_mixture


class InconsistentCompletion(ValueError):
    """Completion tables disagree with the joint distribution on its support."""


@dataclass
class Verdict:
    passed: bool
    witnesses: list = field(default_factory=list)
    tolerances: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)

    def __bool__(self):
        return self.passed

    def to_record(self) -> dict:
        return {
            "pass": self.passed,
            "witnesses": [{k: _plain(v) for k, v in w.items()} for w in self.witnesses],
            "tolerances": {k: _plain(v) for k, v in self.tolerances.items()},
            "notes": {k: _plain(v) for k, v in self.notes.items()},
        }


def _plain(x):
    if isinstance(x, Fraction):
        return f"{x.numerator}/{x.denominator}" if x.denominator != 1 else str(x.numerator)
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, History):
        return [list(t) for t in x]
    if isinstance(x, np.floating):
        return float(x)
    return x


def _verdict(witnesses, **tolerances) -> Verdict:
    return Verdict(not witnesses, witnesses, tolerances)


# ---------------------------------------------------------------------------
# one-shot helpers


def _others(joint, i):
    return tuple(x for j, x in enumerate(joint) if j != i)


def _insert(others, i, a):
    lst = list(others)
    lst.insert(i, a)
    return tuple(lst)


def _other_profiles(game: NormalFormGame, i: int):
    return list(itertools.product(*[acts for j, acts in enumerate(game.actions) if j != i]))


def _profile_dicts(game: NormalFormGame, profile) -> list[dict]:
    """Accept per-player dicts, aligned lists, or a pure joint action."""
    out = []
    for i, acts in enumerate(game.actions):
        spec = profile[i]
        if isinstance(spec, str):
            d = {a: Fraction(int(a == spec)) for a in acts}
        elif isinstance(spec, Mapping):
            d = {a: spec.get(a, 0) for a in acts}
        else:
            d = dict(zip(acts, spec))
        if sum(d.values()) != 1 and abs(float(sum(d.values())) - 1) > 1e-12:
            raise ValueError(f"player {i} profile is not proper")
        out.append(d)
    return out


def _product_conditional(game, profiles, i):
    dist = {}
    for others in _other_profiles(game, i):
        p = 1
        for j, b in zip([j for j in range(game.n_players) if j != i], others):
            p = p * profiles[j][b]
        dist[others] = p
    return dist


def _expected(game, i, a, cond):
    return sum(p * game.payoff(i, _insert(o, i, a)) for o, p in cond.items())


# ---------------------------------------------------------------------------
# Nash


def check_nash(game: NormalFormGame, profile, eps=0) -> Verdict:
    """Every unilateral pure deviation gains at most ``eps``."""
    profiles = _profile_dicts(game, profile)
    witnesses = []
    for i in range(game.n_players):
        cond = _product_conditional(game, profiles, i)
        current = sum(profiles[i][a] * _expected(game, i, a, cond) for a in game.actions[i])
        for a in game.actions[i]:
            gap = _expected(game, i, a, cond) - current
            if gap > eps:
                witnesses.append({"player": i, "deviation": a, "gap": gap})
    return _verdict(witnesses, eps=eps)


# ---------------------------------------------------------------------------
# dependency distributions


class DependencyDistribution:
    """Joint distribution ``p(ā)`` plus a completion ``p(a^{-i} | a^i)`` for every player and action."""

    def __init__(self, game: NormalFormGame, joint: Mapping, completion: Mapping | None = None,
                 source: str = "table", check: bool = True):
        self.game = game
        self.joint = {tuple(k): v for k, v in joint.items()}
        for k in game.joint_actions():
            self.joint.setdefault(k, Fraction(0))
        self.source = source
        self.completion = {}
        for i in range(game.n_players):
            for a in game.actions[i]:
                given = (completion or {}).get((i, a))
                if given is not None:
                    self.completion[(i, a)] = {tuple(o) if isinstance(o, tuple) else (o,): v for o, v in given.items()}
                elif self.marginal(i, a) > 0:
                    self.completion[(i, a)] = self._ratio(i, a)
                else:
                    raise InconsistentCompletion(f"no completion for player {i}, off-path action {a}")
        if check:
            self.validate()

    def marginal(self, i, a):
        return sum(p for k, p in self.joint.items() if k[i] == a)

    def _ratio(self, i, a):
        m = self.marginal(i, a)
        return {o: self.joint[_insert(o, i, a)] / m for o in _other_profiles(self.game, i)}

    def conditional(self, i: int, a) -> dict:
        return self.completion[(i, a)]

    def validate(self, tol=1e-12):
        total = sum(self.joint.values())
        if any(v < 0 for v in self.joint.values()) or abs(total - 1) > tol:
            raise InconsistentCompletion("joint distribution is not proper")
        for (i, a), cond in self.completion.items():
            if abs(sum(cond.values()) - 1) > tol or any(v < 0 for v in cond.values()):
                raise InconsistentCompletion(f"completion for player {i}, action {a} is not proper")
            if self.marginal(i, a) > 0:
                ratio = self._ratio(i, a)
                if any(abs(ratio.get(o, 0) - cond.get(o, 0)) > tol for o in ratio):
                    raise InconsistentCompletion(f"completion disagrees with p at player {i}, action {a}")

    @classmethod
    def from_profile(cls, game: NormalFormGame, profile) -> "DependencyDistribution":
        """Product distribution; conditionals ignore one's own action."""
        profiles = _profile_dicts(game, profile)
        joint = {}
        for k in game.joint_actions():
            p = 1
            for j, a in enumerate(k):
                p = p * profiles[j][a]
            joint[k] = p
        completion = {(i, a): _product_conditional(game, profiles, i)
                      for i in range(game.n_players) for a in game.actions[i]}
        return cls(game, joint, completion, source="product")

    @classmethod
    def from_limit(cls, game: NormalFormGame, family: Mapping, r=None) -> "DependencyDistribution":
        """Completion from a full-support family ``p_r`` as ``r → ∞``.

        ``family`` maps joint actions to sympy expressions (or strings) in ``r``.
        """
        import sympy

        r = r if r is not None else sympy.Symbol("r", positive=True)
        exprs = {tuple(k): sympy.sympify(v, locals={"r": r}) for k, v in family.items()}

        def lim(e):
            value = sympy.limit(sympy.simplify(e), r, sympy.oo)
            if not value.is_finite:
                raise InconsistentCompletion(f"limit of {e} is not finite")
            return _to_fraction(value)

        joint = {k: lim(e) for k, e in exprs.items()}
        completion = {}
        for i in range(game.n_players):
            for a in game.actions[i]:
                denom = sum(e for k, e in exprs.items() if k[i] == a)
                completion[(i, a)] = {o: lim(exprs[_insert(o, i, a)] / denom) for o in _other_profiles(game, i)}
        return cls(game, joint, completion, source="limit")


def _to_fraction(value) -> Fraction:
    import sympy

    value = sympy.nsimplify(value)
    if value.is_Rational:
        return Fraction(int(value.p), int(value.q))
    return Fraction(str(float(value)))


def check_dependency_eq(game: NormalFormGame, dep: DependencyDistribution, eps=0) -> Verdict:
    """Each on-support action maximises expected payoff under the completed conditionals."""
    witnesses = []
    for i in range(game.n_players):
        values = {a: _expected(game, i, a, dep.conditional(i, a)) for a in game.actions[i]}
        best = max(values.values())
        for a in game.actions[i]:
            if dep.marginal(i, a) > 0 and best - values[a] > eps:
                dev = max(game.actions[i], key=lambda b: values[b])
                witnesses.append({"player": i, "action": a, "deviation": dev, "gap": best - values[a]})
    return _verdict(witnesses, eps=eps)


# ---------------------------------------------------------------------------
# correlated embedded equilibria


@dataclass
class CorrelationDevice:
    messages: tuple  # per player: tuple of message labels
    distribution: Mapping  # joint message tuple -> probability

    def __post_init__(self):
        self.messages = tuple(tuple(m) for m in self.messages)
        self.distribution = {tuple(k): v for k, v in self.distribution.items()}
        total = sum(self.distribution.values())
        if abs(total - 1) > 1e-12 or any(v < 0 for v in self.distribution.values()):
            raise ValueError("device distribution is not proper")

    def marginal(self, i, m):
        return sum(p for k, p in self.distribution.items() if k[i] == m)


def de_to_cee(game: NormalFormGame, dep: DependencyDistribution):
    """Device ``p' = p``, obedient policies ``δ(a = m)`` and ``q`` given by the completion."""
    device = CorrelationDevice(game.actions, {k: v for k, v in dep.joint.items()})
    policies = [{m: {a: Fraction(int(a == m)) for a in acts} for m in acts} for acts in game.actions]

    def q(i, action, messages):
        return dep.conditional(i, action)

    return device, policies, q


def check_cee(game: NormalFormGame, policies, device: CorrelationDevice, q: Callable, eps=0) -> Verdict:
    """Per message, the policy's expected payoff is within ``eps`` of the best action.

    On-path actions see co-players follow their policies given their
    messages; off-path actions use ``q(i, action, messages)``.
    """
    witnesses = []
    for i in range(game.n_players):
        for m in device.messages[i]:
            pm = device.marginal(i, m)
            if pm <= 0:
                continue
            posterior = {k: p / pm for k, p in device.distribution.items() if k[i] == m and p > 0}

            def value(action):
                total = 0
                for joint_m, pk in posterior.items():
                    if policies[i][m].get(action, 0) > 0:
                        cond = {}
                        for others in _other_profiles(game, i):
                            prob = 1
                            for j, b in zip([j for j in range(game.n_players) if j != i], others):
                                prob = prob * policies[j][joint_m[j]].get(b, 0)
                            cond[others] = prob
                    else:
                        cond = q(i, action, joint_m)
                    total = total + pk * _expected(game, i, action, cond)
                return total

            values = {a: value(a) for a in game.actions[i]}
            lhs = sum(policies[i][m].get(a, 0) * values[a] for a in game.actions[i])
            best = max(values.values())
            if best - lhs > eps:
                dev = max(game.actions[i], key=lambda b: values[b])
                witnesses.append({"player": i, "message": m, "deviation": dev, "gap": best - lhs})
    return _verdict(witnesses, eps=eps)


# ---------------------------------------------------------------------------
# subjective and objective embedded equilibria (one-shot)


def _ground_truth_joint(game, profiles):
    out = {}
    for k in game.joint_actions():
        p = 1
        for j, a in enumerate(k):
            p = p * profiles[j][a]
        out[k] = p
    return out


def check_see(game: NormalFormGame, profile, beliefs: Sequence[DependencyDistribution], tol=0, delta_br=0) -> Verdict:
    """One-shot SEE: beliefs equal the play distribution exactly, and the
    profile is a best response to each player's completed beliefs."""
    profiles = _profile_dicts(game, profile)
    truth = _ground_truth_joint(game, profiles)
    witnesses = []
    for i, rho in enumerate(beliefs):
        distance = sum(abs(rho.joint[k] - truth[k]) for k in truth) / 2
        if distance > tol:
            witnesses.append({"player": i, "kind": "beliefs", "distance": distance})
        values = {a: _expected(game, i, a, rho.conditional(i, a)) for a in game.actions[i]}
        lhs = sum(profiles[i][a] * values[a] for a in game.actions[i])
        best = max(values.values())
        if best - lhs > delta_br:
            dev = max(game.actions[i], key=lambda b: values[b])
            witnesses.append({"player": i, "kind": "best-response", "deviation": dev, "gap": best - lhs})
    return _verdict(witnesses, beliefs=tol, delta_br=delta_br)


def see_not_ee_beliefs(game: NormalFormGame) -> list[DependencyDistribution]:
    """Off-path beliefs that make (A,A) subjectively optimal in the 3x3 game.

    Player 0 expects C after its own B and B after its own C; player 1
    expects the row player to copy its deviation.  Each deviation then pays 1.
    """

    def point(x):
        return {o: Fraction(int(o == (x,))) for o in (("A",), ("B",), ("C",))}

    joint = {("A", "A"): Fraction(1)}
    belief = DependencyDistribution(game, joint, {(0, "B"): point("C"), (0, "C"): point("B"),
                                                  (1, "B"): point("B"), (1, "C"): point("C")}, source="table")
    return [belief, belief]


def check_subjective_nash(game: NormalFormGame, profile, believed_profiles: Sequence, tol=0, delta_br=0) -> Verdict:
    """Each player best-responds to a product belief about the others that matches play."""
    beliefs = [DependencyDistribution.from_profile(game, bp) for bp in believed_profiles]
    return check_see(game, profile, beliefs, tol, delta_br)


def check_ee(game: NormalFormGame, profile, q: DependencyDistribution | Callable, eps_br=0) -> Verdict:
    """Best response against the ground truth completed by ``q`` off path."""
    profiles = _profile_dicts(game, profile)
    witnesses = []
    for i in range(game.n_players):
        on_path = _product_conditional(game, profiles, i)

        def cond(a):
            if profiles[i][a] > 0:
                return on_path
            return q.conditional(i, a) if isinstance(q, DependencyDistribution) else q(i, a)

        values = {a: _expected(game, i, a, cond(a)) for a in game.actions[i]}
        lhs = sum(profiles[i][a] * values[a] for a in game.actions[i])
        best = max(values.values())
        if best - lhs > eps_br:
            dev = max(game.actions[i], key=lambda b: values[b])
            witnesses.append({"player": i, "deviation": dev, "gap": best - lhs})
    return _verdict(witnesses, eps_br=eps_br)


# ---------------------------------------------------------------------------
# EE infeasibility


@dataclass
class InfeasibilityReport:
    floors: dict  # eta -> {"feasible": bool, "witness": joint or None}
    rows: list  # human-readable inequality rows
    forced_zero: list  # joint actions forced to zero mass
    multipliers: list  # exact certificates, one per fixpoint round
    on_path: tuple

    @property
    def infeasible_everywhere(self) -> bool:
        return all(not r["feasible"] for r in self.floors.values())


def _deviation_rows(game, on_path, slack):
    """Coefficient rows ``c`` with the best-response constraint ``Σ_x c_x p_x ≤ 0``."""
    joints = game.joint_actions()
    rows = []
    for i in range(game.n_players):
        v = Fraction(game.payoff(i, on_path)) + slack
        for a in game.actions[i]:
            if a == on_path[i]:
                continue
            row = [Fraction(game.payoff(i, x)) - v if x[i] == a else Fraction(0) for x in joints]
            rows.append(((i, a), row))
    return joints, rows


def _format_row(joints, row):
    lhs, rhs = [], []
    for x, c in zip(joints, row):
        if c == 0:
            continue
        name = "p(" + ",".join(x) + ")"
        coef = abs(c)
        term = name if coef == 1 else f"{coef}{name}"
        (lhs if c > 0 else rhs).append(term)
    return f"{' + '.join(lhs) or '0'} <= {' + '.join(rhs) or '0'}"


def _forced_zero(joints, rows, free):
    """Find y ≥ 0 with ``d = Σ y_j c_j ≥ 0`` on free coordinates; coordinates with d > 0 are forced to 0.

    The LP proposes multipliers; the certificate is re-checked in exact arithmetic.
    """
    idx = [joints.index(x) for x in free]
    C = np.array([[float(row[j]) for j in idx] for _, row in rows])
    m, n = C.shape
    # variables: y (m), t (n); maximise Σ t subject to t ≤ C^T y, 0 ≤ t ≤ 1, 0 ≤ y ≤ 100
    cost = np.concatenate([np.zeros(m), -np.ones(n)])
    A_ub = np.hstack([-C.T, np.eye(n)])
    b_ub = np.zeros(n)
    A_ub2 = np.hstack([-C.T, np.zeros((n, n))])  # d ≥ 0
    res = linprog(cost, A_ub=np.vstack([A_ub, A_ub2]), b_ub=np.concatenate([b_ub, np.zeros(n)]),
                  bounds=[(0, 100)] * m + [(0, 1)] * n, method="highs")
    if res.status != 0:
        return [], None
    y = [Fraction(v).limit_denominator(1000) for v in res.x[:m]]
    d = [sum(y[r] * rows[r][1][j] for r in range(m)) for j in idx]
    if any(v < 0 for v in d):
        return [], None
    forced = [x for x, v in zip(free, d) if v > 0]
    return forced, {"multipliers": y, "combination": d}


def ee_infeasibility_search(game: NormalFormGame, on_path: Sequence[str], floors=(1e-2, 1e-3, 1e-4),
                            slack=0) -> InfeasibilityReport:
    """Look for a full-support ``p`` (every mass ≥ η) whose conditionals keep ``on_path`` a best response.

    Deviation ``a'`` of player ``i`` is unprofitable when
    ``Σ_x p(x)(r_i(x) − v_i − slack) ≤ 0`` over outcomes with ``x_i = a'``,
    where ``v_i`` is the on-path payoff.  Afterwards an exact certificate
    derives which masses these inequalities force to zero.
    """
    if game.n_players != 2:
        raise ValueError("infeasibility search supports two-player games")
    on_path = tuple(on_path)
    slack = Fraction(slack)
    joints, rows = _deviation_rows(game, on_path, slack)
    n = len(joints)
    A_ub = np.array([[float(c) for c in row] for _, row in rows]) if rows else np.zeros((0, n))
    out = {}
    for eta in floors:
        if eta * n > 1:
            out[eta] = {"feasible": False, "witness": None}
            continue
        res = linprog(np.zeros(n), A_ub=A_ub if rows else None, b_ub=np.zeros(len(rows)) if rows else None,
                      A_eq=np.ones((1, n)), b_eq=[1.0], bounds=[(eta, 1)] * n, method="highs")
        feasible = res.status == 0
        out[eta] = {"feasible": feasible, "witness": dict(zip(joints, map(float, res.x))) if feasible else None}

    free = list(joints)
    forced_all, certs = [], []
    while True:
        forced, cert = _forced_zero(joints, rows, free)
        if not forced:
            break
        forced_all.extend(forced)
        certs.append(cert)
        free = [x for x in free if x not in forced]
        rows = [(key, [0 if joints[j] in forced_all else c for j, c in enumerate(row)]) for key, row in rows]
    _, original = _deviation_rows(game, on_path, slack)
    return InfeasibilityReport(out, [_format_row(joints, row) for _, row in original],
                               sorted(forced_all), certs, on_path)


# ---------------------------------------------------------------------------
# sequential checks


def _policy_universe(pi: Policy, rho: Universe):
    return interact(pi, EnvironmentPart(rho), factor_completion=True)


def subjective_br_gap(pi: Policy, rho: Universe, h: History, task: DiscountedTask, H: int):
    """``V*_ρ(h) − V_{(ρ^π)}(h)`` with both values truncated to ``H`` turns."""
    best = Planner(rho, task).value_opt(h, H)
    own = Planner(_policy_universe(pi, rho), task).value_self(h, H)
    return best - own


def check_epsilon_see(policies: Sequence[Policy], mixtures: Sequence[Universe], ground_truths: Sequence[Universe],
                      eps, task: DiscountedTask, budget: PlanBudget, histories: Sequence[History] | None = None,
                      delta=0, k_scan: int = 3) -> Verdict:
    """ε-SEE at the given personal histories (tail start; default the empty history).

    Best response: ``V_{(ρ^π)} ≥ V*_ρ − (2γ^H + δ)``.  Beliefs:
    ``D_k(ρ, truth | h) ≤ eps``.
    """
    slack = 2 * budget.error_bound(task.gamma) + delta
    witnesses = []
    for i, (pi, rho, truth) in enumerate(zip(policies, mixtures, ground_truths)):
        h = histories[i] if histories is not None else EMPTY
        gap = subjective_br_gap(pi, rho, h, task, budget.horizon)
        if gap > slack:
            witnesses.append({"player": i, "kind": "best-response", "gap": gap})
        try:
            dist = total_variation_k(rho, truth, h, k_scan)
        except UndefinedConditional:
            dist = 1
        if dist > eps:
            witnesses.append({"player": i, "kind": "beliefs", "distance": dist, "k": k_scan})
    return _verdict(witnesses, eps=eps, br_slack=slack, k=k_scan)


def check_eps_scee(policies, mixtures, ground_truths, device: CorrelationDevice, eps, task: DiscountedTask,
                   budget: PlanBudget, k_scan: int = 3) -> Verdict:
    """Per message (personal histories), best response plus ε-close beliefs on ≥ 1−ε of the mass."""
    return check_eps_delta_scee(policies, mixtures, ground_truths, device, eps, 0, task, budget, k_scan)


def check_eps_delta_scee(policies, mixtures, ground_truths, device: CorrelationDevice, eps, delta,
                         task: DiscountedTask, budget: PlanBudget, k_scan: int = 3) -> Verdict:
    slack = 2 * budget.error_bound(task.gamma) + delta
    witnesses = []
    bad_mass = 0
    for joint_m, pm in sorted(device.distribution.items(), key=lambda kv: repr(kv[0])):
        if pm <= 0:
            continue
        close = True
        for i, (pi, rho, truth) in enumerate(zip(policies, mixtures, ground_truths)):
            h = joint_m[i]
            gap = subjective_br_gap(pi, rho, h, task, budget.horizon)
            if gap > slack:
                witnesses.append({"player": i, "kind": "best-response", "message": h, "gap": gap})
            try:
                dist = total_variation_k(rho, truth, h, k_scan)
            except UndefinedConditional:
                dist = 1
            if dist > eps:
                close = False
                witnesses.append({"player": i, "kind": "beliefs", "message": h, "distance": dist})
        if not close:
            bad_mass += pm
    failing = [w for w in witnesses if w["kind"] == "best-response"]
    passed = not failing and bad_mass <= eps
    return Verdict(passed, witnesses, {"eps": eps, "delta": delta, "br_slack": slack, "k": k_scan},
                   {"belief_failure_mass": bad_mass})


# ---------------------------------------------------------------------------
# dogmatic beliefs


def dogmatic_best_response_check(pi: Policy, mu, eps, task: DiscountedTask, depth: int) -> Verdict:
    """Build the dogmatic mixture and confirm ``π`` is an embedded best response on its path.

    Horizons shrink to the fixed end ``depth``.  The reported slack is
    ``max_h [max_a Q*(h,a) − Q*(h,π(h))]`` over on-path histories; the
    tolerance is ``γ^depth + 5ε``.
    """
    rho = dogmatic_mixture(pi, mu, eps, depth)
    planner = Planner(rho, task)
    tol = task.gamma ** depth + 5 * eps
    worst, witness = 0 * task.gamma, None
    frontier = [EMPTY]
    while frontier:
        h = frontier.pop(0)
        if len(h) >= depth:
            continue
        H = depth - len(h)
        a_pi = argmax_lowest(pi.distribution(h))
        qs = [planner.q_opt(h, a, H) for a in range(len(rho.actions))]
        gap = max(qs) - qs[a_pi]
        if gap > worst:
            worst, witness = gap, h
        for e, p in enumerate(mu.distribution(h, a_pi)):
            if not is_zero(p):
                frontier.append(h.extend(a_pi, e))
    witnesses = [] if worst <= tol else [{"kind": "best-response", "history": witness, "gap": worst}]
    return Verdict(not witnesses, witnesses, {"tolerance": tol}, {"max_gap": worst, "eps": eps})
