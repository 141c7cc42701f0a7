"""YAML documents for policy/environment/universe tables, games and
dependency distributions.  Rationals are written as "p/q" strings so the
exact backend round-trips bit for bit."""

from __future__ import annotations

from fractions import Fraction

import yaml

from .core import (
    EMPTY,
    Alphabet,
    Environment,
    History,
    Policy,
    TabularEnvironment,
    TabularPolicy,
    TabularUniverse,
    Universe,
    histories_up_to,
    is_zero,
)
from .equilibria import DependencyDistribution
from .scenarios import NormalFormGame

TABLE_FORMAT = "embedagents-table"
GAME_FORMAT = "embedagents-game"
VERSION = 1


def num_out(x):
    if isinstance(x, Fraction):
        return f"{x.numerator}/{x.denominator}"
    if isinstance(x, int):
        return f"{x}/1"
    return float(x)


def num_in(x, exact: bool):
    if isinstance(x, str):
        return Fraction(x) if exact else float(Fraction(x))
    if exact:
        return Fraction(str(x))
    return float(x)


def _alphabets_out(actions: Alphabet, percepts: Alphabet) -> dict:
    out = {"actions": list(actions.labels)}
    if percepts.rewards is None:
        out["percepts"] = [{"label": lab} for lab in percepts.labels]
    else:
        out["percepts"] = [{"label": lab, "reward": num_out(r)} for lab, r in zip(percepts.labels, percepts.rewards)]
    return out


def _alphabets_in(doc: dict, exact: bool) -> tuple[Alphabet, Alphabet]:
    actions = Alphabet(tuple(doc["actions"]), "action")
    plist = doc["percepts"]
    labels = tuple(p["label"] for p in plist)
    rewards = None
    if all("reward" in p for p in plist):
        rewards = tuple(num_in(p["reward"], exact) for p in plist)
    return actions, Alphabet(labels, "percept", rewards)


def _exact_flag(values) -> bool:
    return all(isinstance(v, (Fraction, int)) for v in values)


def _header(kind, actions, percepts, depth, exact):
    doc = {"format": TABLE_FORMAT, "version": VERSION, "kind": kind, "depth": depth, "exact": exact}
    doc.update(_alphabets_out(actions, percepts))
    return doc


def policy_to_doc(pi: Policy, depth: int | None = None) -> dict:
    """Tabulate ``π(·|h)`` for every history shorter than ``depth``."""
    depth = pi.depth if depth is None else depth
    rows = {}
    for h in histories_up_to(len(pi.actions), len(pi.percepts), depth - 1):
        rows[h.to_tokens(pi.actions, pi.percepts)] = list(pi.distribution(h))
    exact = _exact_flag(v for r in rows.values() for v in r)
    doc = _header("policy", pi.actions, pi.percepts, depth, exact)
    doc["rows"] = {k: [num_out(v) for v in r] for k, r in rows.items()}
    return doc


def environment_to_doc(nu: Environment, depth: int | None = None) -> dict:
    """Rows keyed ``"<history> <action>"``: the trailing bare token is the dangling action."""
    depth = nu.depth if depth is None else depth
    rows = {}
    for h in histories_up_to(len(nu.actions), len(nu.percepts), depth - 1):
        prefix = h.to_tokens(nu.actions, nu.percepts)
        for a, label in enumerate(nu.actions.labels):
            rows[f"{prefix} {label}".strip()] = list(nu.distribution(h, a))
    exact = _exact_flag(v for r in rows.values() for v in r)
    doc = _header("environment", nu.actions, nu.percepts, depth, exact)
    doc["rows"] = {k: [num_out(v) for v in r] for k, r in rows.items()}
    return doc


def universe_to_doc(lam: Universe, depth: int | None = None) -> dict:
    """Masses ``λ(h)`` and ``λ(h a)``; zero rows are omitted."""
    depth = lam.depth if depth is None else depth
    rows = {}
    for h in histories_up_to(len(lam.actions), len(lam.percepts), depth):
        prefix = h.to_tokens(lam.actions, lam.percepts)
        m = lam.mass(h)
        if not is_zero(m) or not h:
            rows[prefix] = m
        if len(h) < depth and not is_zero(m):
            for a, label in enumerate(lam.actions.labels):
                ma = lam.mass_action(h, a)
                if not is_zero(ma):
                    rows[f"{prefix} {label}".strip()] = ma
    exact = _exact_flag(rows.values())
    doc = _header("universe", lam.actions, lam.percepts, depth, exact)
    doc["rows"] = {k: num_out(v) for k, v in rows.items()}
    return doc


def _split_key(key: str, actions: Alphabet, percepts: Alphabet):
    tokens = key.split()
    action = None
    if tokens and "/" not in tokens[-1]:
        action = actions.index(tokens.pop())
    return History.from_tokens(" ".join(tokens), actions, percepts), action


def table_from_doc(doc: dict):
    """Rebuild a tabular policy, environment or universe from its document."""
    if doc.get("format") != TABLE_FORMAT:
        raise ValueError(f"not a {TABLE_FORMAT} document")
    if doc.get("version") != VERSION:
        raise ValueError(f"unsupported table version {doc.get('version')}")
    exact = bool(doc.get("exact", True))
    actions, percepts = _alphabets_in(doc, exact)
    depth = int(doc["depth"])
    kind = doc["kind"]
    rows = doc["rows"]
    if kind == "policy":
        table = {History.from_tokens(k, actions, percepts): [num_in(v, exact) for v in r] for k, r in rows.items()}
        return TabularPolicy(actions, percepts, depth, table)
    if kind == "environment":
        table = {}
        for k, r in rows.items():
            h, a = _split_key(k, actions, percepts)
            if a is None:
                raise ValueError(f"environment row {k!r} lacks a dangling action")
            table[(h, a)] = [num_in(v, exact) for v in r]
        return TabularEnvironment(actions, percepts, depth, table)
    if kind == "universe":
        masses, action_masses = {}, {}
        for k, v in rows.items():
            h, a = _split_key(k, actions, percepts)
            if a is None:
                masses[h] = num_in(v, exact)
            else:
                action_masses[(h, a)] = num_in(v, exact)
        masses.setdefault(EMPTY, Fraction(1) if exact else 1.0)
        return TabularUniverse(actions, percepts, depth, masses, action_masses)
    raise ValueError(f"unknown table kind {kind!r}")


# ---------------------------------------------------------------------------
# games and dependency distributions


def _joint_key(joint) -> str:
    return ",".join(joint)


def game_to_doc(game: NormalFormGame) -> dict:
    return {
        "format": GAME_FORMAT,
        "version": VERSION,
        "kind": "normal-form",
        "name": game.name,
        "actions": [list(a) for a in game.actions],
        "payoffs": {_joint_key(k): [num_out(v) for v in p] for k, p in game.payoffs.items()},
    }


def game_from_doc(doc: dict) -> NormalFormGame:
    if doc.get("format") != GAME_FORMAT or doc.get("kind") != "normal-form":
        raise ValueError("not a normal-form game document")
    payoffs = {tuple(k.split(",")): tuple(num_in(v, True) for v in p) for k, p in doc["payoffs"].items()}
    return NormalFormGame(tuple(tuple(a) for a in doc["actions"]), payoffs, doc.get("name", "game"))


def dependency_to_doc(dep: DependencyDistribution) -> dict:
    completion = {}
    for (i, a), cond in dep.completion.items():
        completion.setdefault(str(i), {})[a] = {_joint_key(o): num_out(v) for o, v in cond.items()}
    return {
        "format": GAME_FORMAT,
        "version": VERSION,
        "kind": "dependency",
        "source": dep.source,
        "joint": {_joint_key(k): num_out(v) for k, v in dep.joint.items()},
        "completion": completion,
    }


def dependency_from_doc(game: NormalFormGame, doc: dict) -> DependencyDistribution:
    if doc.get("kind") != "dependency":
        raise ValueError("not a dependency document")
    joint = {tuple(k.split(",")): num_in(v, True) for k, v in doc["joint"].items()}
    completion = {}
    for i, per_action in (doc.get("completion") or {}).items():
        for a, cond in per_action.items():
            completion[(int(i), a)] = {tuple(o.split(",")): num_in(v, True) for o, v in cond.items()}
    return DependencyDistribution(game, joint, completion, source=doc.get("source", "table"))


def dump(doc) -> str:
    return yaml.safe_dump(doc, sort_keys=True, allow_unicode=True, default_flow_style=False)


def load(text: str):
    return yaml.safe_load(text)
