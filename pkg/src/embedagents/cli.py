"""Command-line entry point: run, verify, scan, scenario.

Exit codes: 0 all verdicts pass, 1 a verdict failed, 2 input or usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from fractions import Fraction

import yaml

from . import scenarios as sc
from . import serialization as ser
from .core import Alphabet, random_deterministic_policy, random_environment
from .equilibria import (
    DependencyDistribution,
    InconsistentCompletion,
    check_cee,
    check_dependency_eq,
    check_ee,
    check_nash,
    check_see,
    de_to_cee,
    dogmatic_best_response_check,
    ee_infeasibility_search,
    see_not_ee_beliefs,
    Verdict,
)
from .harness import ExperimentSpec, convergence_scan, run_self_play
from .planning import DiscountedTask


class UsageError(Exception):
    pass


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML document (experiment spec or verify request)")
    common.add_argument("--scenario", choices=sc.SCENARIO_IDS)
    common.add_argument("--alpha")
    common.add_argument("--gamma")
    common.add_argument("--k", type=int)
    common.add_argument("--steps", type=int, help="rounds to simulate, or table depth for `scenario`")
    plan = common.add_mutually_exclusive_group()
    plan.add_argument("--horizon", type=int)
    plan.add_argument("--plan-tol", type=float)
    common.add_argument("--eps", type=float)
    common.add_argument("--delta", type=float)
    common.add_argument("--seed", type=int)
    common.add_argument("--exact", action="store_true", default=None, help="rational backend")
    common.add_argument("--agent", choices=("embedded-BR", "k-step", "approx", "decoupled-BR"))
    common.add_argument("--format", choices=("csv", "jsonl"), default="jsonl")
    common.add_argument("--out", help="output path (default stdout)")

    p = argparse.ArgumentParser(prog="embedagents", description="Embedded Bayesian agent workbench")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="run a self-play experiment")
    sub.add_parser("verify", parents=[common], help="equilibrium checks on serialized inputs")
    sub.add_parser("scan", parents=[common], help="convergence report for an experiment")
    sub.add_parser("scenario", parents=[common], help="emit a scenario's serialized tables")
    return p


def _load_config(path):
    if not path:
        return {}
    try:
        with open(path) as f:
            doc = yaml.safe_load(f)
    except OSError as exc:
        raise UsageError(f"cannot read config: {exc}") from exc
    except yaml.YAMLError as exc:
        raise UsageError(f"config is not valid YAML: {exc}") from exc
    if not isinstance(doc, dict):
        raise UsageError("config must be a mapping")
    return doc


def _spec_from_args(args) -> ExperimentSpec:
    doc = _load_config(args.config)
    if args.scenario:
        doc["scenario"] = args.scenario
    if "scenario" not in doc:
        raise UsageError("need --scenario or a config with a scenario field")
    params = dict(doc.get("params") or {})
    if args.alpha is not None:
        params["alpha"] = args.alpha
    if args.k is not None:
        params["k"] = args.k
    doc["params"] = params
    for name in ("gamma", "horizon", "plan_tol", "eps", "delta", "seed"):
        value = getattr(args, name)
        if value is not None:
            doc[name] = value
    if args.steps is not None:
        doc["rounds"] = args.steps
    if args.exact is not None:
        doc["exact"] = True
    elif "exact" not in doc:
        doc["exact"] = doc["scenario"] != "mu-rk"
    if args.agent:
        agent = {"kind": args.agent}
        if args.k is not None:
            agent["k"] = args.k
        doc["agents"] = [agent]
    elif doc["scenario"] == "mu-rk" and "agents" not in doc and args.k is not None:
        doc["agents"] = [{"kind": "k-step", "k": args.k}]
    try:
        return ExperimentSpec.from_dict(doc)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


def _write(text: str, path):
    if path:
        with open(path, "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


def cmd_run(args) -> int:
    spec = _spec_from_args(args)
    record = run_self_play(spec)
    _write(record.to_csv() if args.format == "csv" else record.to_jsonl(), args.out)
    return 0


def cmd_scan(args) -> int:
    spec = _spec_from_args(args)
    record = run_self_play(spec)
    report = convergence_scan(record, spec.eps, spec.k_scan)
    summary = report.summary()
    if args.format == "csv":
        lines = ["# embedagents convergence v1", "t," + ",".join(f"d_k_agent{i}" for i in range(len(report.distances[0])))]
        for t, row in enumerate(report.distances, start=1):
            lines.append(f"{t}," + ",".join(repr(float(d)) for d in row))
        lines.append(f"# T={summary['T']} see_at_T={summary['see_at_T']} see_at_final={summary['see_at_final']}")
        _write("\n".join(lines) + "\n", args.out)
    else:
        _write(json.dumps({"format": "embedagents-convergence", "version": 1, **summary}, sort_keys=True) + "\n", args.out)
    ok = report.reached and report.see_at_final is not None and report.see_at_final.passed
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# verify


def _game(doc, args):
    if "game" in doc:
        return ser.game_from_doc(doc["game"])
    name = doc.get("scenario") or args.scenario
    if name == "pd":
        return sc.prisoner_dilemma()
    if name == "see-not-ee":
        return sc.see_not_ee_game()
    raise UsageError("verify needs a game document or --scenario pd/see-not-ee")


def _builtin_checks(args) -> list[tuple[str, Verdict]]:
    if args.scenario == "pd":
        g = sc.prisoner_dilemma()
        limit = DependencyDistribution.from_limit(g, {("C", "C"): "1 - 1/r", ("D", "D"): "1/r",
                                                     ("C", "D"): "0", ("D", "C"): "0"})
        device, policies, q = de_to_cee(g, limit)
        return [
            ("nash(D,D)", check_nash(g, ["D", "D"])),
            ("ee(D,D) decoupled", check_ee(g, ["D", "D"], DependencyDistribution.from_profile(g, ["D", "D"]))),
            ("ee(C,C) limit completion", check_ee(g, ["C", "C"], limit)),
            ("dependency(C,C)", check_dependency_eq(g, limit)),
            ("cee from dependency", check_cee(g, policies, device, q)),
        ]
    if args.scenario == "see-not-ee":
        g = sc.see_not_ee_game()
        beliefs = see_not_ee_beliefs(g)
        rep = ee_infeasibility_search(g, ("A", "A"))
        cert = Verdict(rep.infeasible_everywhere and len(rep.forced_zero) == 8, [],
                       {"floors": list(rep.floors)}, {"forced_zero": [",".join(x) for x in rep.forced_zero]})
        return [("see(A,A)", check_see(g, ["A", "A"], beliefs)), ("ee infeasibility certificate", cert)]
    if args.scenario == "dogmatic":
        seed = args.seed or 0
        eps = Fraction(str(args.eps)) if args.eps is not None else Fraction(1, 1000)
        gamma = Fraction(str(args.gamma)) if args.gamma is not None else Fraction(9, 10)
        depth = args.steps or 3
        acts = Alphabet(("a0", "a1"), "action")
        percs = Alphabet(("o:0", "o:1"), "percept", (Fraction(0), Fraction(1)))
        pi = random_deterministic_policy(acts, percs, depth, seed)
        mu = random_environment(acts, percs, depth, seed + 1)
        task = DiscountedTask.for_percepts(percs, gamma)
        return [("dogmatic best response", dogmatic_best_response_check(pi, mu, eps, task, depth))]
    raise UsageError("verify without --config supports --scenario pd, see-not-ee or dogmatic")


def _verify_request(doc, args) -> list[tuple[str, Verdict]]:
    check = doc.get("check")
    game = _game(doc, args)
    eps = doc.get("eps", 0)
    profile = doc.get("profile")
    if check == "nash":
        return [("nash", check_nash(game, profile, eps))]
    if check in ("dependency", "cee"):
        dep = ser.dependency_from_doc(game, doc["dependency"])
        if check == "dependency":
            return [("dependency", check_dependency_eq(game, dep, eps))]
        device, policies, q = de_to_cee(game, dep)
        return [("cee", check_cee(game, policies, device, q, eps))]
    if check == "ee":
        dep = ser.dependency_from_doc(game, doc["dependency"])
        return [("ee", check_ee(game, profile, dep, eps))]
    if check == "see":
        beliefs = [ser.dependency_from_doc(game, b) for b in doc["beliefs"]]
        return [("see", check_see(game, profile, beliefs, doc.get("tol", 0), eps))]
    if check == "ee-infeasibility":
        rep = ee_infeasibility_search(game, tuple(profile), tuple(doc.get("floors", (1e-2, 1e-3, 1e-4))),
                                      doc.get("slack", 0))
        return [("ee-infeasibility", Verdict(rep.infeasible_everywhere, [], {"floors": list(rep.floors)},
                                             {"rows": rep.rows, "forced_zero": [",".join(x) for x in rep.forced_zero]}))]
    raise UsageError(f"unknown check {check!r}")


def cmd_verify(args) -> int:
    doc = _load_config(args.config)
    try:
        results = _verify_request(doc, args) if doc else _builtin_checks(args)
    except (KeyError, TypeError, InconsistentCompletion) as exc:
        raise UsageError(f"bad verify request: {exc}") from exc
    records = [{"check": name, **v.to_record()} for name, v in results]
    if args.format == "csv":
        lines = ["check,pass,witnesses"] + [f"{r['check']},{r['pass']},{len(r['witnesses'])}" for r in records]
        _write("\n".join(lines) + "\n", args.out)
    else:
        _write("".join(json.dumps(r, sort_keys=True) + "\n" for r in records), args.out)
    return 0 if all(v.passed for _, v in results) else 1


# ---------------------------------------------------------------------------
# scenario tables


def scenario_doc(args) -> dict:
    name = args.scenario
    if name is None:
        raise UsageError("scenario needs --scenario")
    depth = args.steps or 3
    if name == "pd":
        return ser.game_to_doc(sc.prisoner_dilemma())
    if name == "see-not-ee":
        return ser.game_to_doc(sc.see_not_ee_game())
    if name in ("twin-pd", "copy-pd"):
        K = args.k if args.k is not None else 2
        alpha = Fraction(args.alpha) if args.alpha else Fraction(2, 5)
        cls = sc.switch_policy_class(K, depth)
        n = len(cls)
        doc = {"scenario": name, "alpha": ser.num_out(alpha), "K": K,
               "policies": {lab: ser.policy_to_doc(pol, depth) for lab, pol in cls},
               "tilde_w": {lab: ser.num_out(Fraction(1, n)) for lab, _ in cls}}
        if name == "copy-pd":
            doc["copy_environment"] = ser.environment_to_doc(sc.copy_environment(depth), depth)
        return doc
    if name == "mu-rk":
        params = _load_config(args.config).get("params") or {}
        R = Fraction(str(params.get("R", "1/5")))
        k = args.k if args.k is not None else 2
        return {"scenario": name, "R": ser.num_out(R), "k": k,
                "environment": ser.environment_to_doc(sc.mu_Rk(R, k, depth), depth),
                "pi_up": ser.policy_to_doc(sc.pi_up(R, depth), depth),
                "pi_down": ser.policy_to_doc(sc.pi_down(R, depth), depth)}
    if name == "dogmatic":
        seed = args.seed or 0
        eps = Fraction(str(args.eps)) if args.eps is not None else Fraction(1, 1000)
        acts = Alphabet(("a0", "a1"), "action")
        percs = Alphabet(("o:0", "o:1"), "percept", (Fraction(0), Fraction(1)))
        pi = random_deterministic_policy(acts, percs, depth, seed)
        mu = random_environment(acts, percs, depth, seed + 1)
        rho = sc.dogmatic_mixture(pi, mu, eps, depth)
        return {"scenario": name, "eps": ser.num_out(eps),
                "policy": ser.policy_to_doc(pi, depth), "environment": ser.environment_to_doc(mu, depth),
                "mixture": ser.universe_to_doc(rho, depth)}
    raise UsageError(f"unknown scenario {name!r}")


def cmd_scenario(args) -> int:
    _write(ser.dump(scenario_doc(args)), args.out)
    return 0


COMMANDS = {"run": cmd_run, "verify": cmd_verify, "scan": cmd_scan, "scenario": cmd_scenario}


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
