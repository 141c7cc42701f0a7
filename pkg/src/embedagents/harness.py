"""Self-play runner, trajectory records, tail extraction and convergence scans."""

from __future__ import annotations

import csv
import io
import itertools
import json
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .bayes import MixtureEnvironment, MixtureUniverse
from .core import (
    EMPTY,
    History,
    MultiAgentEnv,
    Universe,
    UndefinedConditional,
    interact,
    is_zero,
    personal_environment,
    random_deterministic_policy,
    random_environment,
    single_agent_env,
    total_variation_k,
    Alphabet,
)
from .equilibria import CorrelationDevice, Verdict, check_epsilon_see, check_eps_scee
from .planning import DiscountedTask, PlanBudget, Planner, PlannerPolicy
from . import scenarios as sc

RECORD_FORMAT = "embedagents-trajectory"
RECORD_VERSION = 1
AGENT_KINDS = ("embedded-BR", "k-step", "approx", "decoupled-BR")


@dataclass
class AgentSpec:
    kind: str = "embedded-BR"
    k: int = 1
    k_every: int | None = None  # approx: k grows by one every k_every steps
    eps0: float = 0.0  # approx: ε_t = eps0 / t

    def __post_init__(self):
        if self.kind not in AGENT_KINDS:
            raise ValueError(f"unknown agent kind {self.kind!r}")
        if self.k < 1:
            raise ValueError("k must be at least 1")


@dataclass
class ExperimentSpec:
    scenario: str
    params: dict = field(default_factory=dict)
    agents: list = field(default_factory=list)
    gamma: float | str = 0
    rounds: int = 20
    horizon: int | None = None
    plan_tol: float | None = None
    eps: float = 0.05
    delta: float = 0.0
    seed: int = 0
    k_scan: int = 3
    exact: bool = True

    def __post_init__(self):
        sc.validate(sc.ScenarioParams(self.scenario, self.params))
        if self.rounds < 1:
            raise ValueError("rounds must be at least 1")
        self.agents = [a if isinstance(a, AgentSpec) else AgentSpec(**a) for a in self.agents]

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gamma"] = str(self.gamma)
        return d

    def gamma_value(self):
        if self.exact:
            return Fraction(str(self.gamma))
        return float(self.gamma)

    def budget(self) -> PlanBudget:
        g = self.gamma_value()
        if self.horizon is not None:
            return PlanBudget(int(self.horizon))
        if self.plan_tol is not None:
            return PlanBudget.from_tolerance(float(self.plan_tol), g)
        return PlanBudget(1) if g == 0 else PlanBudget.from_tolerance(1e-6, g)


@dataclass
class Agent:
    kind: str
    model: Universe
    policy: PlannerPolicy
    task: DiscountedTask
    opponent_model: MixtureEnvironment | None = None

    def posterior(self, h: History) -> tuple[list, tuple]:
        src = self.opponent_model if self.opponent_model is not None else self.model
        if isinstance(src, MixtureEnvironment):
            return src.labels, src.posterior(h)
        if isinstance(src, MixtureUniverse):
            post = src.posterior(h)
            z = src.normalization
            return src.labels, tuple(p / z for p in post)
        return ["model"], (1,)


@dataclass
class RunContext:
    spec: ExperimentSpec
    bar_nu: MultiAgentEnv
    agents: list
    budget: PlanBudget
    depth: int

    def ground_truth(self, i: int) -> Universe:
        others = {j: a.policy for j, a in enumerate(self.agents) if j != i}
        env = personal_environment(self.bar_nu, others, i, self.depth)
        return interact(self.agents[i].policy, env, self.depth)


# ---------------------------------------------------------------------------
# building agents


def _agent_policy(kind_spec: AgentSpec, model, task, budget):
    if kind_spec.kind in ("embedded-BR", "decoupled-BR"):
        return PlannerPolicy(model, task, budget, "optimal")
    if kind_spec.kind == "k-step":
        return PlannerPolicy(model, task, budget, "k-step", k=kind_spec.k)
    every = kind_spec.k_every

    def k_t(t):
        k = kind_spec.k + ((t - 1) // every if every else 0)
        return min(k, budget.horizon)

    def eps_t(t):
        return kind_spec.eps0 / t

    return PlannerPolicy(model, task, budget, "approx", k=k_t, eps=eps_t)


def build_context(spec: ExperimentSpec) -> RunContext:
    budget = spec.budget()
    depth = spec.rounds + budget.horizon + spec.k_scan + 2
    g = spec.gamma_value()
    p = spec.params
    agents = []
    if spec.scenario in ("twin-pd", "copy-pd"):
        K = int(p.get("K", 2))
        alpha = p.get("alpha", "0.4")
        task = sc.pd_task(g)
        bar_nu = sc.pd_environment(depth)
        specs = spec.agents or [AgentSpec("decoupled-BR" if spec.scenario == "copy-pd" else "embedded-BR")] * 2
        if len(specs) == 1:
            specs = specs * 2
        for i, a in enumerate(specs):
            if a.kind == "decoupled-BR":
                xi = sc.copy_mixture(K, alpha, depth, agent=i)
                model = sc.decoupled_agent_model(xi)
                agents.append(Agent(a.kind, model, _agent_policy(a, model, task, budget), task, xi))
            else:
                model = sc.twin_pd_prior(K, alpha, depth, agent=i).rho
                agents.append(Agent(a.kind, model, _agent_policy(a, model, task, budget), task))
    elif spec.scenario == "mu-rk":
        exact = spec.exact
        R = Fraction(str(p.get("R", "0.2"))) if exact else float(p.get("R", 0.2))
        k = int(p.get("k", 2))
        tremble = Fraction(str(p.get("tremble", "1e-9"))) if exact else float(p.get("tremble", 1e-9))
        model_eps = p.get("model_eps", 0)
        model_eps = (Fraction(str(model_eps)) if exact else float(model_eps)) if model_eps else 0
        task = sc.rk_task(g, R)
        bar_nu = single_agent_env(sc.mu_Rk(R, k, depth))
        model = sc.rk_self_model(R, k, depth, tremble, model_eps)
        a = (spec.agents or [AgentSpec("k-step", k=k)])[0]
        agents.append(Agent(a.kind, model, _agent_policy(a, model, task, budget), task))
    elif spec.scenario == "dogmatic":
        seed = int(p.get("instance", 0))
        eps = Fraction(str(p.get("eps_mix", "0.001")))
        acts = Alphabet(("a0", "a1"), "action")
        percs = Alphabet(("o:0", "o:1"), "percept", (Fraction(0), Fraction(1)))
        pi = random_deterministic_policy(acts, percs, depth, seed)
        mu = random_environment(acts, percs, depth, seed + 1)
        task = DiscountedTask.for_percepts(percs, g)
        bar_nu = single_agent_env(mu)
        model = sc.dogmatic_mixture(pi, mu, eps, depth)
        a = (spec.agents or [AgentSpec("embedded-BR")])[0]
        agents.append(Agent(a.kind, model, _agent_policy(a, model, task, budget), task))
    else:
        raise ValueError(f"scenario {spec.scenario!r} is a one-shot game; use the verify command")
    return RunContext(spec, bar_nu, agents, budget, depth)


# ---------------------------------------------------------------------------
# trajectory records


def _fmt(x):
    if isinstance(x, Fraction):
        return f"{x.numerator}/{x.denominator}"
    if isinstance(x, (int, np.integer)):
        return f"{int(x)}/1"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return x


def parse_number(s: str):
    if "/" in s:
        return Fraction(s)
    return float(s)


@dataclass
class TrajectoryRecord:
    spec: dict
    steps: list = field(default_factory=list)
    context: RunContext | None = field(default=None, repr=False, compare=False)

    def personal_history(self, i: int, t: int | None = None) -> History:
        """Agent ``i``'s history over the first ``t`` steps (all steps by default)."""
        steps = self.steps if t is None else self.steps[:t]
        return History((s["action_index"][i], s["percept_index"][i]) for s in steps)

    def joint_history(self, t: int | None = None) -> tuple:
        steps = self.steps if t is None else self.steps[:t]
        return tuple((tuple(s["action_index"]), tuple(s["percept_index"])) for s in steps)

    def header(self) -> dict:
        return {"format": RECORD_FORMAT, "version": RECORD_VERSION, "spec": self.spec}

    def to_jsonl(self) -> str:
        lines = [json.dumps(self.header(), sort_keys=True, separators=(",", ":"))]
        lines += [json.dumps(s, sort_keys=True, separators=(",", ":")) for s in self.steps]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "TrajectoryRecord":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        header = json.loads(lines[0])
        if header.get("format") != RECORD_FORMAT or header.get("version") != RECORD_VERSION:
            raise ValueError("unsupported trajectory format or version")
        return cls(header["spec"], [json.loads(ln) for ln in lines[1:]])

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# {RECORD_FORMAT} summary v{RECORD_VERSION}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "agent", "action", "percept", "reward", "q_chosen", "d_k"])
        for s in self.steps:
            for i, a in enumerate(s["actions"]):
                q = s["q"][i][s["action_index"][i]]
                d = s["d_k"][i] if s.get("d_k") else ""
                w.writerow([s["t"], i, a, s["percepts"][i], s["rewards"][i], q, d])
        return buf.getvalue()

    def belief_lines(self) -> str:
        """Line-delimited posterior trace: step, conditioning token, weight per universe."""
        out = []
        for s in self.steps:
            for i, post in enumerate(s["posterior"]):
                token = f"{s['actions'][i]}/{s['percepts'][i]}"
                out.append(json.dumps({"t": s["t"], "agent": i, "token": token, "weights": post},
                                      sort_keys=True, separators=(",", ":")))
        return "\n".join(out) + "\n"


def _sample(dist, u):
    """Inverse-CDF draw; deterministic distributions ignore ``u``."""
    acc = 0.0
    last = None
    for i, p in enumerate(dist):
        if is_zero(p):
            continue
        last = i
        acc += float(p)
        if u < acc:
            return i
    return last


def run_self_play(spec: ExperimentSpec, context: RunContext | None = None) -> TrajectoryRecord:
    """The perception-action loop: act, observe, update, for ``spec.rounds`` steps."""
    ctx = context or build_context(spec)
    n = len(ctx.agents)
    rng = np.random.Generator(np.random.Philox(key=spec.seed))
    truths = [ctx.ground_truth(i) for i in range(n)] if spec.k_scan else None
    record = TrajectoryRecord(spec.to_dict(), [], ctx)
    joint = ()
    for t in range(1, spec.rounds + 1):
        hs = [MultiAgentEnv.personal(joint, i) for i in range(n)]
        d_k = []
        if truths is not None:
            for i in range(n):
                try:
                    d_k.append(_fmt(total_variation_k(ctx.agents[i].model, truths[i], hs[i], spec.k_scan)))
                except UndefinedConditional:
                    d_k.append(_fmt(1.0))
        uniforms = rng.random(n + 1)
        acts, qs = [], []
        for i, agent in enumerate(ctx.agents):
            q = agent.policy.q_values(hs[i])
            qs.append([_fmt(agent.task.raw(v)) for v in q])
            acts.append(_sample(agent.policy.distribution(hs[i]), uniforms[i]))
        acts = tuple(acts)
        outcomes = sorted(ctx.bar_nu.distribution(joint, acts).items())
        percs = outcomes[_sample([p for _, p in outcomes], uniforms[n])][0]
        joint = joint + ((acts, tuple(percs)),)
        posts = []
        for i, agent in enumerate(ctx.agents):
            h_next = MultiAgentEnv.personal(joint, i)
            labels, w = agent.posterior(h_next)
            posts.append({lab: _fmt(x) for lab, x in zip(labels, w)})
        record.steps.append({
            "t": t,
            "actions": [ctx.bar_nu.actions[i].labels[a] for i, a in enumerate(acts)],
            "action_index": list(acts),
            "percepts": [ctx.bar_nu.percepts[i].labels[e] for i, e in enumerate(percs)],
            "percept_index": list(percs),
            "rewards": [_fmt(ctx.agents[i].task.raw(ctx.agents[i].task.reward(e))) for i, e in enumerate(percs)],
            "q": qs,
            "posterior": posts,
            "d_k": d_k,
            "uniforms": [repr(float(u)) for u in uniforms],
        })
    return record


def tail_value(record: TrajectoryRecord, start: int, horizon: int, agent: int = 0) -> float:
    """Normalised discounted return ``(1-γ) Σ_{i<H} γ^i r_{start+i}`` from the record."""
    ctx = record.context
    task = ctx.agents[agent].task
    g = float(task.gamma)
    steps = record.steps[start - 1:start - 1 + horizon]
    if len(steps) < horizon:
        raise IndexError("record too short for the requested tail")
    return (1 - g) * sum(g ** i * float(task.reward(s["percept_index"][agent])) for i, s in enumerate(steps))


# ---------------------------------------------------------------------------
# tails and convergence


@dataclass
class TailGame:
    t: int
    policies: list
    mixtures: list
    ground_truths: list
    histories: list
    device: CorrelationDevice


def _joint_distribution(ctx: RunContext, length: int, cap: int = 4096) -> dict:
    """Distribution of joint histories of the given length under the agents' policies."""
    frontier = {(): Fraction(1)}
    for _ in range(length):
        nxt = {}
        for joint, w in frontier.items():
            choices = []
            for i, agent in enumerate(ctx.agents):
                dist = agent.policy.distribution(MultiAgentEnv.personal(joint, i))
                choices.append([(a, p) for a, p in enumerate(dist) if not is_zero(p)])
            for combo in itertools.product(*choices):
                acts = tuple(a for a, _ in combo)
                pa = w
                for _, p in combo:
                    pa = pa * p
                for percs, q in ctx.bar_nu.distribution(joint, acts).items():
                    if not is_zero(q):
                        key = joint + ((acts, tuple(percs)),)
                        nxt[key] = nxt.get(key, 0) + pa * q
        if len(nxt) > cap:
            raise ValueError("joint history distribution too large to enumerate")
        frontier = nxt
    return frontier


def tail_extract(record: TrajectoryRecord, t: int, ground_truths: Sequence[Universe] | None = None) -> TailGame:
    """Objects for the tail game starting at step ``t`` (conditioning on the first ``t-1`` steps).

    The correlation device's messages are the agents' personal histories,
    distributed as the joint histories of length ``t-1`` under play.
    """
    if not 1 <= t <= len(record.steps) + 1:
        raise IndexError(f"t={t} outside 1..{len(record.steps) + 1}")
    ctx = record.context
    n = len(ctx.agents)
    truths = list(ground_truths) if ground_truths is not None else [ctx.ground_truth(i) for i in range(n)]
    dist = _joint_distribution(ctx, t - 1)
    messages = [tuple(sorted({MultiAgentEnv.personal(j, i) for j in dist})) for i in range(n)]
    device_dist = {}
    for j, p in dist.items():
        key = tuple(MultiAgentEnv.personal(j, i) for i in range(n))
        device_dist[key] = device_dist.get(key, 0) + p
    return TailGame(t, [a.policy for a in ctx.agents], [a.model for a in ctx.agents], truths,
                    [record.personal_history(i, t - 1) for i in range(n)],
                    CorrelationDevice(messages, device_dist))


@dataclass
class ConvergenceReport:
    eps: float
    k_scan: int
    first_t: int | None
    distances: list  # per step: per agent D_k at the start of the step
    see_at_first: Verdict | None
    see_at_final: Verdict | None
    scee_at_final: Verdict | None = None

    @property
    def reached(self) -> bool:
        return self.first_t is not None

    def summary(self) -> dict:
        return {
            "eps": self.eps,
            "k_scan": self.k_scan,
            "T": self.first_t if self.reached else "not reached",
            "see_at_T": None if self.see_at_first is None else self.see_at_first.passed,
            "see_at_final": None if self.see_at_final is None else self.see_at_final.passed,
            "scee_at_final": None if self.scee_at_final is None else self.scee_at_final.passed,
        }


def convergence_scan(record: TrajectoryRecord, eps, k_scan: int = 3,
                     ground_truths: Sequence[Universe] | None = None) -> ConvergenceReport:
    """First step whose start has ``D_k(ρ^i, truth^i | h) ≤ eps`` for every agent, plus tail verdicts.

    ``ground_truths`` overrides the agents' true personal universes (for
    injected-fault checks).
    """
    ctx = record.context
    n = len(ctx.agents)
    truths = list(ground_truths) if ground_truths is not None else [ctx.ground_truth(i) for i in range(n)]
    distances = []
    first = None
    for t in range(1, len(record.steps) + 1):
        row = []
        for i in range(n):
            h = record.personal_history(i, t - 1)
            try:
                row.append(total_variation_k(ctx.agents[i].model, truths[i], h, k_scan))
            except UndefinedConditional:
                row.append(1)
        distances.append(row)
        if first is None and all(d <= eps for d in row):
            first = t
    task = ctx.agents[0].task
    final_t = len(record.steps)

    def see(t):
        tail = tail_extract(record, t, truths)
        return check_epsilon_see(tail.policies, tail.mixtures, tail.ground_truths, eps, task, ctx.budget,
                                 tail.histories, ctx.spec.delta, k_scan)

    def scee(t):
        tail = tail_extract(record, t, truths)
        return check_eps_scee(tail.policies, tail.mixtures, tail.ground_truths, tail.device, eps, task,
                              ctx.budget, k_scan)

    return ConvergenceReport(eps, k_scan, first, distances,
                             see(first) if first is not None else None, see(final_t), scee(final_t))


def multi_seed_pass_rate(spec: ExperimentSpec, seeds: Sequence[int], eps, k_scan: int = 3) -> dict:
    """Fraction of seeds whose run reaches belief closeness and passes ε-SEE at the end."""
    reached = passed = 0
    for s in seeds:
        d = spec.to_dict()
        d["seed"] = s
        d["gamma"] = spec.gamma
        rep = convergence_scan(run_self_play(ExperimentSpec.from_dict(d)), eps, k_scan)
        reached += rep.reached
        passed += bool(rep.see_at_final)
    n = len(seeds)
    return {"seeds": n, "reached": reached / n, "see_pass": passed / n}
