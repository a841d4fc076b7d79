"""Scenario documents: parse, expand adversaries, execute and check.

A scenario is a JSON object::

    {"protocol": "ela" | "acaso" | "tsaso" | "uqsm",
     "n": 5, "f": 2,
     "delayModel": {"kind": "uniform", "dMin": 1, "D": 1000, "seed": 3},
     "crashes": [{"node": 1, "atTime": 0}, ...],
     "clientScript": [{"node": 1, "op": "update", "payload": "a", "at": 0}, ...],
     "inputs": {"1": ["a"], ...},            # ELA only; default x_i = {"x<i>"}
     "starts": {"2": 500},                   # optional start times
     "seed": 7, "horizon": null,
     "adversary": {"failureChain": {"chains": [[1, 2, 3]]}}
                | {"randomized": {"seed": 7, "opCount": 8, "crashProb": 0.5}},
     "outputs": {"trace": "t.jsonl", "report": "r.json", "metrics": "m.json"}}

An adversary is expanded into concrete crashes, delays and client script by
:func:`resolve`; the resolved scenario replays to the identical trace.
"""

from __future__ import annotations

import json
import math
import os
import random
from dataclasses import dataclass, field, replace
from typing import Optional

from . import verify
from .acaso import acaso_automata, scan_op, update_op
from .ela import ela_automata
from .lattice import ConfigError, TaggedValue, check_fault_bound, view_key
from .simnet import (DEFAULT_D, ClientOp, CrashSpec, ExecutionTrace, ScriptedDelay, UniformDelay,
                     delay_model_from_json, make_failure_chain_schedule, run)
from .tsaso import tsaso_automata
from .uqsm import query_op, uq_automata

PROTOCOLS = ("ela", "acaso", "tsaso", "uqsm")

# Broadcast labels a random mid-broadcast crash may target.
CRASH_LABELS = {
    "ela": ("value:*",),
    "acaso": ("value:*", "writeTag", "echoTag", "readTag", "goodLA"),
    "uqsm": ("value:*", "writeTag", "echoTag", "readTag", "goodLA"),
    "tsaso": ("value:*", "readTag", "writeTag", "readState", "writeState", "writeView", "la*"),
}


def ceil_sqrt(k: int) -> int:
    return math.isqrt(k - 1) + 1 if k > 0 else 0


def ela_round_bound(k: int) -> int:
    """Decision bound in rounds for ``k`` crashes: ``2 * ceil(sqrt(k)) + 3``."""
    return 2 * ceil_sqrt(k) + 3


def _op_from_json(d: dict) -> dict:
    kind = d["op"]
    if kind == "update":
        return update_op(str(d["payload"]))
    if kind == "scan":
        return scan_op()
    if kind == "query":
        return query_op()
    raise ConfigError(f"unknown client op {kind!r}")


def _op_to_json(node: ClientOp) -> dict:
    d = {"node": node.node, "op": node.op["op"]}
    if node.op["op"] == "update":
        d["payload"] = node.op["label"]
    if node.at is not None:
        d["at"] = node.at
    elif node.gap:
        d["gap"] = node.gap
    return d


@dataclass
class Scenario:
    protocol: str
    n: int
    f: int
    delay_model: dict = field(default_factory=lambda: {"kind": "fixed", "D": DEFAULT_D})
    crashes: list = field(default_factory=list)
    client_script: list = field(default_factory=list)
    inputs: Optional[dict] = None
    starts: Optional[dict] = None
    seed: int = 0
    horizon: Optional[int] = None
    adversary: Optional[dict] = None
    outputs: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"unknown protocol {self.protocol!r}")
        check_fault_bound(self.n, self.f)

    @property
    def D(self) -> int:
        return int(self.delay_model.get("D", DEFAULT_D))

    @classmethod
    def from_json(cls, d: dict) -> "Scenario":
        try:
            return cls(
                protocol=d["protocol"], n=int(d["n"]), f=int(d["f"]),
                delay_model=dict(d.get("delayModel") or {"kind": "fixed", "D": DEFAULT_D}),
                crashes=[CrashSpec.from_json(c) for c in d.get("crashes", [])],
                client_script=[ClientOp(int(c["node"]), _op_from_json(c), c.get("at"), int(c.get("gap", 0)))
                               for c in d.get("clientScript", [])],
                inputs={int(k): list(v) for k, v in d["inputs"].items()} if d.get("inputs") else None,
                starts={int(k): int(v) for k, v in d["starts"].items()} if d.get("starts") else None,
                seed=int(d.get("seed", 0)), horizon=d.get("horizon"),
                adversary=d.get("adversary"), outputs=dict(d.get("outputs") or {}),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad scenario: {exc}") from exc

    @classmethod
    def load(cls, path) -> "Scenario":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))

    def to_json(self) -> dict:
        d = {"protocol": self.protocol, "n": self.n, "f": self.f, "delayModel": self.delay_model,
             "crashes": [c.to_json() for c in self.crashes],
             "clientScript": [_op_to_json(c) for c in self.client_script],
             "seed": self.seed, "horizon": self.horizon}
        if self.inputs is not None:
            d["inputs"] = {str(k): v for k, v in sorted(self.inputs.items())}
        if self.starts is not None:
            d["starts"] = {str(k): v for k, v in sorted(self.starts.items())}
        if self.adversary is not None:
            d["adversary"] = self.adversary
        if self.outputs:
            d["outputs"] = self.outputs
        return d

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")


# -- adversaries ---------------------------------------------------------------------


def random_crashes(rng: random.Random, protocol: str, n: int, f: int, crash_prob: float,
                   t_max: int) -> list:
    """Up to ``f`` crashes, each either timed or part-way through a broadcast."""
    out = []
    for node in rng.sample(range(1, n + 1), f):
        if rng.random() >= crash_prob:
            continue
        if rng.random() < 0.5:
            out.append(CrashSpec(node, at_time=rng.randint(0, t_max)))
        else:
            order = list(range(1, n + 1))
            rng.shuffle(order)
            out.append(CrashSpec(node, during_broadcast=rng.choice(CRASH_LABELS[protocol]),
                                 after_sends=rng.randint(0, n), recipient_order=tuple(order)))
    return out


def random_script(rng: random.Random, protocol: str, n: int, op_count: int, D: int) -> list:
    read = query_op if protocol == "uqsm" else scan_op
    script = []
    for k in range(op_count):
        node = rng.randint(1, n)
        op = update_op(f"v{k}") if rng.random() < 0.5 else read()
        script.append(ClientOp(node, op, gap=rng.randint(0, 2 * D)))
    return script


def randomized(protocol: str, n: int, f: int, seed: int, op_count: int = 8, crash_prob: float = 0.5,
               D: int = DEFAULT_D) -> Scenario:
    """A concrete random scenario, fully determined by its arguments."""
    rng = random.Random(seed)
    script = [] if protocol == "ela" else random_script(rng, protocol, n, op_count, D)
    t_max = (op_count + 2) * 3 * D
    crashes = random_crashes(rng, protocol, n, f, crash_prob, t_max)
    return Scenario(protocol, n, f, {"kind": "uniform", "dMin": 1, "D": D, "seed": seed},
                    crashes, script, seed=seed)


def staircase_chains(k: int, rng: random.Random, n: int) -> list:
    """Partition ``k`` random faulty nodes into chains of 1, 2, 3, ... faulty
    members, each ending at a distinct correct node."""
    faulty = rng.sample(range(1, n + 1), k)
    correct = [i for i in range(1, n + 1) if i not in faulty]
    rng.shuffle(correct)
    chains, size, pos = [], 1, 0
    while pos < k:
        members = faulty[pos:pos + size]
        pos += size
        size += 1
        chains.append(members + [correct[len(chains)]])
    return chains


def failure_chain(protocol: str, k: int, seed: int, ops_per_node: int = 0, D: int = DEFAULT_D) -> Scenario:
    """The k-crash adversary: ``n = 2k + 3``, ``f = k + 1``, faulty nodes
    split into staircase failure chains, other channels uniformly random."""
    n, f = 2 * k + 3, k + 1
    rng = random.Random(seed)
    chains = staircase_chains(k, rng, n)
    script = []
    if protocol != "ela":
        owners = {c[0] for c in chains}
        for i in range(1, n + 1):
            for m in range(ops_per_node):
                if m == 0 and i in owners:
                    op = update_op(f"c{i}")
                elif m % 2 == 0:
                    op = update_op(f"u{i}.{m}")
                else:
                    op = scan_op() if protocol != "uqsm" else query_op()
                script.append(ClientOp(i, op))
    sc = Scenario(protocol, n, f, {"kind": "uniform", "dMin": 1, "D": D, "seed": seed}, [], script,
                  seed=seed, adversary={"failureChain": {"chains": chains}})
    return resolve(sc)


def _chain_key(sc: Scenario, owner: int) -> str:
    if sc.protocol == "ela":
        return view_key(_ela_inputs(sc)[owner])
    if sc.protocol == "tsaso":
        raise ConfigError("failure chains need relayed values; TS-ASO does not relay")
    for op in sc.client_script:
        if op.node == owner:
            if op.op["op"] != "update":
                break
            return op.op["label"]
    raise ConfigError(f"chain owner {owner} must start with an update")


def resolve(sc: Scenario) -> Scenario:
    """Expand ``sc.adversary`` into concrete crashes, delays and script."""
    adv = sc.adversary
    if not adv:
        return sc
    if "randomized" in adv:
        r = adv["randomized"]
        out = randomized(sc.protocol, sc.n, sc.f, int(r.get("seed", sc.seed)), int(r.get("opCount", 8)),
                         float(r.get("crashProb", 0.5)), sc.D)
        return replace(out, inputs=sc.inputs, starts=sc.starts, horizon=sc.horizon, outputs=sc.outputs)
    if "failureChain" in adv:
        chains = adv["failureChain"]["chains"]
        members = [p for c in chains for p in c]
        if len(set(members)) != len(members):
            raise ConfigError("failure chains must be disjoint")
        crashes, script = list(sc.crashes), {}
        for chain in chains:
            if len(chain) - 1 > sc.f:
                raise ConfigError(f"chain {chain} longer than f+1")
            try:
                c, s = make_failure_chain_schedule(chain, _chain_key(sc, chain[0]), sc.n, sc.f, sc.D)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
            crashes += c
            script.update(s)
        if len(crashes) > sc.f:
            raise ConfigError(f"{len(crashes)} crashes exceed f={sc.f}")
        delay = {"kind": "scripted", "D": sc.D,
                 "script": [[s, d, q, v] for (s, d, q), v in sorted(script.items(), key=lambda kv: kv[0][:2])],
                 "base": sc.delay_model}
        return replace(sc, crashes=crashes, delay_model=delay, adversary=None)
    raise ConfigError(f"unknown adversary {sorted(adv)}")


# -- execution ---------------------------------------------------------------------------


def _ela_inputs(sc: Scenario) -> dict:
    if sc.inputs is None:
        return {i: frozenset({TaggedValue.of(f"x{i}", 0, i)}) for i in range(1, sc.n + 1)}
    return {i: frozenset(TaggedValue.of(str(lbl), 0, i) for lbl in sc.inputs.get(i, [f"x{i}"]))
            for i in range(1, sc.n + 1)}


def automata_for(sc: Scenario) -> list:
    if sc.protocol == "ela":
        return ela_automata(_ela_inputs(sc), sc.n, sc.f)
    return {"acaso": acaso_automata, "tsaso": tsaso_automata, "uqsm": uq_automata}[sc.protocol](sc.n, sc.f)


def horizon_for(sc: Scenario) -> Optional[int]:
    env = os.environ.get("LATSNAP_HORIZON")
    if env:
        return int(env)
    return sc.horizon


def simulate(sc: Scenario) -> ExecutionTrace:
    sc = resolve(sc)
    try:
        delays = delay_model_from_json(sc.delay_model)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return run(sc.n, sc.f, automata_for(sc), delays, sc.crashes, sc.client_script,
               horizon=horizon_for(sc), starts=sc.starts)


@dataclass
class Outcome:
    scenario: Scenario
    trace: ExecutionTrace
    violations: list
    metrics: dict

    @property
    def ok(self) -> bool:
        return not self.violations and self.trace.quiescent

    def report(self) -> dict:
        return {"protocol": self.scenario.protocol, "n": self.scenario.n, "f": self.scenario.f,
                "seed": self.scenario.seed, "status": self.trace.status, "checksPassed": self.ok,
                "violations": [v.to_json() for v in self.violations],
                "metrics": {k: v for k, v in self.metrics.items() if k != "decisionRounds"}
                | {"decisionRounds": {str(k): v for k, v in self.metrics["decisionRounds"].items()}}}


def check_trace(protocol: str, trace: ExecutionTrace, oracle: bool = True) -> list:
    """Every checker that applies to ``protocol``."""
    if protocol == "ela":
        out = verify.check_ela_trace(trace)
        m = verify.round_metrics(trace)
        bound = ela_round_bound(len(trace.crashed))
        if not m["startSkewExceedsD"] and m["maxDecisionRounds"] > bound:
            out.append(verify.Violation("round-bound", f"decision after {m['maxDecisionRounds']} rounds > {bound}"))
        return out
    out = []
    history = verify.history_from_trace(trace)
    if protocol in ("acaso", "uqsm"):
        out += verify.check_acaso_trace(trace, history)
    else:
        out += verify.check_snapshot_views(history)
    out += verify.check_linearizable(history, "set" if protocol == "uqsm" else "snapshot", oracle=oracle)
    if trace.status == "stalled":
        out.append(verify.Violation("termination", "operations left pending at quiescence"))
    return out


def execute(sc: Scenario, oracle: bool = True) -> Outcome:
    sc = resolve(sc)
    trace = simulate(sc)
    return Outcome(sc, trace, check_trace(sc.protocol, trace, oracle), verify.round_metrics(trace))


def write_outputs(outcome: Outcome, out_dir: Optional[str] = None) -> dict:
    """Write trace, report and metrics files named in ``scenario.outputs``
    (relative to ``out_dir``); returns the paths written."""
    paths = dict(outcome.scenario.outputs)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        for k in ("trace", "report", "metrics"):
            paths.setdefault(k, f"{k}.jsonl" if k == "trace" else f"{k}.json")
        paths = {k: os.path.join(out_dir, v) for k, v in paths.items()}
    if "trace" in paths:
        outcome.trace.write(paths["trace"])
    report = outcome.report()
    for k, obj in (("report", report), ("metrics", report["metrics"])):
        if k in paths:
            with open(paths[k], "w", encoding="utf-8") as fh:
                json.dump(obj, fh, indent=2, sort_keys=True)
                fh.write("\n")
    return paths


def contention(protocol: str, seed: int, ops_per_node: int = 4, n: Optional[int] = None,
               update_prob: float = 0.6, max_gap: int = 50, D: int = DEFAULT_D) -> Scenario:
    """Crash-free burst: every node issues ``ops_per_node`` operations almost
    back to back.  High tag contention exercises the slow paths of both
    snapshot protocols.  ``n`` defaults to a seeded pick from 3, 5, 7."""
    rng = random.Random(seed)
    if n is None:
        n = rng.choice([3, 5, 7])
    read = query_op if protocol == "uqsm" else scan_op
    script = []
    for i in range(1, n + 1):
        for m in range(ops_per_node):
            op = update_op(f"u{i}.{m}") if rng.random() < update_prob else read()
            script.append(ClientOp(i, op, gap=rng.randint(0, max_gap)))
    return Scenario(protocol, n, (n - 1) // 2, {"kind": "uniform", "dMin": 1, "D": D, "seed": seed}, [], script,
                    seed=seed)
