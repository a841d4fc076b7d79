"""Command line driver: ``latsnap run|sweep|check|adversary``.

Exit codes: 0 ok, 2 a check failed, 3 bad configuration, 4 the horizon ran out.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

from . import verify
from .lattice import ConfigError
from .scenario import (PROTOCOLS, Scenario, check_trace, execute, failure_chain, randomized, resolve,
                       write_outputs)
from .simnet import DEFAULT_D, ClientOp, SimulationError
from .acaso import scan_op, update_op
from .uqsm import query_op

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_HORIZON = 0, 2, 3, 4

CSV_COLUMNS = ["n", "f", "k", "seed", "ops", "totalRounds", "amortizedRounds", "maxOpRounds", "messages",
               "checksPassed"]


def row_for(outcome) -> dict:
    sc, m = outcome.scenario, outcome.metrics
    if sc.protocol == "ela":
        rounds = list(m["decisionRounds"].values())
        ops, total, worst = len(rounds), sum(rounds), max(rounds, default=0)
    else:
        ops, total, worst = m["completedOps"], m["totalRounds"], m["maxOpRounds"]
    return {"n": sc.n, "f": sc.f, "k": m["k"], "seed": sc.seed, "ops": ops, "totalRounds": total,
            "amortizedRounds": round(total / ops, 4) if ops else 0.0, "maxOpRounds": worst,
            "messages": m["messages"], "checksPassed": outcome.ok}


def exit_code(outcome) -> int:
    if outcome.trace.status == "horizon":
        return EXIT_HORIZON
    return EXIT_OK if outcome.ok else EXIT_CHECK


def _emit_csv(rows, fh) -> None:
    w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)


# -- run ---------------------------------------------------------------------------------


def cmd_run(args) -> int:
    sc = Scenario.load(args.scenario)
    if args.seed is not None:
        sc = reseed(sc, args.seed)
    outcome = execute(sc)
    if args.out or sc.outputs:
        write_outputs(outcome, args.out)
    if args.format == "csv":
        _emit_csv([row_for(outcome)], sys.stdout)
    else:
        json.dump(outcome.report(), sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")
    return exit_code(outcome)


def reseed(sc: Scenario, seed: int) -> Scenario:
    """Apply ``seed`` to the delay model and any randomized adversary."""
    dm = dict(sc.delay_model)
    if dm.get("kind") == "uniform":
        dm["seed"] = seed
    elif dm.get("kind") == "scripted" and dm.get("base", {}).get("kind") == "uniform":
        dm["base"] = dict(dm["base"], seed=seed)
    adv = sc.adversary
    if adv and "randomized" in adv:
        adv = {"randomized": dict(adv["randomized"], seed=seed)}
    return replace(sc, seed=seed, delay_model=dm, adversary=adv)


# -- sweep ---------------------------------------------------------------------------------


def closed_loop(protocol: str, n: int, seed: int, ops_per_node: int, D: int = DEFAULT_D,
                delay: str = "fixed") -> Scenario:
    """Crash-free closed loop: every node alternates update and read back to back."""
    read = query_op if protocol == "uqsm" else scan_op
    script = [ClientOp(i, update_op(f"u{i}.{m}") if m % 2 == 0 else read())
              for i in range(1, n + 1) for m in range(ops_per_node)]
    dm = {"kind": "fixed", "D": D} if delay == "fixed" else {"kind": "uniform", "dMin": 1, "D": D, "seed": seed}
    return Scenario(protocol, n, (n - 1) // 2, dm, [], script, seed=seed)


def sweep_cells(args) -> list:
    cells = []
    if args.k:
        for k in args.k:
            for seed in args.seeds:
                cells.append(("chain", args.protocol, k, seed, args.ops_per_node))
    elif args.n:
        for n in args.n:
            for seed in args.seeds:
                cells.append(("plain", args.protocol, n, seed, args.ops_per_node, args.crash_prob, args.delay))
    return cells


def build_cell(cell) -> Scenario:
    if cell[0] == "chain":
        _, protocol, k, seed, ops = cell
        return failure_chain(protocol, k, seed, ops_per_node=ops)
    _, protocol, n, seed, ops, crash_prob, delay = cell
    if crash_prob > 0 or protocol == "ela":
        return randomized(protocol, n, (n - 1) // 2, seed, op_count=ops * n, crash_prob=crash_prob)
    return closed_loop(protocol, n, seed, ops, delay=delay)


def run_cell(cell):
    sc = build_cell(cell)
    outcome = execute(sc, oracle=len(sc.client_script) <= 10)
    return row_for(outcome), outcome.ok, outcome.scenario.to_json(), outcome.trace.status


def _parse_seeds(text: str) -> list:
    if not text:
        return []
    if "-" in text:
        lo, hi = text.split("-", 1)
        return list(range(int(lo), int(hi) + 1))
    if "," in text:
        return [int(s) for s in text.split(",") if s]
    return list(range(int(text)))


def cmd_sweep(args) -> int:
    cells = sweep_cells(args)
    if args.parallel > 1 and len(cells) > 1:
        with ProcessPoolExecutor(args.parallel) as pool:
            results = list(pool.map(run_cell, cells))
    else:
        results = [run_cell(c) for c in cells]
    rows = [r for r, _, _, _ in results]
    if args.format == "json":
        text = json.dumps(rows, indent=2) + "\n"
    else:
        buf = io.StringIO()
        _emit_csv(rows, buf)
        text = buf.getvalue()
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, f"sweep.{args.format}"), "w", encoding="utf-8") as fh:
            fh.write(text)
    sys.stdout.write(text)
    code = EXIT_OK
    for (row, ok, sc_json, status), cell in zip(results, cells):
        if ok:
            continue
        name = f"failed-{args.protocol}-n{row['n']}-k{row['k']}-seed{row['seed']}.json"
        path = os.path.join(args.out or ".", name)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(sc_json, fh, indent=2, sort_keys=True)
        print(f"check failed; scenario dumped to {path}", file=sys.stderr)
        code = EXIT_HORIZON if status == "horizon" else EXIT_CHECK
        break
    return code


# -- check ---------------------------------------------------------------------------------


def infer_protocol(trace) -> str:
    if trace.of_kind("decide"):
        return "ela"
    for e in trace.of_kind("respond"):
        rec = e["record"]
        if "reply" in rec:
            return "uqsm"
        if rec.get("view_kind") == "vector":
            return "tsaso"
    if any(e["op"]["op"] == "query" for e in trace.of_kind("invoke")):
        return "uqsm"
    return "acaso"


def cmd_check(args) -> int:
    trace = verify.load_trace(args.trace)
    protocol = args.protocol or infer_protocol(trace)
    violations = check_trace(protocol, trace)
    ok = not violations and trace.quiescent
    report = {"protocol": protocol, "status": trace.status, "checksPassed": ok,
              "violations": [v.to_json() for v in violations]}
    json.dump(report, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")
    if trace.status == "horizon":
        return EXIT_HORIZON
    return EXIT_OK if ok else EXIT_CHECK


# -- adversary --------------------------------------------------------------------------------


def cmd_adversary(args) -> int:
    if args.chain:
        chains = [[int(p) for p in c.split(",")] for c in args.chain]
        members = {p for c in chains for p in c}
        n = args.n or max(members)
        f = args.f if args.f is not None else (n - 1) // 2
        script = []
        if args.protocol != "ela":
            script = [ClientOp(c[0], update_op(f"c{c[0]}")) for c in chains]
        delay = {"kind": "uniform", "dMin": 1, "D": args.D, "seed": args.seed} if args.random_base \
            else {"kind": "fixed", "D": args.D}
        sc = Scenario(args.protocol, n, f, delay, [], script, seed=args.seed,
                      adversary={"failureChain": {"chains": chains}})
        sc = resolve(sc)
    else:
        sc = failure_chain(args.protocol, args.k, args.seed, ops_per_node=args.ops_per_node, D=args.D)
    text = json.dumps(sc.to_json(), indent=2, sort_keys=True) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# -- entry point -------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="latsnap", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("run", help="execute one scenario and check it")
    r.add_argument("--scenario", required=True)
    r.add_argument("--out", help="directory for trace.jsonl, report.json, metrics.json")
    r.add_argument("--seed", type=int)
    r.add_argument("--format", choices=("json", "csv"), default="json")
    r.set_defaults(fn=cmd_run)

    s = sub.add_parser("sweep", help="run a grid of scenarios and tabulate rounds")
    s.add_argument("--protocol", choices=PROTOCOLS, default="acaso")
    s.add_argument("--n", type=int, nargs="*", default=[], help="system sizes (crash-free or randomized cells)")
    s.add_argument("--k", type=int, nargs="*", default=[], help="crash counts (failure-chain cells, n = 2k+3)")
    s.add_argument("--seeds", type=_parse_seeds, default=[0], help="count N, range A-B or list a,b,c")
    s.add_argument("--seed", type=int, help="single seed (overrides --seeds)")
    s.add_argument("--ops-per-node", type=int, default=10)
    s.add_argument("--crash-prob", type=float, default=0.0)
    s.add_argument("--delay", choices=("fixed", "uniform"), default="fixed")
    s.add_argument("--out")
    s.add_argument("--format", choices=("json", "csv"), default="csv")
    s.add_argument("--parallel", type=int, default=1)
    s.set_defaults(fn=cmd_sweep)

    c = sub.add_parser("check", help="re-run the checkers on an exported trace")
    c.add_argument("--trace", required=True)
    c.add_argument("--protocol", choices=PROTOCOLS)
    c.set_defaults(fn=cmd_check)

    a = sub.add_parser("adversary", help="emit a failure-chain scenario")
    a.add_argument("--protocol", choices=("ela", "acaso", "uqsm"), default="ela")
    a.add_argument("--chain", action="append", help="comma-separated chain, owner first (repeatable)")
    a.add_argument("--k", type=int, default=1, help="random staircase chains with k crashes")
    a.add_argument("--n", type=int)
    a.add_argument("--f", type=int)
    a.add_argument("--D", type=int, default=DEFAULT_D)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--ops-per-node", type=int, default=2)
    a.add_argument("--random-base", action="store_true", help="uniform random delays off the chain links")
    a.add_argument("--out")
    a.set_defaults(fn=cmd_adversary)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "seed", None) is not None and args.cmd == "sweep":
        args.seeds = [args.seed]
    try:
        return args.fn(args)
    except (ConfigError, SimulationError, OSError, json.JSONDecodeError) as exc:
        json.dump({"error": type(exc).__name__, "message": str(exc)}, sys.stderr)
        sys.stderr.write("\n")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
