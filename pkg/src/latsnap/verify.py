"""Checkers and metrics over execution traces.

* lattice agreement properties of ELA decisions, plus trace-level replays of
  the view comparability, termination and message-volume properties;
* structural properties of AC-ASO traces (tags, good lattice views, views
  and tags under real-time order);
* a linearization witness built from operation views, its validator, and an
  independent brute-force linearizability oracle for small histories;
* round and message accounting.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass
from itertools import combinations
from typing import Any, Iterable, Optional

from .lattice import TaggedValue, is_chain
from .simnet import ExecutionTrace, exposed_values, rounds_between

READS = ("scan", "query")


class IncomparableViews(AssertionError):
    """Two completed operations returned incomparable views."""


class HistoryTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class Violation:
    prop: str
    detail: str
    witness: tuple = ()

    def to_json(self) -> dict:
        return {"property": self.prop, "detail": self.detail, "witness": [repr(w) for w in self.witness]}


# -- histories ----------------------------------------------------------------------


@dataclass(frozen=True)
class OperationRecord:
    op_id: int
    kind: str
    node: int
    invoke_time: int
    respond_time: Optional[int] = None
    value: Optional[TaggedValue] = None
    view: Optional[frozenset] = None
    tag: Optional[int] = None
    direct: Optional[bool] = None
    result: Any = None

    @property
    def completed(self) -> bool:
        return self.respond_time is not None

    def precedes(self, other: "OperationRecord") -> bool:
        """Real-time order: ``self`` responded before ``other`` was invoked."""
        return self.respond_time is not None and self.respond_time < other.invoke_time

    def __repr__(self) -> str:
        end = "..." if self.respond_time is None else self.respond_time
        what = f"({self.value!r})" if self.value is not None else ""
        return f"{self.kind}{what}#{self.op_id}@n{self.node}[{self.invoke_time},{end}]"


@dataclass
class History:
    ops: list
    n: int
    initial: Any = None

    @property
    def completed(self) -> list:
        return [o for o in self.ops if o.completed]

    @property
    def pending(self) -> list:
        return [o for o in self.ops if not o.completed]


def _vector_to_set(vec, universe: dict) -> frozenset:
    out = []
    for tv in universe.values():
        top = vec[tv.ts.writer - 1]
        if top is not None and tv.ts <= top.ts:
            out.append(tv)
    return frozenset(out)


def history_from_trace(trace: ExecutionTrace) -> History:
    """Operation records of a snapshot or update-query trace.

    Vector-valued views (TS-ASO) are converted to the set of written values
    they dominate, so every checker works on set views.
    """
    invokes, responds, assigned = {}, {}, {}
    for e in trace.events:
        k = e["kind"]
        if k == "invoke":
            invokes[e["op_id"]] = e
        elif k == "respond":
            responds[e["op_id"]] = e
        elif k == "internal" and e.get("what") == "assign":
            assigned[e["op_id"]] = e["value"]
    universe = {tv: tv for tv in assigned.values()}
    ops = []
    for op_id, inv in sorted(invokes.items()):
        resp = responds.get(op_id)
        rec = resp["record"] if resp else {}
        view = rec.get("view")
        if view is not None and rec.get("view_kind") == "vector":
            view = _vector_to_set(view, universe)
        kind = inv["op"]["op"]
        ops.append(OperationRecord(
            op_id=op_id, kind=kind, node=inv["node"], invoke_time=inv["t"],
            respond_time=resp["t"] if resp else None,
            value=assigned.get(op_id), view=view, tag=rec.get("tag"), direct=rec.get("direct"),
            result=resp["result"] if resp and kind in READS else None,
        ))
    return History(ops, trace.n)


# -- sequential models ------------------------------------------------------------------


def _expected(model: str, n: int, placed: Iterable[OperationRecord]):
    placed = [o for o in placed if o.kind == "update"]
    if model == "set":
        return frozenset(o.value.payload for o in placed)
    latest: dict = {}
    for o in placed:
        w = o.node
        if w not in latest or latest[w].invoke_time < o.invoke_time:
            latest[w] = o
    return tuple(latest[j].value.payload if j in latest else None for j in range(1, n + 1))


def _replay(lin, n, model) -> Optional[str]:
    latest: dict = {}
    added: set = set()
    for o in lin:
        if o.kind == "update":
            latest[o.node] = o.value.payload
            added.add(o.value.payload)
            continue
        want = frozenset(added) if model == "set" else tuple(latest.get(j) for j in range(1, n + 1))
        if o.result != want:
            return f"{o!r} returned {o.result!r}, sequential spec gives {want!r}"
    return None


def explain_linearization(lin: list, history: History, model: str = "snapshot") -> Optional[str]:
    """``None`` when ``lin`` is a valid linearization of ``history``, else why not."""
    ids = [o.op_id for o in lin]
    if len(set(ids)) != len(ids):
        return "operation repeated"
    known = {o.op_id for o in history.ops}
    if not set(ids) <= known:
        return "operation not in history"
    missing = [o for o in history.completed if o.op_id not in set(ids)]
    if missing:
        return f"completed operation missing: {missing[0]!r}"
    if any(o.kind in READS and not o.completed for o in lin):
        return "pending read in linearization"
    if any(o.kind == "update" and o.value is None for o in lin):
        return "update without a value"
    pos = {o.op_id: k for k, o in enumerate(lin)}
    for a in lin:
        for b in lin:
            if a.precedes(b) and pos[a.op_id] > pos[b.op_id]:
                return f"real-time order violated: {a!r} before {b!r}"
    return _replay(lin, history.n, model)


def validate_linearization(lin: list, history: History, model: str = "snapshot") -> bool:
    return explain_linearization(lin, history, model) is None


def _realtime_order(ops: list) -> list:
    """Linear extension of real-time order; ties broken by value timestamp."""
    left = list(ops)
    out = []
    while left:
        ready = [o for o in left if not any(p.precedes(o) for p in left if p is not o)]
        nxt = min(ready, key=lambda o: (o.value.ts, o.op_id))
        out.append(nxt)
        left.remove(nxt)
    return out


def build_linearization(history: History) -> list:
    """Witness order from operation views.

    Reads are ordered by view inclusion (equal views by response time, then
    node id).  Each update goes just before the first read whose view holds
    its value; updates sharing a gap follow real-time order, ties by
    timestamp.  Pending updates are kept iff some completed view holds them.
    """
    completed = [o for o in history.completed if o.view is not None]
    if not is_chain(o.view for o in completed):
        for a, b in combinations(completed, 2):
            if not (a.view <= b.view or b.view <= a.view):
                raise IncomparableViews(f"{a!r} and {b!r} have incomparable views")
    reads = sorted((o for o in completed if o.kind in READS),
                   key=lambda o: (len(o.view), o.respond_time, o.node))
    visible = frozenset().union(*(o.view for o in completed)) if completed else frozenset()
    updates = [o for o in history.ops if o.kind == "update" and o.value is not None
               and (o.completed or o.value in visible)]
    gaps: list = [[] for _ in range(len(reads) + 1)]
    for u in updates:
        k = next((idx for idx, s in enumerate(reads) if u.value in s.view), len(reads))
        gaps[k].append(u)
    lin = []
    for k, gap in enumerate(gaps):
        lin += _realtime_order(gap)
        if k < len(reads):
            lin.append(reads[k])
    return lin


def brute_force_linearizable(history: History, model: str = "snapshot", limit: int = 10) -> bool:
    """Exhaustive search for a linearization.

    Completed operations must all be placed; pending updates may be placed
    anywhere their real-time predecessors allow, or dropped.  Pending reads
    are ignored.  Memoised over the set of placed operations, which fixes
    the sequential state.
    """
    done = history.completed
    if len(done) > limit:
        raise HistoryTooLarge(f"{len(done)} completed operations exceed oracle limit {limit}")
    ops = done + [o for o in history.pending if o.kind == "update" and o.value is not None]
    m = len(ops)
    if any(o.kind == "update" and o.value is None for o in done):
        return False
    preds = [0] * m
    for b in range(m):
        for a in range(m):
            if ops[a].precedes(ops[b]):
                preds[b] |= 1 << a
    required = (1 << len(done)) - 1
    failed: set = set()

    def search(mask: int) -> bool:
        if mask & required == required:
            return True
        if mask in failed:
            return False
        state = None
        for k in range(m):
            bit = 1 << k
            if mask & bit or preds[k] & ~mask:
                continue
            o = ops[k]
            if o.kind in READS:
                if state is None:
                    state = _expected(model, history.n, (ops[j] for j in range(m) if mask >> j & 1))
                if o.result != state:
                    continue
            if search(mask | bit):
                return True
        failed.add(mask)
        return False

    return search(0)


# -- simulator contracts ------------------------------------------------------------------


def check_simulator_contracts(trace) -> list:
    """FIFO per channel, delays in ``(0, D]``, exactly-once delivery to nodes
    alive at delivery time, and silence of crashed nodes."""
    out = []
    sends, delivered = {}, {}
    last_seq: dict = {}
    for e in trace.events:
        k = e["kind"]
        src = e.get("src", e.get("node"))
        crashed_at = trace.crashed.get(src)
        if k in ("send", "respond", "decide") and crashed_at is not None and e["t"] > crashed_at:
            out.append(Violation("crash-silence", f"node {src} acted at {e['t']} after crashing at {crashed_at}"))
        if k == "send":
            key = (e["src"], e["dst"], e["seq"])
            sends[key] = e
            if not e["local"] and not 0 < e["deliver_at"] - e["t"] <= trace.D:
                out.append(Violation("delay-bound", f"message {key} delay {e['deliver_at'] - e['t']}"))
        elif k == "deliver":
            key = (e["src"], e["dst"], e["seq"])
            if key in delivered:
                out.append(Violation("exactly-once", f"message {key} delivered twice"))
            delivered[key] = e
            if key not in sends:
                out.append(Violation("exactly-once", f"message {key} delivered but never sent"))
            elif not e["local"] and e["t"] != sends[key]["deliver_at"]:
                out.append(Violation("delay-bound", f"message {key} delivered off schedule"))
            chan = (e["src"], e["dst"])
            if e["seq"] <= last_seq.get(chan, -1):
                out.append(Violation("fifo", f"channel {chan} delivered seq {e['seq']} after {last_seq[chan]}"))
            last_seq[chan] = e["seq"]
    for key, e in sends.items():
        if key in delivered:
            continue
        dst_crash = trace.crashed.get(key[1])
        due = e["deliver_at"]
        if (dst_crash is None or dst_crash > due) and due <= trace.end_time and trace.status == "quiescent":
            out.append(Violation("exactly-once", f"message {key} to live node never delivered"))
    return out


# -- lattice agreement ------------------------------------------------------------------


def check_la_properties(inputs: dict, outputs: dict) -> list:
    """Downward-Validity, Upward-Validity and Comparability of decided outputs."""
    out = []
    top = frozenset().union(*inputs.values()) if inputs else frozenset()
    for i, y in sorted(outputs.items()):
        x = inputs.get(i)
        if x is not None and not x <= y:
            out.append(Violation("downward-validity", f"node {i}: input not below output", (i,)))
        if not y <= top:
            out.append(Violation("upward-validity", f"node {i}: output exceeds join of inputs", (i,)))
    for (i, a), (j, b) in combinations(sorted(outputs.items()), 2):
        if not (a <= b or b <= a):
            out.append(Violation("comparability", f"nodes {i} and {j} decided incomparable outputs", (i, j)))
    return out


def ela_inputs(trace) -> dict:
    return {e["node"]: e["value"] for e in trace.notes("input")}


def ela_outputs(trace) -> dict:
    return {e["node"]: e["value"] for e in trace.of_kind("decide")}


def ela_decision_times(trace) -> dict:
    return {e["node"]: e["t"] for e in trace.of_kind("decide")}


def check_view_comparability(trace) -> list:
    """Replay every ``V_i[s]`` over time; all of them must form one chain per ``s``."""
    n = trace.n
    V = {(i, s): set() for i in range(1, n + 1) for s in range(1, n + 1)}
    history = {s: set() for s in range(1, n + 1)}
    for e in trace.events:
        if e["kind"] != "deliver":
            continue
        carried = getattr(e["payload"], "carried", None)
        if carried is None:
            continue
        i, s = e["dst"], e["src"]
        for v in carried():
            for key in {(i, s), (i, i)}:
                if v not in V[key]:
                    V[key].add(v)
                    history[key[1]].add(frozenset(V[key]))
    out = []
    for s, snaps in history.items():
        if not is_chain(snaps):
            out.append(Violation("view-comparability", f"views of node {s}'s entry are not a chain", (s,)))
    return out


def check_ela_termination(trace) -> list:
    """Every interval ``[kD, (k+2)D)`` without exposed values ends with all
    nonfaulty nodes decided.  Only meaningful for simultaneous starts at 0."""
    if any(t != 0 for t in trace.starts.values()):
        return []
    D = trace.D
    exposed = exposed_values(trace)
    decided = ela_decision_times(trace)
    live = trace.nonfaulty
    last = max([trace.end_time] + list(decided.values()))
    out = []
    for k in range(0, last // D + 1):
        if exposed.get(k) or exposed.get(k + 1):
            continue
        for i in live:
            t = decided.get(i)
            if t is None or t > (k + 2) * D:
                if t is not None and t < k * D:
                    continue
                out.append(Violation("termination", f"node {i} undecided at {(k + 2) * D} with no exposed values in intervals {k},{k + 1}", (i, k)))
        if out:
            break
    return out


def check_message_bound(trace) -> list:
    bound = trace.n ** 2
    counts: dict = {}
    for e in trace.events:
        if e["kind"] != "send":
            continue
        carried = getattr(e["payload"], "carried", None)
        if carried is None:
            continue
        for v in carried():
            counts[v] = counts.get(v, 0) + 1
    return [Violation("message-bound", f"value {v!r} sent {c} times > n^2 = {bound}", (v,))
            for v, c in counts.items() if c > bound]


def check_ela_trace(trace) -> list:
    out = check_la_properties(ela_inputs(trace), ela_outputs(trace))
    out += check_view_comparability(trace)
    out += check_ela_termination(trace)
    out += check_message_bound(trace)
    if trace.status != "quiescent":
        out.append(Violation("quiescence", f"simulation ended {trace.status}"))
    missing = [i for i in trace.nonfaulty if i not in ela_outputs(trace)]
    if missing:
        out.append(Violation("termination", f"nonfaulty nodes {missing} never decided", tuple(missing)))
    return out


# -- atomic snapshot structure --------------------------------------------------------------


def _first_tag_times(trace) -> dict:
    """First time each tag was sent in a writeTag message."""
    first: dict = {}
    for e in trace.events:
        if e["kind"] != "send":
            continue
        msg = e["payload"]
        if isinstance(msg, dict):
            if msg.get("type") == "writeTag":
                first.setdefault(msg["tag"], e["t"])
        elif getattr(msg, "KIND", None) == "writeTag":
            first.setdefault(msg.tag, e["t"])
    return first


def check_snapshot_views(history: History) -> list:
    """Comparable views, self-inclusion, view and tag monotonicity under real time."""
    out = []
    done = [o for o in history.completed if o.view is not None]
    if not is_chain(o.view for o in done):
        for a, b in combinations(done, 2):
            if not (a.view <= b.view or b.view <= a.view):
                out.append(Violation("comparable-op-views", "incomparable operation views", (a, b)))
                break
    for o in done:
        if o.kind == "update" and o.value not in o.view:
            out.append(Violation("self-inclusion", "update view misses its own value", (o,)))
    for a in done:
        for b in done:
            if not a.precedes(b):
                continue
            if not a.view <= b.view:
                out.append(Violation("view-monotonicity", "earlier operation view not included in later", (a, b)))
            if a.tag is not None and b.tag is not None and a.tag > b.tag:
                out.append(Violation("tag-monotonicity", "earlier operation has larger tag", (a, b)))
    by_writer: dict = {}
    for o in history.ops:
        if o.kind == "update" and o.value is not None:
            by_writer.setdefault(o.node, []).append(o)
    for w, ups in by_writer.items():
        ups.sort(key=lambda o: o.invoke_time)
        for a, b in zip(ups, ups[1:]):
            if not a.value.ts < b.value.ts:
                out.append(Violation("writer-monotonicity", f"writer {w} timestamps not increasing", (a, b)))
    return out


def check_acaso_trace(trace, history: Optional[History] = None) -> list:
    history = history or history_from_trace(trace)
    out = check_snapshot_views(history)
    D = trace.D
    tags = {e["value"].ts.tag for e in trace.notes("assign")}
    for T in sorted(tags):
        if T >= 2 and T - 1 not in tags:
            out.append(Violation("non-skipping-tags", f"value tag {T} present but {T - 1} absent", (T,)))
    ends = trace.notes("lattice_end")
    good_views = [e["view"] for e in ends if e["good"]]
    if not is_chain(good_views):
        out.append(Violation("comparable-good-views", "good lattice operations returned incomparable views"))
    good_by_tag: dict = {}
    for e in ends:
        if e["good"]:
            good_by_tag.setdefault(e["tag"], e["t"])
    for T, t in sorted(_first_tag_times(trace).items()):
        for z in range(1, T):
            if good_by_tag.get(z, t + 1) > t:
                out.append(Violation("good-op-existence", f"tag {T} appeared at {t} before any good lattice op with tag {z}", (T, z)))
    updates = [o for o in history.ops if o.kind == "update" and o.value is not None]
    for e in trace.notes("lattice_start"):
        T, t = e["tag"], e["t"]
        for u in updates:
            if u.invoke_time > t + D and u.value.ts.tag <= T:
                out.append(Violation("tag-fence", f"update invoked at {u.invoke_time} got tag {u.value.ts.tag} <= {T} (lattice op started {t})", (u,)))
    return out


def check_linearizable(history: History, model: str = "snapshot", oracle: bool = True) -> list:
    out = []
    try:
        lin = build_linearization(history)
    except IncomparableViews as exc:
        return [Violation("linearizability", str(exc))]
    why = explain_linearization(lin, history, model)
    if why:
        out.append(Violation("linearizability", f"witness rejected: {why}"))
    if oracle and len(history.completed) <= 10 and not brute_force_linearizable(history, model):
        out.append(Violation("linearizability", "brute-force oracle found no linearization"))
    return out


# -- metrics -----------------------------------------------------------------------------


def round_metrics(trace) -> dict:
    D = trace.D
    invokes = {e["op_id"]: e for e in trace.of_kind("invoke")}
    per_op = []
    for e in trace.of_kind("respond"):
        inv = invokes[e["op_id"]]
        per_op.append({"op_id": e["op_id"], "node": e["node"], "kind": inv["op"]["op"],
                       "rounds": rounds_between(D, inv["t"], e["t"])})
    starts = {}
    for e in trace.notes("lattice_start"):
        starts[(e["node"], e["op_id"], e["phase"], e["tag"])] = e["t"]
    per_lattice = []
    for e in trace.notes("lattice_end"):
        t0 = starts.get((e["node"], e["op_id"], e["phase"], e["tag"]))
        if t0 is not None:
            per_lattice.append({"node": e["node"], "tag": e["tag"], "good": e["good"],
                                "rounds": rounds_between(D, t0, e["t"])})
    live_starts = [t for i, t in trace.starts.items() if i not in trace.crashed] or [0]
    last_start = max(live_starts)
    decisions = {e["node"]: rounds_between(D, last_start, e["t"]) if e["t"] >= last_start else 0
                 for e in trace.of_kind("decide")}
    total = sum(o["rounds"] for o in per_op)
    return {
        "D": D,
        "k": len(trace.crashed),
        "messages": trace.message_count(),
        "roundsPerOp": per_op,
        "roundsPerLatticeOp": per_lattice,
        "totalRounds": total,
        "completedOps": len(per_op),
        "amortizedRounds": total / len(per_op) if per_op else 0.0,
        "maxOpRounds": max((o["rounds"] for o in per_op), default=0),
        "decisionRounds": decisions,
        "maxDecisionRounds": max(decisions.values(), default=0),
        "startSkewExceedsD": max(trace.starts.values()) - min(trace.starts.values()) > D,
        "status": trace.status,
    }


# -- reading exported traces -------------------------------------------------------------------


def _tv(d):
    return None if d is None else TaggedValue.from_json(d)


def _bytes(s):
    return None if s is None else base64.b64decode(s)


def _decode(e: dict) -> dict:
    k = e["kind"]
    if k == "respond":
        rec = dict(e.get("record") or {})
        vector = rec.get("view_kind") == "vector"
        if rec.get("value") is not None:
            rec["value"] = _tv(rec["value"])
        if rec.get("view") is not None:
            rec["view"] = tuple(_tv(x) for x in rec["view"]) if vector else frozenset(_tv(x) for x in rec["view"])
        if "snap" in rec:
            rec["snap"] = tuple(_bytes(x) for x in rec["snap"])
        if "reply" in rec:
            rec["reply"] = frozenset(_bytes(x) for x in rec["reply"])
        e["record"] = rec
        if "reply" in rec:
            e["result"] = rec["reply"]
        elif "snap" in rec:
            e["result"] = rec["snap"]
    elif k == "decide":
        e["value"] = frozenset(_tv(x) for x in e["value"])
    elif k == "internal":
        what = e.get("what")
        if what == "assign":
            e["value"] = _tv(e["value"])
        elif what == "input":
            e["value"] = frozenset(_tv(x) for x in e["value"])
        elif what == "lattice_end" and e.get("view") is not None:
            if e.get("view_kind") == "vector":
                e["view"] = tuple(_tv(x) for x in e["view"])
            else:
                e["view"] = frozenset(_tv(x) for x in e["view"])
    return e


def load_trace(path) -> ExecutionTrace:
    """Read a JSONL trace written by :meth:`ExecutionTrace.write`.

    Views, values and results are decoded; message payloads stay as dicts.
    """
    header, footer, events = None, None, []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            e = json.loads(line)
            if e["kind"] == "internal" and e.get("what") == "header":
                header = e
            elif e["kind"] == "internal" and e.get("what") == "end":
                footer = e
            else:
                events.append(_decode(e))
    if header is None or footer is None:
        raise ValueError(f"{path}: missing trace header or footer")
    return ExecutionTrace(
        n=header["n"], f=header["f"], D=header["D"], events=events, status=footer["status"],
        end_time=footer["t"], crashed={int(k): v for k, v in footer["crashed"].items()}, automata={},
        starts={int(k): v for k, v in header["starts"].items()}, horizon=header["horizon"],
    )
