"""Deterministic discrete-event simulation of a crash-prone asynchronous network.

Channels are reliable and FIFO with delays in ``(0, D]``.  Simulated time is
an integer tick count.  Protocol nodes are :class:`Automaton` subclasses whose
callbacks return lists of effects (:class:`Send`, :class:`Broadcast`,
:class:`Respond`, :class:`Decide`, :class:`Note`); the simulator executes each
callback atomically and applies its effects in order.

Ordering at equal simulated time: crashes, then node starts, then client
invocations, then deliveries ordered by ``(dst, src, seq)``.  A node's send to
itself never enters the network: it is delivered right after the handler that
produced it finishes, before any other event.
"""

from __future__ import annotations

import base64
import dataclasses
import heapq
import itertools
import json
import random
from collections import deque
from dataclasses import dataclass, field
from fnmatch import fnmatchcase
from typing import Any, Iterable, Mapping, Optional, Sequence

from .lattice import TaggedValue, Timestamp, canonical, check_fault_bound

DEFAULT_D = 1000
HORIZON_ROUNDS = 10_000


class SimulationError(RuntimeError):
    pass


class ScriptOverlapError(SimulationError):
    """A client script asks a node to run two operations at once."""


# -- effects -------------------------------------------------------------------


@dataclass(frozen=True)
class Send:
    dst: int
    payload: Any


@dataclass(frozen=True)
class Broadcast:
    payload: Any
    label: str = ""


@dataclass(frozen=True)
class Respond:
    op_id: int
    result: Any
    record: Optional[dict] = None


@dataclass(frozen=True)
class Decide:
    value: Any
    quorum: tuple = ()


@dataclass(frozen=True)
class Note:
    what: str
    data: dict = field(default_factory=dict)


class Automaton:
    """One protocol node.  Subclasses override the callbacks they need."""

    def __init__(self, node: int, n: int, f: int):
        check_fault_bound(n, f)
        if not 1 <= node <= n:
            raise ValueError(f"node id {node} outside 1..{n}")
        self.node = node
        self.n = n
        self.f = f

    @property
    def quorum(self) -> int:
        return self.n - self.f

    @property
    def nodes(self) -> range:
        return range(1, self.n + 1)

    def on_start(self) -> list:
        return []

    def on_message(self, src: int, payload: Any) -> list:
        raise NotImplementedError

    def on_invoke(self, op_id: int, op: Mapping) -> list:
        raise SimulationError(f"{type(self).__name__} accepts no client operations")


# -- faults and delays -----------------------------------------------------------


@dataclass(frozen=True)
class CrashSpec:
    """Crash ``node`` at ``at_time``, or part-way through a broadcast.

    ``during_broadcast`` is a glob matched against broadcast labels; the first
    matching broadcast by ``node`` completes ``after_sends`` point-to-point
    sends, in ``recipient_order``, and then the node crashes.
    """

    node: int
    at_time: Optional[int] = None
    during_broadcast: Optional[str] = None
    after_sends: int = 0
    recipient_order: Optional[tuple] = None

    def __post_init__(self):
        if (self.at_time is None) == (self.during_broadcast is None):
            raise ValueError("CrashSpec needs exactly one of at_time / during_broadcast")
        if self.at_time is not None and self.at_time < 0:
            raise ValueError("crash time must be non-negative")
        if self.after_sends < 0:
            raise ValueError("after_sends must be non-negative")
        if self.recipient_order is not None:
            object.__setattr__(self, "recipient_order", tuple(self.recipient_order))

    def to_json(self) -> dict:
        d = {"node": self.node}
        if self.at_time is not None:
            d["atTime"] = self.at_time
        else:
            d["duringBroadcast"] = self.during_broadcast
            d["afterSends"] = self.after_sends
        if self.recipient_order is not None:
            d["recipientOrder"] = list(self.recipient_order)
        return d

    @classmethod
    def from_json(cls, d: Mapping) -> "CrashSpec":
        order = d.get("recipientOrder")
        return cls(
            node=int(d["node"]),
            at_time=d.get("atTime"),
            during_broadcast=d.get("duringBroadcast"),
            after_sends=int(d.get("afterSends", 0)),
            recipient_order=tuple(order) if order is not None else None,
        )


class FixedDelay:
    def __init__(self, D: int = DEFAULT_D):
        if D < 1:
            raise ValueError("D must be a positive integer")
        self.D = D

    def delay(self, src: int, dst: int, seq: int) -> int:
        return self.D

    def to_json(self) -> dict:
        return {"kind": "fixed", "D": self.D}


class UniformDelay:
    """Integer delays drawn uniformly from ``[d_min, D]`` by a seeded generator."""

    def __init__(self, d_min: int, D: int, seed: int):
        if not 0 < d_min <= D:
            raise ValueError(f"need 0 < d_min <= D, got d_min={d_min}, D={D}")
        self.d_min, self.D, self.seed = d_min, D, seed
        self._rng = random.Random(seed)

    def delay(self, src: int, dst: int, seq: int) -> int:
        return self._rng.randint(self.d_min, self.D)

    def to_json(self) -> dict:
        return {"kind": "uniform", "dMin": self.d_min, "D": self.D, "seed": self.seed}


class ScriptedDelay:
    """Per-message delays keyed by ``(src, dst, seq)``.

    A key with ``seq=None`` covers the whole channel.  Anything unscripted
    falls back to ``base`` (fixed ``D`` by default).
    """

    def __init__(self, D: int, script: Mapping[tuple, int], base=None):
        self.D = D
        self.script = dict(script)
        self.base = base if base is not None else FixedDelay(D)
        if self.base.D != D:
            raise ValueError("base delay model must share D")
        for k, d in self.script.items():
            if not 0 < d <= D:
                raise ValueError(f"scripted delay {d} for {k} outside (0, {D}]")

    def delay(self, src: int, dst: int, seq: int) -> int:
        d = self.script.get((src, dst, seq))
        if d is None:
            d = self.script.get((src, dst, None))
        return d if d is not None else self.base.delay(src, dst, seq)

    def to_json(self) -> dict:
        return {
            "kind": "scripted",
            "D": self.D,
            "script": [[s, d, q, v] for (s, d, q), v in sorted(self.script.items(), key=lambda kv: (kv[0][0], kv[0][1], -1 if kv[0][2] is None else kv[0][2]))],
            "base": self.base.to_json(),
        }


def delay_model_from_json(d: Mapping):
    kind = d.get("kind", "fixed")
    if kind == "fixed":
        return FixedDelay(int(d.get("D", DEFAULT_D)))
    if kind == "uniform":
        D = int(d.get("D", DEFAULT_D))
        return UniformDelay(int(d.get("dMin", 1)), D, int(d.get("seed", 0)))
    if kind == "scripted":
        D = int(d.get("D", DEFAULT_D))
        script = {(s, t, q): v for s, t, q, v in d.get("script", [])}
        base = delay_model_from_json(d["base"]) if "base" in d else None
        return ScriptedDelay(D, script, base)
    raise ValueError(f"unknown delay model kind {kind!r}")


@dataclass(frozen=True)
class ClientOp:
    """One client invocation.

    With ``at`` set the op is invoked at that absolute time (and it is an
    error if the node is still busy then); otherwise it is invoked ``gap``
    ticks after the node's previous operation responds.
    """

    node: int
    op: Mapping
    at: Optional[int] = None
    gap: int = 0


# -- trace -----------------------------------------------------------------------


def to_jsonable(obj: Any) -> Any:
    """Canonical JSON form of payloads, views, snapshots and records."""
    if obj is None or isinstance(obj, (bool, int, float, str)):
        return obj
    if isinstance(obj, TaggedValue):
        return obj.to_json()
    if isinstance(obj, (bytes, bytearray)):
        return base64.b64encode(bytes(obj)).decode("ascii")
    if isinstance(obj, (frozenset, set)):
        if all(isinstance(x, TaggedValue) for x in obj):
            return [x.to_json() for x in canonical(obj)]
        items = [to_jsonable(x) for x in obj]
        return sorted(items, key=lambda x: json.dumps(x, sort_keys=True))
    if isinstance(obj, Timestamp):
        return [obj.tag, obj.writer]
    if isinstance(obj, (list, tuple, deque)):
        return [to_jsonable(x) for x in obj]
    if isinstance(obj, Mapping):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if dataclasses.is_dataclass(obj):
        out = {"type": getattr(obj, "KIND", type(obj).__name__)}
        for fld in dataclasses.fields(obj):
            out[fld.name] = to_jsonable(getattr(obj, fld.name))
        return out
    raise TypeError(f"cannot serialise {type(obj).__name__}")


@dataclass
class ExecutionTrace:
    n: int
    f: int
    D: int
    events: list
    status: str  # quiescent | horizon | stalled
    end_time: int
    crashed: dict
    automata: dict
    starts: dict
    horizon: int

    @property
    def quiescent(self) -> bool:
        return self.status == "quiescent"

    @property
    def faulty(self) -> frozenset:
        return frozenset(self.crashed)

    @property
    def nonfaulty(self) -> list:
        return [i for i in range(1, self.n + 1) if i not in self.crashed]

    def of_kind(self, kind: str) -> list:
        return [e for e in self.events if e["kind"] == kind]

    def notes(self, what: str) -> list:
        return [e for e in self.events if e["kind"] == "internal" and e.get("what") == what]

    def message_count(self) -> int:
        return sum(1 for e in self.events if e["kind"] == "send" and not e["local"])

    def header(self) -> dict:
        return {"t": 0, "kind": "internal", "what": "header", "n": self.n, "f": self.f, "D": self.D,
                "horizon": self.horizon, "starts": {str(k): v for k, v in sorted(self.starts.items())}}

    def footer(self) -> dict:
        return {"t": self.end_time, "kind": "internal", "what": "end", "status": self.status,
                "crashed": {str(k): v for k, v in sorted(self.crashed.items())}}

    def jsonl_lines(self) -> Iterable[str]:
        yield json.dumps(self.header(), sort_keys=True)
        for e in self.events:
            yield json.dumps(to_jsonable(e), sort_keys=True)
        yield json.dumps(self.footer(), sort_keys=True)

    def to_jsonl(self) -> str:
        return "\n".join(self.jsonl_lines()) + "\n"

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for line in self.jsonl_lines():
                fh.write(line + "\n")


# -- simulator --------------------------------------------------------------------

_CRASH, _START, _INVOKE, _DELIVER, _DEADLINE = 0, 1, 2, 3, 4


class _Simulator:
    def __init__(self, n, f, automata, delays, crashes, client_script, horizon, starts):
        check_fault_bound(n, f)
        if len(automata) != n:
            raise SimulationError(f"need {n} automata, got {len(automata)}")
        self.n, self.f = n, f
        self.nodes = {a.node: a for a in automata}
        if sorted(self.nodes) != list(range(1, n + 1)):
            raise SimulationError("automata must cover node ids 1..n exactly once")
        self.delays = delays
        self.D = delays.D
        self.horizon = HORIZON_ROUNDS * self.D if horizon is None else horizon
        self.starts = {i: 0 for i in range(1, n + 1)}
        if starts:
            self.starts.update(starts)

        crash_nodes = [c.node for c in crashes]
        if len(set(crash_nodes)) != len(crash_nodes):
            raise SimulationError("at most one CrashSpec per node")
        if len(crash_nodes) > f:
            raise SimulationError(f"{len(crash_nodes)} crashes exceed fault bound f={f}")
        for c in crashes:
            if not 1 <= c.node <= n:
                raise SimulationError(f"crash node {c.node} outside 1..{n}")
            if c.recipient_order is not None and sorted(c.recipient_order) != list(range(1, n + 1)):
                raise SimulationError("recipient_order must be a permutation of 1..n")
            if c.after_sends > n:
                raise SimulationError("after_sends must lie in [0, n]")
        self.mid_broadcast = {c.node: c for c in crashes if c.during_broadcast is not None}

        self.queues = {i: deque() for i in range(1, n + 1)}
        self._deadlines: list = []
        for op in client_script:
            if not 1 <= op.node <= n:
                raise SimulationError(f"client op for unknown node {op.node}")
            self.queues[op.node].append(op)
            if op.at is not None:
                # fires after every other event at op.at: the op must have started by then
                self._deadlines.append(op)

        self.heap: list = []
        self.uid = itertools.count()
        self.payloads: dict = {}
        self.seq: dict = {}
        self.last_delivery: dict = {}
        self.local: deque = deque()
        self.crashed: dict = {}
        self.pending: dict = {}
        self.op_ids = itertools.count(1)
        self.events: list = []
        self.now = 0

        self.started_ops: set = set()
        for op in self._deadlines:
            self._push((op.at, _DEADLINE, op.node, 0, 0), op)
        for c in crashes:
            if c.at_time is not None:
                self._push((c.at_time, _CRASH, c.node, 0, 0), None)
        for i in range(1, n + 1):
            self._push((self.starts[i], _START, i, 0, 0), None)
            self._schedule_next(i, self.starts[i])

    def _push(self, key, payload):
        uid = next(self.uid)
        self.payloads[uid] = payload
        heapq.heappush(self.heap, key + (uid,))

    def _record(self, **ev):
        ev = {"t": self.now, **ev}
        self.events.append(ev)

    def _schedule_next(self, node, t):
        q = self.queues[node]
        if not q:
            return
        op = q[0]
        if op.at is not None:
            if op.at < t:
                raise ScriptOverlapError(
                    f"node {node}: operation scheduled at {op.at} overlaps one still running at {t}")
            when = op.at
        else:
            when = t + op.gap
        self._push((when, _INVOKE, node, 0, 0), None)

    def _crash(self, node, cause, **extra):
        if node in self.crashed:
            return
        self.crashed[node] = self.now
        self._record(kind="crash", node=node, cause=cause, **extra)

    def _send(self, src, dst, payload):
        seq = self.seq.get((src, dst), 0)
        self.seq[(src, dst)] = seq + 1
        if dst == src:
            self._record(kind="send", src=src, dst=dst, seq=seq, payload=payload, deliver_at=self.now, local=True)
            self.local.append((src, seq, payload))
            return
        d = self.delays.delay(src, dst, seq)
        if not 0 < d <= self.D:
            raise SimulationError(f"delay {d} outside (0, {self.D}]")
        at = max(self.now + d, self.last_delivery.get((src, dst), 0))
        self.last_delivery[(src, dst)] = at
        self._record(kind="send", src=src, dst=dst, seq=seq, payload=payload, deliver_at=at, local=False)
        self._push((at, _DELIVER, dst, src, seq), (payload, self.now))

    def _apply(self, node, effects):
        for eff in effects:
            if node in self.crashed:
                return
            if isinstance(eff, Send):
                self._send(node, eff.dst, eff.payload)
            elif isinstance(eff, Broadcast):
                self._broadcast(node, eff)
            elif isinstance(eff, Respond):
                op_id = self.pending.pop(node, None)
                if op_id != eff.op_id:
                    raise SimulationError(f"node {node} responded to op {eff.op_id}, pending {op_id}")
                self._record(kind="respond", node=node, op_id=eff.op_id, result=eff.result, record=eff.record)
                self.queues[node].popleft()
                self._schedule_next(node, self.now)
            elif isinstance(eff, Decide):
                self._record(kind="decide", node=node, value=eff.value, quorum=list(eff.quorum))
            elif isinstance(eff, Note):
                self._record(kind="internal", node=node, what=eff.what, **eff.data)
            else:
                raise SimulationError(f"unknown effect {eff!r}")

    def _broadcast(self, node, eff):
        spec = self.mid_broadcast.get(node)
        if spec is not None and fnmatchcase(eff.label, spec.during_broadcast):
            del self.mid_broadcast[node]
            order = spec.recipient_order or tuple(range(1, self.n + 1))
            for dst in order[: spec.after_sends]:
                self._send(node, dst, eff.payload)
            self._crash(node, "broadcast", label=eff.label, after_sends=spec.after_sends)
            return
        for dst in range(1, self.n + 1):
            self._send(node, dst, eff.payload)

    def _execute(self, node, effects):
        self._apply(node, effects)
        while self.local:
            src, seq, payload = self.local.popleft()
            if src in self.crashed:
                continue
            self._record(kind="deliver", src=src, dst=src, seq=seq, payload=payload, sent=self.now, local=True)
            self._apply(src, self.nodes[src].on_message(src, payload))
        self.local.clear()

    def run(self) -> ExecutionTrace:
        status = "quiescent"
        while self.heap:
            key = self.heap[0]
            if key[0] > self.horizon:
                status = "horizon"
                break
            heapq.heappop(self.heap)
            t, cls, a, b, c, uid = key
            payload = self.payloads.pop(uid)
            self.now = t
            if cls == _CRASH:
                self._crash(a, "time")
            elif cls == _START:
                if a in self.crashed:
                    continue
                self._record(kind="internal", node=a, what="start")
                self._execute(a, self.nodes[a].on_start())
            elif cls == _DEADLINE:
                if a not in self.crashed and id(payload) not in self.started_ops and a in self.pending:
                    raise ScriptOverlapError(
                        f"node {a}: operation scheduled at {t} overlaps op {self.pending[a]} still running")
            elif cls == _INVOKE:
                if a in self.crashed:
                    continue
                if a in self.pending:
                    raise ScriptOverlapError(f"node {a} invoked while op {self.pending[a]} is pending")
                op = self.queues[a][0]
                self.started_ops.add(id(op))
                op_id = next(self.op_ids)
                self.pending[a] = op_id
                self._record(kind="invoke", node=a, op_id=op_id, op=dict(op.op))
                self._execute(a, self.nodes[a].on_invoke(op_id, op.op))
            else:
                msg, sent = payload
                if a in self.crashed:
                    continue
                self._record(kind="deliver", src=b, dst=a, seq=c, payload=msg, sent=sent, local=False)
                self._execute(a, self.nodes[a].on_message(b, msg))
        if status == "quiescent":
            busy = [i for i in self.nodes if i not in self.crashed and (i in self.pending or self.queues[i])]
            if busy:
                status = "stalled"
        return ExecutionTrace(
            n=self.n, f=self.f, D=self.D, events=self.events, status=status, end_time=self.now,
            crashed=dict(self.crashed), automata=dict(self.nodes), starts=dict(self.starts),
            horizon=self.horizon,
        )


def run(n: int, f: int, automata: Sequence[Automaton], delays=None, crashes: Iterable[CrashSpec] = (),
        client_script: Iterable[ClientOp] = (), horizon: Optional[int] = None,
        starts: Optional[Mapping[int, int]] = None) -> ExecutionTrace:
    """Run one execution to quiescence or ``horizon`` and return its trace.

    Raises :class:`~latsnap.lattice.ConfigError` when ``f >= n/2`` and
    :class:`ScriptOverlapError` when the client script overlaps operations
    on one node.
    """
    sim = _Simulator(n, f, list(automata), delays if delays is not None else FixedDelay(),
                     list(crashes), list(client_script), horizon, starts)
    return sim.run()


def rounds_between(trace_or_D, t0: int, t1: int) -> int:
    """Number of length-``D`` rounds covering ``[t0, t1]``: ``ceil((t1 - t0) / D)``."""
    D = trace_or_D if isinstance(trace_or_D, int) else trace_or_D.D
    if t1 < t0:
        raise ValueError("t1 must not precede t0")
    return -(-(t1 - t0) // D)


def first_receipts(trace: ExecutionTrace) -> dict:
    """Earliest time any nonfaulty node received each carried value."""
    first: dict = {}
    for e in trace.events:
        if e["kind"] != "deliver" or e["dst"] in trace.crashed:
            continue
        carried = getattr(e["payload"], "carried", None)
        if carried is None:
            continue
        for v in carried():
            if v not in first:
                first[v] = e["t"]
    return first


def exposed_values(trace: ExecutionTrace) -> dict:
    """Map interval index ``k`` to the values first received by a nonfaulty
    node during ``[kD, (k+1)D)``.  A node's own input counts through its
    local self-delivery at start."""
    out: dict = {}
    for v, t in first_receipts(trace).items():
        out.setdefault(t // trace.D, set()).add(v)
    return out


def make_failure_chain_schedule(chain: Sequence[int], value_key: str, n: int, f: int,
                                D: int = DEFAULT_D):
    """Crash specs and channel delays realising a failure chain for one value.

    ``chain[0]`` owns the value; every chain member but the last crashes
    right after relaying the value to its successor only, and each relay
    link carries the maximum delay ``D``.  The value therefore reaches the
    correct endpoint ``chain[-1]`` at time ``(len(chain) - 1) * D`` after
    the owner broadcasts it.  Broadcasts carrying the value must be labelled
    ``value:<value_key>``.
    """
    m = len(chain)
    if m < 2:
        raise ValueError("a failure chain needs at least two nodes")
    if len(set(chain)) != m:
        raise ValueError("failure chain nodes must be distinct")
    if m - 1 > f:
        raise ValueError(f"chain of length {m} needs {m - 1} crashes but f={f}")
    if any(not 1 <= p <= n for p in chain):
        raise ValueError("chain node outside 1..n")
    crashes = []
    script = {}
    for p, nxt in zip(chain, chain[1:]):
        order = (nxt,) + tuple(j for j in range(1, n + 1) if j != nxt)
        crashes.append(CrashSpec(p, during_broadcast=f"value:{value_key}", after_sends=1, recipient_order=order))
        script[(p, nxt, None)] = D
    return crashes, script
