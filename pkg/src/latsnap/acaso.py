"""Atomic snapshot with amortized constant rounds (AC-ASO).

Each node relays every value it sees and keeps ``V[j]``, the set of values
received from ``j``.  Operations run tagged lattice operations over that
shared flood: ``Lattice(r)`` writes ``r`` to a quorum, waits for an
equivalence quorum over the values of tag ``<= r`` and is *good* if no tag
above ``r`` was seen by then.  ``LatticeRenewal`` tries up to three lattice
operations and otherwise borrows the view of somebody else's good lattice
operation with the final tag.

The blocking pseudocode is encoded as an explicit phase machine; every
"wait until" is a guard re-checked after each atomic handler on the node.
Requests carry a per-node request id so replies are matched to the
procedure call that asked for them.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Any, ClassVar, Mapping, Optional

from .lattice import TaggedValue, Timestamp, filter_by_tag
from .simnet import Automaton, Broadcast, Note, Respond, Send, SimulationError


# -- wire messages ---------------------------------------------------------------

@dataclass(frozen=True)
class Value:
    KIND: ClassVar[str] = "value"
    tv: TaggedValue

    def carried(self):
        return (self.tv,)


@dataclass(frozen=True)
class WriteTag:
    KIND: ClassVar[str] = "writeTag"
    rid: int
    tag: int


@dataclass(frozen=True)
class WriteAck:
    KIND: ClassVar[str] = "writeAck"
    rid: int
    tag: int


@dataclass(frozen=True)
class EchoTag:
    KIND: ClassVar[str] = "echoTag"
    tag: int


@dataclass(frozen=True)
class ReadTag:
    KIND: ClassVar[str] = "readTag"
    rid: int


@dataclass(frozen=True)
class ReadAck:
    KIND: ClassVar[str] = "readAck"
    rid: int
    tag: int


@dataclass(frozen=True)
class GoodLA:
    KIND: ClassVar[str] = "goodLA"
    r: int


# -- client operations --------------------------------------------------------------

def update_op(label: str, payload: Optional[bytes] = None) -> dict:
    return {"op": "update", "payload": label.encode() if payload is None else payload, "label": label}


def scan_op() -> dict:
    return {"op": "scan"}


def extract(S, n: int) -> tuple:
    """Latest payload of every writer in ``S`` (``None`` if it has none).

    Entry ``j - 1`` belongs to node ``j``.
    """
    best: dict = {}
    for tv in S:
        j = tv.ts.writer
        cur = best.get(j)
        if cur is not None and cur.ts.tag == tv.ts.tag:
            raise SimulationError(f"writer {j} has two values with tag {tv.ts.tag}")
        if cur is None or cur.ts.tag < tv.ts.tag:
            best[j] = tv
    return tuple(best[j].payload if j in best else None for j in range(1, n + 1))


class Stage(enum.Enum):
    READ_TAG = "readTag"
    WRITE_TAG = "writeTag"
    WAIT_EQ = "waitEQ"
    WAIT_BORROW = "waitBorrow"


@dataclass
class _Op:
    op_id: int
    kind: str
    payload: Optional[bytes] = None
    label: str = ""
    stage: Stage = Stage.READ_TAG
    rid: int = 0
    read_acks: dict = field(default_factory=dict)
    write_acks: set = field(default_factory=set)
    r: int = 0
    phase: int = 0  # 0 for the update's initial lattice op, 1..3 inside LatticeRenewal
    value: Optional[TaggedValue] = None


class AcAsoNode(Automaton):
    """One AC-ASO node: background handlers plus at most one client operation."""

    def __init__(self, node: int, n: int, f: int):
        super().__init__(node, n, f)
        self.V: dict = {j: set() for j in self.nodes}
        self.max_tag = 0
        self.D: dict = {j: frozenset() for j in self.nodes}
        self.borrowed: dict = {}  # tag -> {sender: view}
        self.seen: set = set()
        self.op: Optional[_Op] = None
        self._rid = 0
        # |V[j] restricted to tag <= op.r|, maintained only while waiting for EQ
        self._counts: Optional[dict] = None

    # -- client side -------------------------------------------------------------

    def on_invoke(self, op_id: int, op: Mapping) -> list:
        if self.op is not None:
            raise SimulationError(f"node {self.node} already runs op {self.op.op_id}")
        kind = op["op"]
        if kind == "update":
            self.op = _Op(op_id, "update", payload=op["payload"], label=op.get("label", ""))
        elif kind in ("scan", "query"):
            self.op = _Op(op_id, kind)
        else:
            raise SimulationError(f"unknown operation {kind!r}")
        return self._read_tag() + self._advance()

    def _next_rid(self) -> int:
        self._rid += 1
        return self._rid

    def _read_tag(self) -> list:
        op = self.op
        op.stage = Stage.READ_TAG
        op.rid = self._next_rid()
        op.read_acks = {}
        return [Broadcast(ReadTag(op.rid), "readTag")]

    def _begin_lattice(self, r: int) -> list:
        op = self.op
        op.r = r
        op.stage = Stage.WRITE_TAG
        op.rid = self._next_rid()
        op.write_acks = set()
        return [
            Broadcast(WriteTag(op.rid, r), "writeTag"),
            Note("lattice_start", {"op_id": op.op_id, "tag": r, "phase": op.phase}),
        ]

    def _begin_renewal(self, r: int) -> list:
        self.op.phase = 1
        return self._begin_lattice(r)

    def _enter_wait_eq(self) -> None:
        r = self.op.r
        self.op.stage = Stage.WAIT_EQ
        self._counts = {j: sum(1 for tv in s if tv.ts.tag <= r) for j, s in self.V.items()}

    def _eq_holds(self) -> bool:
        # V[j] is always a subset of V[i], so equal filtered sizes mean equal sets.
        c = self._counts
        mine = c[self.node]
        return sum(1 for j in self.nodes if c[j] == mine) >= self.quorum

    def _complete_lattice(self) -> list:
        op = self.op
        r = op.r
        self._counts = None
        view = filter_by_tag(self.V[self.node], r)
        good = self.max_tag <= r
        out = [Note("lattice_end", {"op_id": op.op_id, "tag": r, "phase": op.phase, "good": good, "view": view})]
        if good:
            out.append(Broadcast(GoodLA(r), "goodLA"))
        if op.phase == 0:
            return out + self._begin_renewal(max(r + 1, self.max_tag))
        if good:
            return out + self._finish(view, direct=True)
        if op.phase == 3:
            op.stage = Stage.WAIT_BORROW
            return out
        op.phase += 1
        return out + self._begin_lattice(self.max_tag)

    def _finish(self, view: frozenset, direct: bool, lender: Optional[int] = None) -> list:
        op = self.op
        record = {"kind": op.kind, "value": op.value, "view": view, "tag": op.r, "direct": direct,
                  "phase": op.phase, "lender": lender}
        result = self._result(op, view, record)
        self.op = None
        return [Respond(op.op_id, result, record)]

    def _result(self, op: _Op, view: frozenset, record: dict) -> Any:
        if op.kind == "update":
            return "ack"
        snap = extract(view, self.n)
        record["snap"] = snap
        return snap

    def _step(self) -> Optional[list]:
        op = self.op
        if op.stage is Stage.READ_TAG:
            if len(op.read_acks) < self.quorum:
                return None
            r = max(op.read_acks.values())
            if op.kind != "update":
                return self._begin_renewal(r)
            tv = TaggedValue(op.payload, Timestamp(r + 1, self.node), op.label)
            op.value = tv
            op.phase = 0
            self.seen.add(tv)
            out = [Note("assign", {"op_id": op.op_id, "value": tv}),
                   Broadcast(Value(tv), f"value:{tv.key()}")]
            return out + self._begin_lattice(r)
        if op.stage is Stage.WRITE_TAG:
            if len(op.write_acks) < self.quorum:
                return None
            self._enter_wait_eq()
            return []
        if op.stage is Stage.WAIT_EQ:
            return self._complete_lattice() if self._eq_holds() else None
        lenders = self.borrowed.get(op.r)
        if not lenders:
            return None
        j = min(lenders)
        return self._finish(lenders[j], direct=False, lender=j)

    def _advance(self) -> list:
        out: list = []
        while self.op is not None:
            step = self._step()
            if step is None:
                break
            out += step
        return out

    # -- handlers ------------------------------------------------------------------

    def on_message(self, src: int, msg: Any) -> list:
        if isinstance(msg, Value):
            out = self._on_value(src, msg.tv)
        elif isinstance(msg, WriteTag):
            self.max_tag = max(self.max_tag, msg.tag)
            out = [Broadcast(EchoTag(msg.tag), "echoTag"), Send(src, WriteAck(msg.rid, msg.tag))]
        elif isinstance(msg, EchoTag):
            self.max_tag = max(self.max_tag, msg.tag)
            out = []
        elif isinstance(msg, ReadTag):
            out = [Send(src, ReadAck(msg.rid, self.max_tag))]
        elif isinstance(msg, ReadAck):
            op = self.op
            if op is not None and op.stage is Stage.READ_TAG and op.rid == msg.rid:
                op.read_acks[src] = msg.tag
            out = []
        elif isinstance(msg, WriteAck):
            op = self.op
            if op is not None and op.stage is Stage.WRITE_TAG and op.rid == msg.rid:
                op.write_acks.add(src)
            out = []
        elif isinstance(msg, GoodLA):
            borrowed = filter_by_tag(self.V[src], msg.r)
            self.D[src] = borrowed
            self.borrowed.setdefault(msg.r, {})[src] = borrowed
            out = []
        else:
            raise SimulationError(f"unexpected message {msg!r}")
        return out + self._advance()

    def _on_value(self, j: int, tv: TaggedValue) -> list:
        i = self.node
        new_j = tv not in self.V[j]
        new_i = tv not in self.V[i]
        self.V[j].add(tv)
        self.V[i].add(tv)
        if self._counts is not None and tv.ts.tag <= self.op.r:
            if new_j:
                self._counts[j] += 1
            if new_i and j != i:
                self._counts[i] += 1
        if tv in self.seen:
            return []
        self.seen.add(tv)
        return [Broadcast(Value(tv), f"value:{tv.key()}")]


def acaso_automata(n: int, f: int) -> list:
    return [AcAsoNode(i, n, f) for i in range(1, n + 1)]
