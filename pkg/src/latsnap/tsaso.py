"""Atomic snapshot from a sequence of tagged lattice agreement instances (TS-ASO).

A scan runs up to two phases.  Each phase reads the largest tag from a
quorum, writes its chosen tag, collects and re-writes the join of a quorum
of local states, runs lattice agreement instance ``r`` on that state and
reads the tag again; if nothing newer appeared the output is published
with ``writeView`` and returned.  A second failed phase waits until some
node publishes a view for its tag.  An update writes its value to a quorum
and then runs a scan.

Lattice agreement instances are ELA automata over the vector lattice
(entrywise max by timestamp) with every message namespaced by the tag.
Every node relays the messages of every instance, whether or not it
proposed to it.

With ELA plugged in, worst-case rounds grow linearly in ``n``: nodes may
join one instance at very different times.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Any, ClassVar, Mapping, Optional

from .lattice import TaggedValue, Timestamp
from .ela import ElaNode
from .simnet import Automaton, Broadcast, Decide, Note, Respond, Send, SimulationError


def vec_max(a: Optional[TaggedValue], b: Optional[TaggedValue]) -> Optional[TaggedValue]:
    if a is None:
        return b
    if b is None:
        return a
    return a if a.ts >= b.ts else b


def vec_join(a: tuple, b: tuple) -> tuple:
    return tuple(vec_max(x, y) for x, y in zip(a, b))


def vec_join_all(vectors) -> tuple:
    vectors = list(vectors)
    if not vectors:
        raise ValueError("join of no vectors")
    out = vectors[0]
    for v in vectors[1:]:
        out = vec_join(out, v)
    return out


def vec_leq(a: tuple, b: tuple) -> bool:
    return vec_join(a, b) == b


def vec_key(v: tuple) -> str:
    return "|".join("-" if x is None else f"{x.key()}@{x.ts.tag}" for x in v)


# -- wire messages ---------------------------------------------------------------

@dataclass(frozen=True)
class ReadTag:
    KIND: ClassVar[str] = "readTag"
    rid: int


@dataclass(frozen=True)
class ReadTagAck:
    KIND: ClassVar[str] = "readTagAck"
    rid: int
    tag: int


@dataclass(frozen=True)
class WriteTag:
    KIND: ClassVar[str] = "writeTag"
    rid: int
    tag: int


@dataclass(frozen=True)
class WriteTagAck:
    KIND: ClassVar[str] = "writeTagAck"
    rid: int


@dataclass(frozen=True)
class WriteValue:
    KIND: ClassVar[str] = "writeValue"
    rid: int
    tv: TaggedValue

    def carried(self):
        return (self.tv,)


@dataclass(frozen=True)
class ValueAck:
    KIND: ClassVar[str] = "valueAck"
    rid: int


@dataclass(frozen=True)
class ReadState:
    KIND: ClassVar[str] = "readState"
    rid: int


@dataclass(frozen=True)
class ReadStateAck:
    KIND: ClassVar[str] = "readStateAck"
    rid: int
    state: tuple


@dataclass(frozen=True)
class WriteState:
    KIND: ClassVar[str] = "writeState"
    rid: int
    state: tuple


@dataclass(frozen=True)
class WriteStateAck:
    KIND: ClassVar[str] = "writeStateAck"
    rid: int


@dataclass(frozen=True)
class WriteView:
    KIND: ClassVar[str] = "writeView"
    rid: int
    view: tuple
    r: int


@dataclass(frozen=True)
class ViewAck:
    KIND: ClassVar[str] = "viewAck"
    rid: int


@dataclass(frozen=True)
class LaMsg:
    KIND: ClassVar[str] = "la"
    r: int
    inner: Any


_ACKS = (ReadTagAck, WriteTagAck, ValueAck, ReadStateAck, WriteStateAck, ViewAck)


class Stage(enum.Enum):
    WRITE_VALUE = "writeValue"
    READ_TAG = "readTag"
    WRITE_TAG = "writeTag"
    READ_STATE = "readState"
    WRITE_STATE = "writeState"
    LATTICE = "lattice"
    REREAD_TAG = "rereadTag"
    WRITE_VIEW = "writeView"
    WAIT_VIEW = "waitView"


@dataclass
class _Op:
    op_id: int
    kind: str
    stage: Stage
    value: Optional[TaggedValue] = None
    phase: int = 1
    rid: int = 0
    acks: dict = field(default_factory=dict)
    input: Optional[tuple] = None
    output: Optional[tuple] = None


class TsAsoNode(Automaton):
    def __init__(self, node: int, n: int, f: int):
        super().__init__(node, n, f)
        self.snap: tuple = (None,) * n
        self.views: dict = {}  # tag -> vector
        self.r = 0
        self.max_tag = 0
        self.ts = 0
        self.la: dict = {}  # tag -> ElaNode
        self.op: Optional[_Op] = None
        self._rid = 0

    # -- lattice agreement instances ------------------------------------------------

    def instance(self, r: int) -> ElaNode:
        inst = self.la.get(r)
        if inst is None:
            inst = ElaNode(self.node, self.n, self.f, None, join=vec_join_all, key=vec_key)
            self.la[r] = inst
        return inst

    def _wrap(self, r: int, effects: list) -> list:
        out = []
        for eff in effects:
            if isinstance(eff, Broadcast):
                out.append(Broadcast(LaMsg(r, eff.payload), f"la{r}:{eff.label}"))
            elif isinstance(eff, Decide):
                out.append(Note("la_decide", {"tag": r, "value": eff.value}))
            elif isinstance(eff, Note):
                out.append(Note("la_" + eff.what, {"tag": r, **eff.data}))
            else:
                raise SimulationError(f"unexpected lattice effect {eff!r}")
        return out

    # -- client side --------------------------------------------------------------

    def on_invoke(self, op_id: int, op: Mapping) -> list:
        if self.op is not None:
            raise SimulationError(f"node {self.node} already runs op {self.op.op_id}")
        kind = op["op"]
        if kind == "update":
            self.ts += 1
            tv = TaggedValue(op["payload"], Timestamp(self.ts, self.node), op.get("label", ""))
            self.op = _Op(op_id, "update", Stage.WRITE_VALUE, value=tv)
            out = [Note("assign", {"op_id": op_id, "value": tv})]
            out += self._request(Stage.WRITE_VALUE, lambda rid: WriteValue(rid, tv), f"value:{tv.key()}")
        elif kind == "scan":
            self.op = _Op(op_id, "scan", Stage.READ_TAG)
            out = self._request(Stage.READ_TAG, ReadTag, "readTag")
        else:
            raise SimulationError(f"unknown operation {kind!r}")
        return out + self._advance()

    def _request(self, stage: Stage, make, label: str) -> list:
        op = self.op
        self._rid += 1
        op.rid = self._rid
        op.stage = stage
        op.acks = {}
        return [Broadcast(make(op.rid), label)]

    def _step(self) -> Optional[list]:
        op = self.op
        st = op.stage
        if st is Stage.LATTICE:
            inst = self.la[self.r]
            if not inst.decided:
                return None
            op.output = inst.y
            return self._request(Stage.REREAD_TAG, ReadTag, "readTag")
        if st is Stage.WAIT_VIEW:
            if self.r not in self.views:
                return None
            return self._finish(self.views[self.r], borrowed=True)
        if len(op.acks) < self.quorum:
            return None
        if st is Stage.WRITE_VALUE:
            return self._request(Stage.READ_TAG, ReadTag, "readTag")
        if st is Stage.READ_TAG:
            self.max_tag = max(self.max_tag, max(op.acks.values()))
            self.r = max(self.max_tag, self.r + 1)
            r = self.r
            return self._request(Stage.WRITE_TAG, lambda rid: WriteTag(rid, r), "writeTag")
        if st is Stage.WRITE_TAG:
            return self._request(Stage.READ_STATE, ReadState, "readState")
        if st is Stage.READ_STATE:
            op.input = vec_join_all(op.acks[j] for j in sorted(op.acks))
            state = op.input
            return self._request(Stage.WRITE_STATE, lambda rid: WriteState(rid, state), "writeState")
        if st is Stage.WRITE_STATE:
            op.stage = Stage.LATTICE
            r = self.r
            return [Note("lattice_start", {"op_id": op.op_id, "tag": r, "phase": op.phase})] + \
                self._wrap(r, self.instance(r).start(op.input))
        if st is Stage.REREAD_TAG:
            self.max_tag = max(self.max_tag, max(op.acks.values()))
            r = self.r
            out = [Note("lattice_end", {"op_id": op.op_id, "tag": r, "phase": op.phase,
                                        "good": self.max_tag <= r, "view": op.output, "view_kind": "vector"})]
            if self.max_tag <= r:
                self.views[r] = op.output
                output = op.output
                return out + self._request(Stage.WRITE_VIEW, lambda rid: WriteView(rid, output, r), "writeView")
            if op.phase == 2:
                op.stage = Stage.WAIT_VIEW
                return out
            op.phase = 2
            return out + self._request(Stage.READ_TAG, ReadTag, "readTag")
        if st is Stage.WRITE_VIEW:
            return self._finish(self.views[self.r], borrowed=False)
        raise SimulationError(f"unhandled stage {st}")

    def _finish(self, view: tuple, borrowed: bool) -> list:
        op = self.op
        snap = tuple(None if tv is None else tv.payload for tv in view)
        record = {"kind": op.kind, "value": op.value, "view": view, "view_kind": "vector", "tag": self.r,
                  "direct": not borrowed, "phase": op.phase}
        if op.kind == "scan":
            record["snap"] = snap
        self.op = None
        return [Respond(op.op_id, "ack" if op.kind == "update" else snap, record)]

    def _advance(self) -> list:
        out: list = []
        while self.op is not None:
            step = self._step()
            if step is None:
                break
            out += step
        return out

    # -- handlers ---------------------------------------------------------------------

    def on_message(self, src: int, msg: Any) -> list:
        if isinstance(msg, _ACKS):
            op = self.op
            if op is not None and op.rid == msg.rid:
                if isinstance(msg, ReadTagAck):
                    op.acks[src] = msg.tag
                elif isinstance(msg, ReadStateAck):
                    op.acks[src] = msg.state
                else:
                    op.acks[src] = True
            out = []
        elif isinstance(msg, LaMsg):
            out = self._wrap(msg.r, self.instance(msg.r).on_message(src, msg.inner))
        elif isinstance(msg, WriteValue):
            k = src - 1
            self.snap = self.snap[:k] + (vec_max(self.snap[k], msg.tv),) + self.snap[k + 1:]
            out = [Send(src, ValueAck(msg.rid))]
        elif isinstance(msg, WriteTag):
            self.max_tag = max(self.max_tag, msg.tag)
            out = [Send(src, WriteTagAck(msg.rid))]
        elif isinstance(msg, ReadTag):
            out = [Send(src, ReadTagAck(msg.rid, self.max_tag))]
        elif isinstance(msg, ReadState):
            out = [Send(src, ReadStateAck(msg.rid, self.snap))]
        elif isinstance(msg, WriteState):
            self.snap = vec_join(self.snap, msg.state)
            out = [Send(src, WriteStateAck(msg.rid))]
        elif isinstance(msg, WriteView):
            cur = self.views.get(msg.r)
            self.views[msg.r] = msg.view if cur is None else vec_join(cur, msg.view)
            out = [Send(src, ViewAck(msg.rid))]
        else:
            raise SimulationError(f"unexpected message {msg!r}")
        return out + self._advance()


def tsaso_automata(n: int, f: int) -> list:
    return [TsAsoNode(i, n, f) for i in range(1, n + 1)]
