"""Linearizable update-query state machine over AC-ASO.

Updates must commute.  An update command runs an AC-ASO update; a query
runs a scan that returns its raw view (the set of update commands it
observed) and folds those commands into a reply.  The built-in machine is
a grow-only set: each update adds its payload and a query returns the set.
"""

from __future__ import annotations

from typing import Any, Callable, Iterable

from .acaso import AcAsoNode, update_op
from .lattice import TaggedValue


def grow_only_set(commands: Iterable[TaggedValue]) -> frozenset:
    return frozenset(c.payload for c in commands)


def query_op() -> dict:
    return {"op": "query"}


def add_op(label: str) -> dict:
    return update_op(label)


class UqNode(AcAsoNode):
    def __init__(self, node: int, n: int, f: int, apply: Callable[[Iterable[TaggedValue]], Any] = grow_only_set):
        super().__init__(node, n, f)
        self.apply = apply

    def _result(self, op, view, record):
        if op.kind == "update":
            return "ok"
        if op.kind != "query":
            return super()._result(op, view, record)
        reply = self.apply(view)
        record["reply"] = reply
        return reply


def uq_automata(n: int, f: int) -> list:
    return [UqNode(i, n, f) for i in range(1, n + 1)]
