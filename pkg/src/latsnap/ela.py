"""Early-stopping lattice agreement.

Every node floods the values it knows and decides the first time at least
``n - f`` entries of its view vector equal its own entry (an equivalence
quorum).  Handlers keep relaying after the decision.

The automaton is generic in the lattice: values are arbitrary hashable
lattice elements and the decision is ``join`` over the values in the node's
own entry.  The default is the set-union lattice over views.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, ClassVar, Optional

from .lattice import eq_predicate, join_all, view_key
from .simnet import Automaton, Broadcast, Decide, Note, SimulationError


@dataclass(frozen=True)
class ElaValue:
    KIND: ClassVar[str] = "value"
    value: Any

    def carried(self):
        return (self.value,)


class ElaNode(Automaton):
    """One ELA participant.

    ``x=None`` makes a pure relay: it floods values it hears about but has
    no input and never decides until :meth:`start` is called with one.
    """

    def __init__(self, node: int, n: int, f: int, x: Any = None,
                 join: Callable = join_all, key: Callable[[Any], str] = view_key):
        super().__init__(node, n, f)
        self.x = x
        self.join = join
        self.key = key
        self.V: dict = {j: set() for j in self.nodes}
        self.echoed: set = set()
        self.started = False
        self.decided = False
        self.y: Optional[Any] = None
        self.v_star: Optional[dict] = None

    def on_start(self) -> list:
        return self.start() if self.x is not None else []

    def start(self, x: Any = None) -> list:
        if self.started:
            raise SimulationError(f"ELA already started at node {self.node}")
        if x is not None:
            self.x = x
        if self.x is None:
            raise SimulationError("ELA needs an input to start")
        self.started = True
        x = self.x
        self.V[self.node].add(x)
        out = [Note("input", {"value": x})]
        if x not in self.echoed:
            self.echoed.add(x)
            out.append(Broadcast(ElaValue(x), label=f"value:{self.key(x)}"))
        return out + self.try_decide()

    def on_message(self, src: int, payload: Any) -> list:
        if not isinstance(payload, ElaValue):
            raise SimulationError(f"unexpected ELA message {payload!r}")
        return self.on_value(payload.value, src)

    def on_value(self, v: Any, j: int) -> list:
        self.V[j].add(v)
        self.V[self.node].add(v)
        out = []
        if v not in self.echoed:
            self.echoed.add(v)
            out.append(Broadcast(ElaValue(v), label=f"value:{self.key(v)}"))
        return out + self.try_decide()

    def try_decide(self) -> list:
        if self.decided or not self.started:
            return []
        snapshot = {j: frozenset(s) for j, s in self.V.items()}
        quorum = eq_predicate(snapshot, self.node, self.n, self.f)
        if not quorum:
            return []
        self.v_star = snapshot
        self.y = self.join(snapshot[self.node])
        self.decided = True
        return [Decide(self.y, tuple(sorted(quorum)))]


def ela_automata(inputs: dict, n: int, f: int) -> list:
    """One ELA node per id in ``1..n``; ``inputs[i]`` is node ``i``'s input view."""
    return [ElaNode(i, n, f, inputs[i]) for i in range(1, n + 1)]
