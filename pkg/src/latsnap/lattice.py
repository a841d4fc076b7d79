"""Set-union join semilattice over tagged values.

A view is a ``frozenset`` of :class:`TaggedValue`; join is union and the
partial order is inclusion.  A view vector is a mapping ``node -> view``
indexed ``1..n``.
"""

from __future__ import annotations

import base64
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple

EMPTY: frozenset = frozenset()


class ConfigError(ValueError):
    """Raised for configurations outside the crash-fault model."""


def check_fault_bound(n: int, f: int) -> None:
    if n < 1:
        raise ConfigError(f"need at least one node, got n={n}")
    if f < 0 or 2 * f >= n:
        raise ConfigError(f"fault bound must satisfy 0 <= f < n/2, got n={n}, f={f}")


class Timestamp(NamedTuple):
    """``(tag, writer)``; tuple comparison gives the lexicographic order."""

    tag: int
    writer: int


@dataclass(frozen=True)
class TaggedValue:
    """A written payload with its timestamp.

    Identity is ``(payload, ts)``; the label only makes traces readable.
    """

    payload: bytes
    ts: Timestamp
    label: str = field(default="", compare=False)

    @classmethod
    def of(cls, label: str, tag: int = 0, writer: int = 0) -> "TaggedValue":
        return cls(label.encode(), Timestamp(tag, writer), label)

    def key(self) -> str:
        return self.label or self.payload.hex()

    def sort_key(self):
        return (self.ts.tag, self.ts.writer, self.payload)

    def to_json(self) -> dict:
        return {
            "payload": base64.b64encode(self.payload).decode("ascii"),
            "label": self.label,
            "tag": self.ts.tag,
            "writer": self.ts.writer,
        }

    @classmethod
    def from_json(cls, d: Mapping) -> "TaggedValue":
        return cls(base64.b64decode(d["payload"]), Timestamp(int(d["tag"]), int(d["writer"])), d.get("label", ""))

    def __repr__(self) -> str:
        return f"<{self.key()}@{self.ts.tag}.{self.ts.writer}>"


def view(*items: TaggedValue) -> frozenset:
    return frozenset(items)


def join(a: frozenset, b: frozenset) -> frozenset:
    return a | b


def join_all(views: Iterable[frozenset]) -> frozenset:
    out: frozenset = EMPTY
    for v in views:
        out = out | v
    return out


def leq(a: frozenset, b: frozenset) -> bool:
    return a <= b


def comparable(a: frozenset, b: frozenset) -> bool:
    return a <= b or b <= a


def is_chain(views: Iterable[frozenset]) -> bool:
    """True iff the views are pairwise comparable."""
    ordered = sorted(set(views), key=len)
    return all(x <= y for x, y in zip(ordered, ordered[1:]))


def filter_by_tag(v: Iterable[TaggedValue], tag: int) -> frozenset:
    """Members of ``v`` whose timestamp tag is at most ``tag``."""
    if tag < 0:
        raise ValueError(f"tag must be non-negative, got {tag}")
    return frozenset(x for x in v if x.ts.tag <= tag)


def max_tag(v: Iterable[TaggedValue]) -> int:
    return max((x.ts.tag for x in v), default=0)


def canonical(v: Iterable[TaggedValue]) -> list:
    """Members ordered by timestamp, then payload bytes."""
    return sorted(v, key=TaggedValue.sort_key)


def view_key(v: Iterable[TaggedValue]) -> str:
    return ",".join(x.key() for x in canonical(v))


def view_to_json(v: Iterable[TaggedValue]) -> list:
    return [x.to_json() for x in canonical(v)]


def view_from_json(items: Iterable[Mapping]) -> frozenset:
    return frozenset(TaggedValue.from_json(d) for d in items)


def eq_predicate(V: Mapping[int, frozenset], i: int, n: int, f: int) -> frozenset:
    """Equivalence quorum of ``V`` at node ``i``.

    Returns every index ``j`` with ``V[j] == V[i]`` when there are at least
    ``n - f`` of them, otherwise the empty set.
    """
    check_fault_bound(n, f)
    if not 1 <= i <= n:
        raise ValueError(f"node id {i} outside 1..{n}")
    mine = V[i]
    quorum = frozenset(j for j in range(1, n + 1) if V[j] == mine)
    return quorum if len(quorum) >= n - f else EMPTY
