import pytest

from latsnap.acaso import scan_op, update_op
from latsnap.ela import ElaNode
from latsnap.lattice import TaggedValue, Timestamp
from latsnap.scenario import contention, execute
from latsnap.simnet import ClientOp, CrashSpec, FixedDelay, UniformDelay, run
from latsnap.tsaso import (TsAsoNode, WriteValue, vec_join, vec_join_all, vec_key, vec_leq, vec_max,
                           tsaso_automata)
from latsnap.verify import brute_force_linearizable, check_snapshot_views, history_from_trace

D = 1000


def tv(label, tag, writer):
    return TaggedValue(label.encode(), Timestamp(tag, writer), label)


def test_vector_lattice():
    a = (tv("a", 1, 1), None)
    b = (None, tv("b", 2, 2))
    c = (tv("c", 2, 1), None)
    assert vec_join(a, b) == (tv("a", 1, 1), tv("b", 2, 2))
    assert vec_join(a, c) == c and vec_leq(a, c) and not vec_leq(c, a)
    assert vec_max(None, None) is None
    assert vec_join_all([a, b, c]) == (tv("c", 2, 1), tv("b", 2, 2))
    assert vec_key(a) == "a@1|-"
    with pytest.raises(ValueError):
        vec_join_all([])


def test_write_value_keeps_max_timestamp():
    node = TsAsoNode(1, 3, 1)
    node.on_message(2, WriteValue(1, tv("new", 3, 2)))
    node.on_message(2, WriteValue(2, tv("old", 1, 2)))
    assert node.snap == (None, tv("new", 3, 2), None)


def _la_run(inputs, n=3, f=1, seed=0):
    nodes = [ElaNode(i, n, f, inputs.get(i), join=vec_join_all, key=vec_key) for i in range(1, n + 1)]
    tr = run(n, f, nodes, UniformDelay(1, D, seed))
    return {e["node"]: e["value"] for e in tr.of_kind("decide")}


def test_la_instance_single_participant_returns_input():
    x = (tv("a", 1, 1), None, None)
    assert _la_run({1: x}) == {1: x}


@pytest.mark.parametrize("seed", range(15))
def test_la_instance_two_participants(seed):
    x = (tv("a", 1, 1), None, None)
    y = (None, tv("b", 1, 2), None)
    out = _la_run({1: x, 2: y}, seed=seed)
    top = vec_join(x, y)
    assert vec_leq(x, out[1]) and vec_leq(y, out[2])
    assert all(vec_leq(v, top) for v in out.values())
    assert vec_leq(out[1], out[2]) or vec_leq(out[2], out[1])
    assert set(out.values()) <= {x, y, top}


def test_first_update_ts_one_and_counter_increments():
    script = [ClientOp(1, update_op("a")), ClientOp(1, update_op("b"))]
    tr = run(3, 1, tsaso_automata(3, 1), FixedDelay(D), client_script=script)
    assert [e["value"].ts for e in tr.notes("assign")] == [Timestamp(1, 1), Timestamp(2, 1)]


def test_uncontended_scan_returns_in_phase_one():
    tr = run(3, 1, tsaso_automata(3, 1), FixedDelay(D), client_script=[ClientOp(2, scan_op())])
    rec = tr.of_kind("respond")[0]["record"]
    assert rec["phase"] == 1 and rec["direct"]
    assert tr.of_kind("respond")[0]["result"] == (None, None, None)


def test_scan_after_update_dominates_it():
    script = [ClientOp(3, update_op("v")), ClientOp(1, scan_op(), at=30 * D)]
    tr = run(5, 2, tsaso_automata(5, 2), UniformDelay(1, D, 8), client_script=script)
    scan = [e for e in tr.of_kind("respond") if e["node"] == 1][0]
    assert scan["record"]["view"][2].ts >= Timestamp(1, 3)
    assert scan["result"][2] == b"v"


def test_crash_after_value_write_is_optional_in_linearization():
    # node 1 crashes as its scan starts: the written value may or may not surface
    crashes = [CrashSpec(1, during_broadcast="readTag", after_sends=0)]
    script = [ClientOp(1, update_op("lost")), ClientOp(2, scan_op(), at=10 * D)]
    tr = run(3, 1, tsaso_automata(3, 1), FixedDelay(D), crashes, script)
    h = history_from_trace(tr)
    assert [o.completed for o in h.ops] == [False, True]
    assert h.ops[1].result == (b"lost", None, None)
    assert brute_force_linearizable(h)


def test_pinned_phase_two_return():
    out = execute(contention("tsaso", 84, 4), oracle=False)
    assert out.ok
    phases = {(e["record"]["direct"], e["record"]["phase"]) for e in out.trace.of_kind("respond")}
    assert (True, 2) in phases


def test_pinned_wait_for_published_view():
    out = execute(contention("tsaso", 115, 8), oracle=False)
    assert out.ok
    waited = [e for e in out.trace.of_kind("respond") if not e["record"]["direct"]]
    assert len(waited) == 1 and waited[0]["record"]["phase"] == 2
    node, op_id = waited[0]["node"], waited[0]["op_id"]
    ends = [e for e in out.trace.notes("lattice_end") if e["node"] == node and e["op_id"] == op_id]
    assert [e["good"] for e in ends] == [False, False]
    assert check_snapshot_views(history_from_trace(out.trace)) == []
