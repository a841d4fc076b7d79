import random
from dataclasses import replace

import pytest

from latsnap.ela import ela_automata
from latsnap.lattice import TaggedValue, Timestamp, view
from latsnap.scenario import execute, failure_chain, randomized
from latsnap.simnet import FixedDelay, run
from latsnap.verify import (History, HistoryTooLarge, IncomparableViews, OperationRecord, brute_force_linearizable,
                            build_linearization, check_acaso_trace, check_la_properties, explain_linearization,
                            history_from_trace, load_trace, round_metrics, validate_linearization)
from oracles import linearizable_by_permutation

a = TaggedValue.of("a", 0, 1)
b = TaggedValue.of("b", 0, 2)


def up(op_id, node, inv, resp, label, tag=1, view_=None):
    v = TaggedValue(label.encode(), Timestamp(tag, node), label)
    return OperationRecord(op_id, "update", node, inv, resp, value=v, view=view_ if view_ is not None else frozenset({v}),
                           tag=tag)


def scan(op_id, node, inv, resp, view_, n=2):
    latest = {}
    for v in view_:
        if v.ts.writer not in latest or latest[v.ts.writer].ts < v.ts:
            latest[v.ts.writer] = v
    result = tuple(latest[j].payload if j in latest else None for j in range(1, n + 1))
    return OperationRecord(op_id, "scan", node, inv, resp, view=frozenset(view_), result=result)


# -- lattice agreement -------------------------------------------------------------------


def test_la_valid_run_has_no_violations():
    inputs = {i: view(TaggedValue.of(f"x{i}", 0, i)) for i in range(1, 4)}
    tr = run(3, 1, ela_automata(inputs, 3, 1), FixedDelay(1000))
    from latsnap.verify import ela_inputs, ela_outputs
    assert check_la_properties(ela_inputs(tr), ela_outputs(tr)) == []


def test_la_mutants_flagged():
    inputs = {1: view(a), 2: view(b)}
    missing_own = check_la_properties(inputs, {1: view(b), 2: view(a, b)})
    assert [v.prop for v in missing_own] == ["downward-validity"]
    incomparable = check_la_properties({1: view(a), 2: view(b)}, {1: view(a), 2: view(b)})
    assert [v.prop for v in incomparable] == ["comparability"]
    extra = check_la_properties({1: view(a)}, {1: view(a, b)})
    assert [v.prop for v in extra] == ["upward-validity"]


# -- linearization witness ---------------------------------------------------------------------


def test_update_then_scan():
    u = up(1, 1, 0, 10, "u")
    s = scan(2, 2, 20, 30, {u.value})
    h = History([u, s], 2)
    lin = build_linearization(h)
    assert [o.op_id for o in lin] == [1, 2]
    assert validate_linearization(lin, h)


def test_equal_view_scans_keep_real_time_order():
    s1 = scan(1, 2, 0, 10, set())
    s2 = scan(2, 1, 20, 30, set())
    h = History([s2, s1], 2)
    assert [o.op_id for o in build_linearization(h)] == [1, 2]


def test_incomparable_views_raise():
    u1, u2 = up(1, 1, 0, 10, "x"), up(2, 2, 0, 10, "y")
    h = History([u1, u2], 2)
    with pytest.raises(IncomparableViews):
        build_linearization(h)


def test_swapped_order_rejected():
    u = up(1, 1, 0, 10, "u")
    s = scan(2, 2, 20, 30, {u.value})
    h = History([u, s], 2)
    assert not validate_linearization([s, u], h)
    assert "real-time" in explain_linearization([s, u], h)


def test_mutated_snapshot_rejected():
    u = up(1, 1, 0, 10, "u")
    s = replace(scan(2, 2, 20, 30, {u.value}), result=(b"zzz", None))
    h = History([u, s], 2)
    assert not validate_linearization([u, s], h)
    assert not brute_force_linearizable(h)


def test_missing_op_rejected():
    u = up(1, 1, 0, 10, "u")
    h = History([u], 1)
    assert not validate_linearization([], h)


# -- brute force oracle ---------------------------------------------------------------------------


def test_empty_history_linearizable():
    assert brute_force_linearizable(History([], 2))


def test_stale_scan_after_update_not_linearizable():
    u = up(1, 1, 0, 10, "u")
    s = scan(2, 2, 20, 30, set())
    assert not brute_force_linearizable(History([u, s], 2))


def test_pending_update_optional():
    u = replace(up(1, 1, 0, None, "u"), view=None)
    seen = scan(2, 2, 20, 30, {u.value})
    unseen = scan(2, 2, 20, 30, set())
    assert brute_force_linearizable(History([u, seen], 2))
    assert brute_force_linearizable(History([u, unseen], 2))


def test_oracle_rejects_oversized():
    ops = [scan(k, 1, 10 * k, 10 * k + 5, set()) for k in range(11)]
    with pytest.raises(HistoryTooLarge):
        brute_force_linearizable(History(ops, 2))


def _as_dicts(h):
    return [{"kind": o.kind, "node": o.node, "inv": o.invoke_time, "resp": o.respond_time,
             "payload": o.value.payload if o.value is not None else None, "result": o.result}
            for o in h.ops if o.kind != "scan" or o.completed]


def test_oracle_agrees_with_permutation_search_on_real_histories():
    for seed in range(40):
        out = execute(randomized("acaso", 3, 1, seed, op_count=5))
        h = history_from_trace(out.trace)
        assert brute_force_linearizable(h) == linearizable_by_permutation(_as_dicts(h), 3) == True


def test_oracle_agrees_with_permutation_search_on_mutants():
    rng = random.Random(3)
    rejected = 0
    for seed in range(40):
        out = execute(randomized("acaso", 3, 1, seed, op_count=5))
        h = history_from_trace(out.trace)
        reads = [i for i, o in enumerate(h.ops) if o.kind == "scan" and o.completed]
        if not reads:
            continue
        i = rng.choice(reads)
        res = list(h.ops[i].result)
        res[rng.randrange(3)] = rng.choice([None, b"v0", b"v1", b"v2", b"bogus"])
        ops = list(h.ops)
        ops[i] = replace(ops[i], result=tuple(res))
        m = History(ops, 3)
        verdict = brute_force_linearizable(m)
        assert verdict == linearizable_by_permutation(_as_dicts(m), 3)
        if not verdict:
            rejected += 1
            try:
                lin = build_linearization(m)
            except IncomparableViews:
                continue
            assert not validate_linearization(lin, m)
    assert rejected > 5


def test_witness_soundness_over_random_corpus():
    for seed in range(60):
        out = execute(randomized("acaso", 3 + seed % 3, 1 + (seed % 3) // 2, seed))
        h = history_from_trace(out.trace)
        lin = build_linearization(h)
        if validate_linearization(lin, h):
            assert brute_force_linearizable(h)


def test_set_model_replay():
    u = up(1, 1, 0, 10, "u")
    q = OperationRecord(2, "query", 2, 20, 30, view=frozenset({u.value}), result=frozenset({b"u"}))
    h = History([u, q], 2)
    assert validate_linearization(build_linearization(h), h, "set")
    assert brute_force_linearizable(h, "set")
    bad = History([u, replace(q, result=frozenset())], 2)
    assert not brute_force_linearizable(bad, "set")


# -- structural checks and metrics ------------------------------------------------------------------


def test_acaso_checks_catch_doctored_history():
    out = execute(randomized("acaso", 3, 1, 5, crash_prob=0))
    h = history_from_trace(out.trace)
    assert check_acaso_trace(out.trace, h) == []
    ups = [o for o in h.ops if o.kind == "update" and o.completed]
    doctored = History([replace(o, view=frozenset()) if o is ups[0] else o for o in h.ops], h.n)
    props = {v.prop for v in check_acaso_trace(out.trace, doctored)}
    assert "self-inclusion" in props


def test_round_metrics_ela_crash_free():
    inputs = {i: view(TaggedValue.of(f"x{i}", 0, i)) for i in range(1, 6)}
    m = round_metrics(run(5, 2, ela_automata(inputs, 5, 2), FixedDelay(1000)))
    assert set(m["decisionRounds"].values()) == {2}
    assert m["k"] == 0 and m["messages"] == 5 * 5 * 4


def test_round_metrics_ela_chain_bound():
    for k, bound in ((0, 3), (1, 5), (4, 7)):
        m = execute(failure_chain("ela", k, 0)).metrics
        assert m["maxDecisionRounds"] <= bound
        assert m["k"] == k


def test_round_metrics_acaso():
    out = execute(randomized("acaso", 3, 1, 2, crash_prob=0))
    m = out.metrics
    assert m["completedOps"] == len(m["roundsPerOp"])
    assert m["amortizedRounds"] == m["totalRounds"] / m["completedOps"]
    assert all(x["rounds"] >= 1 for x in m["roundsPerLatticeOp"])


@pytest.mark.parametrize("protocol", ["ela", "acaso", "tsaso", "uqsm"])
def test_load_trace_round_trip(tmp_path, protocol):
    from latsnap.scenario import check_trace

    out = execute(randomized(protocol, 5, 2, 11))
    path = tmp_path / "t.jsonl"
    out.trace.write(path)
    loaded = load_trace(path)
    assert loaded.status == out.trace.status and loaded.crashed == out.trace.crashed
    assert len(loaded.events) == len(out.trace.events)
    assert history_from_trace(loaded).ops == history_from_trace(out.trace).ops
    assert check_trace(protocol, loaded) == []
