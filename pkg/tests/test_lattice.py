import pytest
from hypothesis import given, strategies as st

from latsnap.lattice import (EMPTY, ConfigError, TaggedValue, Timestamp, canonical, check_fault_bound,
                             comparable, eq_predicate, filter_by_tag, is_chain, join, join_all, leq,
                             max_tag, view, view_from_json, view_key, view_to_json)

x = TaggedValue.of("x", 1, 1)
y = TaggedValue.of("y", 1, 2)
a1 = TaggedValue.of("a", 1, 1)
b2 = TaggedValue.of("b", 2, 1)


def test_timestamp_order():
    assert Timestamp(1, 2) < Timestamp(2, 1)
    assert Timestamp(2, 1) < Timestamp(2, 3)
    assert not Timestamp(2, 3) < Timestamp(2, 3)


def test_identity_ignores_label():
    assert TaggedValue(b"p", Timestamp(1, 1), "one") == TaggedValue(b"p", Timestamp(1, 1), "two")
    assert len({TaggedValue(b"p", Timestamp(1, 1)), TaggedValue(b"p", Timestamp(1, 2))}) == 2


def test_join_examples():
    assert join(view(x), view(y)) == view(x, y)
    A = view(x, y)
    assert join(A, A) == A
    assert join(EMPTY, view(x)) == view(x)


def test_comparable_examples():
    assert comparable(view(x), view(x, y))
    assert not comparable(view(x), view(y))
    assert comparable(view(x, y), view(x, y))


def test_eq_examples():
    assert eq_predicate({1: view(x), 2: view(x), 3: EMPTY}, 1, 3, 1) == {1, 2}
    assert eq_predicate({1: view(x), 2: view(y), 3: EMPTY}, 1, 3, 1) == EMPTY


def test_eq_five_nodes():
    # expected quorum derived by subset enumeration (tests/oracles.py)
    V = {1: view(x), 2: view(x), 3: view(x), 4: EMPTY, 5: EMPTY}
    assert eq_predicate(V, 2, 5, 2) == {1, 2, 3}


def test_eq_rejects_model_violations():
    V = {1: EMPTY, 2: EMPTY, 3: EMPTY, 4: EMPTY}
    with pytest.raises(ConfigError):
        eq_predicate(V, 1, 4, 2)
    with pytest.raises(ValueError):
        eq_predicate(V, 5, 4, 1)


@pytest.mark.parametrize("n,f", [(0, 0), (2, 1), (4, 2), (5, -1)])
def test_fault_bound(n, f):
    with pytest.raises(ConfigError):
        check_fault_bound(n, f)


def test_filter_examples():
    V = view(a1, b2)
    assert filter_by_tag(V, 1) == view(a1)
    assert filter_by_tag(V, 0) == EMPTY
    assert filter_by_tag(V, max_tag(V)) == V
    with pytest.raises(ValueError):
        filter_by_tag(V, -1)


def test_json_round_trip_and_canonical_order():
    V = view(b2, a1, y)
    assert [tv.ts for tv in canonical(V)] == [Timestamp(1, 1), Timestamp(1, 2), Timestamp(2, 1)]
    assert view_from_json(view_to_json(V)) == V
    assert view_key(V) == "a,y,b"


values = st.builds(lambda p, t, w: TaggedValue(bytes([p]), Timestamp(t, w)),
                   st.integers(0, 3), st.integers(0, 3), st.integers(1, 3))
views = st.frozensets(values, max_size=6)


@given(views, views, views)
def test_join_laws(A, B, C):
    assert join(A, B) == join(B, A)
    assert join(join(A, B), C) == join(A, join(B, C))
    assert join(A, A) == A
    assert leq(A, join(A, B)) and leq(B, join(A, B))


@given(views, st.integers(0, 4), st.integers(0, 4))
def test_filter_composes_and_is_monotone(V, s, t):
    assert filter_by_tag(filter_by_tag(V, s), t) == filter_by_tag(V, min(s, t))
    if s <= t:
        assert filter_by_tag(V, s) <= filter_by_tag(V, t)
    assert all(v.ts.tag <= s for v in filter_by_tag(V, s))


@given(st.lists(views, min_size=1, max_size=5))
def test_chain_detection(vs):
    pairwise = all(comparable(a, b) for a in vs for b in vs)
    assert is_chain(vs) == pairwise
    assert join_all(vs) == frozenset().union(*vs)


@given(st.integers(3, 9).flatmap(lambda n: st.tuples(
    st.just(n), st.lists(st.sampled_from([EMPTY, view(x), view(y), view(x, y)]), min_size=n, max_size=n),
    st.integers(1, n))))
def test_eq_matches_subset_oracle_and_is_monotone_in_f(case):
    from oracles import eq_by_subsets

    n, entries, i = case
    V = {j + 1: v for j, v in enumerate(entries)}
    previous = EMPTY
    for f in range(0, (n - 1) // 2 + 1):
        q = eq_predicate(V, i, n, f)
        assert set(q) == eq_by_subsets(V, i, n, f)
        assert previous <= q or not previous
        if previous:
            assert q == previous
        previous = q
