import itertools
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blocklace.core import Blocklace, MissingPredecessors
from blocklace.crdt import (
    delta,
    delta_join,
    delta_merge,
    delta_merge_condition,
    effect,
    orset_query,
    orset_state,
    prepare,
)
from blocklace.faults import Analyzer
from blocklace.payloads import (
    Add,
    Noop,
    Register,
    Remove,
    decode_payload,
    encode_add,
    encode_noop,
    encode_register,
    encode_remove,
)
from blocklace.repelling import PLAIN, NodeState

from builders import blk, key
from crdt_oracles import add_wins, linear_extensions, random_history
from oracles import random_blocklace


def closed_oracle(base_ids, group):
    ids = set(base_ids) | {b.id for b in group}
    return all(p in ids for b in group for p in b.preds)


# -- payload records -----------------------------------------------------------


def test_payload_round_trip():
    i = blk("a").id
    assert decode_payload(encode_noop()) == Noop()
    assert decode_payload(encode_add(b"x")) == Add(b"x")
    assert decode_payload(encode_register(b"n")) == Register(b"n")
    assert decode_payload(encode_remove(b"x", [i])) == Remove(b"x", frozenset({i}))


@pytest.mark.parametrize("raw", [b"", b"\x09", b"\x01\x00", b"\x01\x00\x02x", b"\x00\x00",
                                 b"\x02\x00\x01x\x00\x01\x00"])
def test_bad_payloads_decode_to_none(raw):
    assert decode_payload(raw) is None


# -- op-based view --------------------------------------------------------------


def test_prepare_examples():
    st_ = NodeState()
    g = prepare(encode_add(b"x"), st_, key("a"))
    assert g.is_genesis
    b = prepare(encode_add(b"y"), st_, key("a"))
    assert st_.blocklace.precedes(g.id, b.id)
    foreign = [blk("b", g), blk("c", g)]
    for f in foreign:
        effect(f, st_)
    c = prepare(encode_noop(), st_, key("a"))
    assert c.preds == {f.id for f in foreign} | {b.id}


def test_effect_examples():
    g = blk("a")
    b = blk("b", g)
    st_ = NodeState()
    effect(b, st_)
    assert b.id in st_.buffer
    effect(g, st_)
    assert set(st_.blocklace.ids()) == {g.id, b.id}
    before = (set(st_.blocklace.ids()), list(st_.incorporation_log))
    effect(g, st_)
    assert (set(st_.blocklace.ids()), list(st_.incorporation_log)) == before


# -- delta view ------------------------------------------------------------------


def test_delta_merge_condition_examples():
    g = blk("a")
    b1 = blk("a", g)
    b2 = blk("a", b1)
    assert delta_merge_condition(Blocklace(), delta())
    assert delta_merge_condition(Blocklace([g]), delta([b1]))
    assert not delta_merge_condition(Blocklace(), delta([g, b2]))


def test_delta_merge_requires_condition():
    g = blk("a")
    b1 = blk("a", g)
    b2 = blk("a", b1)
    with pytest.raises(MissingPredecessors) as exc:
        delta_merge(Blocklace(), delta([g, b2]))
    assert exc.value.missing == {b1.id}
    base = Blocklace([g])
    out = delta_merge(base, delta([b2, b1]))
    assert len(out) == 3 and len(base) == 1


POOL = random_blocklace(random.Random(99), 12, n_nodes=3)


@settings(max_examples=100)
@given(*(st.frozensets(st.sampled_from(POOL)) for _ in range(3)))
def test_delta_join_laws(x, y, z):
    assert delta_join(x, frozenset()) == x
    assert delta_join(x, x) == x
    assert delta_join(x, y) == delta_join(y, x)
    assert delta_join(delta_join(x, y), z) == delta_join(x, delta_join(y, z))


@settings(max_examples=100)
@given(st.frozensets(st.sampled_from(POOL)), st.frozensets(st.sampled_from(POOL)))
def test_condition_matches_closedness(base, group):
    closed_base = Blocklace(POOL).closure([b.id for b in base])
    assert delta_merge_condition(closed_base, group) == closed_oracle(closed_base.ids(), group)
    if delta_merge_condition(closed_base, group):
        merged = delta_merge(closed_base, group)
        assert all(p in merged for b in merged for p in b.preds)


def test_state_lattice_closed_under_union():
    bl = Blocklace(POOL)
    rng = random.Random(3)
    for _ in range(50):
        a = bl.closure(b.id for b in rng.sample(POOL, 3))
        b = bl.closure(b.id for b in rng.sample(POOL, 3))
        assert delta_merge_condition(a, frozenset(b))


def test_causal_delivery_of_delta_groups():
    rng = random.Random(12)
    for _ in range(100):
        blocks = random_blocklace(rng, rng.randint(1, 8), n_nodes=3)
        order = blocks[:]
        rng.shuffle(order)
        groups = []
        while order:
            k = rng.randint(1, len(order))
            groups.append(frozenset(order[:k]))
            order = order[k:]
        state = Blocklace()
        waiting = frozenset()
        for g in groups:
            waiting = delta_join(waiting, g)
            if delta_merge_condition(state, waiting):
                state = delta_merge(state, waiting)
                waiting = frozenset()
            assert all(p in state for b in state for p in b.preds)
        assert not waiting and set(state.ids()) == {b.id for b in blocks}


# -- OR-Set -------------------------------------------------------------------------


def orset_of(blocks, plain=False):
    st_ = NodeState(mode=PLAIN) if plain else NodeState()
    for b in blocks:
        effect(b, st_)
    return orset_query(st_.polog())


def test_orset_examples():
    a = blk("a", payload=encode_add(b"x"))
    assert orset_of([a]) == {b"x"}
    r = blk("a", a, payload=encode_remove(b"x", [a.id]))
    assert orset_of([a, r]) == frozenset()


def test_add_wins_over_concurrent_remove():
    first = blk("a", payload=encode_add(b"x"))
    rm = blk("b", first, payload=encode_remove(b"x", [first.id]))
    again = blk("c", first, payload=encode_add(b"x"))
    results = {orset_of(order) for order in linear_extensions([first, rm, again])}
    assert results == {frozenset({b"x"})}
    assert len(list(linear_extensions([first, rm, again]))) == 2


def test_remove_of_unseen_add_is_ignored():
    a = blk("a", payload=encode_add(b"x"))
    # the remove claims to observe a but does not point at it
    r = blk("b", payload=encode_remove(b"x", [a.id]))
    st_ = NodeState()
    effect(a, st_)
    effect(r, st_)
    assert orset_state(st_.polog()) == {b"x": frozenset({a.id})}


def test_undecodable_payloads_are_noops():
    a = blk("a", payload=encode_add(b"x"))
    junk = blk("b", a, payload=b"\xff\xfe")
    assert orset_of([a, junk]) == {b"x"}


def test_add_wins_against_brute_force():
    rng = random.Random(31)
    for _ in range(80):
        blocks, spec = random_history(rng, rng.randint(1, 5))
        expect = add_wins(spec, set(spec))
        for order in linear_extensions(blocks):
            st_ = NodeState()
            present = set()
            for b in order:
                effect(b, st_)
                present.add(b.id)
                assert orset_query(st_.polog()) == add_wins(spec, present)
            assert orset_query(st_.polog()) == expect


def test_strong_convergence():
    rng = random.Random(14)
    for _ in range(30):
        blocks = random_blocklace(rng, 10, n_nodes=3)
        a = Blocklace(blocks)
        b = Blocklace(sorted(blocks, key=lambda x: x.id))
        la, lb = Analyzer(a).polog(), Analyzer(b).polog()
        assert la == lb
        assert orset_query(la) == orset_query(lb)


def test_effect_and_delta_replicas_agree():
    rng = random.Random(40)
    for _ in range(60):
        blocks = random_blocklace(rng, rng.randint(1, 8), n_nodes=3)
        op_state = NodeState(mode=PLAIN)
        for b in sorted(blocks, key=lambda _: rng.random()):
            effect(b, op_state)
        full = Blocklace(blocks)
        state = Blocklace()
        for b in sorted(blocks, key=lambda _: rng.random()):
            # ship each block together with its closure
            state = delta_merge(state, frozenset(full.closure([b.id])))
        assert set(op_state.blocklace.ids()) == set(state.ids())
        assert op_state.polog() == Analyzer(state, repelling=False).polog()


def test_every_permutation_of_a_small_schedule_converges():
    rng = random.Random(2)
    blocks = random_blocklace(rng, 5, n_nodes=2)
    finals = set()
    for perm in itertools.permutations(blocks):
        st_ = NodeState(mode=PLAIN)
        for b in perm:
            effect(b, st_)
        finals.add(frozenset(st_.polog().ids()))
    assert len(finals) == 1
