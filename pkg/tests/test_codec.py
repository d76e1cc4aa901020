import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blocklace.codec import (
    BlockId,
    EncodingError,
    check_id,
    content_hash,
    decode_block_id,
    decode_content,
    encode_content,
    keygen,
    make_id,
)
from blocklace.core import Block

from builders import blk, key


def ids(n, tag="x"):
    k = key(tag)
    return [make_id(content_hash(bytes([j])), k) for j in range(n)]


def test_keygen_deterministic():
    assert keygen(b"\x00") == keygen(b"\x00")
    assert keygen(b"\x00")[0] != keygen(b"\x01")[0]


def test_keygen_empty_seed():
    node, k = keygen(b"")
    h = content_hash(b"hello")
    assert check_id(make_id(h, k), h)
    assert len(node.public_key) == 32


def test_private_key_repr_redacted():
    _, k = keygen("secret")
    assert k.secret_key.hex() not in repr(k)
    assert "redacted" in repr(k)


def test_genesis_content_is_stable():
    assert encode_content(b"", []) == b"\x00" * 8


def test_pred_order_irrelevant():
    i1, i2 = ids(2)
    assert encode_content(b"a", [i1, i2]) == encode_content(b"a", [i2, i1])


def test_pred_set_changes_bytes():
    i1, i2 = ids(2)
    assert encode_content(b"a", [i1]) != encode_content(b"a", [i1, i2])


def test_duplicate_pred_rejected():
    (i1,) = ids(1)
    with pytest.raises(EncodingError):
        encode_content(b"a", [i1, i1])


def test_content_round_trip_and_canonical_order():
    i1, i2 = sorted(ids(2))
    enc = encode_content(b"pay", [i2, i1])
    payload, preds, pos = decode_content(enc)
    assert (payload, preds, pos) == (b"pay", (i1, i2), len(enc))
    # swap the two encoded ids by hand: not canonical
    a, b = i1.to_bytes(), i2.to_bytes()
    swapped = enc.replace(a + b, b + a)
    with pytest.raises(EncodingError):
        decode_content(swapped)


def test_truncated_input():
    with pytest.raises(EncodingError):
        decode_block_id(b"\x00\x40abc")


def test_sign_verify_round_trip():
    _, k0 = keygen(b"\x00")
    h = content_hash(encode_content(b"", []))
    bid = make_id(h, k0)
    assert bid.creator == k0.node_id
    assert check_id(bid, h)


def test_two_keys_give_distinct_ids():
    _, k0 = keygen(b"\x00")
    _, k1 = keygen(b"\x01")
    h = content_hash(b"same")
    assert make_id(h, k0) != make_id(h, k1)


def test_signatures_are_deterministic():
    _, k0 = keygen(b"\x00")
    h = content_hash(b"same")
    assert make_id(h, k0) == make_id(h, k0)


def test_wrong_digest_fails():
    _, k0 = keygen(b"\x00")
    h = content_hash(b"x")
    bid = make_id(h, k0)
    flipped = bytes([h[0] ^ 1]) + h[1:]
    assert not check_id(bid, flipped)


def test_zeroed_signature_fails():
    _, k0 = keygen(b"\x00")
    h = content_hash(b"x")
    bid = make_id(h, k0)
    assert not check_id(BlockId(bytes(len(bid.signature)), bid.creator), h)


def test_garbage_ids_never_raise():
    _, k0 = keygen(b"\x00")
    h = content_hash(b"x")
    bid = make_id(h, k0)
    assert not check_id(BlockId(b"", bid.creator), h)
    assert not check_id(BlockId(bid.signature, type(bid.creator)(b"\x01" * 5)), h)
    other = keygen(b"\x02")[0]
    assert not check_id(BlockId(bid.signature, other), h)


def test_creator_recovered_for_many_seeds():
    rng = random.Random(7)
    for _ in range(100):
        seed = rng.randbytes(rng.randrange(0, 40))
        node, k = keygen(seed)
        h = content_hash(seed)
        bid = make_id(h, k)
        assert bid.creator == node
        assert check_id(bid, h)


def test_identical_content_different_creators():
    a, b = blk("p"), blk("q")
    assert a.payload == b.payload and a.preds == b.preds
    assert a.id != b.id


def test_encoding_injective_on_corpus():
    rng = random.Random(11)
    pool = ids(12)
    seen = {}
    for _ in range(10_000):
        payload = rng.randbytes(rng.randrange(0, 4))
        preds = frozenset(rng.sample(pool, rng.randrange(0, 4)))
        enc = encode_content(payload, preds)
        prev = seen.setdefault(enc, (payload, preds))
        assert prev == (payload, preds)


@settings(max_examples=200)
@given(st.binary(max_size=64), st.sets(st.integers(0, 11), max_size=5))
def test_check_after_make(payload, which):
    pool = ids(12)
    preds = [pool[j] for j in which]
    h = content_hash(encode_content(payload, preds))
    assert check_id(make_id(h, key("h")), h)


@settings(max_examples=100)
@given(st.binary(max_size=64))
def test_wire_round_trip(payload):
    g = blk("a")
    b = Block.create(key("b"), payload, [g.id])
    again = Block.from_bytes(b.to_bytes())
    assert again == b and again.well_signed()


def test_trailing_bytes_rejected():
    b = blk("a")
    with pytest.raises(EncodingError):
        Block.from_bytes(b.to_bytes() + b"\x00")
