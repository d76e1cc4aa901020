"""Canonical block encoding, hashing, Ed25519 signing and identity checks.

Byte layouts (all integers big-endian):

    BlockId     := u16 len(sig) | sig | u16 len(pk) | pk
    content     := u32 len(payload) | payload | u32 n | BlockId * n
                   (predecessors sorted by (signature, public key))
    wire record := BlockId | content

A block identity carries the creator's public key next to the signature, so
the creator is read off the identity instead of being recovered from the
signature. ``check_id`` verifies both together.
"""

from __future__ import annotations

import hashlib
import struct
from functools import lru_cache
from typing import Iterable, NamedTuple, NewType

from nacl.bindings import (
    crypto_sign,
    crypto_sign_BYTES,
    crypto_sign_open,
    crypto_sign_seed_keypair,
)
from nacl.exceptions import BadSignatureError

ContentHash = NewType("ContentHash", bytes)

SIGNATURE_LEN = crypto_sign_BYTES
PUBLIC_KEY_LEN = 32


class EncodingError(ValueError):
    """Raised for non-canonical or undecodable block bytes."""


class NodeId(NamedTuple):
    public_key: bytes

    def hex(self) -> str:
        return self.public_key.hex()

    def short(self) -> str:
        return self.public_key[:4].hex()


class PrivateKey:
    """Ed25519 signing key. Deliberately has no serializer and a redacted repr."""

    __slots__ = ("_secret", "node_id")

    def __init__(self, secret_key: bytes, node_id: NodeId):
        self._secret = secret_key
        self.node_id = node_id

    @property
    def secret_key(self) -> bytes:
        return self._secret

    def __repr__(self) -> str:
        return f"PrivateKey(node_id={self.node_id.short()}, secret=<redacted>)"

    def __eq__(self, other: object) -> bool:
        return isinstance(other, PrivateKey) and other._secret == self._secret

    def __hash__(self) -> int:
        return hash(self.node_id)


class BlockId(NamedTuple):
    signature: bytes
    creator: NodeId

    def to_bytes(self) -> bytes:
        pk = self.creator.public_key
        return (
            struct.pack(">H", len(self.signature))
            + self.signature
            + struct.pack(">H", len(pk))
            + pk
        )

    def hex(self) -> str:
        return self.to_bytes().hex()

    def short(self) -> str:
        """First 8 hex characters of the signature; display only."""
        return self.signature[:4].hex()


def keygen(seed: bytes | str) -> tuple[NodeId, PrivateKey]:
    """Derive a keypair from an arbitrary (possibly empty) seed."""
    if isinstance(seed, str):
        seed = seed.encode()
    pk, sk = crypto_sign_seed_keypair(hashlib.sha256(b"blocklace-key:" + seed).digest())
    node = NodeId(pk)
    return node, PrivateKey(sk, node)


def _take(buf: bytes, pos: int, n: int) -> tuple[bytes, int]:
    end = pos + n
    if end > len(buf):
        raise EncodingError("truncated input")
    return buf[pos:end], end


def decode_block_id(buf: bytes, pos: int = 0) -> tuple[BlockId, int]:
    raw, pos = _take(buf, pos, 2)
    sig, pos = _take(buf, pos, struct.unpack(">H", raw)[0])
    raw, pos = _take(buf, pos, 2)
    pk, pos = _take(buf, pos, struct.unpack(">H", raw)[0])
    return BlockId(sig, NodeId(pk)), pos


def encode_content(payload: bytes, preds: Iterable[BlockId]) -> bytes:
    ordered = sorted(preds)
    for a, b in zip(ordered, ordered[1:]):
        if a == b:
            raise EncodingError(f"duplicate predecessor {a.short()}")
    parts = [struct.pack(">I", len(payload)), payload, struct.pack(">I", len(ordered))]
    parts.extend(p.to_bytes() for p in ordered)
    return b"".join(parts)


def decode_content(buf: bytes, pos: int = 0) -> tuple[bytes, tuple[BlockId, ...], int]:
    raw, pos = _take(buf, pos, 4)
    payload, pos = _take(buf, pos, struct.unpack(">I", raw)[0])
    raw, pos = _take(buf, pos, 4)
    preds = []
    for _ in range(struct.unpack(">I", raw)[0]):
        pid, pos = decode_block_id(buf, pos)
        preds.append(pid)
    if preds != sorted(preds) or len(set(preds)) != len(preds):
        raise EncodingError("predecessors not in canonical order")
    return payload, tuple(preds), pos


def content_hash(encoded: bytes) -> ContentHash:
    return ContentHash(hashlib.sha256(encoded).digest())


def make_id(digest: ContentHash, key: PrivateKey) -> BlockId:
    signed = crypto_sign(digest, key.secret_key)
    return BlockId(signed[:SIGNATURE_LEN], key.node_id)


@lru_cache(maxsize=1 << 18)
def _verify(signature: bytes, public_key: bytes, digest: bytes) -> bool:
    try:
        return crypto_sign_open(signature + digest, public_key) == digest
    except (BadSignatureError, ValueError, TypeError):
        return False


def check_id(block_id: BlockId, digest: ContentHash) -> bool:
    """True iff the identity's signature verifies over ``digest`` under its creator.

    Results are memoized: the check is a pure function of its arguments.
    """
    sig = block_id.signature
    pk = block_id.creator.public_key
    if len(sig) != SIGNATURE_LEN or len(pk) != PUBLIC_KEY_LEN:
        return False
    return _verify(bytes(sig), bytes(pk), bytes(digest))
