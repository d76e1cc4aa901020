"""Tagged binary payload records for the example datatypes.

    noop     := 0x00
    add      := 0x01 | u16 len(elem) | elem
    remove   := 0x02 | u16 len(elem) | elem | u16 n | BlockId * n
    register := 0x03 | u16 len(name) | name

BlockId uses the codec layout. Anything else decodes to ``None``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Union

from .codec import BlockId, EncodingError, decode_block_id

NOOP, ADD, REMOVE, REGISTER = 0, 1, 2, 3


@dataclass(frozen=True)
class Noop:
    pass


@dataclass(frozen=True)
class Add:
    elem: bytes


@dataclass(frozen=True)
class Remove:
    elem: bytes
    observed: frozenset[BlockId]


@dataclass(frozen=True)
class Register:
    name: bytes


Record = Union[Noop, Add, Remove, Register]


def _field(data: bytes) -> bytes:
    return struct.pack(">H", len(data)) + data


def encode_noop() -> bytes:
    return bytes([NOOP])


def encode_add(elem: bytes) -> bytes:
    return bytes([ADD]) + _field(elem)


def encode_remove(elem: bytes, observed: Iterable[BlockId]) -> bytes:
    ids = sorted(set(observed))
    return (
        bytes([REMOVE]) + _field(elem) + struct.pack(">H", len(ids))
        + b"".join(i.to_bytes() for i in ids)
    )


def encode_register(name: bytes) -> bytes:
    return bytes([REGISTER]) + _field(name)


def _read_field(buf: bytes, pos: int) -> tuple[bytes, int]:
    if pos + 2 > len(buf):
        raise EncodingError("truncated")
    (n,) = struct.unpack_from(">H", buf, pos)
    pos += 2
    if pos + n > len(buf):
        raise EncodingError("truncated")
    return buf[pos:pos + n], pos + n


@lru_cache(maxsize=1 << 16)
def decode_payload(buf: bytes) -> Record | None:
    """Parse a payload; ``None`` for anything that is not a well-formed record.

    Records are immutable, so results are cached.
    """
    try:
        if not buf:
            return None
        tag, pos = buf[0], 1
        if tag == NOOP:
            rec: Record = Noop()
        elif tag == ADD:
            elem, pos = _read_field(buf, pos)
            rec = Add(elem)
        elif tag == REGISTER:
            name, pos = _read_field(buf, pos)
            rec = Register(name)
        elif tag == REMOVE:
            elem, pos = _read_field(buf, pos)
            if pos + 2 > len(buf):
                return None
            (n,) = struct.unpack_from(">H", buf, pos)
            pos += 2
            ids = []
            for _ in range(n):
                bid, pos = decode_block_id(buf, pos)
                ids.append(bid)
            rec = Remove(elem, frozenset(ids))
        else:
            return None
    except (EncodingError, struct.error):
        return None
    return rec if pos == len(buf) else None
