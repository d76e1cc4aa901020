"""Blocks, the blocklace, and the pointed / precedes relations.

A :class:`Blocklace` is insert-only and always downward closed. Each block
gets a dense index in insertion order (a topological order), and its strict
ancestors are kept as an int bitmask over those indices, so ``precedes`` is a
bit test and closures are ORs. Inserts never add edges among existing blocks,
so the masks never need invalidation.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Iterable, Iterator

from .codec import (
    BlockId,
    ContentHash,
    EncodingError,
    NodeId,
    PrivateKey,
    check_id,
    content_hash,
    decode_block_id,
    decode_content,
    encode_content,
    make_id,
)


class BlocklaceError(Exception):
    pass


class MissingPredecessors(BlocklaceError):
    def __init__(self, missing: Iterable[BlockId]):
        self.missing = frozenset(missing)
        super().__init__(f"{len(self.missing)} predecessor(s) not in blocklace")


class DuplicateBlock(BlocklaceError):
    pass


class InvalidBlockId(BlocklaceError):
    """The identity does not verify against the content; unattributable, dropped."""


class UnknownBlock(BlocklaceError, KeyError):
    pass


@dataclass(frozen=True, slots=True)
class Block:
    id: BlockId
    payload: bytes
    preds: frozenset[BlockId]
    digest: ContentHash = field(compare=False, repr=False, default=ContentHash(b""))

    def __post_init__(self) -> None:
        if not self.digest:
            object.__setattr__(self, "digest", content_hash(encode_content(self.payload, self.preds)))

    @classmethod
    def create(cls, key: PrivateKey, payload: bytes, preds: Iterable[BlockId]) -> "Block":
        preds = frozenset(preds)
        digest = content_hash(encode_content(payload, preds))
        return cls(make_id(digest, key), payload, preds, digest)

    @property
    def creator(self) -> NodeId:
        return self.id.creator

    @property
    def is_genesis(self) -> bool:
        return not self.preds

    def well_signed(self) -> bool:
        return check_id(self.id, self.digest)

    def to_bytes(self) -> bytes:
        """Wire record: identity followed by canonical content."""
        return self.id.to_bytes() + encode_content(self.payload, self.preds)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "Block":
        bid, pos = decode_block_id(buf)
        payload, preds, pos = decode_content(buf, pos)
        if pos != len(buf):
            raise EncodingError("trailing bytes after block record")
        return cls(bid, payload, frozenset(preds))


def pointed(a: Block, b: Block) -> bool:
    """``a`` is directly pointed from ``b``."""
    return a.id in b.preds


def iter_bits(mask: int) -> Iterator[int]:
    while mask:
        low = mask & -mask
        yield low.bit_length() - 1
        mask ^= low


class Blocklace:
    """A closed, acyclic set of blocks keyed by identity."""

    def __init__(self, blocks: Iterable[Block] = ()):
        self._blocks: list[Block] = []
        self._index: dict[BlockId, int] = {}
        self._anc: list[int] = []
        self._pointed = 0
        self._creator_index: dict[NodeId, int] = {}
        self._creators: list[NodeId] = []
        self._creator_of: list[int] = []
        self._by_creator: list[int] = []
        for b in topological(blocks):
            self.insert(b)

    # -- construction -------------------------------------------------------

    def insert(self, b: Block) -> None:
        """Add ``b``; raises if it is a duplicate, mis-signed or not yet closed."""
        if b.id in self._index:
            raise DuplicateBlock(b.id.short())
        if not b.well_signed():
            raise InvalidBlockId(b.id.short())
        missing = [p for p in b.preds if p not in self._index]
        if missing:
            raise MissingPredecessors(missing)
        self._append(b)

    def _append(self, b: Block) -> int:
        i = len(self._blocks)
        anc = 0
        index = self._index
        for p in b.preds:
            j = index[p]
            anc |= self._anc[j] | (1 << j)
            self._pointed |= 1 << j
        assert not (anc >> i) & 1, "cycle"
        c = self._creator_index.get(b.id.creator)
        if c is None:
            c = len(self._creators)
            self._creator_index[b.id.creator] = c
            self._creators.append(b.id.creator)
            self._by_creator.append(0)
        self._blocks.append(b)
        index[b.id] = i
        self._anc.append(anc)
        self._creator_of.append(c)
        self._by_creator[c] |= 1 << i
        return i

    def copy(self) -> "Blocklace":
        other = Blocklace.__new__(Blocklace)
        other._blocks = list(self._blocks)
        other._index = dict(self._index)
        other._anc = list(self._anc)
        other._pointed = self._pointed
        other._creator_index = dict(self._creator_index)
        other._creators = list(self._creators)
        other._creator_of = list(self._creator_of)
        other._by_creator = list(self._by_creator)
        return other

    def subset(self, mask: int) -> "Blocklace":
        """The sub-blocklace on a closed index mask (no re-verification)."""
        other = Blocklace()
        for i in iter_bits(mask):
            other._append(self._blocks[i])
        return other

    # -- queries ------------------------------------------------------------

    def __len__(self) -> int:
        return len(self._blocks)

    def __contains__(self, block_id: object) -> bool:
        return block_id in self._index

    def __iter__(self) -> Iterator[Block]:
        return iter(self._blocks)

    def __getitem__(self, block_id: BlockId) -> Block:
        try:
            return self._blocks[self._index[block_id]]
        except KeyError:
            raise UnknownBlock(block_id) from None

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Blocklace):
            return NotImplemented
        return self._index.keys() == other._index.keys()

    def get(self, block_id: BlockId) -> Block | None:
        i = self._index.get(block_id)
        return None if i is None else self._blocks[i]

    def ids(self) -> list[BlockId]:
        return sorted(self._index)

    def blocks(self) -> list[Block]:
        return [self._blocks[self._index[i]] for i in self.ids()]

    def creators(self) -> list[NodeId]:
        return sorted(self._creators)

    def index_of(self, block_id: BlockId) -> int:
        try:
            return self._index[block_id]
        except KeyError:
            raise UnknownBlock(block_id) from None

    @property
    def full_mask(self) -> int:
        return (1 << len(self._blocks)) - 1

    def down_mask(self, block_id: BlockId) -> int:
        """Mask of the reflexive downward closure of one block."""
        i = self.index_of(block_id)
        return self._anc[i] | (1 << i)

    def mask_of(self, ids: Iterable[BlockId]) -> int:
        m = 0
        for bid in ids:
            m |= 1 << self.index_of(bid)
        return m

    def ids_of(self, mask: int) -> list[BlockId]:
        return sorted(self._blocks[i].id for i in iter_bits(mask))

    def precedes(self, a: BlockId, b: BlockId) -> bool:
        ia = self.index_of(a)
        return bool((self._anc[self.index_of(b)] >> ia) & 1)

    def comparable(self, a: BlockId, b: BlockId) -> bool:
        return a == b or self.precedes(a, b) or self.precedes(b, a)

    def closure_mask(self, roots: Iterable[BlockId]) -> int:
        m = 0
        for r in roots:
            i = self.index_of(r)
            m |= self._anc[i] | (1 << i)
        return m

    def closure(self, roots: Iterable[BlockId]) -> "Blocklace":
        return self.subset(self.closure_mask(roots))

    def maximals(self) -> frozenset[BlockId]:
        return frozenset(self._blocks[i].id for i in iter_bits(self.full_mask & ~self._pointed))

    def maximals_of(self, mask: int) -> int:
        """Maximal elements of a closed mask."""
        anc = self._anc
        tops = 0
        rest = mask
        while rest:
            i = rest.bit_length() - 1
            tops |= 1 << i
            rest &= ~(anc[i] | (1 << i))
        return tops

    def is_closed_mask(self, mask: int) -> bool:
        return all(self._anc[i] & ~mask == 0 for i in iter_bits(mask))

    def by_creator(self, node: NodeId) -> list[BlockId]:
        c = self._creator_index.get(node)
        return [] if c is None else self.ids_of(self._by_creator[c])

    def topo_order(self) -> list[Block]:
        """Deterministic topological order: Kahn's algorithm, ties by identity."""
        return topological(self._blocks)

    def to_dot(self, name: str = "blocklace") -> str:
        """Graphviz rendering: one vertex per block, creator-coloured, pointed edges."""
        palette = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                   "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"]
        colour = {n: palette[k % len(palette)] for k, n in enumerate(self.creators())}
        lines = [f"digraph {name} {{", "  rankdir=BT;"]
        order = self.topo_order()
        for b in order:
            lines.append(
                f'  "{b.id.short()}" [label="{b.id.short()}\\n{b.creator.short()}", '
                f'style=filled, fillcolor="{colour[b.creator]}"];'
            )
        for b in order:
            for p in sorted(b.preds):
                lines.append(f'  "{b.id.short()}" -> "{p.short()}";')
        lines.append("}")
        return "\n".join(lines) + "\n"


def topological(blocks: Iterable[Block]) -> list[Block]:
    """Order blocks so predecessors come first; blocks with absent preds go by identity."""
    by_id = {b.id: b for b in blocks}
    waiting: dict[BlockId, list[BlockId]] = {}
    indeg: dict[BlockId, int] = {}
    for bid, b in by_id.items():
        n = 0
        for p in b.preds:
            if p in by_id:
                n += 1
                waiting.setdefault(p, []).append(bid)
        indeg[bid] = n
    ready = [bid for bid, n in indeg.items() if n == 0]
    heapq.heapify(ready)
    out = []
    while ready:
        bid = heapq.heappop(ready)
        out.append(by_id[bid])
        for child in waiting.get(bid, ()):
            indeg[child] -= 1
            if indeg[child] == 0:
                heapq.heappush(ready, child)
    return out


def new_block(lace: Blocklace, key: PrivateKey, payload: bytes) -> Block:
    """A new block by ``key`` pointing at the current maximal blocks of ``lace``."""
    return Block.create(key, payload, lace.maximals())


def dump_blocks(blocks: Iterable[Block]) -> str:
    """Newline-delimited hex wire records, in deterministic topological order."""
    return "".join(b.to_bytes().hex() + "\n" for b in topological(blocks))


def load_blocks(text: str) -> list[Block]:
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            out.append(Block.from_bytes(bytes.fromhex(line)))
        except (ValueError, EncodingError) as exc:
            raise EncodingError(f"line {lineno}: {exc}") from exc
    return out
