"""Node state, buffered acceptance, and the Byzantine-repelling protocol.

A node keeps every received block whose predecessors are all known in one
closed ``known`` blocklace; the accepted blocklace is a closed index mask
inside it and everything else is the buffer. Acceptance moves a whole chunk
``{<=}b`` at once and, in repelling mode, only when the current blocklace is
a valid prefix for the extended one with ``b`` on top. The sequence of tops
(``incorporation_log``) is therefore a peel witness for the accepted set.
"""

from __future__ import annotations

from typing import Callable, Iterable, NamedTuple

from .codec import BlockId, NodeId, PrivateKey
from .core import Block, Blocklace, iter_bits
from .faults import Analyzer, ValidityPredicate, always_valid

PLAIN = "plain"
REPELLING = "repelling"

# (state, candidate index, extended mask) -> bool; must be monotone: once an
# extension is refused, every larger one containing the candidate is refused too
AcceptFilter = Callable[["NodeState", int, int], bool]


class Chunk(NamedTuple):
    top: BlockId
    blocks: tuple[BlockId, ...]


class NodeState:
    """One replica: accepted blocklace, buffer, and incorporation log."""

    def __init__(
        self,
        validity: ValidityPredicate = always_valid,
        mode: str = REPELLING,
        accept_filter: AcceptFilter | None = None,
    ):
        if mode not in (PLAIN, REPELLING):
            raise ValueError(f"unknown mode {mode!r}")
        self.mode = mode
        self.known = Blocklace()
        self.analyzer = Analyzer(self.known, validity, repelling=mode == REPELLING)
        self.accept_filter = accept_filter
        self.accepted = 0
        self.tips = 0
        self.byz_bits = 0
        self.incorporation_log: list[BlockId] = []
        self.pending: dict[BlockId, Block] = {}
        self._waiting: dict[BlockId, list[BlockId]] = {}
        self._candidates: dict[int, None] = {}
        self._rejected: dict[int, None] = {}
        self._parked: dict[int, list[int]] = {}
        self._filtered = False
        self._fresh: list[int] = []
        self._rescan = False
        self._view: tuple[int, Blocklace] | None = None

    def clone(self, accept_filter: AcceptFilter | None = None) -> "NodeState":
        """An independent copy sharing no mutable state (memo tables start empty)."""
        other = NodeState(self.validity, self.mode, accept_filter)
        other.known = self.known.copy()
        other.analyzer = Analyzer(other.known, self.validity, repelling=self.mode == REPELLING)
        other.accepted = self.accepted
        other.tips = self.tips
        other.byz_bits = self.byz_bits
        other.incorporation_log = list(self.incorporation_log)
        other.pending = dict(self.pending)
        other._waiting = {k: list(v) for k, v in self._waiting.items()}
        other._candidates = dict(self._candidates)
        other._rejected = dict(self._rejected)
        other._parked = {k: list(v) for k, v in self._parked.items()}
        other._fresh = list(self._fresh)
        other._rescan = True
        return other

    # -- views ----------------------------------------------------------------

    @property
    def validity(self) -> ValidityPredicate:
        return self.analyzer.validity

    @property
    def blocklace(self) -> Blocklace:
        if self._view is None or self._view[0] != self.accepted:
            self._view = (self.accepted, self.known.subset(self.accepted))
        return self._view[1]

    @property
    def buffer(self) -> dict[BlockId, Block]:
        blocks = self.known._blocks
        parked = [i for group in self._parked.values() for i in group]
        out = {blocks[i].id: blocks[i] for i in (*self._candidates, *self._rejected, *parked)}
        out.update(self.pending)
        return dict(sorted(out.items()))

    def has_accepted(self, block_id: BlockId) -> bool:
        i = self.known._index.get(block_id)
        return i is not None and bool((self.accepted >> i) & 1)

    def byz(self) -> frozenset[NodeId]:
        return self.analyzer.creators_of(self.byz_bits)

    def polog(self):
        return self.analyzer.polog(self.accepted)

    def tip_ids(self) -> list[BlockId]:
        return self.known.ids_of(self.tips)

    # -- reception ----------------------------------------------------------

    def receive(self, block: Block) -> bool:
        """Buffer a block. Returns False for duplicates and mis-signed blocks."""
        bid = block.id
        if bid in self.known._index or bid in self.pending:
            return False
        if not block.well_signed():
            return False
        index = self.known._index
        missing = sorted(p for p in block.preds if p not in index)
        if missing:
            self.pending[bid] = block
            for p in missing:
                self._waiting.setdefault(p, []).append(bid)
        else:
            self._make_known(block)
        return True

    def _make_known(self, block: Block) -> None:
        index = self.known._index
        todo = [block]
        while todo:
            b = todo.pop()
            i = self.known._append(b)
            self._candidates[i] = None
            self._fresh.append(i)
            for child in sorted(self._waiting.pop(b.id, ()), reverse=True):
                cb = self.pending.get(child)
                if cb is not None and all(p in index for p in cb.preds):
                    del self.pending[child]
                    todo.append(cb)

    # -- acceptance ----------------------------------------------------------

    def admissible(self, i: int) -> bool:
        """Whether buffered block index ``i`` may be incorporated with its closure now."""
        known = self.known
        down = known._anc[i] | (1 << i)
        extended = self.accepted | down
        if self.accept_filter is not None and not self.accept_filter(self, i, extended):
            # filters are monotone: a rejected extension stays rejected as the blocklace grows
            self._filtered = True
            return False
        if self.mode == PLAIN:
            return True
        an = self.analyzer
        creator = known._creator_of[i]
        if self.byz_bits >> creator & 1:
            return False
        may_acknowledge = not (self.byz_bits & ~an.byz_down(i))
        may_expose = an.implicated(known._blocks[i].id) or bool(
            known._by_creator[creator] & self.accepted & ~down
        )
        if not (may_acknowledge or may_expose):
            return False
        return an.step_ok(self.accepted, i, self.byz_bits)

    def _dead(self, i: int) -> bool:
        # byz only grows, so a buffered block by a known-Byzantine creator is never admissible
        return self.mode == REPELLING and bool(self.byz_bits >> self.known._creator_of[i] & 1)

    def _parkable(self, i: int) -> bool:
        """Blocked until another block by the same creator is accepted.

        Such a block fails to acknowledge a known Byzantine (which stays so)
        and cannot expose its creator unless a conflicting block shows up.
        """
        if self.mode != REPELLING:
            return False
        an = self.analyzer
        known = self.known
        if not (self.byz_bits & ~an.byz_down(i)):
            return False
        an._ensure(i + 1)
        if an._reason[i] is not None:
            return False
        down = known._anc[i] | (1 << i)
        return not (known._by_creator[known._creator_of[i]] & self.accepted & ~down)

    def try_accept(self) -> list[Chunk]:
        """Accept admissible chunks, first in identity order, until a fixpoint."""
        chunks = []
        blocks = self.known._blocks
        while True:
            if self._rescan:
                scan = list(self._candidates)
            else:
                scan = [i for i in self._fresh if i in self._candidates]
            self._fresh = []
            self._rescan = False
            for i in sorted(scan, key=lambda k: blocks[k].id):
                if self._dead(i):
                    del self._candidates[i]
                    self._rejected[i] = None
                    continue
                if self._parkable(i):
                    del self._candidates[i]
                    self._parked.setdefault(self.known._creator_of[i], []).append(i)
                    continue
                self._filtered = False
                if self.admissible(i):
                    chunks.append(self._incorporate(i))
                    self._rescan = True
                    break
                if self._filtered:
                    del self._candidates[i]
                    self._rejected[i] = None
            else:
                return chunks

    def _unpark(self, new: int) -> None:
        if not self._parked:
            return
        creator_of = self.known._creator_of
        for c in {creator_of[j] for j in iter_bits(new)}:
            for i in self._parked.pop(c, ()):
                if not (self.accepted >> i) & 1:
                    self._candidates[i] = None

    def _incorporate(self, i: int) -> Chunk:
        known = self.known
        down = known._anc[i] | (1 << i)
        new = down & ~self.accepted
        self.accepted |= down
        self.tips = (self.tips & ~known._anc[i]) | (1 << i)
        for j in iter_bits(new):
            self._candidates.pop(j, None)
        self.byz_bits = self.analyzer.byz_mask(self.accepted)
        self._unpark(new)
        top = known._blocks[i].id
        self.incorporation_log.append(top)
        return Chunk(top, tuple(known.ids_of(new)))

    # -- production ----------------------------------------------------------

    def produce(self, key: PrivateKey, payload: bytes) -> Block:
        """Create a block over the current tips and incorporate it."""
        block = Block.create(key, payload, self.tip_ids())
        self.add_own(block)
        return block

    def add_own(self, block: Block) -> None:
        """Incorporate a block this node signed itself (predecessors must be accepted)."""
        for p in block.preds:
            j = self.known._index.get(p)
            if j is None or not (self.accepted >> j) & 1:
                raise ValueError("own block points outside the accepted blocklace")
        i = self.known._append(block)
        self.accepted |= 1 << i
        self.tips = (self.tips & ~self.known._anc[i]) | (1 << i)
        self.byz_bits = self.analyzer.byz_mask(self.accepted)
        self._unpark(1 << i)
        self.incorporation_log.append(block.id)
        self._rescan = True

    def audit_log(self) -> bool:
        """Replay the incorporation log as a peel sequence over the accepted set."""
        an = self.analyzer
        known = self.known
        state = 0
        for top in self.incorporation_log:
            i = known.index_of(top)
            nxt = state | known._anc[i] | (1 << i)
            if nxt == state or not an.step_ok(state, i):
                return False
            state = nxt
        return state == self.accepted


def effect_many(st: NodeState, blocks: Iterable[Block]) -> list[Chunk]:
    for b in blocks:
        st.receive(b)
    return st.try_accept()


def try_accept(st: NodeState) -> set[BlockId]:
    return {bid for chunk in st.try_accept() for bid in chunk.blocks}


def produce(st: NodeState, key: PrivateKey, payload: bytes) -> Block:
    return st.produce(key, payload)


def brep(lace: Blocklace, validity: ValidityPredicate = always_valid) -> bool:
    """Whether ``lace`` is Byzantine-repelling (exact search over peel sequences)."""
    return Analyzer(lace, validity, repelling=True).brep()
