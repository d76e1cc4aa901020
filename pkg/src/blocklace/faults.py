"""Fault detection over a blocklace: well-formedness, validity, equivocation,
the Byzantine set, the repelling predicate on foreign closures, and the PO-Log.

Everything here depends only on the closure of each block, so results are
memoized per block inside an :class:`Analyzer`. A block ``x`` is *implicated*
when its creator is Byzantine within ``{<=}x``; then for any closed ``Y``

    byz(Y)   = eqvc(Y) | {node(x) : x in Y, implicated(x)}
    polog(Y) = {x in Y : not implicated(x)}

and ``implicated(x)`` only needs ``x``'s own checks plus the previous block by
the same creator, which keeps evaluation linear in the common case.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Hashable, Protocol

from .codec import BlockId, NodeId
from .core import Block, Blocklace, BlocklaceError, MissingPredecessors, iter_bits
from .payloads import Register, decode_payload


class ValidityPredicate(Protocol):
    def __call__(self, payload: bytes, log: "POLog") -> bool: ...


def always_valid(payload: bytes, log: "POLog") -> bool:
    return True


def _registered_name(payload: bytes) -> bytes | None:
    rec = decode_payload(payload)
    return rec.name if isinstance(rec, Register) else None


class UniqueIdRegistry:
    """``register(name)`` is invalid once ``name`` is registered in the causal past."""

    def __call__(self, payload: bytes, log: "POLog") -> bool:
        name = _registered_name(payload)
        if name is None:
            return True
        return not log.lookup(_registered_name, name)

    def __repr__(self) -> str:
        return "UniqueIdRegistry()"


VALIDITY = {"always": always_valid, "unique_id": UniqueIdRegistry()}


class Reason(str, enum.Enum):
    EQUIVOCATION = "equivocation"
    INHERITED = "inherited"
    MALFORMED = "malformed"
    INVALID = "invalid"
    NON_REPELLING = "non_repelling"


class POLog:
    """Partially ordered log: the admissible blocks of a closed set, ordered by precedes."""

    def __init__(self, analyzer: "Analyzer", mask: int):
        self._an = analyzer
        self.mask = mask

    def __len__(self) -> int:
        return bin(self.mask).count("1")

    def __contains__(self, block_id: object) -> bool:
        i = self._an.lace._index.get(block_id)  # type: ignore[arg-type]
        return i is not None and bool((self.mask >> i) & 1)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, POLog):
            return NotImplemented
        return set(self.ids()) == set(other.ids())

    def ids(self) -> list[BlockId]:
        return self._an.lace.ids_of(self.mask)

    def events(self) -> list[tuple[BlockId, bytes]]:
        lace = self._an.lace
        return [(i, lace[i].payload) for i in self.ids()]

    def payloads(self) -> list[bytes]:
        return [p for _, p in self.events()]

    def precedes(self, a: BlockId, b: BlockId) -> bool:
        if a not in self or b not in self:
            raise KeyError("event not in log")
        return self._an.lace.precedes(a, b)

    def lookup(self, keyfn: Callable[[bytes], Hashable], key: Hashable) -> list[BlockId]:
        """Events whose payload maps to ``key`` under ``keyfn`` (indexed, cached)."""
        return self._an.lace.ids_of(self._an.payload_index(keyfn).get(key, 0) & self.mask)


@dataclass(frozen=True)
class ByzEvidence:
    accused: NodeId
    kind: Reason
    subject: tuple[BlockId, ...]
    witness_blocks: frozenset[Block]

    def summary(self) -> dict:
        return {
            "accused": self.accused.hex(),
            "kind": self.kind.value,
            "subject": [s.hex() for s in self.subject],
            "witness": sorted(b.id.hex() for b in self.witness_blocks),
        }


class Analyzer:
    """Memoized fault analysis over a (possibly growing) closed blocklace."""

    def __init__(
        self,
        lace: Blocklace,
        validity: ValidityPredicate = always_valid,
        repelling: bool = True,
    ):
        self.lace = lace
        self.validity = validity
        self.repelling = repelling
        self._reason: list[Reason | None] = []
        self._chain: list[bool] = []
        self._prev: list[int] = []
        self._impl_mask = 0
        self._suspects = 0
        self._byz_down: dict[int, int] = {}
        self._brep_cache: dict[int, bool] = {}
        self._indexes: dict[Callable, tuple[int, dict]] = {}
        self.search_states = 0

    # -- per-block evaluation -----------------------------------------------

    def _ensure(self, upto: int) -> None:
        for i in range(len(self._reason), upto):
            self._evaluate(i)

    def _evaluate(self, i: int) -> None:
        lace = self.lace
        anc = lace._anc[i]
        same = lace._by_creator[lace._creator_of[i]] & anc
        if same:
            u = same.bit_length() - 1
            chain = self._chain[u] and not (same & ~(lace._anc[u] | (1 << u)))
        else:
            u, chain = -1, True
        self._prev.append(u)
        self._chain.append(chain)
        c = lace._creator_of[i]
        earlier = lace._by_creator[c] & ((1 << i) - 1)
        if earlier & ~anc:
            # some same-creator block in the lace is incomparable with this one
            self._suspects |= 1 << c
        if not chain:
            reason: Reason | None = Reason.EQUIVOCATION
        elif u >= 0 and self._reason[u] is not None:
            reason = Reason.INHERITED
        elif not self._wf(i):
            reason = Reason.MALFORMED
        elif not self.validity(lace._blocks[i].payload, POLog(self, anc & ~self._impl_mask)):
            reason = Reason.INVALID
        elif self.repelling and not self._brep(anc, bound=i):
            reason = Reason.NON_REPELLING
        else:
            reason = None
        self._reason.append(reason)
        if reason is not None:
            self._impl_mask |= 1 << i
            self._suspects |= 1 << c

    def _wf(self, i: int) -> bool:
        lace = self.lace
        pm = 0
        idx = [lace._index[p] for p in lace._blocks[i].preds]
        for j in idx:
            pm |= 1 << j
        return all(not (lace._anc[j] & pm) for j in idx)

    def implicated(self, block_id: BlockId) -> bool:
        i = self.lace.index_of(block_id)
        self._ensure(i + 1)
        return self._reason[i] is not None

    def reason(self, block_id: BlockId) -> Reason | None:
        i = self.lace.index_of(block_id)
        self._ensure(i + 1)
        return self._reason[i]

    def well_formed(self, block_id: BlockId) -> bool:
        return self._wf(self.lace.index_of(block_id))

    def valid(self, block_id: BlockId) -> bool:
        i = self.lace.index_of(block_id)
        self._ensure(i)
        return bool(self.validity(self.lace._blocks[i].payload,
                                  POLog(self, self.lace._anc[i] & ~self._impl_mask)))

    # -- set-level predicates over index masks --------------------------------

    def byz_mask(self, mask: int) -> int:
        """Byzantine creators of a closed mask, as a bitmask over creator indices."""
        self._ensure(mask.bit_length())
        lace = self.lace
        anc = lace._anc
        impl = self._impl_mask
        by_creator = lace._by_creator
        out = 0
        # only creators with a fork or an implicated block anywhere can be Byzantine
        for c in iter_bits(self._suspects):
            s = by_creator[c] & mask
            if not s:
                continue
            if s & impl:
                out |= 1 << c
                continue
            t = s.bit_length() - 1
            if s & ~(anc[t] | (1 << t)):
                out |= 1 << c
        return out

    def eqvc_mask(self, mask: int) -> int:
        self._ensure(mask.bit_length())
        lace = self.lace
        out = 0
        for c in iter_bits(self._suspects):
            s = lace._by_creator[c] & mask
            if not s:
                continue
            t = s.bit_length() - 1
            if s & ~(lace._anc[t] | (1 << t)) or not self._chain[t]:
                out |= 1 << c
        return out

    def byz_down(self, i: int) -> int:
        """byz of the reflexive closure of block index ``i``."""
        got = self._byz_down.get(i)
        if got is None:
            got = self._byz_down[i] = self.byz_mask(self.lace._anc[i] | (1 << i))
        return got

    def byz_strict(self, i: int) -> int:
        return self.byz_mask(self.lace._anc[i])

    def step_ok(self, prefix: int, top: int, byz_prefix: int | None = None) -> bool:
        """One peel step: ``prefix | {<=}top`` extends the closed ``prefix`` with top ``top``.

        Condition (1) asks that dropping ``top`` shrinks the Byzantine set;
        only ``top``'s creator can differ between the two sets, so it is tested
        only when that creator is Byzantine in the extended set.
        """
        lace = self.lace
        new = prefix | lace._anc[top] | (1 << top)
        byz_new = self.byz_mask(new)
        creator_bit = 1 << lace._creator_of[top]
        if byz_new & creator_bit:
            without = self.byz_mask(new & ~(1 << top))
            return without != byz_new and not (without & ~byz_new)
        if byz_prefix is None:
            byz_prefix = self.byz_mask(prefix)
        return not (byz_prefix & ~self.byz_down(top))

    def _brep(self, target: int, bound: int | None = None) -> bool:
        """Existential peel search: is there a chain of closed sets from empty to ``target``?"""
        if bound is not None:
            assert target.bit_length() <= bound, "recursion must descend to a strict prefix"
        if not target:
            return True
        cached = self._brep_cache.get(target)
        if cached is not None:
            return cached
        result = self._brep_search(target)
        self._brep_cache[target] = result
        return result

    def _brep_search(self, target: int) -> bool:
        lace = self.lace
        if not self.byz_mask(target):
            return True
        tops = lace.maximals_of(target)
        for a in iter_bits(tops):
            # a maximal block whose creator is already Byzantine below it can never be peeled
            if self.byz_strict(a) & (1 << lace._creator_of[a]):
                return False
        if tops & (tops - 1) == 0:
            return True
        anc = lace._anc
        # closures of non-implicated blocks are repelling, so they are valid starting points
        seeds = sorted(
            (anc[a] | (1 << a) for a in iter_bits(tops) if self.repelling and self._reason[a] is None),
            key=lambda m: (-m.bit_count(), -m),
        )
        seeds.append(0)
        seen: set[int] = set()
        for seed in seeds:
            if seed in seen:
                continue
            seen.add(seed)
            if self._search_from(seed, target, seen):
                return True
        return False

    def _search_from(self, start: int, target: int, seen: set[int]) -> bool:
        anc = self.lace._anc
        stack = [(start, self.byz_mask(start), self._moves(start, target))]
        while stack:
            state, byz_state, moves = stack[-1]
            for c in moves:
                nxt = state | anc[c] | (1 << c)
                if nxt in seen or not self.step_ok(state, c, byz_state):
                    continue
                # a state's onward reachability does not depend on the path into it
                seen.add(nxt)
                self.search_states += 1
                if nxt == target:
                    return True
                stack.append((nxt, self.byz_mask(nxt), self._moves(nxt, target)))
                break
            else:
                stack.pop()
        return False

    def _moves(self, state: int, target: int):
        rest = target & ~state
        # largest chunks first: descending index
        i = rest.bit_length() - 1
        while i >= 0:
            if (rest >> i) & 1:
                yield i
            i -= 1

    # -- public set-level API ---------------------------------------------

    def creators_of(self, cmask: int) -> frozenset[NodeId]:
        return frozenset(self.lace._creators[c] for c in iter_bits(cmask))

    def byz(self, mask: int | None = None) -> frozenset[NodeId]:
        return self.creators_of(self.byz_mask(self.lace.full_mask if mask is None else mask))

    def equivocators(self, mask: int | None = None) -> frozenset[NodeId]:
        return self.creators_of(self.eqvc_mask(self.lace.full_mask if mask is None else mask))

    def brep(self, mask: int | None = None) -> bool:
        mask = self.lace.full_mask if mask is None else mask
        self._ensure(mask.bit_length())
        return self._brep(mask)

    def polog_mask(self, mask: int) -> int:
        self._ensure(mask.bit_length())
        return mask & ~self._impl_mask

    def polog(self, mask: int | None = None) -> POLog:
        return POLog(self, self.polog_mask(self.lace.full_mask if mask is None else mask))

    def payload_index(self, keyfn: Callable[[bytes], Hashable]) -> dict:
        upto, index = self._indexes.get(keyfn, (0, {}))
        blocks = self.lace._blocks
        for i in range(upto, len(blocks)):
            key = keyfn(blocks[i].payload)
            if key is not None:
                index[key] = index.get(key, 0) | (1 << i)
        self._indexes[keyfn] = (len(blocks), index)
        return index

    def evidence(self, mask: int | None = None) -> list[ByzEvidence]:
        """One self-certifying proof per Byzantine creator of ``mask``."""
        lace = self.lace
        mask = lace.full_mask if mask is None else mask
        eq = self.eqvc_mask(mask)
        out = []
        for c in iter_bits(self.byz_mask(mask)):
            node = lace._creators[c]
            members = lace._by_creator[c] & mask
            if eq >> c & 1:
                a, b = self._incomparable_pair(members)
                wit = lace._anc[a] | lace._anc[b] | (1 << a) | (1 << b)
                ids = tuple(sorted((lace._blocks[a].id, lace._blocks[b].id)))
                out.append(ByzEvidence(node, Reason.EQUIVOCATION, ids, self._blocks(wit)))
                continue
            for i in iter_bits(members):
                r = self._reason[i]
                if r in (Reason.MALFORMED, Reason.INVALID, Reason.NON_REPELLING):
                    wit = lace._anc[i] | (1 << i)
                    out.append(ByzEvidence(node, r, (lace._blocks[i].id,), self._blocks(wit)))
                    break
        return sorted(out, key=lambda e: e.accused)

    def _incomparable_pair(self, members: int) -> tuple[int, int]:
        anc = self.lace._anc
        idx = list(iter_bits(members))
        for k, a in enumerate(idx):
            for b in idx[k + 1:]:
                if not (anc[b] >> a) & 1:
                    return a, b
        raise ValueError("members form a chain")

    def _blocks(self, mask: int) -> frozenset[Block]:
        return frozenset(self.lace._blocks[i] for i in iter_bits(mask))


# -- functional facade --------------------------------------------------------


def well_formed(b: Block, lace: Blocklace) -> bool:
    """Signed correctly and all predecessors pairwise incomparable in ``lace``."""
    missing = [p for p in b.preds if p not in lace]
    if missing:
        raise MissingPredecessors(missing)
    if not b.well_signed():
        return False
    preds = sorted(b.preds)
    return not any(
        lace.precedes(x, y) for x in preds for y in preds if x != y
    )


def equivocators(lace: Blocklace) -> frozenset[NodeId]:
    return Analyzer(lace, repelling=False).equivocators()


def byz(lace: Blocklace, validity: ValidityPredicate = always_valid, repelling: bool = True) -> frozenset[NodeId]:
    return Analyzer(lace, validity, repelling).byz()


def polog(lace: Blocklace, validity: ValidityPredicate = always_valid, repelling: bool = True) -> POLog:
    return Analyzer(lace, validity, repelling).polog()


def brep(lace: Blocklace, validity: ValidityPredicate = always_valid) -> bool:
    return Analyzer(lace, validity, repelling=True).brep()


def verify_evidence(
    e: ByzEvidence, validity: ValidityPredicate = always_valid, repelling: bool = True
) -> bool:
    """Re-derive the accusation from the witness blocks alone."""
    try:
        lace = Blocklace(e.witness_blocks)
    except BlocklaceError:
        return False
    if len(lace) != len(e.witness_blocks):
        return False
    if any(s not in lace or s.creator != e.accused for s in e.subject):
        return False
    an = Analyzer(lace, validity, repelling)
    if e.kind is Reason.EQUIVOCATION:
        if len(e.subject) != 2 or e.subject[0] == e.subject[1]:
            return False
        a, b = e.subject
        holds = not lace.comparable(a, b)
    elif len(e.subject) != 1:
        return False
    else:
        (s,) = e.subject
        i = lace.index_of(s)
        if e.kind is Reason.MALFORMED:
            holds = not an.well_formed(s)
        elif e.kind is Reason.INVALID:
            holds = an.well_formed(s) and not an.valid(s)
        elif e.kind is Reason.NON_REPELLING:
            an._ensure(i)
            holds = an.well_formed(s) and an.valid(s) and not an._brep(lace._anc[i])
        else:
            return False
    return holds and e.accused in an.byz()


def evidence(lace: Blocklace, validity: ValidityPredicate = always_valid, repelling: bool = True) -> list[ByzEvidence]:
    return Analyzer(lace, validity, repelling).evidence()

