"""The blocklace as an operation-based and as a delta-state CRDT.

Op-based view: ``prepare`` creates a block over the local frontier and
``effect`` delivers a foreign block through the buffer. Delta view: a
``DeltaGroup`` is any set of blocks (the support lattice, joined by union);
it may be merged into a closed blocklace only when the union stays closed.
"""

from __future__ import annotations

from typing import Iterable

from .codec import BlockId, PrivateKey
from .core import Block, Blocklace, MissingPredecessors, topological
from .faults import POLog
from .payloads import Add, Remove, decode_payload
from .repelling import NodeState


DeltaGroup = frozenset  # frozenset[Block]


def prepare(payload: bytes, st: NodeState, key: PrivateKey) -> Block:
    return st.produce(key, payload)


def effect(b: Block, st: NodeState) -> NodeState:
    """Buffer ``b`` and run acceptance to a fixpoint. Duplicates are no-ops."""
    if st.receive(b):
        st.try_accept()
    return st


def delta(blocks: Iterable[Block] = ()) -> frozenset[Block]:
    return frozenset(blocks)


def delta_join(a: frozenset[Block], b: frozenset[Block]) -> frozenset[Block]:
    return a | b


def delta_merge_condition(lace: Blocklace, d: frozenset[Block]) -> bool:
    """Whether ``lace`` joined with ``d`` is downward closed."""
    ids = {b.id for b in d}
    return all(p in lace or p in ids for b in d for p in b.preds)


def delta_merge(lace: Blocklace, d: frozenset[Block]) -> Blocklace:
    """Join a delta group into a copy of ``lace``; raises if the union is not closed."""
    if not delta_merge_condition(lace, d):
        ids = {b.id for b in d}
        raise MissingPredecessors(
            p for b in d for p in b.preds if p not in lace and p not in ids
        )
    out = lace.copy()
    for b in topological(d):
        if b.id not in out:
            out.insert(b)
    return out


def orset_state(log: POLog) -> dict[bytes, frozenset[BlockId]]:
    """Element -> add events that no causally later remove has observed."""
    events = log.events()
    adds: dict[bytes, list[BlockId]] = {}
    removed: set[BlockId] = set()
    for bid, payload in events:
        rec = decode_payload(payload)
        if isinstance(rec, Add):
            adds.setdefault(rec.elem, []).append(bid)
    for bid, payload in events:
        rec = decode_payload(payload)
        if isinstance(rec, Remove):
            for a in rec.observed:
                # a remove only covers adds it could have seen
                if a in log and log.precedes(a, bid):
                    removed.add(a)
    out = {}
    for elem, ids in sorted(adds.items()):
        live = frozenset(i for i in ids if i not in removed)
        if live:
            out[elem] = live
    return out


def orset_query(log: POLog) -> frozenset[bytes]:
    return frozenset(orset_state(log))
