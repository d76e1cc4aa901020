"""Reference semantics for the OR-Set and exhaustive delivery schedules."""

from __future__ import annotations

import random

from blocklace.core import Block
from blocklace.payloads import encode_add, encode_noop, encode_remove

from builders import key


def linear_extensions(blocks):
    """Every order of ``blocks`` that lists predecessors first."""
    ids = {b.id for b in blocks}

    def rec(done, rest):
        if not rest:
            yield []
            return
        for k, b in enumerate(rest):
            if all(p in done or p not in ids for p in b.preds):
                for tail in rec(done | {b.id}, rest[:k] + rest[k + 1:]):
                    yield [b] + tail

    yield from rec(frozenset(), list(blocks))


def random_history(rng: random.Random, n_events: int, n_replicas: int = 3, elems=b"xy"):
    """Events produced by honest replicas that each see a random closed prefix.

    Returns (blocks, spec) where spec maps each block id to its op
    ("add", elem) / ("remove", elem, observed ids) / ("noop",).
    """
    blocks: list[Block] = []
    spec = {}
    seen = [set() for _ in range(n_replicas)]
    for _ in range(n_events):
        r = rng.randrange(n_replicas)
        # learn some other events, closed downward
        for b in blocks:
            if b.id not in seen[r] and rng.random() < 0.5 and all(p in seen[r] for p in b.preds):
                seen[r].add(b.id)
        view = [b for b in blocks if b.id in seen[r]]
        below = {p for b in view for p in b.preds}
        tips = [b.id for b in view if b.id not in below]
        elem = bytes([rng.choice(elems)])
        roll = rng.random()
        if roll < 0.5:
            payload, op = encode_add(elem), ("add", elem)
        elif roll < 0.9:
            observed = frozenset(i for i in seen[r] if spec[i] == ("add", elem))
            payload, op = encode_remove(elem, observed), ("remove", elem, observed)
        else:
            payload, op = encode_noop(), ("noop",)
        b = Block.create(key(f"rep{r}"), payload, tips)
        blocks.append(b)
        spec[b.id] = op
        seen[r].add(b.id)
    return blocks, spec


def add_wins(spec, present):
    """Elements with an add in ``present`` that no remove in ``present`` observed."""
    removed = set()
    for i in present:
        op = spec[i]
        if op[0] == "remove":
            removed |= op[2]
    return frozenset(op[1] for i in present if (op := spec[i])[0] == "add" and i not in removed)
