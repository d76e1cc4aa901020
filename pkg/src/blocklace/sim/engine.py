"""Deterministic discrete-event simulator.

One logical clock and one priority queue keyed by ``(step, seq)``; all
randomness comes from a single ``random.Random(seed)`` drawn in event order,
so a run is a pure function of its scenario. Nodes produce at a fixed cadence
until ``max_steps``. After that correct nodes keep producing only while they
hold accepted blocks their own latest block does not acknowledge (tail
acknowledgements excepted), and the run drains until no event is left.
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field
from functools import lru_cache

from ..codec import BlockId, NodeId, PrivateKey, keygen
from ..core import Block, iter_bits
from ..faults import VALIDITY
from ..payloads import Add, decode_payload, encode_add, encode_noop, encode_register, encode_remove
from ..repelling import NodeState
from .scenario import NodeSpec, Scenario

ELEMENTS = tuple(bytes([c]) for c in b"abcdefgh")


@lru_cache(maxsize=4096)
def _add_elem(payload: bytes) -> bytes | None:
    rec = decode_payload(payload)
    return rec.elem if isinstance(rec, Add) else None


def node_key(name: str) -> tuple[NodeId, PrivateKey]:
    return keygen(f"node:{name}")


# -- behaviour filters ---------------------------------------------------------


def equivocator_filter(me: NodeId):
    """A fork never accepts anything that shows its own equivocation."""
    def accept(st: NodeState, i: int, extended: int) -> bool:
        c = st.known._creator_index.get(me)
        return c is None or not (st.analyzer.eqvc_mask(extended) >> c) & 1
    return accept


def colluder_filter(partner: NodeId):
    """Silently ignore anything that would make the partner Byzantine."""
    def accept(st: NodeState, i: int, extended: int) -> bool:
        c = st.known._creator_index.get(partner)
        return c is None or not (st.analyzer.byz_mask(extended) >> c) & 1
    return accept


def cordial_targets(
    st: NodeState, peers: dict[str, NodeId], sent: dict[str, int] | None = None
) -> dict[str, list[Block]]:
    """Per peer, the accepted blocks its latest known block does not acknowledge.

    ``sent`` masks (in ``st.known`` indices) exclude blocks already on their way.
    """
    known = st.known
    out = {}
    for name, node in sorted(peers.items()):
        covered = (sent or {}).get(name, 0)
        c = known._creator_index.get(node)
        if c is not None:
            own = known._by_creator[c] & st.accepted
            if own:
                top = own.bit_length() - 1
                covered |= known._anc[top] | (1 << top)
        diff = st.accepted & ~covered
        out[name] = [known._blocks[i] for i in iter_bits(diff)]
    return out


# -- runtime state -------------------------------------------------------------


@dataclass
class Replica:
    state: NodeState
    peers: list[str]
    sent: dict[str, int] = field(default_factory=dict)
    content: int = 0
    own_count: int = 0


@dataclass
class Runtime:
    spec: NodeSpec
    node: NodeId
    key: PrivateKey
    cadence: int
    replicas: list[Replica]
    peer_fork: dict[str, int] = field(default_factory=dict)
    forked: bool = False
    fault_done: bool = False
    armed: bool = False
    produced: int = 0
    registrations: int = 0

    def replica_for(self, peer: str) -> Replica:
        return self.replicas[self.peer_fork.get(peer, 0)]


@dataclass
class HarmEntry:
    observer: str
    accused: str
    detection_step: int
    r_q: list[str]
    chunks_after: int = 0
    blocks_after: int = 0
    last_increase_step: int | None = None

    def as_dict(self) -> dict:
        return {
            "observer": self.observer,
            "accused": self.accused,
            "detection_step": self.detection_step,
            "r_q": self.r_q,
            "chunks_after": self.chunks_after,
            "blocks_after": self.blocks_after,
            "last_increase_step": self.last_increase_step,
        }


class Simulator:
    def __init__(self, sc: Scenario, trace: bool = False, check_axioms: bool | None = None):
        self.sc = sc
        self.rng = random.Random(sc.seed)
        self.trace_on = trace
        self.trace: list[list] = []
        self.check_axioms = "axioms" in sc.assertions if check_axioms is None else check_axioms
        self.validity = VALIDITY[sc.validity]
        self.neighbours = sc.neighbours()
        self.delays = {(a, b): d for a, b, d in sc.scripted_delays}
        self.queue: list[tuple] = []
        self.seq = 0
        self.step = 0
        self.blocks_created = 0
        self.tail_acks: set[BlockId] = set()
        self.ids: dict[str, NodeId] = {}
        self.names: dict[NodeId, str] = {}
        self.runtimes: dict[str, Runtime] = {}
        self.productions: list[tuple[int, str, BlockId, tuple[str, ...]]] = []
        self.harm: dict[tuple[str, str], HarmEntry] = {}
        self.public_evidence: dict[str, int] = {}
        self.q_accepted: dict[tuple[str, str], list[int]] = {}
        self.axiom_violations: list[str] = []
        self.faults: dict[str, int] = {}
        for spec in sc.nodes:
            node, key = node_key(spec.name)
            self.ids[spec.name] = node
            self.names[node] = spec.name
        for k, spec in enumerate(sc.nodes):
            self.runtimes[spec.name] = self._runtime(spec)
            cadence = sc.cadence_of(spec)
            self._push(1 + k % cadence, "produce", spec.name)

    def _runtime(self, spec: NodeSpec) -> Runtime:
        node = self.ids[spec.name]
        _, key = node_key(spec.name)
        accept = None
        if spec.behavior == "equivocator":
            accept = equivocator_filter(node)
        elif spec.behavior == "colluder":
            accept = colluder_filter(self.ids[spec.partner])
        st = NodeState(self.validity, self.sc.mode, accept)
        rep = Replica(st, list(self.neighbours[spec.name]))
        return Runtime(spec, node, key, self.sc.cadence_of(spec), [rep])

    # -- queue -------------------------------------------------------------

    def _push(self, step: int, kind: str, *data) -> None:
        self.seq += 1
        heapq.heappush(self.queue, (step, self.seq, kind, data))

    @property
    def production_over(self) -> bool:
        return self.sc.max_blocks is not None and self.blocks_created >= self.sc.max_blocks

    def run(self) -> "SimResult":
        end = self.sc.max_steps + self.sc.tail_budget()
        quiescent = True
        while self.queue:
            step, _, kind, data = heapq.heappop(self.queue)
            if step > end:
                quiescent = False
                break
            self.step = step
            if kind == "produce":
                self._on_produce(data[0])
            else:
                self._on_deliver(*data)
        from .report import SimResult
        return SimResult.collect(self, quiescent)

    # -- production --------------------------------------------------------

    def _on_produce(self, name: str) -> None:
        rt = self.runtimes[name]
        t = self.step
        in_window = t <= self.sc.max_steps and not self.production_over
        if in_window:
            if rt.spec.is_correct:
                self._produce(rt, rt.replicas[0])
            else:
                self._produce_byzantine(rt)
            nxt = t + rt.cadence
            if nxt <= self.sc.max_steps:
                self._push(nxt, "produce", name)
            elif rt.spec.is_correct:
                self._arm(rt, nxt)
            return
        rt.armed = False
        if not rt.spec.is_correct or self.sc.tail_budget() == 0:
            return
        rep = rt.replicas[0]
        if self._needs_ack(rt, rep):
            b = self._produce(rt, rep, payload=encode_noop())
            self.tail_acks.add(b.id)

    def _arm(self, rt: Runtime, step: int | None = None) -> None:
        if rt.armed:
            return
        rt.armed = True
        self._push(step if step is not None else self.step + rt.cadence, "produce", rt.spec.name)

    def _needs_ack(self, rt: Runtime, rep: Replica) -> bool:
        st = rep.state
        known = st.known
        c = known._creator_index.get(rt.node)
        covered = 0
        if c is not None:
            own = known._by_creator[c] & st.accepted
            if own:
                top = own.bit_length() - 1
                covered = known._anc[top] | (1 << top)
        return bool(rep.content & ~covered)

    def _payload(self, rt: Runtime, rep: Replica) -> bytes:
        rng = self.rng
        roll = rng.random()
        elem = rng.choice(ELEMENTS)
        if roll < 0.45:
            return encode_add(elem)
        if roll < 0.7:
            st = rep.state
            observed = st.analyzer.polog(st.accepted).lookup(_add_elem, elem)
            return encode_remove(elem, observed)
        if roll < 0.85:
            rt.registrations += 1
            return encode_register(f"{rt.spec.name}/{rt.registrations}".encode())
        return encode_noop()

    def _produce(self, rt: Runtime, rep: Replica, payload: bytes | None = None,
                 preds: list[BlockId] | None = None) -> Block:
        if payload is None:
            payload = self._payload(rt, rep)
        st = rep.state
        if preds is None:
            b = st.produce(rt.key, payload)
        else:
            b = Block.create(rt.key, payload, preds)
            st.add_own(b)
        rt.produced += 1
        rep.own_count += 1
        self.blocks_created += 1
        i = st.known.index_of(b.id)
        if rt.spec.is_correct:
            self.productions.append(
                (self.step, rt.spec.name, b.id, self._names_of(st.analyzer.byz_down(i), st))
            )
            if self.check_axioms:
                self._check_axioms(rt.spec.name, st, 1 << i)
        if self.trace_on:
            self.trace.append([self.step, "produce", rt.spec.name, b.id.short(), len(b.preds)])
        self._disseminate(rt, rep)
        return b

    def _produce_byzantine(self, rt: Runtime) -> None:
        spec = rt.spec
        t = self.step
        if spec.behavior == "equivocator" and not rt.forked and t >= spec.fork_step:
            self._fork(rt)
        if spec.behavior == "malformed_sender" and not rt.fault_done and t >= spec.step:
            rep = rt.replicas[0]
            st = rep.state
            known = st.known
            tips = list(iter_bits(st.tips))
            deeper = [j for j in tips if known._anc[j]]
            if deeper:
                j = deeper[0]
                extra = known._anc[j].bit_length() - 1
                preds = [known._blocks[k].id for k in tips] + [known._blocks[extra].id]
                self._produce(rt, rep, preds=preds)
                rt.fault_done = True
                self.faults[spec.name] = t
                return
        if spec.behavior == "invalid_sender" and not rt.fault_done and t >= spec.step:
            rep = rt.replicas[0]
            name = spec.bad_payload.encode()
            self._produce(rt, rep, payload=encode_register(name))
            self._produce(rt, rep, payload=encode_register(name))
            rt.fault_done = True
            self.faults[spec.name] = t
            return
        for rep in rt.replicas:
            self._produce(rt, rep)
        if rt.forked and not rt.fault_done and sum(r.own_count > 0 for r in rt.replicas[1:]):
            rt.fault_done = True
            self.faults[spec.name] = t

    def _fork(self, rt: Runtime) -> None:
        base = rt.replicas[0]
        k = rt.spec.fork_count
        reps = [base]
        for _ in range(1, k):
            st = base.state.clone(equivocator_filter(rt.node))
            reps.append(Replica(st, [], dict(base.sent), base.content, 0))
        base.own_count = 0
        peers = sorted(base.peers)
        for r in reps:
            r.peers = []
        for j, p in enumerate(peers):
            reps[j % k].peers.append(p)
            rt.peer_fork[p] = j % k
        rt.replicas = reps
        rt.forked = True

    # -- delivery ----------------------------------------------------------

    def _disseminate(self, rt: Runtime, rep: Replica) -> None:
        if rt.spec.behavior == "dropper":
            self._disseminate_dropper(rt, rep)
            return
        peers = {p: self.ids[p] for p in rep.peers}
        for peer, blocks in cordial_targets(rep.state, peers, rep.sent).items():
            if not blocks:
                continue
            rep.sent[peer] = rep.sent.get(peer, 0) | rep.state.known.mask_of(b.id for b in blocks)
            self._send(rt.spec.name, peer, blocks)

    def _disseminate_dropper(self, rt: Runtime, rep: Replica) -> None:
        st = rep.state
        c = st.known._creator_index.get(rt.node)
        own = st.known._by_creator[c] & st.accepted if c is not None else 0
        for peer in rep.peers:
            diff = own & ~rep.sent.get(peer, 0)
            if not diff:
                continue
            rep.sent[peer] = rep.sent.get(peer, 0) | diff
            if self.rng.random() < rt.spec.drop_rate:
                continue
            self._send(rt.spec.name, peer, [st.known._blocks[i] for i in iter_bits(diff)])

    def _send(self, src: str, dst: str, blocks: list[Block]) -> None:
        delay = self.delays.get((src, dst))
        if delay is None:
            delay = self.rng.randint(1, self.sc.max_delay)
        self._push(self.step + delay, "deliver", dst, src, tuple(blocks))

    def _on_deliver(self, dst: str, src: str, blocks: tuple[Block, ...]) -> None:
        rt = self.runtimes[dst]
        rep = rt.replica_for(src)
        st = rep.state
        for b in blocks:
            st.receive(b)
        before = st.accepted
        chunks = st.try_accept()
        if self.trace_on:
            self.trace.append([self.step, "deliver", dst, src, len(blocks), len(chunks)])
        if not chunks:
            return
        known = st.known
        tail_acks = self.tail_acks
        prev = before
        prev_byz = st.analyzer.byz_mask(before) if rt.spec.is_correct else 0
        for chunk in chunks:
            mask = known.mask_of(chunk.blocks)
            for i in iter_bits(mask):
                if known._blocks[i].id not in tail_acks:
                    rep.content |= 1 << i
            acc = prev | mask
            if rt.spec.is_correct:
                prev_byz = self._observe(dst, st, acc, prev_byz, mask)
                if self.check_axioms:
                    self._check_axioms(dst, st, mask, acc)
            if self.trace_on:
                self.trace.append([self.step, "accept", dst, chunk.top.short(), len(chunk.blocks)])
            prev = acc
        self._disseminate(rt, rep)
        if rt.spec.is_correct and (self.step > self.sc.max_steps or self.production_over):
            if self.sc.tail_budget() and self._needs_ack(rt, rep):
                self._arm(rt)

    # -- bookkeeping ---------------------------------------------------------

    def _names_of(self, cmask: int, st: NodeState) -> tuple[str, ...]:
        return tuple(sorted(self.names[st.known._creators[c]] for c in iter_bits(cmask)))

    def _observe(self, observer: str, st: NodeState, acc: int, prev_byz: int, chunk: int) -> int:
        an = st.analyzer
        known = st.known
        byz_now = an.byz_mask(acc)
        for c in iter_bits(byz_now):
            q = self.names[known._creators[c]]
            if prev_byz >> c & 1:
                n_q = bin(chunk & known._by_creator[c]).count("1")
                if n_q:
                    entry = self.harm[(observer, q)]
                    entry.chunks_after += 1
                    entry.blocks_after += n_q
                    entry.last_increase_step = self.step
            else:
                self.public_evidence.setdefault(q, self.step)
                self.harm[(observer, q)] = HarmEntry(
                    observer, q, self.step, self._r_q(st, acc, byz_now, c)
                )
        for c in range(len(known._creators)):
            n_q = bin(chunk & known._by_creator[c]).count("1")
            if not n_q:
                continue
            q = self.names[known._creators[c]]
            if q in self.public_evidence and self.public_evidence[q] <= self.step:
                rec = self.q_accepted.setdefault((observer, q), [0, -1])
                rec[0] += n_q
                rec[1] = self.step
        return byz_now

    def _r_q(self, st: NodeState, acc: int, byz_now: int, cq: int) -> list[str]:
        known = st.known
        an = st.analyzer
        out = []
        for name in self.sc.names:
            c = known._creator_index.get(self.ids[name])
            if c is None:
                out.append(name)
                continue
            if byz_now >> c & 1:
                continue
            members = known._by_creator[c] & acc
            if any(an.byz_down(i) >> cq & 1 for i in iter_bits(members)):
                continue
            out.append(name)
        return out

    def _check_axioms(self, observer: str, st: NodeState, new: int, acc: int | None = None) -> None:
        known = st.known
        acc = st.accepted if acc is None else acc
        for i in iter_bits(new):
            b = known._blocks[i]
            for p in b.preds:
                j = known._index.get(p)
                if j is None or not (acc >> j) & 1:
                    self.axiom_violations.append(f"{self.step}:{observer}:closed:{b.id.short()}")
                elif j >= i:
                    self.axiom_violations.append(f"{self.step}:{observer}:order:{b.id.short()}")
            if (known._anc[i] >> i) & 1:
                self.axiom_violations.append(f"{self.step}:{observer}:cycle:{b.id.short()}")
        for name in self.sc.correct:
            c = known._creator_index.get(self.ids[name])
            if c is None:
                continue
            members = known._by_creator[c] & acc
            if not members:
                continue
            top = members.bit_length() - 1
            if members & ~(known._anc[top] | (1 << top)):
                self.axiom_violations.append(f"{self.step}:{observer}:chain:{name}")


def run(sc: Scenario, trace: bool = False, check_axioms: bool | None = None):
    return Simulator(sc, trace=trace, check_axioms=check_axioms).run()
