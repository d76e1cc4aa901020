"""Simulation results, the proposition checks, and the JSON report.

``SimResult`` keeps full block-id sets for the checks; the serialized report
carries digests and counts so that it stays small and byte-deterministic.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

from ..codec import BlockId
from ..crdt import orset_query
from ..repelling import REPELLING

if TYPE_CHECKING:
    from .engine import Simulator


def _digest(ids) -> str:
    h = hashlib.sha256()
    for i in sorted(ids):
        h.update(i.to_bytes())
    return h.hexdigest()


@dataclass
class NodeSummary:
    name: str
    behavior: str
    node_id: str
    produced: int
    accepted: frozenset[BlockId]
    buffered: int
    byz: tuple[str, ...]
    equivocators: tuple[str, ...]
    polog: frozenset[BlockId]
    orset: tuple[str, ...]
    log_length: int
    audit: bool | None

    def as_dict(self) -> dict:
        return {
            "behavior": self.behavior,
            "node_id": self.node_id,
            "produced": self.produced,
            "accepted": len(self.accepted),
            "accepted_digest": _digest(self.accepted),
            "buffered": self.buffered,
            "byz": list(self.byz),
            "equivocators": list(self.equivocators),
            "polog_size": len(self.polog),
            "polog_digest": _digest(self.polog),
            "orset": list(self.orset),
            "log_length": self.log_length,
            "brep_audit": self.audit,
        }


@dataclass
class SimResult:
    scenario: str
    seed: int
    mode: str
    max_steps: int
    final_step: int
    quiescent: bool
    blocks_created: int
    correct: tuple[str, ...]
    detectable: frozenset[str]
    scripted_equivocators: frozenset[str]
    nodes: dict[str, NodeSummary]
    productions: list[tuple[int, str, BlockId, tuple[str, ...]]]
    harm: list[dict]
    public_evidence: dict[str, int]
    q_accepted: dict[tuple[str, str], list[int]]
    axiom_violations: list[str]
    axioms_checked: bool
    faults: dict[str, int]
    trace: list[list] | None
    assertions: dict[str, dict] = field(default_factory=dict)

    @classmethod
    def collect(cls, sim: "Simulator", quiescent: bool) -> "SimResult":
        sc = sim.sc
        nodes = {}
        for name, rt in sim.runtimes.items():
            st = rt.replicas[0].state
            an = st.analyzer
            log = an.polog(st.accepted)
            audit = None
            if rt.spec.is_correct and sc.mode == REPELLING and "brep_invariant" in sc.assertions:
                audit = st.audit_log()
            nodes[name] = NodeSummary(
                name=name,
                behavior=rt.spec.behavior,
                node_id=rt.node.hex(),
                produced=rt.produced,
                accepted=frozenset(st.known.ids_of(st.accepted)),
                buffered=len(st.buffer),
                byz=sim._names_of(st.byz_bits, st),
                equivocators=sim._names_of(an.eqvc_mask(st.accepted), st),
                polog=frozenset(log.ids()),
                orset=tuple(sorted(e.decode("utf-8", "replace") for e in orset_query(log))),
                log_length=len(st.incorporation_log),
                audit=audit,
            )
        res = cls(
            scenario=sc.name,
            seed=sc.seed,
            mode=sc.mode,
            max_steps=sc.max_steps,
            final_step=sim.step,
            quiescent=quiescent,
            blocks_created=sim.blocks_created,
            correct=tuple(sc.correct),
            detectable=sc.detectable(),
            scripted_equivocators=frozenset(
                n.name for n in sc.nodes
                if n.behavior == "equivocator" and n.fork_count >= 2 and n.fork_step <= sc.max_steps
            ),
            nodes=nodes,
            productions=list(sim.productions),
            harm=[sim.harm[k].as_dict() for k in sorted(sim.harm)],
            public_evidence=dict(sorted(sim.public_evidence.items())),
            q_accepted=dict(sorted(sim.q_accepted.items())),
            axiom_violations=list(sim.axiom_violations),
            axioms_checked=sim.check_axioms,
            faults=dict(sorted(sim.faults.items())),
            trace=sim.trace if sim.trace_on else None,
        )
        res.assertions = evaluate(res, sc.assertions)
        return res

    @property
    def passed(self) -> bool:
        return all(a["passed"] for a in self.assertions.values())

    def as_dict(self) -> dict:
        bct = check_byzantine_convergence(self)
        out = {
            "scenario": self.scenario,
            "seed": self.seed,
            "mode": self.mode,
            "max_steps": self.max_steps,
            "final_step": self.final_step,
            "quiescent": self.quiescent,
            "blocks_created": self.blocks_created,
            "nodes": {k: v.as_dict() for k, v in sorted(self.nodes.items())},
            "public_evidence": self.public_evidence,
            "harm": self.harm,
            "accepted_after_evidence": [
                {"observer": o, "accused": q, "blocks": n, "last_step": last}
                for (o, q), (n, last) in self.q_accepted.items()
            ],
            "bct": None if bct is None else {"step": bct[0], "convergent_set": sorted(bct[1])},
            "eventual_visibility": check_eventual_visibility(self),
            "faults": self.faults,
            "axiom_violations": self.axiom_violations[:50],
            "assertions": self.assertions,
        }
        if self.trace is not None:
            out["trace"] = self.trace
            out["productions"] = [
                [s, n, b.hex(), list(z)] for s, n, b, z in self.productions
            ]
        return out

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True, indent=1) + "\n"


# -- proposition checks ----------------------------------------------------------


def check_eventual_visibility(res: SimResult) -> bool:
    """Every block accepted by some correct node is in every correct node's final blocklace."""
    sets = [res.nodes[n].accepted for n in res.correct]
    if not sets:
        return True
    union = frozenset().union(*sets)
    return all(s == union for s in sets)


def check_byzantine_convergence(res: SimResult) -> tuple[int, frozenset[str]] | None:
    """``(BCT, convergent set)``, or ``None`` if correct producers never agree."""
    last: dict[str, tuple[str, ...]] = {}
    for _, name, _, byz in res.productions:
        last[name] = byz
    finals = set(last.values())
    if len(finals) > 1:
        return None
    target = finals.pop() if finals else ()
    bct = 0
    for step, _, _, byz in res.productions:
        if byz != target:
            bct = step + 1
    return bct, frozenset(target)


def check_finite_harm(res: SimResult) -> tuple[bool, str]:
    bad = []
    for e in res.harm:
        if e["accused"] not in res.detectable:
            continue
        settle = e["detection_step"] + max(0, res.max_steps - e["detection_step"]) // 2
        if e["chunks_after"] > len(e["r_q"]):
            bad.append(f"{e['observer']}/{e['accused']}: {e['chunks_after']} chunks > |R_q|={len(e['r_q'])}")
        elif e["last_increase_step"] is not None and e["last_increase_step"] > settle:
            bad.append(f"{e['observer']}/{e['accused']}: still growing at step {e['last_increase_step']}")
    return not bad, "; ".join(bad) or f"{len(res.harm)} ledger entries bounded"


def check_unbounded_harm(res: SimResult) -> tuple[bool, str]:
    """Some correct node still accepts an accused node's blocks late in the run."""
    for (o, q), (n, last) in res.q_accepted.items():
        start = res.public_evidence.get(q)
        if start is None or q not in res.detectable:
            continue
        if last > start + (res.max_steps - start) // 2:
            return True, f"{o} accepted {n} {q}-blocks after evidence, last at step {last}"
    return False, "no late acceptance of accused blocks"


def evaluate(res: SimResult, names) -> dict[str, dict]:
    out = {}
    for raw in names:
        negate = raw.startswith("not:")
        name = raw.removeprefix("not:")
        ok, detail = _check(res, name)
        out[raw] = {"passed": ok != negate, "detail": detail}
    return out


def _check(res: SimResult, name: str) -> tuple[bool, str]:
    correct = [res.nodes[n] for n in res.correct]
    if name == "eventual_visibility":
        ok = check_eventual_visibility(res)
        return ok, "all correct blocklaces equal" if ok else "correct blocklaces differ"
    if name == "byzantine_convergence":
        got = check_byzantine_convergence(res)
        if got is None:
            return False, "correct producers disagree at the end"
        step, group = got
        ok = group == res.detectable
        return ok, f"BCT={step} set={sorted(group)} expected={sorted(res.detectable)}"
    if name == "finite_harm":
        return check_finite_harm(res)
    if name == "unbounded_harm":
        return check_unbounded_harm(res)
    if name == "convergence":
        pl = {n.polog for n in correct}
        orsets = {n.orset for n in correct}
        ok = len(pl) <= 1 and len(orsets) <= 1
        return ok, "polog and OR-Set views agree" if ok else "views differ"
    if name == "equivocators_exact":
        bad = [n.name for n in correct if frozenset(n.equivocators) != res.scripted_equivocators]
        return not bad, f"mismatch at {bad}" if bad else f"{sorted(res.scripted_equivocators)} everywhere"
    if name == "no_false_accusations":
        honest = set(res.correct)
        bad = sorted({(n.name, z) for n in correct for z in n.byz if z in honest})
        return not bad, f"false accusations {bad}" if bad else "none"
    if name == "brep_invariant":
        if res.mode != REPELLING:
            return True, "plain mode: not applicable"
        bad = [n.name for n in correct if n.audit is False]
        return not bad, f"audit failed at {bad}" if bad else "incorporation logs are peel witnesses"
    if name == "axioms":
        if not res.axioms_checked:
            return False, "axioms were not checked during the run"
        return not res.axiom_violations, f"{len(res.axiom_violations)} violations"
    if name == "quiescent":
        return res.quiescent, f"final step {res.final_step}"
    raise KeyError(name)
