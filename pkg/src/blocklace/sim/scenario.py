"""Scenario files: TOML with a fixed schema, validated at load.

See docs/scenario.md for the full schema. Minimal example::

    seed = 1
    max_steps = 200
    mode = "repelling"

    [[nodes]]
    name = "a"

    [[nodes]]
    name = "q"
    behavior = "equivocator"
    fork_step = 10
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..faults import VALIDITY
from ..repelling import PLAIN, REPELLING

BEHAVIORS = ("correct", "equivocator", "colluder", "malformed_sender", "invalid_sender", "dropper")

ASSERTIONS = (
    "axioms",
    "brep_invariant",
    "byzantine_convergence",
    "convergence",
    "equivocators_exact",
    "eventual_visibility",
    "finite_harm",
    "no_false_accusations",
    "quiescent",
    "unbounded_harm",
)


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class NodeSpec:
    name: str
    behavior: str = "correct"
    cadence: int | None = None
    fork_count: int = 2
    fork_step: int = 0
    partner: str | None = None
    step: int = 0
    bad_payload: str = "taken"
    drop_rate: float = 1.0

    @property
    def is_correct(self) -> bool:
        return self.behavior == "correct"


@dataclass(frozen=True)
class Scenario:
    name: str
    seed: int
    max_steps: int
    nodes: tuple[NodeSpec, ...]
    mode: str = REPELLING
    validity: str = "always"
    max_delay: int = 3
    scripted_delays: tuple[tuple[str, str, int], ...] = ()
    cadence: int = 4
    edges: tuple[tuple[str, str], ...] | None = None
    assertions: tuple[str, ...] = ()
    max_blocks: int | None = None
    tail_steps: int | None = None

    def node(self, name: str) -> NodeSpec:
        for n in self.nodes:
            if n.name == name:
                return n
        raise KeyError(name)

    @property
    def names(self) -> list[str]:
        return [n.name for n in self.nodes]

    @property
    def correct(self) -> list[str]:
        return [n.name for n in self.nodes if n.is_correct]

    def neighbours(self) -> dict[str, list[str]]:
        out: dict[str, set[str]] = {n: set() for n in self.names}
        if self.edges is None:
            for a in self.names:
                out[a] = set(self.names) - {a}
        else:
            for a, b in self.edges:
                out[a].add(b)
                out[b].add(a)
        return {k: sorted(v) for k, v in out.items()}

    def cadence_of(self, spec: NodeSpec) -> int:
        return spec.cadence or self.cadence

    def tail_budget(self) -> int:
        if self.tail_steps is not None:
            return self.tail_steps
        return 40 * (self.max_delay + self.cadence) * max(2, len(self.nodes))

    def detectable(self) -> frozenset[str]:
        """Byzantine nodes whose scripted fault yields public evidence within the run."""
        out = set()
        for n in self.nodes:
            if n.behavior == "equivocator" and n.fork_count >= 2 and n.fork_step <= self.max_steps:
                out.add(n.name)
            elif n.behavior == "malformed_sender" and n.step <= self.max_steps:
                out.add(n.name)
            elif n.behavior == "invalid_sender" and n.step <= self.max_steps:
                out.add(n.name)
        return frozenset(out)

    def with_(self, **changes: Any) -> "Scenario":
        from dataclasses import replace
        return replace(self, **changes)


def _expect(cond: bool, msg: str) -> None:
    if not cond:
        raise ScenarioError(msg)


def _int(data: dict, key: str, default: Any = None, minimum: int = 0) -> Any:
    v = data.get(key, default)
    if v is None:
        return None
    _expect(isinstance(v, int) and not isinstance(v, bool), f"{key} must be an integer")
    _expect(v >= minimum, f"{key} must be >= {minimum}")
    return v


def _node(raw: Any, k: int) -> NodeSpec:
    _expect(isinstance(raw, dict), f"nodes[{k}] must be a table")
    known = {"name", "behavior", "cadence", "fork_count", "fork_step", "partner", "step",
             "bad_payload", "drop_rate"}
    extra = sorted(set(raw) - known)
    _expect(not extra, f"nodes[{k}]: unknown keys {extra}")
    name = raw.get("name")
    _expect(isinstance(name, str) and name != "", f"nodes[{k}] needs a name")
    behavior = raw.get("behavior", "correct")
    _expect(behavior in BEHAVIORS, f"node {name}: unknown behavior {behavior!r}")
    drop = raw.get("drop_rate", 1.0)
    _expect(isinstance(drop, (int, float)) and 0 <= drop <= 1, f"node {name}: drop_rate in [0, 1]")
    partner = raw.get("partner")
    _expect(partner is None or isinstance(partner, str), f"node {name}: partner must be a name")
    bad = raw.get("bad_payload", "taken")
    _expect(isinstance(bad, str), f"node {name}: bad_payload must be a string")
    return NodeSpec(
        name=name,
        behavior=behavior,
        cadence=_int(raw, "cadence", None, 1),
        fork_count=_int(raw, "fork_count", 2, 1),
        fork_step=_int(raw, "fork_step", 0),
        partner=partner,
        step=_int(raw, "step", 0),
        bad_payload=bad,
        drop_rate=float(drop),
    )


def from_dict(data: dict, name: str = "scenario") -> Scenario:
    known = {"name", "seed", "max_steps", "mode", "validity", "delay", "cadence", "nodes",
             "edges", "assertions", "max_blocks", "tail_steps"}
    extra = sorted(set(data) - known)
    _expect(not extra, f"unknown top-level keys {extra}")
    seed = _int(data, "seed", 0)
    _expect(seed < 2**64, "seed must fit in 64 bits")
    max_steps = _int(data, "max_steps", None, 1)
    _expect(max_steps is not None, "max_steps is required")
    mode = data.get("mode", REPELLING)
    _expect(mode in (PLAIN, REPELLING), f"mode must be {PLAIN!r} or {REPELLING!r}")
    validity = data.get("validity", "always")
    _expect(validity in VALIDITY, f"validity must be one of {sorted(VALIDITY)}")

    delay = data.get("delay", {})
    _expect(isinstance(delay, dict), "delay must be a table")
    max_delay = _int(delay, "max", 3, 1)
    scripted = []
    for k, row in enumerate(delay.get("scripted", [])):
        _expect(isinstance(row, dict) and {"from", "to", "delay"} <= set(row),
                f"delay.scripted[{k}] needs from, to, delay")
        scripted.append((row["from"], row["to"], _int(row, "delay", None, 1)))

    raw_nodes = data.get("nodes")
    _expect(isinstance(raw_nodes, list) and raw_nodes, "at least one node is required")
    nodes = tuple(_node(r, k) for k, r in enumerate(raw_nodes))
    names = [n.name for n in nodes]
    _expect(len(set(names)) == len(names), "node names must be unique")
    for n in nodes:
        if n.behavior == "colluder":
            _expect(n.partner in names and n.partner != n.name,
                    f"colluder {n.name} needs a partner from the roster")
        if n.behavior == "invalid_sender":
            _expect(validity == "unique_id", f"invalid_sender {n.name} needs validity = 'unique_id'")
    for a, b, _ in scripted:
        _expect(a in names and b in names, f"scripted delay names unknown node {a!r}/{b!r}")

    edges = data.get("edges")
    if edges is not None:
        _expect(isinstance(edges, list), "edges must be a list of [a, b] pairs")
        pairs = []
        for e in edges:
            _expect(isinstance(e, list) and len(e) == 2 and all(x in names for x in e) and e[0] != e[1],
                    f"bad edge {e!r}")
            pairs.append((e[0], e[1]))
        edges = tuple(sorted(set(tuple(sorted(p)) for p in pairs)))

    assertions = data.get("assertions", [])
    _expect(isinstance(assertions, list), "assertions must be a list")
    for a in assertions:
        _expect(isinstance(a, str) and a.removeprefix("not:") in ASSERTIONS, f"unknown assertion {a!r}")

    sc = Scenario(
        name=str(data.get("name", name)),
        seed=seed,
        max_steps=max_steps,
        nodes=nodes,
        mode=mode,
        validity=validity,
        max_delay=max_delay,
        scripted_delays=tuple(scripted),
        cadence=_int(data, "cadence", 4, 1),
        edges=edges,
        assertions=tuple(assertions),
        max_blocks=_int(data, "max_blocks", None, 1),
        tail_steps=_int(data, "tail_steps", None, 0),
    )
    validate(sc)
    return sc


def validate(sc: Scenario) -> None:
    """Correct nodes must form a connected graph among themselves."""
    correct = sc.correct
    if not correct:
        return
    nb = sc.neighbours()
    ok = set(correct)
    seen = {correct[0]}
    todo = [correct[0]]
    while todo:
        x = todo.pop()
        for y in nb[x]:
            if y in ok and y not in seen:
                seen.add(y)
                todo.append(y)
    _expect(seen == ok, "correct nodes do not form a connected graph")


def load(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        data = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"{path}: {exc}") from exc
    return from_dict(data, name=path.stem)
