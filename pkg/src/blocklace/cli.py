"""Command-line entry point.

Exit codes: 0 success, 1 a checked property or scenario assertion failed,
2 unreadable input.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .codec import EncodingError
from .core import Block, Blocklace, dump_blocks, load_blocks, topological
from .crdt import orset_query
from .faults import VALIDITY, Analyzer
from .repelling import PLAIN, REPELLING
from .sim import ScenarioError, Simulator, load

OK, FAILED, BAD_INPUT = 0, 1, 2


def _write(text: str, out: str | None) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _read_dump(path: str) -> list[Block]:
    return load_blocks(Path(path).read_text())


def _closed_part(blocks: list[Block]) -> tuple[Blocklace, list[str]]:
    """The largest closed, correctly signed sub-blocklace, plus problems found."""
    problems = []
    good = []
    for b in blocks:
        if b.well_signed():
            good.append(b)
        else:
            problems.append(f"bad signature {b.id.short()}")
    ids = {b.id for b in good}
    for b in good:
        for p in sorted(b.preds):
            if p not in ids:
                problems.append(f"dangling predecessor {p.short()} of {b.id.short()}")
    lace = Blocklace()
    for b in topological(good):
        if all(p in lace for p in b.preds):
            lace.insert(b)
    return lace, problems


def cmd_run(args: argparse.Namespace) -> int:
    try:
        sc = load(args.scenario)
    except (OSError, ScenarioError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return BAD_INPUT
    changes = {}
    if args.mode:
        changes["mode"] = args.mode
    if args.seed is not None:
        changes["seed"] = args.seed
    if changes:
        sc = sc.with_(**changes)
    sim = Simulator(sc, trace=args.trace)
    res = sim.run()
    report = res.to_json()
    if args.out is not None:
        _write(report, args.out)
    elif not args.quiet:
        sys.stdout.write(report)
    if args.dump:
        node = args.dump_node or (res.correct[0] if res.correct else sc.names[0])
        if node not in sim.runtimes:
            print(f"error: no node {node!r}", file=sys.stderr)
            return BAD_INPUT
        st = sim.runtimes[node].replicas[0].state
        Path(args.dump).write_text(dump_blocks(st.known.subset(st.accepted)))
    if not args.quiet:
        for name, a in res.assertions.items():
            mark = "PASS" if a["passed"] else "FAIL"
            print(f"{mark} {name}: {a['detail']}", file=sys.stderr)
    return OK if res.passed else FAILED


def cmd_check(args: argparse.Namespace) -> int:
    try:
        blocks = _read_dump(args.dump)
    except (OSError, EncodingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return BAD_INPUT
    lace, problems = _closed_part(blocks)
    unique = {b.id for b in blocks}
    closed = not problems and len(lace) == len(unique)
    acyclic = all(not (lace._anc[i] >> i) & 1 for i in range(len(lace)))
    an = Analyzer(lace, VALIDITY[args.validity], repelling=args.mode == REPELLING)
    full = lace.full_mask
    broken = sorted(
        lace._creators[c].hex() for c in range(len(lace._creators))
        if (m := lace._by_creator[c]) & ~(lace._anc[m.bit_length() - 1] | (1 << (m.bit_length() - 1)))
    )
    brep_ok = Analyzer(lace, VALIDITY[args.validity], repelling=True).brep(full)
    lines = [
        f"blocks: {len(unique)}",
        f"closed: {'yes' if closed else 'no'}",
        *(f"  {p}" for p in problems),
        f"acyclic: {'yes' if acyclic else 'no'}",
        f"chain: {'ok' if not broken else 'violated by ' + ' '.join(broken)}",
        f"eqvc: {' '.join(sorted(n.hex() for n in an.equivocators())) or 'none'}",
        f"byz: {' '.join(sorted(n.hex() for n in an.byz())) or 'none'}",
        f"brep: {'yes' if brep_ok else 'no'}",
    ]
    if not args.quiet:
        _write("\n".join(lines) + "\n", args.out)
    return OK if closed and acyclic and brep_ok else FAILED


def cmd_dot(args: argparse.Namespace) -> int:
    try:
        blocks = _read_dump(args.dump)
    except (OSError, EncodingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return BAD_INPUT
    lace, problems = _closed_part(blocks)
    _write(lace.to_dot(), args.out)
    for p in problems:
        print(f"warning: {p}", file=sys.stderr)
    return OK if not problems else FAILED


def cmd_polog(args: argparse.Namespace) -> int:
    try:
        blocks = _read_dump(args.dump)
    except (OSError, EncodingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return BAD_INPUT
    lace, problems = _closed_part(blocks)
    log = Analyzer(lace, VALIDITY[args.validity], repelling=args.mode == REPELLING).polog()
    if args.orset:
        lines = [e.hex() for e in sorted(orset_query(log))]
    else:
        lines = [f"{bid.hex()} {payload.hex()}" for bid, payload in log.events()]
    _write("".join(line + "\n" for line in lines), args.out)
    return OK if not problems else FAILED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="blocklace", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--mode", choices=(PLAIN, REPELLING), default=None)
        p.add_argument("--out", default=None, help="output path (default stdout)")
        p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("run", help="run a scenario file and print its report")
    p.add_argument("scenario")
    common(p)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--trace", action="store_true", help="include the per-event trace")
    p.add_argument("--dump", default=None, help="write one node's final blocklace as a dump")
    p.add_argument("--dump-node", default=None)
    p.set_defaults(func=cmd_run)

    for name, func, text in (
        ("check", cmd_check, "validate a blocklace dump"),
        ("dot", cmd_dot, "render a dump as Graphviz DOT"),
        ("polog", cmd_polog, "print the PO-Log (or OR-Set view) of a dump"),
    ):
        p = sub.add_parser(name, help=text)
        p.add_argument("dump")
        common(p)
        p.add_argument("--validity", choices=sorted(VALIDITY), default="always")
        if name == "polog":
            p.add_argument("--orset", action="store_true", help="print OR-Set elements instead")
        p.set_defaults(func=func)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "mode", None) is None and args.command != "run":
        args.mode = REPELLING
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
