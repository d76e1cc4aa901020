import json
from pathlib import Path

import pytest

from blocklace.cli import main
from blocklace.core import Block, dump_blocks
from blocklace.sim import node_key

from builders import blk

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def cli(*args, capsys=None):
    code = main([str(a) for a in args])
    out = capsys.readouterr() if capsys else None
    return code, out


@pytest.fixture(scope="module")
def honest_dump(tmp_path_factory):
    p = tmp_path_factory.mktemp("dumps") / "honest.dump"
    assert main(["run", str(SCENARIOS / "honest3.scn"), "--quiet", "--dump", str(p)]) == 0
    return p


def test_run_honest(capsys):
    code, out = cli("run", SCENARIOS / "honest3.scn", capsys=capsys)
    assert code == 0
    report = json.loads(out.out)
    assert report["assertions"] and all(a["passed"] for a in report["assertions"].values())
    assert "PASS quiescent" in out.err


def test_run_plain_equivocator_exits_zero(tmp_path):
    out = tmp_path / "r.json"
    assert main(["run", str(SCENARIOS / "equivocator_plain.scn"), "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    assert report["mode"] == "plain"
    assert report["assertions"]["unbounded_harm"]["passed"]


def test_run_missing_file(capsys):
    code, out = cli("run", SCENARIOS / "missing.scn", capsys=capsys)
    assert code == 2 and "error" in out.err


def test_run_failed_assertion_exits_one(tmp_path, capsys):
    p = tmp_path / "x.scn"
    p.write_text('seed = 1\nmax_steps = 20\nassertions = ["not:quiescent"]\n'
                 '[[nodes]]\nname = "a"\n[[nodes]]\nname = "b"\n')
    code, _ = cli("run", p, "--quiet", capsys=capsys)
    assert code == 1


def test_run_flags_override(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    main(["run", str(SCENARIOS / "honest3.scn"), "--seed", "9", "--mode", "plain", "--out", str(a)])
    main(["run", str(SCENARIOS / "honest3.scn"), "--seed", "9", "--mode", "plain", "--out", str(b)])
    assert a.read_bytes() == b.read_bytes()
    d = json.loads(a.read_text())
    assert d["seed"] == 9 and d["mode"] == "plain"


def test_check_honest_dump(honest_dump, capsys):
    code, out = cli("check", honest_dump, capsys=capsys)
    assert code == 0
    assert "closed: yes" in out.out and "brep: yes" in out.out
    assert "eqvc: none" in out.out and "chain: ok" in out.out


def test_check_dangling_predecessor(tmp_path, capsys):
    g = blk("a")
    b = blk("b", g)
    p = tmp_path / "d.dump"
    p.write_text(b.to_bytes().hex() + "\n")
    code, out = cli("check", p, capsys=capsys)
    assert code == 1 and "closed: no" in out.out and "dangling" in out.out


def test_check_undecodable(tmp_path, capsys):
    p = tmp_path / "bad.dump"
    p.write_text("zz\n")
    code, _ = cli("check", p, capsys=capsys)
    assert code == 2


def test_check_reports_scripted_equivocator(tmp_path, capsys):
    dump = tmp_path / "eq.dump"
    assert main(["run", str(SCENARIOS / "equivocator.scn"), "--quiet", "--dump", str(dump),
                 "--dump-node", "a"]) == 0
    code, out = cli("check", dump, capsys=capsys)
    q = node_key("q")[0].hex()
    assert code == 0
    assert f"eqvc: {q}" in out.out and f"byz: {q}" in out.out


def test_check_chain_violation(tmp_path, capsys):
    g = blk("g")
    p = tmp_path / "fork.dump"
    p.write_text(dump_blocks([g, blk("p", g, payload=b"1"), blk("p", g, payload=b"2")]))
    code, out = cli("check", p, capsys=capsys)
    assert "chain: violated" in out.out
    assert code == 0  # closed and repelling despite the fork


def test_check_non_repelling(tmp_path, capsys):
    g = blk("g")
    q1, q2 = blk("q", g, payload=b"1"), blk("q", g, payload=b"2")
    r1, r2 = blk("r", g, payload=b"1"), blk("r", g, payload=b"2")
    p = tmp_path / "nr.dump"
    p.write_text(dump_blocks([g, q1, q2, r1, r2, blk("x", q1, q2), blk("y", r1, r2)]))
    code, out = cli("check", p, capsys=capsys)
    assert code == 1 and "brep: no" in out.out


def test_dot_empty(tmp_path, capsys):
    p = tmp_path / "empty.dump"
    p.write_text("")
    code, out = cli("dot", p, capsys=capsys)
    assert code == 0 and "->" not in out.out and out.out.startswith("digraph")


def test_dot_deterministic(honest_dump, capsys):
    _, first = cli("dot", honest_dump, capsys=capsys)
    _, second = cli("dot", honest_dump, capsys=capsys)
    assert first.out == second.out
    n = len(honest_dump.read_text().splitlines())
    assert first.out.count("[label=") == n


def test_polog_views(honest_dump, tmp_path, capsys):
    code, out = cli("polog", honest_dump, capsys=capsys)
    lines = out.out.splitlines()
    assert code == 0 and len(lines) == len(honest_dump.read_text().splitlines())
    code, out = cli("polog", honest_dump, "--orset", capsys=capsys)
    assert code == 0
    assert all(len(bytes.fromhex(x)) == 1 for x in out.out.split())
    target = tmp_path / "log.txt"
    assert main(["polog", str(honest_dump), "--out", str(target)]) == 0
    assert target.read_text().splitlines() == lines


def test_dump_round_trips_through_blocks(honest_dump):
    for line in honest_dump.read_text().splitlines():
        b = Block.from_bytes(bytes.fromhex(line))
        assert b.well_signed()


def test_requires_subcommand():
    with pytest.raises(SystemExit):
        main([])
