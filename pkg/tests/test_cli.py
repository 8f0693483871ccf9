import json

import pytest

from cli_runs import run, run_all, snapshot
from generators import join_problem_trace

from swaptrace.crosschain import bancorx_trace
from swaptrace.ingest import dump_trace


@pytest.fixture(autouse=True)
def _isolated_cwd(tmp_path, monkeypatch):
    # commands without --out write to ./out
    monkeypatch.chdir(tmp_path)


def test_every_command_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    codes = run_all(a)
    assert set(codes.values()) == {0}
    assert run_all(b) == codes
    sa, sb = snapshot(a), snapshot(b)
    assert sa.keys() == sb.keys() and sa == sb
    for name in ("detect/report.json", "detect/summary.json", "detect-csv/summary.csv", "indicators/indicators.csv",
                 "lost/lost_tokens.csv", "crosschain/crosschain.csv", "crosschain/delays.csv",
                 "sim/labels.jsonl", "bx/source.jsonl"):
        assert name in sa


def write_join(tmp_path):
    text, reg, _ = join_problem_trace()
    (tmp_path / "t.jsonl").write_text(text)
    (tmp_path / "r.json").write_text(json.dumps(reg.to_dict()))
    return ["--trace", tmp_path / "t.jsonl", "--registry", tmp_path / "r.json"]


def test_detect_and_oracle_compare(tmp_path):
    code, out = run(["detect", *write_join(tmp_path), "--oracle-compare", "--out", tmp_path / "o"])
    assert code == 0
    assert "matches 2  violations 3" in out
    assert "violation_delta 0" in out
    report = json.loads((tmp_path / "o" / "report.json").read_text())
    assert sorted(v["kind"] for v in report["violations"]) == ["I", "II", "IV"]


def test_config_file_supplies_defaults(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("# stricter matching\ntolerance-pct = 0\nmax_group=1\n")
    code, out = run(["--config", cfg, "detect", *write_join(tmp_path), "--out", tmp_path / "o"])
    assert code == 0 and "violations" in out
    cfg.write_text("bogus = 1\n")
    assert run(["--config", cfg, "detect", *write_join(tmp_path)])[0] == 1


def test_crosschain_underwater(tmp_path):
    tr = bancorx_trace(1, n_swaps=5, two_report=1)
    (tmp_path / "s.jsonl").write_text(dump_trace(tr.source))
    (tmp_path / "d.jsonl").write_text(dump_trace(tr.destination))
    code, out = run(["crosschain", "--source", tmp_path / "s.jsonl", "--destination", tmp_path / "d.jsonl",
                     "--quorum", 3, "--out", tmp_path / "o"])
    assert code == 0 and "minted 4  underwater 1  orphans 0" in out
    rows = (tmp_path / "o" / "crosschain.csv").read_text().splitlines()
    assert sum(r.endswith(",false," + r.split(",")[-1]) for r in rows[1:]) == 1


def test_exit_codes(tmp_path):
    args = write_join(tmp_path)
    assert run(["detect", "--trace", tmp_path / "missing.jsonl", "--registry", args[3]])[0] == 1
    assert run(["detect", args[0], args[1]])[0] == 1
    assert run(["detect", *args, "--bogus", "--out", tmp_path / "o"])[0] == 1
    assert run(["detect", *args, "--tolerance-pct", "150"])[0] == 1
    (tmp_path / "bad.jsonl").write_text("{nope\n")
    assert run(["detect", "--trace", tmp_path / "bad.jsonl", "--registry", args[3]])[0] == 1
    assert run(["crosschain"])[0] == 1
    assert run([])[0] == 1
    (tmp_path / "sc.json").write_text(json.dumps({"pools": []}))
    assert run(["simulate", "--scenario", tmp_path / "sc.json", "--out", tmp_path / "s"])[0] == 1


def test_scenario_file_round_trip(tmp_path):
    assert run(["simulate", "--seed", 2, "--events", 1500, "--out", tmp_path / "a"])[0] == 0
    assert run(["simulate", "--scenario", tmp_path / "a" / "scenario.json", "--out", tmp_path / "b"])[0] == 0
    assert (tmp_path / "a" / "trace.jsonl").read_bytes() == (tmp_path / "b" / "trace.jsonl").read_bytes()


def test_params_file(tmp_path):
    assert run(["simulate", "--kind", "strategy", "--seed", 1, "--out", tmp_path / "s"])[0] == 0
    (tmp_path / "p.json").write_text(json.dumps({"x1": "-inf", "x2": "inf", "x3": "inf", "x4": "inf", "x6": "inf"}))
    code, out = run(["indicators", "--trace", tmp_path / "s" / "trace.jsonl", "--registry",
                     tmp_path / "s" / "registry.json", "--params", tmp_path / "p.json", "--out", tmp_path / "o"])
    assert code == 0 and "Attacker" not in out
    (tmp_path / "p.json").write_text("[1]")
    assert run(["indicators", "--trace", tmp_path / "s" / "trace.jsonl", "--registry",
                tmp_path / "s" / "registry.json", "--params", tmp_path / "p.json", "--out", tmp_path / "o2"])[0] == 1
