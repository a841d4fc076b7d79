import csv
import io
import json
from pathlib import Path

import pytest

from latsnap.cli import CSV_COLUMNS, main
from latsnap.lattice import ConfigError
from latsnap.scenario import Scenario, execute, failure_chain, randomized, resolve

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def run_cli(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_ela_golden_scenario(capsys, tmp_path):
    code, out, _ = run_cli(capsys, "run", "--scenario", str(SCENARIOS / "ela_crashfree.json"), "--out", str(tmp_path))
    report = json.loads(out)
    assert code == 0 and report["checksPassed"]
    assert set(report["metrics"]["decisionRounds"].values()) == {2}
    assert {p.name for p in tmp_path.iterdir()} == {"trace.jsonl", "report.json", "metrics.json"}


def test_acaso_random_scenario_is_byte_stable(capsys, tmp_path):
    for d in ("a", "b"):
        code, _, _ = run_cli(capsys, "run", "--scenario", str(SCENARIOS / "acaso_random.json"), "--out", str(tmp_path / d))
        assert code == 0
    assert (tmp_path / "a" / "trace.jsonl").read_bytes() == (tmp_path / "b" / "trace.jsonl").read_bytes()


def test_config_error_exit_code(capsys, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"protocol": "ela", "n": 4, "f": 2}))
    code, _, err = run_cli(capsys, "run", "--scenario", str(bad))
    assert code == 3 and json.loads(err)["error"] == "ConfigError"


def test_unknown_protocol_is_config_error():
    with pytest.raises(ConfigError):
        Scenario.from_json({"protocol": "paxos", "n": 3, "f": 1})


def test_horizon_exit_code(capsys, monkeypatch):
    monkeypatch.setenv("LATSNAP_HORIZON", "1500")
    code, out, _ = run_cli(capsys, "run", "--scenario", str(SCENARIOS / "ela_crashfree.json"))
    assert code == 4 and json.loads(out)["status"] == "horizon"


def test_check_failure_exit_code(capsys, tmp_path):
    out = execute(randomized("acaso", 3, 1, 1, crash_prob=0))
    path = tmp_path / "t.jsonl"
    lines = out.trace.to_jsonl().splitlines()
    doctored = []
    for line in lines:
        e = json.loads(line)
        if e["kind"] == "respond" and "snap" in e["record"]:
            e["record"]["snap"] = ["Ym9ndXM="] * 3  # "bogus" everywhere
        doctored.append(json.dumps(e))
    path.write_text("\n".join(doctored) + "\n")
    code, report, _ = run_cli(capsys, "check", "--trace", str(path))
    assert code == 2 and not json.loads(report)["checksPassed"]


def test_check_accepts_exported_trace(capsys, tmp_path):
    out = execute(randomized("tsaso", 3, 1, 4))
    path = tmp_path / "t.jsonl"
    out.trace.write(path)
    code, report, _ = run_cli(capsys, "check", "--trace", str(path))
    assert code == 0 and json.loads(report)["protocol"] == "tsaso"


def test_sweep_rows_and_empty_grid(capsys, tmp_path):
    code, out, _ = run_cli(capsys, "sweep", "--protocol", "acaso", "--n", "3", "4", "--seeds", "2",
                           "--ops-per-node", "2", "--out", str(tmp_path))
    rows = list(csv.DictReader(io.StringIO(out)))
    assert code == 0 and len(rows) == 4
    assert list(rows[0]) == CSV_COLUMNS
    assert all(r["checksPassed"] == "True" for r in rows)
    assert (tmp_path / "sweep.csv").read_text() == out
    code, out, _ = run_cli(capsys, "sweep", "--protocol", "acaso", "--n")
    assert code == 0 and out.strip() == ",".join(CSV_COLUMNS)


def test_sweep_parallel_matches_serial(capsys):
    args = ["sweep", "--protocol", "ela", "--k", "1", "4", "--seeds", "0-2"]
    _, serial, _ = run_cli(capsys, *args)
    _, parallel, _ = run_cli(capsys, *args, "--parallel", "2")
    assert serial == parallel


def test_sweep_failure_dumps_replayable_scenario(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv("LATSNAP_HORIZON", "2500")
    code, _, err = run_cli(capsys, "sweep", "--protocol", "acaso", "--n", "3", "--seeds", "1",
                           "--ops-per-node", "2", "--out", str(tmp_path))
    assert code == 4 and "dumped" in err
    dumped = next(tmp_path.glob("failed-*.json"))
    sc = Scenario.load(dumped)
    first = execute(sc).trace.to_jsonl()
    assert execute(Scenario.load(dumped)).trace.to_jsonl() == first


def test_adversary_emits_chain_scenario(capsys, tmp_path):
    path = tmp_path / "adv.json"
    code, _, _ = run_cli(capsys, "adversary", "--protocol", "ela", "--chain", "1,2,3", "--chain", "4,5,6",
                         "--n", "11", "--f", "5", "--out", str(path))
    assert code == 0
    sc = Scenario.load(path)
    assert sorted(c.node for c in sc.crashes) == [1, 2, 4, 5]
    code, out, _ = run_cli(capsys, "run", "--scenario", str(path))
    assert code == 0 and json.loads(out)["metrics"]["k"] == 4


def test_adversary_rejects_overlong_chain(capsys):
    code, _, _ = run_cli(capsys, "adversary", "--chain", "1,2,3,4", "--n", "5", "--f", "2")
    assert code == 3


def test_run_seed_override_changes_schedule(capsys):
    path = str(SCENARIOS / "acaso_random.json")
    _, a, _ = run_cli(capsys, "run", "--scenario", path, "--format", "csv")
    _, b, _ = run_cli(capsys, "run", "--scenario", path, "--format", "csv", "--seed", "8")
    assert a.splitlines()[0] == b.splitlines()[0] == ",".join(CSV_COLUMNS)
    assert a != b


def test_scenario_json_round_trip():
    sc = resolve(failure_chain("acaso", 4, 2, ops_per_node=2))
    again = Scenario.from_json(json.loads(json.dumps(sc.to_json())))
    assert execute(again).trace.to_jsonl() == execute(sc).trace.to_jsonl()


def test_staircase_chains_cover_k_faulty_nodes():
    for k in (1, 4, 9):
        sc = failure_chain("ela", k, 5)
        assert len(sc.crashes) == k and sc.n == 2 * k + 3
