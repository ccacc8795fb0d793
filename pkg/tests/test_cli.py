import json

import pytest
import yaml

from diplobench.cli import EXIT_CONFIG, EXIT_OK, build_parser, main
from diplobench.metrics import game_score, invalid_order_rate, score_inputs
from diplobench.records import MatchRecord

FIXTURES = __import__("pathlib").Path(__file__).parent / "fixtures"


def write_yaml(path, data):
    path.write_text(yaml.safe_dump(data))
    return str(path)


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_datc_command(capsys):
    code, out, _ = run(["datc"], capsys)
    assert code == EXIT_OK
    assert "mandatory 100.0%" in out and "6.A:" in out


def test_map_validate(tmp_path, capsys):
    code, out, _ = run(["map-validate", FIXTURES / "fig2.map"], capsys)
    assert code == EXIT_OK and "6 provinces" in out
    broken = tmp_path / "broken.map"
    broken.write_text("\n".join(
        line for line in (FIXTURES / "fig2.map").read_text().splitlines() if line != "EDGE ARMY BOH TYR"
    ))
    code, _, err = run(["map-validate", broken], capsys)
    assert code == EXIT_CONFIG and "TYR" in err and "BOH" in err
    code, _, _ = run(["map-validate", tmp_path / "missing.map"], capsys)
    assert code == EXIT_CONFIG


def test_run_is_deterministic(tmp_path, capsys):
    cfg = write_yaml(tmp_path / "c.yaml", {"match": {"assignment": "random-chatty", "max_year": 1902}})
    for name in ("a", "b"):
        code, out, err = run(["run", "--config", cfg, "--seed", 4, "--out", tmp_path / name], capsys)
        assert code == EXIT_OK and "S1901M" in err
        assert out.strip().endswith("match_seed4.jsonl")
    a, b = (tmp_path / n / "match_seed4.jsonl" for n in ("a", "b"))
    assert a.read_bytes() == b.read_bytes()
    assert sorted(p.name for p in (tmp_path / "a").iterdir()) == ["match_seed4.jsonl"]


def test_flags_override_config(tmp_path, capsys):
    cfg = write_yaml(tmp_path / "c.yaml", {"match": {"assignment": "hold", "max_year": 1925, "press": "FULL"}})
    code, out, _ = run(["run", "--config", cfg, "--press", "none", "--max-year", 1901, "--seed", 1, "--out", tmp_path], capsys)
    assert code == EXIT_OK
    record = MatchRecord.load(out.strip())
    assert record.config["press"] == "NONE" and record.config["max_year"] == 1901
    assert record.config["negotiation_rounds"] == 0


def test_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("match: [unclosed")
    assert run(["run", "--config", bad, "--out", tmp_path], capsys)[0] == EXIT_CONFIG
    unknown = write_yaml(tmp_path / "u.yaml", {"match": {"assignment": "hold", "colour": "red"}})
    assert run(["run", "--config", unknown, "--out", tmp_path], capsys)[0] == EXIT_CONFIG
    secret = write_yaml(tmp_path / "s.yaml", {"endpoints": {"x": {"base_url": "u", "model_id": "m", "api_key": "k"}}})
    code, _, err = run(["run", "--config", secret, "--out", tmp_path], capsys)
    assert code == EXIT_CONFIG and "environment variable" in err
    assert run(["run", "--config", tmp_path / "nope.yaml"], capsys)[0] == EXIT_CONFIG
    with pytest.raises(SystemExit):
        build_parser().parse_args(["fly"])


def test_benchmark_and_analyze(tmp_path, capsys):
    cfg = write_yaml(tmp_path / "b.yaml", {
        "benchmark": {"model": "random", "opponent": "hold", "n": 3, "power": "FRANCE"},
        "match": {"max_year": 1903, "press": "NONE"},
    })
    code, out, _ = run(["benchmark", "--config", cfg, "--out", tmp_path / "bench"], capsys)
    assert code == EXIT_OK
    result = json.loads(out)
    logs = sorted((tmp_path / "bench").glob("match_*.jsonl"))
    assert len(logs) == 3 and len(result["scores"]) == 3
    records = [MatchRecord.load(p) for p in logs]
    assert result["scores"] == [game_score(score_inputs(r, "FRANCE")) for r in records]

    code, out, _ = run(["analyze", tmp_path / "bench", "--out", tmp_path / "rep"], capsys)
    assert code == EXIT_OK
    rows = (tmp_path / "rep" / "scores.csv").read_text().splitlines()
    assert len(rows) == 4
    for row, record in zip(rows[1:], records):
        assert float(row.split(",")[2]) == game_score(score_inputs(record, "FRANCE"))
    rates = (tmp_path / "rep" / "invalid_rates.csv").read_text().splitlines()[1:]
    for row, record in zip(rates, records):
        assert int(row.split(",")[2]) == invalid_order_rate(record, "FRANCE").submitted
    text = (tmp_path / "rep" / "report.txt").read_text()
    assert "mean " in text and "95% CI" in text
    summary = json.loads(out)
    assert summary["matches"] == 3


def test_analyze_rejects_empty_and_mixed(tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    code, _, err = run(["analyze", tmp_path / "empty", "--out", tmp_path / "rep"], capsys)
    assert code == EXIT_CONFIG and "no match logs" in err
    assert not (tmp_path / "rep" / "scores.csv").exists()
    mixed = tmp_path / "mixed"
    mixed.mkdir()
    (mixed / "a.jsonl").write_text(json.dumps({"type": "header", "schema": "diplobench.match/1", "config": {}}) + "\n")
    (mixed / "b.jsonl").write_text(json.dumps({"type": "header", "schema": "diplobench.match/0", "config": {}}) + "\n")
    code, _, err = run(["analyze", mixed, "--out", tmp_path / "rep2"], capsys)
    assert code == EXIT_CONFIG and "diplobench.match/0" in err and "diplobench.match/1" in err


def test_csa_commands(tmp_path, capsys):
    cfg = write_yaml(tmp_path / "c.yaml", {"match": {"assignment": "random-chatty", "max_year": 1901}})
    code, out, _ = run(["run", "--config", cfg, "--seed", 2, "--out", tmp_path], capsys)
    log = out.strip()
    code, out, _ = run(["csa-capture", log, "F1901M", "--out", tmp_path / "snaps"], capsys)
    assert code == EXIT_OK
    snap = out.strip()
    code, out, _ = run(["csa-replay", snap, "--depth", 3, "--variant", "V2", "--out", tmp_path / "csa"], capsys)
    assert code == EXIT_OK and out.strip().endswith("replay_F1901M_V2.jsonl")
    assert len((tmp_path / "csa" / "replay_F1901M_V2.jsonl").read_text().splitlines()) == 3
    summary = json.loads((tmp_path / "csa" / "replay_F1901M_V2.summary.json").read_text())
    assert summary["depth"] == 3 and summary["prompt_config"]["variant"] == "V2"
    assert run(["csa-capture", log, "S1950M", "--out", tmp_path / "snaps"], capsys)[0] == EXIT_CONFIG


def test_shipped_configs_parse(capsys, tmp_path):
    from pathlib import Path

    from diplobench.cli import build_match_config, load_config

    root = Path(__file__).resolve().parent.parent / "configs"
    for name in ("benchmark.yaml", "persuasion.yaml", "ablation.yaml"):
        args = build_parser().parse_args(["run", "--config", str(root / name)])
        build_match_config(load_config(str(root / name)), args)
    code, out, _ = run([
        "csa-persuade", "--config", root / "persuasion.yaml", "--method", "jailbreak", "--depth", 2, "--out", tmp_path,
    ], capsys)
    assert code == EXIT_OK and json.loads(out)["JAILBREAK"] == {"success_rate": 1.0, "mean_magnitude": 2.0}


def test_analyze_with_judgments(tmp_path, capsys):
    from diplobench.judges import FulfillmentRecord, PhaseJudgment, PromiseRecord, write_judgments

    cfg = write_yaml(tmp_path / "c.yaml", {"match": {"assignment": "hold", "max_year": 1901, "press": "NONE"}})
    _, out, _ = run(["run", "--config", cfg, "--seed", 1, "--out", tmp_path / "logs"], capsys)
    p = PromiseRecord(0, True, "support", "conditional", 0.9, "", "x", "FRANCE", "ITALY", "S1901M", "run-1")
    judgments = [
        PhaseJudgment("run-1", "S1901M", "FRANCE", [p], p, FulfillmentRecord(0, False, "strategic", 0.8)),
        PhaseJudgment("run-1", "F1901M", "FRANCE", [], None, None),
    ]
    path = tmp_path / "j.judgments.jsonl"
    write_judgments(judgments, path)
    assert json.loads(path.read_text().splitlines()[0])["conditional"] is True
    code, out, _ = run(["analyze", tmp_path / "logs", "--judgments", path, "--out", tmp_path / "rep"], capsys)
    assert code == EXIT_OK
    betrayal = json.loads(out)["betrayal"]
    assert betrayal["overall"] == 1.0 and betrayal["per_type"]["support"] == 1.0
    assert "Betrayal rate: 100.0% of 1 judged promises" in (tmp_path / "rep" / "report.txt").read_text()
