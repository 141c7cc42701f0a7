import json

import yaml

from embedagents import serialization as ser
from embedagents.cli import main
from embedagents.harness import TrajectoryRecord


def test_run_writes_jsonl(tmp_path):
    out = tmp_path / "run.jsonl"
    code = main(["run", "--scenario", "dogmatic", "--gamma", "1/2", "--horizon", "2", "--steps", "3",
                 "--out", str(out)])
    assert code == 0
    rec = TrajectoryRecord.from_jsonl(out.read_text())
    assert len(rec.steps) == 3


def test_run_writes_csv(tmp_path):
    out = tmp_path / "run.csv"
    assert main(["run", "--scenario", "dogmatic", "--gamma", "1/2", "--horizon", "2", "--steps", "2",
                 "--format", "csv", "--out", str(out)]) == 0
    assert out.read_text().startswith("# embedagents-trajectory summary v1\n")


def test_verify_builtin_pd_passes(tmp_path):
    out = tmp_path / "v.jsonl"
    assert main(["verify", "--scenario", "pd", "--out", str(out)]) == 0
    records = [json.loads(x) for x in out.read_text().splitlines()]
    assert all(r["pass"] for r in records)


def test_verify_failing_check_exits_one(tmp_path):
    cfg = tmp_path / "nash.yaml"
    cfg.write_text(yaml.safe_dump({"check": "nash", "scenario": "pd", "profile": ["C", "C"]}))
    out = tmp_path / "v.jsonl"
    assert main(["verify", "--config", str(cfg), "--out", str(out)]) == 1
    assert json.loads(out.read_text())["pass"] is False


def test_usage_errors_exit_two(tmp_path):
    assert main(["run"]) == 2
    assert main(["run", "--scenario", "twin-pd", "--horizon", "2", "--plan-tol", "0.1"]) == 2
    assert main(["run", "--scenario", "twin-pd", "--alpha", "3"]) == 2
    assert main(["bogus"]) == 2
    bad = tmp_path / "bad.yaml"
    bad.write_text("- just\n- a list\n")
    assert main(["verify", "--config", str(bad)]) == 2


def test_scenario_emits_loadable_yaml(tmp_path):
    out = tmp_path / "pd.yaml"
    assert main(["scenario", "--scenario", "see-not-ee", "--out", str(out)]) == 0
    g = ser.game_from_doc(yaml.safe_load(out.read_text()))
    assert g.payoffs[("A", "A")] == (2, 2)
    out = tmp_path / "rk.yaml"
    assert main(["scenario", "--scenario", "mu-rk", "--steps", "3", "--out", str(out)]) == 0
    doc = yaml.safe_load(out.read_text())
    env = ser.table_from_doc(doc["environment"])
    assert env.depth == 3
