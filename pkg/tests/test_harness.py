import json
from fractions import Fraction

import pytest

from embedagents.harness import (
    ExperimentSpec,
    TrajectoryRecord,
    build_context,
    convergence_scan,
    multi_seed_pass_rate,
    run_self_play,
    tail_value,
)


def small_spec(**over):
    d = {"scenario": "dogmatic", "params": {"instance": 3}, "gamma": "1/2", "rounds": 4, "horizon": 2,
         "k_scan": 2, "eps": 0.1}
    d.update(over)
    return ExperimentSpec.from_dict(d)


def test_from_dict_rejects_unknown_keys():
    with pytest.raises(ValueError):
        ExperimentSpec.from_dict({"scenario": "dogmatic", "colour": "red"})
    with pytest.raises(ValueError):
        ExperimentSpec.from_dict({"scenario": "dogmatic", "rounds": 0})


def test_one_shot_scenarios_have_no_loop():
    with pytest.raises(ValueError):
        build_context(ExperimentSpec.from_dict({"scenario": "see-not-ee"}))


def test_jsonl_round_trip():
    rec = run_self_play(small_spec())
    text = rec.to_jsonl()
    header = json.loads(text.splitlines()[0])
    assert header["format"] == "embedagents-trajectory" and header["version"] == 1
    back = TrajectoryRecord.from_jsonl(text)
    assert back.steps == rec.steps and back.spec == rec.spec
    with pytest.raises(ValueError):
        TrajectoryRecord.from_jsonl(text.replace('"version":1', '"version":9', 1))


def test_csv_and_belief_lines():
    rec = run_self_play(small_spec())
    lines = rec.to_csv().splitlines()
    assert lines[0] == "# embedagents-trajectory summary v1"
    assert lines[1].split(",") == ["t", "agent", "action", "percept", "reward", "q_chosen", "d_k"]
    assert len(lines) == 2 + len(rec.steps)
    beliefs = [json.loads(x) for x in rec.belief_lines().splitlines()]
    assert [b["t"] for b in beliefs] == [1, 2, 3, 4]


def test_tail_value_from_rewards():
    rec = run_self_play(small_spec(rounds=5))
    rewards = [float(Fraction(s["rewards"][0])) for s in rec.steps]
    expected = 0.5 * sum(0.5 ** i * r for i, r in enumerate(rewards[1:4]))
    assert tail_value(rec, 2, 3) == pytest.approx(expected)
    with pytest.raises(IndexError):
        tail_value(rec, 4, 5)


def test_same_seed_same_record():
    assert run_self_play(small_spec(seed=7)).to_jsonl() == run_self_play(small_spec(seed=7)).to_jsonl()


def test_scan_and_multi_seed_rates():
    rec = run_self_play(small_spec())
    rep = convergence_scan(rec, 0.1, 2)
    assert len(rep.distances) == len(rec.steps)
    assert set(rep.summary()) == {"eps", "k_scan", "T", "see_at_T", "see_at_final", "scee_at_final"}
    rates = multi_seed_pass_rate(small_spec(rounds=2), [0, 1], 0.1, 2)
    assert rates["seeds"] == 2
    assert 0 <= rates["reached"] <= 1 and 0 <= rates["see_pass"] <= 1
