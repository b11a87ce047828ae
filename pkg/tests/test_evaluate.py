import json
from dataclasses import replace

import pytest

from riskforge.actions import Action
from riskforge.evaluate import (
    OfflineResult,
    OnlineResult,
    OracleAgent,
    ReplayAgent,
    UnknownFormat,
    emit_report,
    read_predictions,
    reward_breakdowns,
    run_online,
    score_offline_multi,
    score_offline_single,
    write_predictions,
)
from riskforge.fixtures import fixture_path
from riskforge.model import SchemaError, Trajectory
from riskforge.parser import serialize_response
from riskforge.webenv import load_site, load_tasks, oracle_episode

SITE = load_site(fixture_path("site_acme.json"))
TASKS = load_tasks(fixture_path("tasks_acme.jsonl"), SITE)
EPISODES = [oracle_episode(SITE, t, traj_id=t.id) for t in TASKS]
MULTI = [t for t in EPISODES if len(t.steps) >= 2]


def _single(traj, k, level):
    return Trajectory.build(f"{traj.id}-s{k}", [traj.steps[k]], difficulty=level)


THREE = [_single(EPISODES[0], 0, "easy"), _single(EPISODES[1], 0, "moderate"), _single(EPISODES[2], 0, "difficult")]


def _gold_preds(bench, multi=False):
    return {(t.id, s.step_index if multi else None): serialize_response(s.gold) for t in bench for s in t.steps}


def _wrong(step):
    return serialize_response(replace(step.gold, action=(Action.make("wait", seconds=3),)))


def test_gold_predictions_score_perfect():
    r = score_offline_single(_gold_preds(THREE), THREE)
    assert [r.levels[lv]["accuracy"] for lv in ("easy", "moderate", "difficult")] == [1.0, 1.0, 1.0]
    assert r.accuracy == 1.0 and r.missing == []


def test_three_sample_fixture_middle_wrong():
    preds = _gold_preds(THREE)
    preds[(THREE[1].id, None)] = _wrong(THREE[1].steps[0])
    r = score_offline_single(preds, THREE)
    assert round(100 * r.accuracy, 1) == 66.7
    assert r.levels["moderate"]["accuracy"] == 0.0
    assert r.samples[1]["reason"] == "mismatch"
    md = emit_report(r, "markdown")
    assert "| single-step | 100.0 | 0.0 | 100.0 | 66.7 |" in md


def test_empty_predictions_all_missing(caplog):
    r = score_offline_single({}, THREE)
    assert r.accuracy == 0.0 and len(r.missing) == 3
    assert sum("no prediction" in m for m in caplog.messages) == 3


def test_malformed_prediction_is_wrong():
    preds = _gold_preds(THREE)
    preds[(THREE[0].id, None)] = "not json"
    r = score_offline_single(preds, THREE)
    assert r.samples[0]["reason"].startswith("format:")


def test_multi_four_trajectories_three_perfect():
    bench = MULTI[:4]
    assert len(bench) == 4
    preds = _gold_preds(bench, multi=True)
    last = bench[3].steps[-1]
    preds[(bench[3].id, last.step_index)] = _wrong(last)
    r = score_offline_multi(preds, bench)
    assert 100 * r.accuracy == 75.0
    assert r.samples[3]["failed_step"] == last.step_index


def test_multi_partial_trajectory_fails_with_reason():
    bench = MULTI[:1]
    preds = _gold_preds(bench, multi=True)
    del preds[(bench[0].id, 2)]
    r = score_offline_multi(preds, bench)
    assert r.accuracy == 0.0 and r.samples[0]["reason"] == "missing"


def test_overall_is_count_weighted_mean():
    bench = THREE + [_single(EPISODES[3], 0, "easy")]
    preds = _gold_preds(bench)
    preds[(bench[0].id, None)] = _wrong(bench[0].steps[0])
    r = score_offline_single(preds, bench)
    weighted = sum(d["accuracy"] * d["n"] for d in r.levels.values() if d["n"]) / r.overall["n"]
    assert r.accuracy == pytest.approx(weighted)


def test_prediction_file_round_trip(tmp_path):
    preds = _gold_preds(MULTI[:2], multi=True)
    p = tmp_path / "p.jsonl"
    write_predictions(preds, p)
    assert read_predictions(p) == preds


@pytest.mark.parametrize(
    "line, field",
    [
        ("{", None),
        ('{"response_raw_text": "x"}', "id"),
        ('{"id": "a"}', "response_raw_text"),
        ('{"id": "a", "step_index": 0, "response_raw_text": "x"}', "step_index"),
    ],
)
def test_prediction_schema_errors(tmp_path, line, field):
    p = tmp_path / "p.jsonl"
    p.write_text('{"id": "ok", "response_raw_text": ""}\n' + line + "\n")
    with pytest.raises(SchemaError) as err:
        read_predictions(p)
    assert err.value.line == 2
    if field:
        assert err.value.path == field


def test_duplicate_prediction_rejected(tmp_path):
    p = tmp_path / "p.jsonl"
    p.write_text('{"id": "a", "response_raw_text": ""}\n' * 2)
    with pytest.raises(SchemaError):
        read_predictions(p)


def test_reward_breakdowns_perfect_for_gold():
    rows = reward_breakdowns(_gold_preds(THREE), THREE)
    assert len(rows) == 3 and all(r["combined"] == pytest.approx(1.0) for r in rows)


def test_oracle_agent_online_perfect():
    r = run_online(OracleAgent(SITE, TASKS), SITE, TASKS)
    assert r.completion_rate == r.success_rate_unconditional == r.success_rate_among_completed == 1.0
    assert all(e.error is None for e in r.episodes)


class _Wait:
    def act(self, obs):
        return serialize_response(replace(EPISODES[0].steps[0].gold, action=(Action.make("wait", seconds=1),)))


def test_never_done_agent_completes_nothing():
    r = run_online(_Wait(), SITE, TASKS[:2], max_steps=5)
    assert r.completion_rate == 0.0 and r.success_rate_among_completed == 0.0
    assert all(len(e.steps) == 5 for e in r.episodes)


class _Garbage:
    def act(self, obs):
        return "<<garbage>>"


class _Crash:
    def act(self, obs):
        raise RuntimeError("boom")


def test_malformed_agent_logs_format_failures():
    r = run_online(_Garbage(), SITE, TASKS[:1], max_steps=3)
    e = r.episodes[0]
    assert not e.completed and len(e.steps) == 3
    assert all(not s["format_ok"] and s["failures"] for s in e.steps)


def test_agent_exception_recorded_and_run_continues():
    r = run_online(_Crash(), SITE, TASKS[:3])
    assert r.n_tasks == 3 and all(e.error == "RuntimeError: boom" for e in r.episodes)


def test_online_deterministic_and_replayable(tmp_path):
    agent = OracleAgent(SITE, TASKS)
    a = run_online(agent, SITE, TASKS, seed=3)
    b = run_online(agent, SITE, TASKS, seed=3, workers=4)
    assert emit_report(a, "json") == emit_report(b, "json")
    path = tmp_path / "online.json"
    emit_report(a, "json", path)
    replayed = run_online(ReplayAgent.from_file(path), SITE, TASKS, seed=3)
    assert emit_report(replayed, "json") == emit_report(a, "json")


def test_success_never_exceeds_completion():
    for agent in (OracleAgent(SITE, TASKS), _Wait(), _Garbage()):
        r = run_online(agent, SITE, TASKS, max_steps=4)
        assert 0 <= r.success_rate_unconditional <= r.completion_rate <= 1


def test_report_formats_round_trip():
    r = score_offline_single(_gold_preds(THREE), THREE)
    assert OfflineResult.from_json(json.loads(emit_report(r, "json"))) == r
    assert emit_report(r, "csv").splitlines()[0] == "level,n,correct,accuracy_pct"
    header = emit_report(r, "markdown-table").splitlines()[0]
    assert header == "| Setting | Easy | Moderate | Difficult | Overall |"
    online = run_online(OracleAgent(SITE, TASKS[:2]), SITE, TASKS[:2])
    assert OnlineResult.from_json(json.loads(emit_report(online, "json"))) == online
    with pytest.raises(UnknownFormat):
        emit_report(r, "xml")
