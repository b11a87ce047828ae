import json

import pytest

from riskforge.cli import COMMANDS, build_parser, main, resolve
from riskforge.fixtures import fixture_path
from riskforge.model import read_trajectories, write_trajectories
from riskforge.parser import serialize_response
from riskforge.webenv import load_site, load_tasks, oracle_episode

SITE = load_site(fixture_path("site_acme.json"))
TASKS = load_tasks(fixture_path("tasks_acme.jsonl"), SITE)


def _args(command, *argv):
    return build_parser().parse_args([command, *argv])


def test_help_lists_every_flag_with_default(capsys):
    for name, (_, opts) in COMMANDS.items():
        with pytest.raises(SystemExit):
            main([name, "--help"])
        text = "".join(capsys.readouterr().out.split())
        for o in opts:
            assert o.flag in text and f"(default:{o.default})" in text, (name, o.flag)


def test_reference_hyperparameter_defaults():
    cfg = resolve("train", _args("train"), env={})
    assert (cfg["alpha"], cfg["beta"], cfg["gamma"], cfg["delta"]) == (0.1, 0.9, 0.7, 4.0)
    assert (cfg["group_size"], cfg["kl_coef"]) == (8, 0.04)
    assert resolve("run-online", _args("run-online"), env={})["max_steps"] == 20


def test_precedence_flag_env_file_default(tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"seed": 3, "kl-coef": 0.5, "epochs": 9}))
    env = {"RISKFORGE_SEED": "5", "RISKFORGE_EPOCHS": "7"}
    cfg = resolve("train", _args("train", "--config", str(conf), "--seed", "11"), env=env)
    assert cfg["seed"] == 11  # flag
    assert cfg["epochs"] == 7  # env over file
    assert cfg["kl_coef"] == 0.5  # file over default
    assert cfg["clip_eps"] == 0.2  # default


def test_env_bool():
    cfg = resolve("train", _args("train"), env={"RISKFORGE_LEVEL_REWEIGHT": "off"})
    assert cfg["level_reweight"] is False


def _bench(tmp_path):
    trajs = [oracle_episode(SITE, t, traj_id=t.id) for t in TASKS]
    gold = tmp_path / "gold.jsonl"
    write_trajectories(trajs, gold)
    preds = tmp_path / "pred.jsonl"
    with open(preds, "w") as fh:
        for t in trajs:
            for s in t.steps:
                fh.write(json.dumps({"id": t.id, "step_index": s.step_index, "response_raw_text": serialize_response(s.gold)}) + "\n")
    return gold, preds


def test_score_multi_markdown_and_breakdown(tmp_path):
    gold, preds = _bench(tmp_path)
    out, bd = tmp_path / "r.md", tmp_path / "bd.jsonl"
    assert main(["score-multi", "--gold", str(gold), "--predictions", str(preds), "--out", str(out), "--emit-breakdown", str(bd)]) == 0
    assert "| multi-step |" in out.read_text() and "100.0 |" in out.read_text()
    rows = [json.loads(line) for line in bd.read_text().splitlines()]
    assert rows and all(r["step_acc"] == 1.0 and r["combined"] == pytest.approx(0.1 + 0.9 * r["process_weight"]) for r in rows)
    meta = json.loads((tmp_path / "r.md.meta.json").read_text())
    assert meta["command"] == "score-multi" and len(meta["config_hash"]) == 16


def test_score_bad_path_exit_2(tmp_path):
    assert main(["score-single", "--gold", str(tmp_path / "nope"), "--predictions", str(tmp_path / "nope")]) == 2


def test_score_schema_error_exit_2(tmp_path):
    gold, _ = _bench(tmp_path)
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{not json\n")
    assert main(["score-single", "--gold", str(gold), "--predictions", str(bad)]) == 2


def test_run_online_oracle_and_unknown_agent(tmp_path):
    out = tmp_path / "on.json"
    assert main(["run-online", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["completion_rate"] == doc["success_rate_unconditional"] == 1.0
    assert main(["run-online", "--agent", "telepathy"]) == 1


def test_replay_reexecutes_episodes(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    main(["run-online", "--out", str(a)])
    assert main(["run-online", "--agent", f"replay:{a}", "--out", str(b)]) == 0
    assert json.loads(a.read_text())["episodes"] == json.loads(b.read_text())["episodes"]


def test_fixture_error_exit_3(tmp_path):
    bad = tmp_path / "site.json"
    bad.write_text('{"pages": 3}')
    assert main(["run-online", "--site", str(bad)]) == 3


def test_pipeline_and_grade(tmp_path):
    cur, rep = tmp_path / "cur.jsonl", tmp_path / "rep.json"
    assert main(["pipeline", "--out", str(cur), "--report", str(rep)]) == 0
    report = json.loads(rep.read_text())
    assert [s["stage"] for s in report["stages"]] == ["filter", "clean", "refine", "split", "augment", "grade"]
    graded = tmp_path / "g.jsonl"
    assert main(["grade", "--in", str(cur), "--out", str(graded), "--grader", "rule"]) == 0
    for t in read_trajectories(graded):
        n = max(len(s.gold.action) for s in t.steps)
        assert t.difficulty == ("easy" if n == 1 else "moderate" if n == 2 else "difficult")


def test_pipeline_stage_subset(tmp_path):
    cur, rep = tmp_path / "cur.jsonl", tmp_path / "rep.json"
    assert main(["pipeline", "--out", str(cur), "--report", str(rep), "--stages", "filter"]) == 0
    out = read_trajectories(cur)
    assert len(out) == 7 and all(t.difficulty == "ungraded" for t in out)
    assert main(["pipeline", "--out", str(cur), "--report", str(rep), "--stages", "filter,bogus"]) == 2


def test_curves_process_weight(tmp_path):
    out = tmp_path / "pw.csv"
    assert main(["curves", "--n", "101", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    header = lines[0].split(",")
    cols = list(zip(*[[float(x) for x in line.split(",")] for line in lines[1:]]))
    default = cols[header.index("gamma=0.7;delta=4")]
    assert all(a <= b for a, b in zip(default, default[1:]))
    assert default[50] == pytest.approx(0.85, abs=1e-12)
    assert set(cols[header.index("gamma=1;delta=4")]) == {1.0}
    assert cols[header.index("gamma=0.4;delta=4")][0] == pytest.approx(0.4108, abs=1e-4)
    assert main(["curves", "--what", "histogram"]) == 2


def test_simulate_prints_snapshot(tmp_path, capsys):
    st = tmp_path / "s.json"
    assert main(["simulate", "--actions", '[{"search_google": {"query": "acme"}}]', "--out-state", str(st)]) == 0
    assert "search?q=acme" in capsys.readouterr().out
    assert main(["simulate", "--state", str(st), "--actions", '[{"go_back": {}}]']) == 0
    assert "search?q=acme" not in capsys.readouterr().out.splitlines()[0]


def test_train_smoke_resume_and_binary_only(tmp_path):
    ck, rep = tmp_path / "ck.json", tmp_path / "rep.json"
    small = ["--epochs", "1", "--iterations-per-epoch", "3"]
    assert main(["train", "--out-checkpoint", str(ck), "--out-report", str(rep), *small]) == 0
    assert json.loads(rep.read_text())["stages"] == ["early"]
    ck2, rep2 = tmp_path / "ck2.json", tmp_path / "rep2.json"
    assert main(["train", "--out-checkpoint", str(ck2), "--out-report", str(rep2), "--resume", str(ck), *small]) == 0
    assert json.loads(rep2.read_text())["epochs"] == [2]
    assert json.loads(ck2.read_text())["epoch"] == 2
    rep3 = tmp_path / "rep3.json"
    assert main(["train", "--out-checkpoint", str(ck2), "--out-report", str(rep3), "--stage", "binary-only", *small]) == 0
    assert json.loads(rep3.read_text())["stages"] == ["later"]
    out = tmp_path / "pol.json"
    assert main(["run-online", "--agent", f"policy:{ck}", "--out", str(out)]) == 0


def test_grade_without_gold_exit_2(tmp_path):
    raw = fixture_path("raw_trajectories.jsonl")
    assert main(["grade", "--in", str(raw), "--out", str(tmp_path / "g.jsonl"), "--grader", "oracle"]) == 2
