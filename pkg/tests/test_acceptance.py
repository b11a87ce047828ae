"""Acceptance suite: one PASS/FAIL line per criterion.

Run alone with ``pytest tests/test_acceptance.py -s`` to see the lines inline;
they are also repeated in the terminal summary.
"""

import json
import math
import random
import time
from dataclasses import replace

import numpy as np

from riskforge.actions import TOOL_SCHEMAS, Action, action_items
from riskforge.cli import main as cli_main
from riskforge.difficulty import band_from_correct, band_from_tool_count
from riskforge.evaluate import OracleAgent, run_online, score_offline_multi, score_offline_single
from riskforge.fixtures import fixture_path
from riskforge.grpo import (
    KL_PROBE_LEARNING_RATE,
    GroupRollouts,
    ToyPolicy,
    group_advantages,
    grpo_gradient,
    grpo_objective,
    prompts_from_trajectories,
    sample_group,
    token_logprob,
    toy_config,
    train,
)
from riskforge.grpo.policy import ActionGrammar
from riskforge.model import Trajectory, write_trajectories
from riskforge.parser import serialize_response
from riskforge.pipeline import grade_by_rule, grade_difficulty
from riskforge.rewards import RewardConfig, combined_reward, process_weight, tool_f1, tool_match
from riskforge.webenv import Environment, judge, load_site, load_tasks, oracle_episode, oracle_trajectory
from riskforge.webenv.oracle import count_abstract_states

from oracles import oracle_tool_f1, solvable_within

SITE = load_site(fixture_path("site_acme.json"))
TASKS = load_tasks(fixture_path("tasks_acme.jsonl"), SITE)
EPISODES = [oracle_episode(SITE, t, traj_id=t.id) for t in TASKS]
PROMPTS = prompts_from_trajectories(EPISODES)


def _sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


# 1 ---------------------------------------------------------------------------


def test_c01_advantage_normalization(verdict):
    rng = np.random.default_rng(0)
    t0 = time.perf_counter()
    worst_mean = worst_std = 0.0
    degenerate = 0
    ok = True
    for k in range(1000):
        r = rng.random(8) if k % 10 else np.full(8, rng.random())
        if k % 7 == 0:
            r = rng.integers(0, 2, 8).astype(float)
        a = group_advantages(r)
        if np.std(r) < 1e-8:
            degenerate += 1
            ok &= not a.any()
            continue
        worst_mean = max(worst_mean, abs(a.mean()))
        worst_std = max(worst_std, abs(a.std() - 1))
    elapsed = time.perf_counter() - t0
    ok &= worst_mean < 1e-12 and worst_std < 1e-9 and elapsed < 1
    verdict(
        "C1 advantage normalization",
        ok,
        f"max|mean|={worst_mean:.1e} max|std-1|={worst_std:.1e} degenerate={degenerate} {elapsed:.2f}s",
    )


# 2 ---------------------------------------------------------------------------

GRAMMAR_VOCAB = ["click_element_by_index", "done", "index=", "text=", "success=", '"ok"', "0", "1", "true", "false", "|", "<eos>"]


def _random_groups(pol, rng, n_groups=2, G=3, perturb=0.25):
    groups = []
    for p in range(n_groups):
        obs = int(rng.integers(pol.n_obs))
        seqs = [s.tokens for s in sample_group(pol, obs, G, int(rng.integers(1 << 30)), pol.max_pos)]
        lp = [token_logprob(pol, obs, s) for s in seqs]
        old = [x + perturb * rng.normal(size=x.shape) for x in lp]
        ref = [x + perturb * rng.normal(size=x.shape) for x in lp]
        groups.append(GroupRollouts(f"p{p}", obs, seqs, old, ref, rng.random(G), level_weight=float(rng.choice([1.0, 1.1, 1.2]))))
    return groups


def test_c02_gradient_check(verdict):
    t0 = time.perf_counter()
    errors = []
    for seed in range(20):
        rng = np.random.default_rng(1000 + seed)
        if seed % 2:
            pol = ToyPolicy(GRAMMAR_VOCAB, n_obs=2, max_pos=8, grammar=ActionGrammar(GRAMMAR_VOCAB, max_actions=2))
        else:
            pol = ToyPolicy(["a", "b", "c", "<eos>"], n_obs=2, max_pos=5)
        pol.W = rng.normal(scale=0.7, size=pol.W.shape)
        groups = _random_groups(pol, rng)
        kl = float(rng.uniform(0, 0.5))
        grad = grpo_gradient(groups, pol, 0.2, kl)
        fd = np.zeros_like(pol.W)
        h = 1e-5
        for idx in np.ndindex(pol.W.shape):
            w0 = pol.W[idx]
            pol.W[idx] = w0 + h
            up = grpo_objective(groups, pol, 0.2, kl)
            pol.W[idx] = w0 - h
            down = grpo_objective(groups, pol, 0.2, kl)
            pol.W[idx] = w0
            fd[idx] = (up - down) / (2 * h)
        errors.append(np.linalg.norm(grad - fd) / max(np.linalg.norm(grad), np.linalg.norm(fd), 1e-12))
    elapsed = time.perf_counter() - t0
    verdict(
        "C2 GRPO gradient check",
        max(errors) < 1e-4 and elapsed < 30,
        f"{len(errors)} instances, max rel err {max(errors):.1e}, {elapsed:.1f}s",
    )


# 3 ---------------------------------------------------------------------------


def test_c03_zero_objective_identity(verdict):
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(20):
        pol = ToyPolicy(["a", "b", "c", "<eos>"], n_obs=3, max_pos=6)
        pol.W = rng.normal(size=pol.W.shape)
        groups = _random_groups(pol, rng, n_groups=4, G=4, perturb=0.0)
        for weights in (None, list(rng.uniform(0.1, 10, 4))):
            worst = max(worst, abs(grpo_objective(groups, pol, level_weights=weights)))
    verdict("C3 zero-objective identity", worst < 1e-12, f"max |J| = {worst:.1e}")


# 4 ---------------------------------------------------------------------------


def test_c04_process_weight_curve(verdict):
    mid_ok = all(
        process_weight((n + 1) // 2, n, g, d) == g + (1 - g) / 2
        for n in range(3, 31, 2)
        for g in (0.2, 0.4, 0.7, 0.9, 1.0)
        for d in (0.5, 1.0, 2.0, 4.0, 7.0)
    )
    mono_ok = True
    for g in (0.2, 0.4, 0.7, 0.9, 1.0):
        for d in (0.5, 1.0, 2.0, 4.0, 7.0):
            for n in range(2, 31):
                ws = [process_weight(i, n, g, d) for i in range(1, n + 1)]
                mono_ok &= all(a <= b for a, b in zip(ws, ws[1:]))
    first = process_weight(1, 10, 0.7, 4.0)
    last = process_weight(10, 10, 0.7, 4.0)
    ends_ok = abs(first - 0.70540) < 1e-5 and abs(last - 0.99460) < 1e-5
    indep = abs(first - (0.7 + 0.3 * _sigmoid(-4))) < 1e-15 and abs(last - (0.7 + 0.3 * _sigmoid(4))) < 1e-15
    verdict(
        "C4 process-weight curve",
        mid_ok and mono_ok and ends_ok and indep,
        f"midpoint={mid_ok} monotone={mono_ok} endpoints={first:.5f}/{last:.5f}",
    )


# 5 ---------------------------------------------------------------------------

_WORDS = ["acme", "ltd", "registration", "number", "price", "shop", "of"]


def _random_value(rnd, kind):
    if kind == "string":
        return " ".join(rnd.choice(_WORDS) for _ in range(rnd.randint(1, 3)))
    if kind == "boolean":
        return rnd.random() < 0.5
    if kind in ("non-negative integer", "optional non-negative integer"):
        return rnd.randint(0, 2)
    if kind == "positive number":
        return rnd.choice([0.5, 1.0])
    return [rnd.choice(_WORDS)]


def _random_action(rnd, name=None):
    name = name or rnd.choice(sorted(TOOL_SCHEMAS))
    args = {}
    for key, kind, _ in TOOL_SCHEMAS[name]:
        if kind in ("optional non-negative integer", "string list") and rnd.random() < 0.5:
            continue
        args[key] = _random_value(rnd, kind)
    return Action.make(name, **args)


def test_c05_f1_oracle_equivalence(verdict):
    rnd = random.Random(5)
    pairs = mismatches = 0
    while pairs < 10_000:
        a = _random_action(rnd)
        b = _random_action(rnd, a.name if rnd.random() < 0.8 else None)
        if sum(action_items(a).values()) > 4 or sum(action_items(b).values()) > 4:
            continue
        pairs += 1
        mismatches += abs(tool_f1(a, b) - oracle_tool_f1(a, b)) > 1e-12
    click = lambda i: Action.make("click_element_by_index", index=i)  # noqa: E731
    boundary = tool_f1(click(2), click(1)) == 0.5 and tool_match(click(2), click(1)) == 0
    verdict(
        "C5 F1 matcher oracle equivalence",
        mismatches == 0 and boundary,
        f"{pairs} pairs, {mismatches} disagreements, F1=0.5 rejected={boundary}",
    )


# 6 ---------------------------------------------------------------------------


class _Pattern:
    def __init__(self, hits):
        self.hits = hits

    def respond(self, step, attempt, seed):
        return step.gold if attempt < self.hits else None


def test_c06_difficulty_bands(verdict):
    step = EPISODES[1].steps[0]
    expected = {5: "easy", 4: "moderate", 3: "moderate", 2: "moderate", 1: "moderate", 0: "difficult"}
    graded = {c: grade_difficulty(step, _Pattern(c), k=5) for c in expected}
    direct = {c: band_from_correct(c, 5) for c in expected}
    rule = {}
    for n in (1, 2, 3, 4, 6):
        acts = tuple(Action.make("wait", seconds=i) for i in range(n))
        rule[n] = grade_by_rule(replace(step, gold=replace(step.gold, action=acts)))
    rule_expected = {1: "easy", 2: "moderate", 3: "difficult", 4: "difficult", 6: "difficult"}
    ok = graded == expected and direct == expected and rule == rule_expected
    ok &= all(band_from_tool_count(n) == v for n, v in rule_expected.items())
    verdict("C6 difficulty bands", ok, f"k=5 bands {graded}; rule {rule}")


# 7 ---------------------------------------------------------------------------


def test_c07_reward_composition(verdict):
    cfg = RewardConfig()
    a = combined_reward(1, 1.0, 1.0, cfg)
    b = [combined_reward(1, 0.0, t, cfg) for t in (0.7, 0.85, 1.0)]
    grid = [0.0, 0.25, 0.5, 1.0]
    lin = True
    for f in (0, 1):
        for s in grid:
            for t in grid:
                r = combined_reward(f, s, t, cfg)
                lin &= abs(r - (0.1 * f + 0.9 * t * s)) < 1e-15
                lin &= abs(combined_reward(f, 2 * s, t, cfg) - r - (combined_reward(f, s, t, cfg) - combined_reward(f, 0, t, cfg))) < 1e-12
                lin &= abs(combined_reward(f, s, 2 * t, cfg) - r - (combined_reward(f, s, t, cfg) - combined_reward(f, s, 0, cfg))) < 1e-12
        lin &= abs(combined_reward(1, 0.5, 0.5, cfg) - combined_reward(0, 0.5, 0.5, cfg) - 0.1) < 1e-15
    ok = a == 1.0 and all(x == 0.1 for x in b) and lin
    verdict("C7 reward composition", ok, f"(1,1,1)->{a} (1,0,theta)->{b[0]} linear={lin}")


# 8 ---------------------------------------------------------------------------


def test_c08_oracle_replay_closure(verdict):
    t0 = time.perf_counter()
    closure, minimal, checked = True, True, []
    for task in TASKS:
        plan = oracle_trajectory(SITE, task)
        env = Environment(SITE, task)
        s, _ = env.reset()
        for action in plan:
            s, _, out = env.step(s, [action])
            closure &= out[0].ok
        v = judge(task, s, SITE)
        closure &= v.completed and v.success
        if count_abstract_states(SITE, task, depth_cap=len(plan)) <= 10**4:
            s0, _ = env.reset()
            minimal &= not solvable_within(env, task, s0, len(plan) - 1)
            checked.append(task.id)
    elapsed = time.perf_counter() - t0
    verdict(
        "C8 oracle replay closure",
        closure and minimal and elapsed < 60,
        f"{len(TASKS)} tasks closed={closure}; minimal on {len(checked)} tasks={minimal}; {elapsed:.1f}s",
    )


# 9 ---------------------------------------------------------------------------


def test_c09_toy_training(verdict):
    t0 = time.perf_counter()
    cfg = toy_config(seed=0)
    report, _ = train(PROMPTS, RewardConfig(), cfg)
    iters = len(report.iterations["mean_reward"])
    final = report.final_mean_reward
    wins = []
    for seed in range(5):
        one_epoch = dict(seed=seed, epochs=1)
        staged, _ = train(PROMPTS, RewardConfig(), toy_config(**one_epoch))
        binary, _ = train(PROMPTS, RewardConfig(), toy_config(stage_schedule=("later",), **one_epoch))
        wins.append((staged.mean_reward[0], binary.mean_reward[0]))
    n_win = sum(a > b for a, b in wins)
    elapsed = time.perf_counter() - t0
    ok = iters <= 200 and final > 0.9 and n_win == 5 and elapsed < 300
    curve = " ".join(f"{a:.3f}>{b:.3f}" for a, b in wins)
    verdict(
        "C9 toy training",
        ok,
        f"final reward {final:.3f} after {iters} iterations; epoch-1 staged vs binary-only {n_win}/5 ({curve}); {elapsed:.0f}s",
    )


# 10 --------------------------------------------------------------------------


def test_c10_level_reweight_kl(verdict):
    t0 = time.perf_counter()
    pairs = []
    for seed in range(5):
        cfg = toy_config(seed=seed, epochs=1, learning_rate=KL_PROBE_LEARNING_RATE)
        weighted, _ = train(PROMPTS, RewardConfig(), cfg)
        flat, _ = train(PROMPTS, RewardConfig(), replace(cfg, level_reweight=False))
        pairs.append((weighted.mean_kl[0], flat.mean_kl[0]))
    n_more = sum(a > b for a, b in pairs)
    elapsed = time.perf_counter() - t0
    detail = " ".join(f"{a:.2e}>{b:.2e}" for a, b in pairs)
    verdict("C10 level-reweight KL direction", n_more >= 4 and elapsed < 600, f"{n_more}/5 seeds ({detail}); {elapsed:.0f}s")


# 11 --------------------------------------------------------------------------


def _rates(res):
    return [res.overall["accuracy"]] + [d["accuracy"] for d in res.levels.values() if d["n"]]


def test_c11_metric_degeneracy_and_monotonicity(verdict):
    levels = ("easy", "moderate", "difficult")
    singles = [
        Trajectory.build(f"{t.id}-{s.step_index}", [s], difficulty=levels[(i + s.step_index) % 3])
        for i, t in enumerate(EPISODES)
        for s in t.steps
    ]
    multi = [replace(t, difficulty=levels[i % 3]) for i, t in enumerate(EPISODES) if len(t.steps) > 1]
    gold_s = {(t.id, None): serialize_response(t.steps[0].gold) for t in singles}
    gold_m = {(t.id, s.step_index): serialize_response(s.gold) for t in multi for s in t.steps}
    perfect = _rates(score_offline_single(gold_s, singles)) + _rates(score_offline_multi(gold_m, multi))
    online = run_online(OracleAgent(SITE, TASKS), SITE, TASKS)
    perfect += [online.completion_rate, online.success_rate_unconditional, online.success_rate_among_completed]
    degenerate = all(r == 1.0 for r in perfect)

    def corrupt(text, rnd):
        return rnd.choice(["", "not json", serialize_response(replace(multi[0].steps[0].gold, action=(Action.make("refresh"),)))])

    rnd = random.Random(11)
    violations = 0
    for trial in range(1000):
        gold, bench, scorer = (gold_s, singles, score_offline_single) if trial % 2 else (gold_m, multi, score_offline_multi)
        preds = {k: (corrupt(v, rnd) if rnd.random() < 0.3 else v) for k, v in gold.items()}
        correct = [k for k in preds if preds[k] == gold[k]]
        if not correct:
            continue
        before = _rates(scorer(preds, bench))
        k = rnd.choice(correct)
        preds[k] = corrupt(preds[k], rnd)
        after = _rates(scorer(preds, bench))
        violations += any(b > a + 1e-15 for a, b in zip(before, after))
    verdict(
        "C11 metric degeneracy and monotonicity",
        degenerate and violations == 0,
        f"gold scores 100% on {len(perfect)} rates={degenerate}; 1000 corruption trials, {violations} increases",
    )


# 12 --------------------------------------------------------------------------


def _cli_runs(base, inputs):
    gold, preds_s, preds_m, raw = inputs
    return {
        "score-single": ["score-single", "--gold", gold, "--predictions", preds_s, "--out", f"{base}/s.md", "--emit-breakdown", f"{base}/s.jsonl"],
        "score-multi": ["score-multi", "--gold", gold, "--predictions", preds_m, "--out", f"{base}/m.json", "--format", "json"],
        "run-online": ["run-online", "--out", f"{base}/online.json"],
        "train": ["train", "--epochs", "1", "--iterations-per-epoch", "5", "--out-checkpoint", f"{base}/ck.json", "--out-report", f"{base}/rep.json"],
        "pipeline": ["pipeline", "--in", raw, "--out", f"{base}/cur.jsonl", "--report", f"{base}/pipe.json"],
        "grade": ["grade", "--in", gold, "--out", f"{base}/g.jsonl", "--grader", "oracle"],
        "curves": ["curves", "--out", f"{base}/pw.csv"],
        "simulate": ["simulate", "--task", "t01", "--actions", '[{"search_google": {"query": "acme"}}]', "--out-state", f"{base}/st.json"],
    }


def test_c12_cli_determinism(verdict, tmp_path, capsys):
    inputs_dir = tmp_path / "in"
    inputs_dir.mkdir()
    gold = inputs_dir / "gold.jsonl"
    write_trajectories(EPISODES, gold)
    preds_s, preds_m = inputs_dir / "ps.jsonl", inputs_dir / "pm.jsonl"
    with open(preds_s, "w") as fs, open(preds_m, "w") as fm:
        for t in EPISODES:
            fs.write(json.dumps({"id": t.id, "response_raw_text": serialize_response(t.steps[0].gold)}) + "\n")
            for s in t.steps:
                fm.write(json.dumps({"id": t.id, "step_index": s.step_index, "response_raw_text": serialize_response(s.gold)}) + "\n")
    inputs = (str(gold), str(preds_s), str(preds_m), str(fixture_path("raw_trajectories.jsonl")))
    outputs = {}
    for rep in ("a", "b"):
        base = tmp_path / rep
        base.mkdir()
        for name, argv in _cli_runs(base, inputs).items():
            code = cli_main(argv)
            stdout = capsys.readouterr().out
            files = {p.name: p.read_bytes() for p in sorted(base.iterdir())}
            outputs.setdefault(name, []).append((code, stdout, files))
            for p in base.iterdir():
                p.unlink()
    same = {name: runs[0] == runs[1] and runs[0][0] == 0 and runs[0][2] for name, runs in outputs.items()}
    verdict(
        "C12 CLI determinism",
        all(same.values()),
        ", ".join(f"{k}={'identical' if v else 'DIFFERS'}" for k, v in same.items()),
    )
