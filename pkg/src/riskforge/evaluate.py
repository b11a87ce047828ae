"""Offline and online evaluation.

Offline single-step: a sample is correct when its predicted action list matches
the gold list tool by tool (binary whole-list match). Offline multi-step: a
trajectory succeeds when every step is correct, each step scored against gold
context (teacher forcing). Online: an agent drives the simulator until it calls
done or runs out of steps; completion and two success rates are reported.

Rates are stored as fractions in [0, 1] and rendered as percentages.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Protocol, Sequence

from .model import AgentResponse, DomSnapshot, SchemaError, Trajectory
from .parser import check_response, serialize_response
from .rewards import RewardConfig, score_rollout, stepwise_accuracy
from .webenv import Environment, SiteGraph, TaskSpec, judge, oracle_episode

__all__ = [
    "OfflineResult",
    "OnlineResult",
    "EpisodeLog",
    "Observation",
    "Agent",
    "OracleAgent",
    "ReplayAgent",
    "PolicyAgent",
    "UnknownFormat",
    "read_predictions",
    "write_predictions",
    "score_offline_single",
    "score_offline_multi",
    "reward_breakdowns",
    "run_online",
    "emit_report",
    "LEVELS",
]

log = logging.getLogger(__name__)

LEVELS = ("easy", "moderate", "difficult")


class UnknownFormat(ValueError):
    pass


# --- predictions -------------------------------------------------------------

PredKey = tuple  # (id, step_index or None)


def read_predictions(path: str | Path) -> dict[PredKey, str]:
    """``{(id, step_index|None): response_raw_text}`` from a JSONL prediction file."""
    preds: dict[PredKey, str] = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except UnicodeDecodeError as exc:
        raise SchemaError(f"not UTF-8: {exc}", 0, str(path)) from exc
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"invalid JSON: {exc.msg}", lineno) from exc
        if not isinstance(obj, dict):
            raise SchemaError("expected an object", lineno)
        if not isinstance(obj.get("id"), str):
            raise SchemaError("missing string field", lineno, "id")
        if not isinstance(obj.get("response_raw_text"), str):
            raise SchemaError("missing string field", lineno, "response_raw_text")
        step = obj.get("step_index")
        if step is not None and (not isinstance(step, int) or isinstance(step, bool) or step < 1):
            raise SchemaError("must be a positive integer", lineno, "step_index")
        key = (obj["id"], step)
        if key in preds:
            raise SchemaError(f"duplicate prediction for {key}", lineno)
        preds[key] = obj["response_raw_text"]
    return preds


def write_predictions(preds: dict[PredKey, str], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for (pid, step), text in preds.items():
            obj: dict[str, Any] = {"id": pid}
            if step is not None:
                obj["step_index"] = step
            obj["response_raw_text"] = text
            fh.write(json.dumps(obj, ensure_ascii=False, separators=(",", ":")) + "\n")


def _lookup(preds: dict[PredKey, str], tid: str, step: int, single: bool) -> str | None:
    if (tid, step) in preds:
        return preds[(tid, step)]
    if single:
        return preds.get((tid, None))
    return None


# --- offline -----------------------------------------------------------------


def _judge_step(gold: AgentResponse, raw: str | None) -> tuple[bool, str]:
    if raw is None:
        return False, "missing"
    resp, verdict = check_response(raw)
    if not verdict.ok:
        return False, "format:" + ",".join(verdict.codes())
    if stepwise_accuracy(resp.action, gold.action, "later") == 1.0:
        return True, ""
    return False, "mismatch"


@dataclass
class OfflineResult:
    kind: str
    levels: dict[str, dict[str, Any]]
    overall: dict[str, Any]
    samples: list[dict[str, Any]] = field(default_factory=list)
    missing: list[str] = field(default_factory=list)
    config_hash: str = ""

    @property
    def accuracy(self) -> float:
        return self.overall["accuracy"]

    def to_json(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_json(cls, doc: dict[str, Any]) -> OfflineResult:
        return cls(**doc)


def _aggregate(kind: str, rows: list[dict[str, Any]], missing: list[str]) -> OfflineResult:
    levels = {}
    names = list(LEVELS) + sorted({r["level"] for r in rows} - set(LEVELS))
    for lvl in names:
        sel = [r for r in rows if r["level"] == lvl]
        correct = sum(r["correct"] for r in sel)
        levels[lvl] = {"n": len(sel), "correct": correct, "accuracy": correct / len(sel) if sel else None}
    n = len(rows)
    correct = sum(r["correct"] for r in rows)
    overall = {"n": n, "correct": correct, "accuracy": correct / n if n else 0.0}
    return OfflineResult(kind, levels, overall, rows, missing)


def _pmap(fn, items, workers):
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def score_offline_single(preds: dict[PredKey, str], bench: Sequence[Trajectory], workers: int = 1) -> OfflineResult:
    """Per-sample binary whole-list accuracy by difficulty level; missing predictions count as wrong."""
    samples = [(t, s) for t in bench for s in t.steps]
    multi_ids = {t.id for t in bench if len(t.steps) > 1}

    def one(ts):
        t, s = ts
        sid = t.id if t.id not in multi_ids else f"{t.id}#{s.step_index}"
        ok, reason = _judge_step(s.gold, _lookup(preds, t.id, s.step_index, t.id not in multi_ids))
        return {"id": sid, "level": t.difficulty, "correct": ok, "reason": reason}

    rows = _pmap(one, samples, workers)
    missing = [r["id"] for r in rows if r["reason"] == "missing"]
    for m in missing:
        log.warning("no prediction for %s", m)
    return _aggregate("single-step", rows, missing)


def score_offline_multi(preds: dict[PredKey, str], bench: Sequence[Trajectory], workers: int = 1) -> OfflineResult:
    """Trajectory success iff every step is correct against gold context."""

    def one(t: Trajectory):
        failed, reason = None, ""
        for s in t.steps:
            ok, why = _judge_step(s.gold, _lookup(preds, t.id, s.step_index, False))
            if not ok:
                failed, reason = s.step_index, why
                break
        row = {"id": t.id, "level": t.difficulty, "correct": failed is None, "reason": reason}
        if failed is not None:
            row["failed_step"] = failed
        return row

    rows = _pmap(one, list(bench), workers)
    missing = [r["id"] for r in rows if r["reason"] == "missing"]
    for m in missing:
        log.warning("incomplete predictions for %s", m)
    return _aggregate("multi-step", rows, missing)


def reward_breakdowns(preds: dict[PredKey, str], bench: Sequence[Trajectory], config: RewardConfig | None = None):
    """One reward breakdown per gold step, for per-sample inspection."""
    config = config or RewardConfig(stage="later")
    out = []
    for t in bench:
        for s in t.steps:
            raw = _lookup(preds, t.id, s.step_index, len(t.steps) == 1)
            b = score_rollout(s, raw if raw is not None else "", config, t.difficulty)
            out.append({"id": t.id, "step_index": s.step_index, **b.to_json()})
    return out


# --- online ------------------------------------------------------------------


@dataclass(frozen=True)
class Observation:
    task_id: str
    instruction: str
    step: int
    snapshot: DomSnapshot
    last_outcomes: tuple[str, ...] = ()


class Agent(Protocol):
    def act(self, obs: Observation) -> str: ...


class OracleAgent:
    """Replays the shortest solution found by search, one grouped step per call."""

    def __init__(self, site: SiteGraph, tasks: Sequence[TaskSpec]):
        self._plans = {t.id: [serialize_response(s.gold) for s in oracle_episode(site, t).steps] for t in tasks}

    def act(self, obs: Observation) -> str:
        plan = self._plans[obs.task_id]
        if obs.step <= len(plan):
            return plan[obs.step - 1]
        return ""  # plan exhausted; a malformed reply just burns a step


class ReplayAgent:
    """Re-emits the raw responses recorded in an online result's episode logs."""

    def __init__(self, episodes: dict[str, list[str]]):
        self.episodes = episodes

    @classmethod
    def from_file(cls, path: str | Path) -> ReplayAgent:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls({e["task_id"]: [s["raw"] for s in e["steps"]] for e in doc["episodes"]})

    def act(self, obs: Observation) -> str:
        responses = self.episodes.get(obs.task_id)
        if responses is None:
            raise KeyError(f"no logged episode for task {obs.task_id}")
        if obs.step > len(responses):
            raise IndexError(f"logged episode for {obs.task_id} has only {len(responses)} steps")
        return responses[obs.step - 1]


class PolicyAgent:
    """Greedy decoding of a toy policy; observations are keyed by (instruction, url)."""

    def __init__(self, policy, observations: dict[tuple[str, str], int]):
        self.policy = policy
        self.observations = observations

    def act(self, obs: Observation) -> str:
        import numpy as np

        from .grpo.policy import EOS, decode

        key = (obs.instruction, obs.snapshot.url)
        if key not in self.observations:
            raise KeyError(f"policy has no observation for {key}")
        o = self.observations[key]
        toks: list[int] = []
        eos = self.policy.ids[EOS]
        while len(toks) < self.policy.max_pos:
            t = int(np.argmax(self.policy.log_probs(o, toks)))
            toks.append(t)
            if t == eos:
                break
        return decode(toks, self.policy.vocab)


@dataclass
class EpisodeLog:
    task_id: str
    steps: list[dict[str, Any]]
    completed: bool
    success: bool
    error: str | None = None


@dataclass
class OnlineResult:
    completion_rate: float
    success_rate_unconditional: float
    success_rate_among_completed: float
    n_tasks: int
    episodes: list[EpisodeLog]
    config_hash: str = ""

    def to_json(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_json(cls, doc: dict[str, Any]) -> OnlineResult:
        return cls(**{**doc, "episodes": [EpisodeLog(**e) for e in doc["episodes"]]})


def _episode(agent: Agent, site: SiteGraph, task: TaskSpec, max_steps: int, seed: int) -> EpisodeLog:
    task = replace(task, max_steps=max_steps)
    env = Environment(site, task)
    state, snap = env.reset(seed)
    steps: list[dict[str, Any]] = []
    outcomes: tuple[str, ...] = ()
    error = None
    for k in range(1, max_steps + 1):
        obs = Observation(task.id, task.instruction, k, snap, outcomes)
        try:
            raw = agent.act(obs)
        except Exception as exc:  # agent faults end the episode, not the run
            error = f"{type(exc).__name__}: {exc}"
            break
        resp, verdict = check_response(raw)
        actions = list(resp.action) if verdict.ok else []
        state, snap, outs = env.step(state, actions)
        outcomes = tuple(o.message for o in outs)
        steps.append(
            {
                "step": k,
                "raw": raw,
                "format_ok": verdict.ok,
                "failures": verdict.codes(),
                "outcomes": [{"action": str(o.action), "ok": o.ok, "message": o.message} for o in outs],
                "url": snap.url,
            }
        )
        if state.terminated is not None:
            break
    v = judge(task, state, site)
    return EpisodeLog(task.id, steps, v.completed, v.success, error)


def run_online(
    agent: Agent, site: SiteGraph, tasks: Sequence[TaskSpec], max_steps: int = 20, seed: int = 0, workers: int = 1
) -> OnlineResult:
    episodes = _pmap(lambda t: _episode(agent, site, t, max_steps, seed), list(tasks), workers)
    n = len(episodes)
    completed = sum(e.completed for e in episodes)
    success = sum(e.success for e in episodes)
    return OnlineResult(
        completion_rate=completed / n if n else 0.0,
        success_rate_unconditional=success / n if n else 0.0,
        success_rate_among_completed=success / completed if completed else 0.0,
        n_tasks=n,
        episodes=episodes,
    )


# --- reports -----------------------------------------------------------------


def _pct(x: float | None) -> str:
    return "-" if x is None else f"{100 * x:.1f}"


def emit_report(result: OfflineResult | OnlineResult, fmt: str, path: str | Path | None = None) -> str:
    """Render ``result`` as json, csv or markdown; writes ``path`` when given."""
    if fmt == "json":
        text = json.dumps(result.to_json(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"
    elif fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if isinstance(result, OfflineResult):
            w.writerow(["level", "n", "correct", "accuracy_pct"])
            for lvl, d in result.levels.items():
                w.writerow([lvl, d["n"], d["correct"], _pct(d["accuracy"])])
            w.writerow(["overall", result.overall["n"], result.overall["correct"], _pct(result.overall["accuracy"])])
        else:
            w.writerow(["task_id", "steps", "completed", "success", "error"])
            for e in result.episodes:
                w.writerow([e.task_id, len(e.steps), int(e.completed), int(e.success), e.error or ""])
        text = buf.getvalue()
    elif fmt in ("markdown", "markdown-table"):
        if isinstance(result, OfflineResult):
            head = "| Setting | Easy | Moderate | Difficult | Overall |\n|---|---|---|---|---|\n"
            row = [_pct(result.levels[lvl]["accuracy"]) for lvl in LEVELS] + [_pct(result.overall["accuracy"])]
            text = head + f"| {result.kind} | " + " | ".join(row) + " |\n"
        else:
            head = "| Tasks | Completion | Success | Success among completed |\n|---|---|---|---|\n"
            text = head + (
                f"| {result.n_tasks} | {_pct(result.completion_rate)} | {_pct(result.success_rate_unconditional)}"
                f" | {_pct(result.success_rate_among_completed)} |\n"
            )
    else:
        raise UnknownFormat(f"unknown report format {fmt!r}; use json, csv or markdown")
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text
