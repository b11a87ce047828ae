"""Responses, DOM snapshots, steps and trajectories, plus the JSONL interchange."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Literal, Union

from .actions import Action, InvalidAction

__all__ = [
    "AgentResponse",
    "DomElement",
    "DomSnapshot",
    "StepRecord",
    "Trajectory",
    "SchemaError",
    "RESPONSE_FIELDS",
    "DIFFICULTIES",
    "read_trajectories",
    "write_trajectories",
    "trajectory_from_json",
    "trajectory_to_json",
    "dumps_line",
]

RESPONSE_FIELDS = ("think", "evaluation_previous_goal", "memory", "next_goal", "action")
DIFFICULTIES = ("easy", "moderate", "difficult", "ungraded")

Difficulty = Literal["easy", "moderate", "difficult", "ungraded"]


class SchemaError(ValueError):
    """Malformed interchange record. ``line`` is 1-based (0 when not from a file)."""

    def __init__(self, message: str, line: int = 0, path: str = ""):
        self.line = line
        self.path = path
        where = f"line {line}" if line else "record"
        if path:
            where += f", field {path}"
        super().__init__(f"{where}: {message}")


@dataclass(frozen=True)
class AgentResponse:
    think: str
    evaluation_previous_goal: str
    memory: str
    next_goal: str
    action: tuple[Action, ...]

    def to_json(self) -> dict[str, Any]:
        return {
            "think": self.think,
            "evaluation_previous_goal": self.evaluation_previous_goal,
            "memory": self.memory,
            "next_goal": self.next_goal,
            "action": [a.to_json() for a in self.action],
        }

    @classmethod
    def from_json(cls, obj: Any, path: str = "response") -> AgentResponse:
        """Lenient structural load for trusted files; use the parser for model output."""
        if not isinstance(obj, dict):
            raise SchemaError("expected object", path=path)
        missing = [f for f in RESPONSE_FIELDS if f not in obj]
        if missing:
            raise SchemaError(f"missing {missing}", path=path)
        for f in RESPONSE_FIELDS[:4]:
            if not isinstance(obj[f], str):
                raise SchemaError("expected string", path=f"{path}.{f}")
        if not isinstance(obj["action"], list):
            raise SchemaError("expected list", path=f"{path}.action")
        try:
            actions = tuple(Action.from_json(a, f"{path}.action[{i}]") for i, a in enumerate(obj["action"]))
        except InvalidAction as exc:
            raise SchemaError(str(exc), path=f"{path}.action") from exc
        return cls(obj["think"], obj["evaluation_previous_goal"], obj["memory"], obj["next_goal"], actions)


@dataclass(frozen=True)
class DomElement:
    index: int  # -1 for non-interactive nodes
    tag: str
    text: str
    interactive: bool
    attrs: tuple[tuple[str, str], ...] = ()

    def to_json(self) -> dict[str, Any]:
        return {
            "index": self.index,
            "tag": self.tag,
            "text": self.text,
            "interactive": self.interactive,
            "attrs": dict(self.attrs),
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> DomElement:
        return cls(
            int(obj["index"]),
            str(obj["tag"]),
            str(obj["text"]),
            bool(obj["interactive"]),
            tuple(sorted((str(k), str(v)) for k, v in obj.get("attrs", {}).items())),
        )


@dataclass(frozen=True)
class DomSnapshot:
    """What the agent sees of the page.

    ``elements`` lists the whole page; only those inside
    ``[viewport_start, viewport_start + viewport_size)`` are actionable.
    """

    url: str
    elements: tuple[DomElement, ...] = ()
    viewport_start: int = 0
    viewport_size: int = 0
    tab_ids: tuple[int, ...] = (0,)
    history_depth: int = 0

    def __post_init__(self):
        interactive = [e.index for e in self.elements if e.interactive]
        if interactive != list(range(len(interactive))):
            raise ValueError("interactive element indices must be contiguous from 0")
        if self.elements and not 0 <= self.viewport_start < len(self.elements):
            raise ValueError("viewport_start out of bounds")

    def visible(self) -> tuple[DomElement, ...]:
        stop = self.viewport_start + (self.viewport_size or len(self.elements))
        return self.elements[self.viewport_start : stop]

    def render(self) -> str:
        """Browser-Use style text rendering of the visible window."""
        lines = [f"url: {self.url}"]
        for e in self.visible():
            head = f"[{e.index}]" if e.interactive else ""
            lines.append(f"{head}<{e.tag}>{e.text}</{e.tag}>")
        return "\n".join(lines)

    def to_json(self) -> dict[str, Any]:
        return {
            "url": self.url,
            "elements": [e.to_json() for e in self.elements],
            "viewport_start": self.viewport_start,
            "viewport_size": self.viewport_size,
            "tab_ids": list(self.tab_ids),
            "history_depth": self.history_depth,
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> DomSnapshot:
        return cls(
            url=str(obj["url"]),
            elements=tuple(DomElement.from_json(e) for e in obj.get("elements", [])),
            viewport_start=int(obj.get("viewport_start", 0)),
            viewport_size=int(obj.get("viewport_size", 0)),
            tab_ids=tuple(int(t) for t in obj.get("tab_ids", [0])),
            history_depth=int(obj.get("history_depth", 0)),
        )


Prediction = Union[AgentResponse, str, None]


@dataclass(frozen=True)
class StepRecord:
    question: str
    screenshot_ref: str | None
    dom: DomSnapshot
    gold: AgentResponse | None
    predicted: Prediction = None
    step_index: int = 1
    step_count: int = 1

    def __post_init__(self):
        if not 1 <= self.step_index <= self.step_count:
            raise ValueError(f"step_index {self.step_index} outside 1..{self.step_count}")


@dataclass(frozen=True)
class Trajectory:
    id: str
    kind: Literal["single-step", "multi-step"]
    steps: tuple[StepRecord, ...]
    difficulty: Difficulty = "ungraded"
    source: Literal["raw", "curated"] = "raw"
    provenance: str = "original"
    tags: tuple[str, ...] = field(default=())

    def __post_init__(self):
        n = len(self.steps)
        if self.kind == "single-step" and n != 1:
            raise ValueError(f"{self.id}: single-step trajectory needs exactly 1 step, got {n}")
        if self.kind == "multi-step" and n < 2:
            raise ValueError(f"{self.id}: multi-step trajectory needs >= 2 steps, got {n}")
        if self.kind not in ("single-step", "multi-step"):
            raise ValueError(f"bad kind {self.kind!r}")
        if self.difficulty not in DIFFICULTIES:
            raise ValueError(f"bad difficulty {self.difficulty!r}")
        for s in self.steps:
            if s.step_count != n:
                raise ValueError(f"{self.id}: step_count {s.step_count} != {n}")

    @classmethod
    def build(cls, id: str, steps: Iterable[StepRecord], **kw: Any) -> Trajectory:
        """Renumber ``steps`` and infer ``kind`` from the count."""
        steps = list(steps)
        n = len(steps)
        steps = tuple(replace(s, step_index=i + 1, step_count=n) for i, s in enumerate(steps))
        kind = kw.pop("kind", "single-step" if n == 1 else "multi-step")
        return cls(id=id, kind=kind, steps=steps, **kw)


# --- JSONL interchange -------------------------------------------------------


def _step_to_json(step: StepRecord) -> dict[str, Any]:
    out: dict[str, Any] = {
        "step_index": step.step_index,
        "question": step.question,
        "screenshot_ref": step.screenshot_ref,
        "dom": step.dom.to_json(),
        "gold": step.gold.to_json() if step.gold is not None else None,
    }
    if isinstance(step.predicted, AgentResponse):
        out["predicted"] = step.predicted.to_json()
    elif isinstance(step.predicted, str):
        out["predicted"] = step.predicted
    return out


def trajectory_to_json(traj: Trajectory) -> dict[str, Any]:
    out: dict[str, Any] = {
        "id": traj.id,
        "kind": traj.kind,
        "difficulty": traj.difficulty,
        "source": traj.source,
    }
    if traj.provenance != "original":
        out["provenance"] = traj.provenance
    if traj.tags:
        out["tags"] = list(traj.tags)
    out["steps"] = [_step_to_json(s) for s in traj.steps]
    return out


def _require(obj: dict, key: str, types: type | tuple, line: int, path: str) -> Any:
    if key not in obj:
        raise SchemaError(f"missing field {key!r}", line, f"{path}{key}")
    value = obj[key]
    if not isinstance(value, types) or (isinstance(value, bool) and types is int):
        raise SchemaError(f"bad type for {key!r}", line, f"{path}{key}")
    return value


def trajectory_from_json(obj: Any, line: int = 0) -> Trajectory:
    if not isinstance(obj, dict):
        raise SchemaError("expected a JSON object", line)
    tid = _require(obj, "id", str, line, "")
    kind = _require(obj, "kind", str, line, "")
    difficulty = obj.get("difficulty", "ungraded")
    if difficulty not in DIFFICULTIES:
        raise SchemaError(f"bad difficulty {difficulty!r}", line, "difficulty")
    source = obj.get("source", "raw")
    if source not in ("raw", "curated"):
        raise SchemaError(f"bad source {source!r}", line, "source")
    raw_steps = _require(obj, "steps", list, line, "")
    n = len(raw_steps)
    steps = []
    for i, s in enumerate(raw_steps):
        p = f"steps[{i}]."
        if not isinstance(s, dict):
            raise SchemaError("expected object", line, f"steps[{i}]")
        idx = _require(s, "step_index", int, line, p)
        question = _require(s, "question", str, line, p)
        shot = s.get("screenshot_ref")
        if shot is not None and not isinstance(shot, str):
            raise SchemaError("bad type", line, p + "screenshot_ref")
        dom_obj = _require(s, "dom", dict, line, p)
        try:
            dom = DomSnapshot.from_json(dom_obj)
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(str(exc), line, p + "dom") from exc
        gold = None
        if s.get("gold") is not None:
            try:
                gold = AgentResponse.from_json(s["gold"], path=p + "gold")
            except SchemaError as exc:
                raise SchemaError(str(exc), line, exc.path) from exc
        predicted: Prediction = None
        if "predicted" in s and s["predicted"] is not None:
            if isinstance(s["predicted"], str):
                predicted = s["predicted"]
            else:
                try:
                    predicted = AgentResponse.from_json(s["predicted"], path=p + "predicted")
                except SchemaError as exc:
                    raise SchemaError(str(exc), line, exc.path) from exc
        try:
            steps.append(StepRecord(question, shot, dom, gold, predicted, idx, n))
        except ValueError as exc:
            raise SchemaError(str(exc), line, p + "step_index") from exc
    try:
        return Trajectory(
            id=tid,
            kind=kind,  # type: ignore[arg-type]
            steps=tuple(steps),
            difficulty=difficulty,
            source=source,
            provenance=str(obj.get("provenance", "original")),
            tags=tuple(str(t) for t in obj.get("tags", [])),
        )
    except ValueError as exc:
        raise SchemaError(str(exc), line, "kind") from exc


def dumps_line(obj: Any) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def read_trajectories(path: str | Path) -> list[Trajectory]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON: {exc.msg}", lineno) from exc
            out.append(trajectory_from_json(obj, lineno))
    return out


def write_trajectories(trajectories: Iterable[Trajectory], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for t in trajectories:
            fh.write(dumps_line(trajectory_to_json(t)) + "\n")
