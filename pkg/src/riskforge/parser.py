"""Strict parsing of raw model output and the binary format reward."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Any

from .actions import Action, InvalidAction
from .model import RESPONSE_FIELDS, AgentResponse

__all__ = [
    "Failure",
    "FormatVerdict",
    "parse_response",
    "check_response",
    "format_reward",
    "serialize_response",
]

log = logging.getLogger(__name__)

FAILURE_CODES = (
    "missing_field",
    "empty_field",
    "bad_action_shape",
    "unknown_tool",
    "bad_argument",
    "not_parseable",
)


@dataclass(frozen=True)
class Failure:
    code: str
    path: str


@dataclass(frozen=True)
class FormatVerdict:
    failures: tuple[Failure, ...] = field(default=())

    @property
    def ok(self) -> bool:
        return not self.failures

    def codes(self) -> list[str]:
        return [f.code for f in self.failures]


def check_response(raw: Any, allow_empty_think: bool = False) -> tuple[AgentResponse | None, FormatVerdict]:
    """Validate ``raw`` and collect every failure found.

    Returns the parsed response (``None`` on any failure) together with the
    verdict. Never raises.
    """
    try:
        return _check(raw, allow_empty_think)
    except Exception as exc:  # pragma: no cover - defensive; the checker is total by construction
        log.debug("parser crashed on input: %r", exc)
        return None, FormatVerdict((Failure("not_parseable", "$"),))


def _check(raw: Any, allow_empty_think: bool) -> tuple[AgentResponse | None, FormatVerdict]:
    if isinstance(raw, bytes):
        raw = raw.decode("utf-8", errors="replace")
    if not isinstance(raw, str):
        return None, FormatVerdict((Failure("not_parseable", "$"),))
    try:
        obj = json.loads(raw)
    except (ValueError, RecursionError):
        return None, FormatVerdict((Failure("not_parseable", "$"),))
    if not isinstance(obj, dict):
        return None, FormatVerdict((Failure("not_parseable", "$"),))

    failures: list[Failure] = []
    extra = [k for k in obj if k not in RESPONSE_FIELDS]
    if extra:
        log.warning("ignoring unknown response fields: %s", extra)

    for name in RESPONSE_FIELDS[:4]:
        if name not in obj:
            failures.append(Failure("missing_field", name))
            continue
        value = obj[name]
        if not isinstance(value, str):
            failures.append(Failure("not_parseable", name))
        elif not value.strip() and not (name == "think" and allow_empty_think):
            failures.append(Failure("empty_field", name))

    actions: list[Action] = []
    if "action" not in obj:
        failures.append(Failure("missing_field", "action"))
    elif not isinstance(obj["action"], list):
        failures.append(Failure("bad_action_shape", "action"))
    elif not obj["action"]:
        failures.append(Failure("empty_field", "action"))
    else:
        for i, item in enumerate(obj["action"]):
            path = f"action[{i}]"
            try:
                actions.append(Action.from_json(item, path))
            except InvalidAction as exc:
                failures.extend(Failure(p.code, p.path) for p in exc.problems)

    if failures:
        return None, FormatVerdict(tuple(failures))
    response = AgentResponse(
        obj["think"],
        obj["evaluation_previous_goal"],
        obj["memory"],
        obj["next_goal"],
        tuple(actions),
    )
    return response, FormatVerdict()


def parse_response(raw: Any, allow_empty_think: bool = False) -> AgentResponse | FormatVerdict:
    """Return the typed response, or the verdict listing every failure."""
    response, verdict = check_response(raw, allow_empty_think)
    return response if response is not None else verdict


def format_reward(raw: Any, allow_empty_think: bool = False) -> int:
    """1 if ``raw`` is a complete, schema-valid response, else 0."""
    response, _ = check_response(raw, allow_empty_think)
    return int(response is not None)


def serialize_response(response: AgentResponse, indent: int | None = None) -> str:
    return json.dumps(response.to_json(), ensure_ascii=False, indent=indent)
