"""Tool-call action space.

Every action is a tool name plus a typed argument set. The fifteen tools mirror
the Browser Use controller registry: arguments select elements by DOM index,
never by screen coordinates.

Actions are immutable. ``Action.args`` always holds the full argument tuple in
schema order with defaults materialized, so two actions that differ only in
whether a default was spelled out compare equal.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from typing import Any, Iterable, Mapping

__all__ = [
    "Action",
    "ActionProblem",
    "InvalidAction",
    "TOOL_SCHEMAS",
    "TOOL_NAMES",
    "action_items",
    "canonicalize",
    "parse_canonical",
]

_REQUIRED = object()

# kind tags understood by _coerce
STR, BOOL, NNINT, OPT_NNINT, POS_NUM, STR_LIST = (
    "string",
    "boolean",
    "non-negative integer",
    "optional non-negative integer",
    "positive number",
    "string list",
)

# tool -> ordered ((arg, kind, default), ...); _REQUIRED marks mandatory args
TOOL_SCHEMAS: dict[str, tuple[tuple[str, str, Any], ...]] = {
    "search_google": (("query", STR, _REQUIRED),),
    "done": (
        ("text", STR, _REQUIRED),
        ("success", BOOL, _REQUIRED),
        ("files_to_display", STR_LIST, ()),
    ),
    "click_element_by_index": (
        ("index", NNINT, _REQUIRED),
        ("delay", OPT_NNINT, None),
    ),
    "scroll": (
        ("down", BOOL, _REQUIRED),
        ("num_pages", POS_NUM, _REQUIRED),
        ("index", OPT_NNINT, None),
    ),
    "switch_tab": (("page_id", NNINT, _REQUIRED),),
    "go_back": (),
    "extract_structured_data": (
        ("query", STR, _REQUIRED),
        ("extract_links", BOOL, _REQUIRED),
    ),
    "input_text": (("index", NNINT, _REQUIRED), ("text", STR, _REQUIRED)),
    "refresh": (),
    "wait": (("seconds", NNINT, 3),),
    "scroll_to_text": (("text", STR, _REQUIRED),),
    "go_to_url": (("url", STR, _REQUIRED), ("new_tab", BOOL, _REQUIRED)),
    "read_file": (("file_name", STR, _REQUIRED),),
    "send_keys": (("keys", STR, _REQUIRED),),
    "select_dropdown_option": (("index", NNINT, _REQUIRED), ("text", STR, _REQUIRED)),
}

TOOL_NAMES: tuple[str, ...] = tuple(TOOL_SCHEMAS)

NAME_KEY = "__name__"


@dataclass(frozen=True)
class ActionProblem:
    code: str  # unknown_tool | bad_argument | bad_action_shape
    path: str
    message: str


class InvalidAction(ValueError):
    def __init__(self, problems: list[ActionProblem]):
        self.problems = problems
        super().__init__("; ".join(f"{p.path}: {p.message}" for p in problems))


def _coerce(kind: str, value: Any) -> tuple[Any, str | None]:
    """Return (canonical value, error message or None)."""
    if kind == STR:
        if isinstance(value, str):
            return value, None
        return None, "expected string"
    if kind == BOOL:
        if isinstance(value, bool):
            return value, None
        return None, "expected boolean"
    if kind in (NNINT, OPT_NNINT):
        if value is None and kind == OPT_NNINT:
            return None, None
        if isinstance(value, bool) or not isinstance(value, int):
            return None, "expected integer"
        if value < 0:
            return None, "must be >= 0"
        return value, None
    if kind == POS_NUM:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            return None, "expected number"
        value = float(value)
        if not math.isfinite(value) or value <= 0:
            return None, "must be a finite number > 0"
        return value, None
    if kind == STR_LIST:
        if value is None:
            return (), None
        if isinstance(value, (list, tuple)) and all(isinstance(v, str) for v in value):
            return tuple(value), None
        return None, "expected list of strings"
    raise AssertionError(kind)


def _validate(name: Any, args: Mapping[str, Any], path: str) -> tuple[tuple[tuple[str, Any], ...], list[ActionProblem]]:
    problems: list[ActionProblem] = []
    if not isinstance(name, str) or name not in TOOL_SCHEMAS:
        problems.append(ActionProblem("unknown_tool", path, f"unknown tool {name!r}"))
        return (), problems
    if not isinstance(args, Mapping):
        problems.append(ActionProblem("bad_action_shape", f"{path}.{name}", "arguments must be an object"))
        return (), problems
    schema = TOOL_SCHEMAS[name]
    known = {key for key, _, _ in schema}
    for key in args:
        if key not in known:
            problems.append(ActionProblem("bad_argument", f"{path}.{name}.{key}", "unknown argument"))
    out = []
    for key, kind, default in schema:
        if key not in args:
            if default is _REQUIRED:
                problems.append(ActionProblem("bad_argument", f"{path}.{name}.{key}", "missing required argument"))
                continue
            out.append((key, default))
            continue
        value, err = _coerce(kind, args[key])
        if err is not None:
            problems.append(ActionProblem("bad_argument", f"{path}.{name}.{key}", err))
        else:
            out.append((key, value))
    return tuple(out), problems


@dataclass(frozen=True)
class Action:
    """One validated tool call.

    Build with ``Action.make("click_element_by_index", index=3)`` or
    ``Action.from_json({"click_element_by_index": {"index": 3}})``.
    """

    name: str
    args: tuple[tuple[str, Any], ...]

    def __post_init__(self):
        canon, problems = _validate(self.name, dict(self.args), "action")
        if problems:
            raise InvalidAction(problems)
        if canon != self.args:
            object.__setattr__(self, "args", canon)

    @classmethod
    def make(cls, name: str, **kwargs: Any) -> Action:
        return cls.from_parts(name, kwargs)

    @classmethod
    def from_parts(cls, name: str, args: Mapping[str, Any], path: str = "action") -> Action:
        canon, problems = _validate(name, args, path)
        if problems:
            raise InvalidAction(problems)
        return cls(name, canon)

    @classmethod
    def from_json(cls, obj: Any, path: str = "action") -> Action:
        """Parse the wire shape ``{tool_name: {arg: value, ...}}``."""
        if not isinstance(obj, Mapping) or len(obj) != 1:
            raise InvalidAction([ActionProblem("bad_action_shape", path, "expected a single-key object")])
        ((name, args),) = obj.items()
        if args is None:
            args = {}
        return cls.from_parts(name, args, path)

    def to_json(self) -> dict[str, dict[str, Any]]:
        body = {}
        for key, value in self.args:
            if value is None:
                continue
            body[key] = list(value) if isinstance(value, tuple) else value
        return {self.name: body}

    def __getitem__(self, key: str) -> Any:
        for k, v in self.args:
            if k == key:
                return v
        raise KeyError(key)

    def get(self, key: str, default: Any = None) -> Any:
        try:
            return self[key]
        except KeyError:
            return default

    def __str__(self) -> str:
        return canonicalize(self)


def _render(value: Any) -> str:
    if value is None:
        return "∅"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return json.dumps(list(value), ensure_ascii=False)
    return json.dumps(value, ensure_ascii=False)


def canonicalize(action: Action) -> str:
    """Deterministic one-line rendering, e.g. ``wait{seconds=3}``."""
    inner = ",".join(f"{k}={_render(v)}" for k, v in action.args)
    return f"{action.name}{{{inner}}}"


_decoder = json.JSONDecoder()


def parse_canonical(text: str) -> Action:
    """Inverse of :func:`canonicalize`."""
    brace = text.find("{")
    if brace <= 0 or not text.endswith("}"):
        raise InvalidAction([ActionProblem("bad_action_shape", "action", f"not a canonical form: {text!r}")])
    name = text[:brace]
    body = text[brace + 1 : -1]
    args: dict[str, Any] = {}
    pos = 0
    while pos < len(body):
        eq = body.index("=", pos)
        key = body[pos:eq]
        pos = eq + 1
        if body.startswith("∅", pos):
            value, pos = None, pos + 1
        elif body.startswith("true", pos):
            value, pos = True, pos + 4
        elif body.startswith("false", pos):
            value, pos = False, pos + 5
        else:
            value, pos = _decoder.raw_decode(body, pos)
        args[key] = value
        if pos < len(body):
            if body[pos] != ",":
                raise InvalidAction([ActionProblem("bad_action_shape", "action", f"expected ',' at {pos}")])
            pos += 1
    return Action.from_parts(name, args)


def action_items(action: Action, string_mode: str = "raw") -> Counter:
    """Multiset of ``(key, value)`` items used by the F1 matcher.

    The tool name contributes the distinguished item ``("__name__", name)``.
    Arguments that are absent (``None``) or empty lists contribute nothing.
    ``string_mode="canonical"`` renders every value with the canonical
    renderer instead of keeping native Python values.
    """
    if string_mode not in ("raw", "canonical"):
        raise ValueError(f"unknown string_mode {string_mode!r}")
    items: Counter = Counter()
    items[(NAME_KEY, action.name)] += 1
    for key, value in action.args:
        if value is None or value == ():
            continue
        if string_mode == "canonical":
            value = _render(value)
        items[(key, value)] += 1
    return items


def actions_from_json(objs: Iterable[Any]) -> tuple[Action, ...]:
    return tuple(Action.from_json(o, f"action[{i}]") for i, o in enumerate(objs))
