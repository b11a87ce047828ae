"""Deterministic browser simulator over a :class:`SiteGraph`.

``Environment.step`` is a pure function of ``(state, actions)``: states are
frozen values, and a failed action leaves the state exactly as it was (the
step counter still advances once per ``step`` call).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Any, Sequence

from ..actions import Action
from ..model import DomElement, DomSnapshot
from .site import SiteGraph, TaskSpec, tokens

__all__ = [
    "AlreadyTerminated",
    "ActionOutcome",
    "DoneRecord",
    "EnvState",
    "Environment",
    "Tab",
    "Verdict",
    "judge",
]


class AlreadyTerminated(RuntimeError):
    pass


@dataclass(frozen=True)
class Tab:
    url: str
    viewport: int = 0
    history: tuple[str, ...] = ()


@dataclass(frozen=True)
class DoneRecord:
    text: str
    success: bool
    url: str


@dataclass(frozen=True)
class EnvState:
    tabs: tuple[Tab, ...]
    active_tab: int = 0
    input_values: tuple[tuple[str, int, str], ...] = ()  # (url, index, value), sorted
    focus: tuple[str, int] | None = None
    files: tuple[tuple[str, str], ...] = ()
    extracted: tuple[str, ...] = ()  # fact keys, sorted
    clock: int = 0
    step_counter: int = 0
    terminated: DoneRecord | None = None

    @property
    def tab(self) -> Tab:
        return self.tabs[self.active_tab]

    @property
    def url(self) -> str:
        return self.tab.url

    def value(self, url: str, index: int) -> str | None:
        for u, i, v in self.input_values:
            if u == url and i == index:
                return v
        return None

    def to_json(self) -> dict[str, Any]:
        return {
            "tabs": [{"url": t.url, "viewport": t.viewport, "history": list(t.history)} for t in self.tabs],
            "active_tab": self.active_tab,
            "input_values": [list(x) for x in self.input_values],
            "focus": list(self.focus) if self.focus else None,
            "files": [list(x) for x in self.files],
            "extracted": list(self.extracted),
            "clock": self.clock,
            "step_counter": self.step_counter,
            "terminated": None
            if self.terminated is None
            else {"text": self.terminated.text, "success": self.terminated.success, "url": self.terminated.url},
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> EnvState:
        term = obj.get("terminated")
        return cls(
            tabs=tuple(Tab(t["url"], int(t["viewport"]), tuple(t["history"])) for t in obj["tabs"]),
            active_tab=int(obj["active_tab"]),
            input_values=tuple((u, int(i), v) for u, i, v in obj.get("input_values", [])),
            focus=tuple(obj["focus"]) if obj.get("focus") else None,  # type: ignore[arg-type]
            files=tuple((n, c) for n, c in obj.get("files", [])),
            extracted=tuple(obj.get("extracted", [])),
            clock=int(obj.get("clock", 0)),
            step_counter=int(obj.get("step_counter", 0)),
            terminated=None if term is None else DoneRecord(term["text"], bool(term["success"]), term["url"]),
        )


@dataclass(frozen=True)
class ActionOutcome:
    action: str  # canonical form
    ok: bool
    message: str = ""
    content: str | None = None

    def to_json(self) -> dict[str, Any]:
        out = {"action": self.action, "ok": self.ok, "message": self.message}
        if self.content is not None:
            out["content"] = self.content
        return out


@dataclass(frozen=True)
class Verdict:
    completed: bool
    success: bool


def _with_tab(state: EnvState, tab: Tab) -> EnvState:
    tabs = list(state.tabs)
    tabs[state.active_tab] = tab
    return replace(state, tabs=tuple(tabs))


class Environment:
    """One simulated browser bound to a site and (optionally) a task."""

    def __init__(self, site: SiteGraph, task: TaskSpec | None = None):
        self.site = site
        self.task = task

    @property
    def max_steps(self) -> int:
        return self.task.max_steps if self.task else 20

    def reset(self, seed: int | None = None) -> tuple[EnvState, DomSnapshot]:
        # the simulator has no stochastic parts; seed is accepted for interface symmetry
        state = EnvState(tabs=(Tab(self.site.start_url),))
        return state, self.snapshot(state)

    # -- observation ---------------------------------------------------------

    def snapshot(self, state: EnvState) -> DomSnapshot:
        page = self.site.resolve(state.url)
        assert page is not None
        elements = []
        for e in page.elements:
            attrs = {}
            if e.tag == "a" and e.target:
                attrs["href"] = e.target
            if e.tag == "select":
                attrs["options"] = "|".join(e.options)
            if e.interactive:
                v = state.value(state.url, e.index)
                if v is not None:
                    attrs["value"] = v
            elements.append(DomElement(e.index, e.tag, e.text, e.interactive, tuple(sorted(attrs.items()))))
        return DomSnapshot(
            url=state.url,
            elements=tuple(elements),
            viewport_start=state.tab.viewport,
            viewport_size=self.site.page_size,
            tab_ids=tuple(range(len(state.tabs))),
            history_depth=len(state.tab.history),
        )

    def _max_viewport(self, url: str) -> int:
        page = self.site.resolve(url)
        return max(0, len(page.elements) - self.site.page_size) if page else 0

    def _visible(self, state: EnvState, index: int):
        page = self.site.resolve(state.url)
        found = page.element(index) if page else None
        if found is None:
            return None, f"no element with index {index}"
        pos, element = found
        start = state.tab.viewport
        if not start <= pos < start + self.site.page_size:
            return None, f"element {index} is outside the viewport"
        return element, ""

    # -- transitions ---------------------------------------------------------

    def _navigate(self, state: EnvState, url: str, new_tab: bool = False) -> tuple[EnvState | None, str]:
        if self.site.resolve(url) is None:
            return None, f"navigation error: {url} is unreachable"
        if new_tab:
            tabs = state.tabs + (Tab(url),)
            return replace(state, tabs=tabs, active_tab=len(tabs) - 1, focus=None), f"opened {url} in new tab"
        tab = state.tab
        return _with_tab(replace(state, focus=None), Tab(url, 0, tab.history + (tab.url,))), f"navigated to {url}"

    def _submit(self, state: EnvState, element) -> tuple[EnvState | None, str]:
        satisfied = all(
            (state.value(state.url, idx) or "").casefold() == want.casefold() for idx, want in element.requires
        )
        if satisfied and element.target:
            return self._navigate(state, element.target)
        if element.fallback:
            return self._navigate(state, element.fallback)
        return None, "form submission rejected"

    def _apply(self, state: EnvState, action: Action) -> tuple[EnvState | None, str, str | None]:
        """Returns (new state or None on failure, message, content)."""
        name = action.name
        if name == "search_google":
            new, msg = self._navigate(state, self.site.search_url(action["query"]))
            return new, msg, None
        if name == "go_to_url":
            new, msg = self._navigate(state, action["url"], action["new_tab"])
            return new, msg, None
        if name == "click_element_by_index":
            element, err = self._visible(state, action["index"])
            if element is None:
                return None, err, None
            if element.tag == "a":
                new, msg = self._navigate(state, element.target) if element.target else (None, "link has no target")
                return new, msg, None
            if element.tag == "button":
                new, msg = self._submit(state, element)
                return new, msg, None
            return replace(state, focus=(state.url, element.index)), f"focused element {element.index}", None
        if name == "input_text":
            element, err = self._visible(state, action["index"])
            if element is None:
                return None, err, None
            if element.tag != "input":
                return None, f"element {element.index} is not a text input", None
            return self._set_value(state, element.index, action["text"], focus=True), "typed text", None
        if name == "select_dropdown_option":
            element, err = self._visible(state, action["index"])
            if element is None:
                return None, err, None
            if element.tag != "select":
                return None, f"element {element.index} is not a dropdown", None
            for opt in element.options:
                if opt.casefold() == action["text"].casefold():
                    return self._set_value(state, element.index, opt), f"selected {opt}", None
            return None, f"no option {action['text']!r}", None
        if name == "send_keys":
            return self._send_keys(state, action["keys"])
        if name == "scroll":
            return self._scroll(state, action["down"], action["num_pages"])
        if name == "scroll_to_text":
            page = self.site.resolve(state.url)
            needle = action["text"].casefold()
            for pos, e in enumerate(page.elements):
                if needle and needle in e.text.casefold():
                    vp = min(pos, self._max_viewport(state.url))
                    return _with_tab(state, replace(state.tab, viewport=vp)), f"scrolled to element {pos}", None
            return None, f"text {action['text']!r} not found", None
        if name == "switch_tab":
            pid = action["page_id"]
            if pid >= len(state.tabs):
                return None, f"no tab {pid}", None
            return replace(state, active_tab=pid, focus=None), f"switched to tab {pid}", None
        if name == "go_back":
            tab = state.tab
            if not tab.history:
                return None, "no previous page", None
            back = Tab(tab.history[-1], 0, tab.history[:-1])
            return _with_tab(replace(state, focus=None), back), f"went back to {back.url}", None
        if name == "refresh":
            values = tuple(v for v in state.input_values if v[0] != state.url)
            new = replace(state, input_values=values, focus=None)
            return _with_tab(new, replace(state.tab, viewport=0)), "refreshed", None
        if name == "wait":
            return replace(state, clock=state.clock + action["seconds"]), f"waited {action['seconds']}s", None
        if name == "extract_structured_data":
            return self._extract(state, action["query"], action["extract_links"])
        if name == "read_file":
            for fname, content in state.files:
                if fname == action["file_name"]:
                    return state, f"read {fname}", content
            return None, f"no file {action['file_name']!r}", None
        if name == "done":
            record = DoneRecord(action["text"], action["success"], state.url)
            return replace(state, terminated=record), "task finished", None
        raise AssertionError(name)

    def _set_value(self, state: EnvState, index: int, value: str, focus: bool = False) -> EnvState:
        values = [v for v in state.input_values if not (v[0] == state.url and v[1] == index)]
        values.append((state.url, index, value))
        new = replace(state, input_values=tuple(sorted(values)))
        return replace(new, focus=(state.url, index)) if focus else new

    def _send_keys(self, state: EnvState, keys: str):
        key = keys.strip()
        if key == "Enter":
            if state.focus is None or state.focus[0] != state.url:
                return None, "nothing focused", None
            page = self.site.resolve(state.url)
            _, element = page.element(state.focus[1])
            if element.tag != "input" or not (element.target or element.fallback):
                return None, "focused element has no form", None
            new, msg = self._submit(state, element)
            return new, msg, None
        if key == "Escape":
            return replace(state, focus=None), "blurred", None
        if key in ("PageDown", "PageUp"):
            return self._scroll(state, key == "PageDown", 1.0)
        return state, f"sent {key}", None

    def _scroll(self, state: EnvState, down: bool, num_pages: float):
        amount = max(1, round(num_pages * self.site.page_size))
        cur = state.tab.viewport
        vp = min(cur + amount, self._max_viewport(state.url)) if down else max(0, cur - amount)
        if vp == cur:
            return None, "cannot scroll further", None
        return _with_tab(state, replace(state.tab, viewport=vp)), f"scrolled to {vp}", None

    def _extract(self, state: EnvState, query: str, links: bool):
        page = self.site.resolve(state.url)
        q = tokens(query)
        hits = [(k, v) for k, v in page.facts if q & tokens(k.replace("_", " "))]
        lines = [f"{k}: {v}" for k, v in hits]
        if links:
            lines += [f"{e.text}: {e.target}" for e in page.elements if e.tag == "a" and e.target]
        if not lines:
            return None, f"nothing on the page matches {query!r}", None
        n = sum(1 for name, _ in state.files if name.startswith("extract_")) + 1
        content = "\n".join(lines)
        extracted = tuple(sorted(set(state.extracted) | {k for k, _ in hits}))
        new = replace(state, files=state.files + ((f"extract_{n}", content),), extracted=extracted)
        return new, f"extracted {len(lines)} item(s) to extract_{n}", content

    def step(self, state: EnvState, actions: Sequence[Action]) -> tuple[EnvState, DomSnapshot, list[ActionOutcome]]:
        if state.terminated is not None:
            raise AlreadyTerminated("episode already finished")
        state = replace(state, step_counter=state.step_counter + 1)
        outcomes = []
        for action in actions:
            canon = str(action)
            if state.terminated is not None:
                outcomes.append(ActionOutcome(canon, False, "discarded: task already done"))
                continue
            new, msg, content = self._apply(state, action)
            if new is None:
                outcomes.append(ActionOutcome(canon, False, msg))
            else:
                state = new
                outcomes.append(ActionOutcome(canon, True, msg, content))
        return state, self.snapshot(state), outcomes


def judge(task: TaskSpec, state: EnvState, site: SiteGraph) -> Verdict:
    done = state.terminated
    completed = done is not None and state.step_counter <= task.max_steps
    if not completed:
        return Verdict(False, False)
    text = tokens(done.text)
    facts_ok = all(tokens(site.fact_value(k)) <= text for k in task.required_facts)
    url_ok = task.target_url is None or done.url == task.target_url
    return Verdict(True, bool(done.success and facts_ok and url_ok))


def dump_state(state: EnvState) -> str:
    return json.dumps(state.to_json(), ensure_ascii=False, indent=2)
