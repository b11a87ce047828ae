"""Shortest successful action sequences by breadth-first search.

The search runs over an abstraction of :class:`EnvState` that drops fields
which cannot influence success (clock, virtual file contents, step counter).
Candidate actions are drawn from what the page and fixture declare, so the
graph is finite.
"""

from __future__ import annotations

from collections import deque
from typing import Iterator

from ..actions import Action
from .env import EnvState, Environment, judge
from .site import SiteGraph, TaskSpec

__all__ = ["Unsolvable", "candidate_actions", "oracle_trajectory", "group_steps", "abstract_key", "count_abstract_states", "oracle_episode"]

DEFAULT_DEPTH_CAP = 12


class Unsolvable(RuntimeError):
    def __init__(self, depth_cap: int):
        self.depth_cap = depth_cap
        super().__init__(f"no successful action sequence within {depth_cap} actions")


def abstract_key(state: EnvState) -> tuple:
    tab = state.tab
    return (
        tab.url,
        tab.viewport,
        tab.history,
        len(state.tabs),
        state.active_tab,
        state.input_values,
        state.focus,
        state.extracted,
        state.terminated,
    )


def done_text(site: SiteGraph, state: EnvState) -> str:
    values = [site.fact_value(k) for k in state.extracted]
    return "; ".join(values) if values else "Task completed"


def candidate_actions(env: Environment, state: EnvState) -> Iterator[Action]:
    """Finite, deterministic action menu at ``state``."""
    site = env.site
    page = site.resolve(state.url)
    start = state.tab.viewport
    visible = page.elements[start : start + site.page_size]
    wanted: dict[int, list[str]] = {}
    for e in page.elements:
        for idx, value in e.requires:
            wanted.setdefault(idx, []).append(value)
    for e in visible:
        if e.tag in ("a", "button"):
            yield Action.make("click_element_by_index", index=e.index)
        elif e.tag == "input":
            for value in dict.fromkeys(wanted.get(e.index, [])):
                if state.value(state.url, e.index) != value:
                    yield Action.make("input_text", index=e.index, text=value)
        elif e.tag == "select":
            for opt in e.options:
                if state.value(state.url, e.index) != opt:
                    yield Action.make("select_dropdown_option", index=e.index, text=opt)
    if state.focus is not None and state.focus[0] == state.url:
        yield Action.make("send_keys", keys="Enter")
    if start < env._max_viewport(state.url):
        yield Action.make("scroll", down=True, num_pages=1.0)
    if start > 0:
        yield Action.make("scroll", down=False, num_pages=1.0)
    if state.tab.history:
        yield Action.make("go_back")
    for key, _ in site.search_index:
        yield Action.make("search_google", query=key)
    for key, _ in page.facts:
        if key not in state.extracted:
            yield Action.make("extract_structured_data", query=key.replace("_", " "), extract_links=False)
    yield Action.make("done", text=done_text(site, state), success=True)


def oracle_trajectory(site: SiteGraph, task: TaskSpec, depth_cap: int = DEFAULT_DEPTH_CAP) -> list[Action]:
    """Minimal-length action sequence that the judge accepts as a success."""
    env = Environment(site, task)
    start, _ = env.reset()
    queue = deque([(start, ())])
    seen = {abstract_key(start)}
    while queue:
        state, path = queue.popleft()
        if len(path) >= depth_cap:
            continue
        for action in candidate_actions(env, state):
            new, _, outcomes = env.step(state, [action])
            if not outcomes[0].ok:
                continue
            new_path = path + (action,)
            if new.terminated is not None:
                if judge(task, new, site).success:
                    return list(new_path)
                continue
            key = abstract_key(new)
            if key not in seen:
                seen.add(key)
                queue.append((new, new_path))
    raise Unsolvable(depth_cap)


def count_abstract_states(site: SiteGraph, task: TaskSpec, depth_cap: int = DEFAULT_DEPTH_CAP, limit: int = 10**5) -> int:
    """Number of abstract states reachable within ``depth_cap`` actions (capped at ``limit``)."""
    env = Environment(site, task)
    start, _ = env.reset()
    queue = deque([(start, 0)])
    seen = {abstract_key(start)}
    while queue and len(seen) < limit:
        state, depth = queue.popleft()
        if depth >= depth_cap:
            continue
        for action in candidate_actions(env, state):
            if action.name == "done":
                continue
            new, _, outcomes = env.step(state, [action])
            key = abstract_key(new)
            if outcomes[0].ok and key not in seen:
                seen.add(key)
                queue.append((new, depth + 1))
    return len(seen)


def group_steps(site: SiteGraph, task: TaskSpec, actions: list[Action]) -> list[list[Action]]:
    """Split a flat action sequence into per-step tool lists.

    A step ends after any action that changes the page or tab, since the agent
    needs a fresh observation before acting again.
    """
    env = Environment(site, task)
    state, _ = env.reset()
    steps: list[list[Action]] = [[]]
    for i, action in enumerate(actions):
        before = (state.url, state.active_tab, len(state.tabs))
        state, _, _ = env.step(state, [action])
        steps[-1].append(action)
        if (state.url, state.active_tab, len(state.tabs)) != before and i < len(actions) - 1:
            steps.append([])
    return steps


def oracle_episode(site: SiteGraph, task: TaskSpec, traj_id: str | None = None, depth_cap: int = DEFAULT_DEPTH_CAP):
    """Gold :class:`Trajectory` for ``task``: one step per observation, templated prose fields."""
    from ..model import AgentResponse, StepRecord, Trajectory

    grouped = group_steps(site, task, oracle_trajectory(site, task, depth_cap))
    env = Environment(site, task)
    state, snap = env.reset()
    steps = []
    previous = None
    for k, tools in enumerate(grouped, start=1):
        if previous is None:
            evaluation = "Start - no previous goal"
        else:
            evaluation = f"Success - {previous}"
        goal = "; ".join(str(a) for a in tools)
        gold = AgentResponse(
            think=f"I am on {snap.url}. Task: {task.instruction}",
            evaluation_previous_goal=evaluation,
            memory=f"Step {k} of {len(grouped)} for task {task.id}. Extracted: {', '.join(state.extracted) or 'nothing yet'}.",
            next_goal=f"Run {goal}",
            action=tuple(tools),
        )
        steps.append(StepRecord(task.instruction, f"shot://{task.id}/{k}", snap, gold, None, k, len(grouped)))
        state, snap, _ = env.step(state, tools)
        previous = goal
    return Trajectory.build(traj_id or task.id, steps)
