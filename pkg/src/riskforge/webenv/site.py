"""Fixture site graphs and task specs.

A site is one JSON document::

    {"schema_version": 1, "start_url": ..., "page_size": 6,
     "external_dead": [...],
     "pages": {url: {"title": ..., "elements": [...], "facts": {...}}},
     "search_index": {"space separated tokens": [url, ...]}}

Elements with tag ``a``, ``button``, ``input`` or ``select`` are interactive
and receive page-local indices 0, 1, ... in document order. Links carry a
``target``; buttons and inputs may carry ``target``, ``requires`` (element
index -> value that must be entered first) and ``fallback``; selects carry
``options``.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Literal
from urllib.parse import parse_qs, quote_plus, urlsplit

__all__ = [
    "FixtureError",
    "PageElement",
    "Page",
    "SiteGraph",
    "TaskSpec",
    "load_site",
    "save_site",
    "load_tasks",
    "save_tasks",
    "tokens",
    "SCHEMA_VERSION",
    "SEARCH_PREFIX",
]

SCHEMA_VERSION = 1
INTERACTIVE_TAGS = ("a", "button", "input", "select")
SEARCH_PREFIX = "https://www.google.com/search?q="


class FixtureError(ValueError):
    def __init__(self, message: str, location: str = ""):
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)


def tokens(text: str) -> set[str]:
    return set(re.findall(r"\w+", text.casefold()))


@dataclass(frozen=True)
class PageElement:
    tag: str
    text: str
    index: int = -1
    target: str | None = None
    requires: tuple[tuple[int, str], ...] = ()
    fallback: str | None = None
    options: tuple[str, ...] = ()

    @property
    def interactive(self) -> bool:
        return self.tag in INTERACTIVE_TAGS

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {"tag": self.tag, "text": self.text}
        if self.target is not None:
            out["target"] = self.target
        if self.requires:
            out["requires"] = {str(k): v for k, v in self.requires}
        if self.fallback is not None:
            out["fallback"] = self.fallback
        if self.options:
            out["options"] = list(self.options)
        return out


@dataclass(frozen=True)
class Page:
    url: str
    title: str
    elements: tuple[PageElement, ...]
    facts: tuple[tuple[str, str], ...] = ()

    def element(self, index: int) -> tuple[int, PageElement] | None:
        """Position in ``elements`` and the element carrying interactive ``index``."""
        for pos, e in enumerate(self.elements):
            if e.index == index and e.interactive:
                return pos, e
        return None

    def to_json(self) -> dict[str, Any]:
        return {
            "title": self.title,
            "elements": [e.to_json() for e in self.elements],
            "facts": dict(self.facts),
        }


@dataclass(frozen=True)
class SiteGraph:
    start_url: str
    pages: dict[str, Page]
    search_index: tuple[tuple[str, tuple[str, ...]], ...] = ()
    page_size: int = 6
    external_dead: tuple[str, ...] = ()
    name: str = "site"

    def resolve(self, url: str) -> Page | None:
        """Fixture page, synthetic search-results page, or ``None`` for dead links."""
        if url in self.pages:
            return self.pages[url]
        if url.startswith(SEARCH_PREFIX):
            query = parse_qs(urlsplit(url).query).get("q", [""])[0]
            return self._results_page(url, query)
        return None

    def search_url(self, query: str) -> str:
        return SEARCH_PREFIX + quote_plus(" ".join(sorted(tokens(query))))

    def search(self, query: str) -> tuple[str, ...]:
        q = tokens(query)
        best, hits = 0, ()
        for key, urls in self.search_index:
            overlap = len(q & tokens(key))
            if overlap > best:
                best, hits = overlap, urls
        return hits

    def _results_page(self, url: str, query: str) -> Page:
        elements = [PageElement("h1", f"Search results for {query}")]
        hits = self.search(query)
        for i, target in enumerate(hits):
            elements.append(PageElement("a", self.pages[target].title, index=i, target=target))
        if not hits:
            elements.append(PageElement("p", "No results found."))
        return Page(url, f"{query} - Search", tuple(elements))

    def fact_value(self, key: str) -> str:
        for page in self.pages.values():
            for k, v in page.facts:
                if k == key:
                    return v
        raise KeyError(key)

    def to_json(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "start_url": self.start_url,
            "page_size": self.page_size,
            "external_dead": list(self.external_dead),
            "pages": {url: p.to_json() for url, p in self.pages.items()},
            "search_index": {k: list(v) for k, v in self.search_index},
        }


@dataclass(frozen=True)
class TaskSpec:
    id: str
    instruction: str
    category: Literal["information_search", "website_verification"]
    required_facts: tuple[str, ...] = ()
    target_url: str | None = None
    max_steps: int = 20

    def __post_init__(self):
        if not self.required_facts and not self.target_url:
            raise ValueError(f"task {self.id}: needs required_facts or target_url")
        if self.category not in ("information_search", "website_verification"):
            raise ValueError(f"task {self.id}: bad category {self.category!r}")

    def to_json(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "id": self.id,
            "instruction": self.instruction,
            "category": self.category,
            "required_facts": list(self.required_facts),
            "target_url": self.target_url,
            "max_steps": self.max_steps,
        }


def _parse_element(obj: Any, loc: str, next_index: int) -> PageElement:
    if not isinstance(obj, dict) or "tag" not in obj:
        raise FixtureError("element needs a tag", loc)
    tag = obj["tag"]
    requires = obj.get("requires", {})
    if not isinstance(requires, dict):
        raise FixtureError("requires must be an object", loc)
    options = tuple(obj.get("options", ()))
    if tag == "select" and not options:
        raise FixtureError("dropdown needs at least one option", loc)
    try:
        req = tuple((int(k), str(v)) for k, v in requires.items())
    except ValueError as exc:
        raise FixtureError("requires keys must be element indices", loc) from exc
    return PageElement(
        tag=str(tag),
        text=str(obj.get("text", "")),
        index=next_index if tag in INTERACTIVE_TAGS else -1,
        target=obj.get("target"),
        requires=req,
        fallback=obj.get("fallback"),
        options=options,
    )


def site_from_json(doc: Any, source: str = "site") -> SiteGraph:
    if not isinstance(doc, dict):
        raise FixtureError("expected a JSON object", source)
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise FixtureError(f"unsupported schema_version {doc.get('schema_version')!r}", source)
    for key in ("start_url", "pages"):
        if key not in doc:
            raise FixtureError(f"missing {key!r}", source)
    dead = tuple(doc.get("external_dead", ()))
    pages = {}
    for url, pobj in doc["pages"].items():
        elements = []
        for i, e in enumerate(pobj.get("elements", [])):
            n = sum(1 for x in elements if x.interactive)
            elements.append(_parse_element(e, f"{source}:pages[{url}].elements[{i}]", n))
        facts = tuple((str(k), str(v)) for k, v in pobj.get("facts", {}).items())
        pages[url] = Page(url, str(pobj.get("title", url)), tuple(elements), facts)

    def check_target(t: str | None, loc: str):
        if t is not None and t not in pages and t not in dead:
            raise FixtureError(f"dangling link target {t!r}", loc)

    seen_facts: dict[str, str] = {}
    for url, page in pages.items():
        n_interactive = sum(1 for e in page.elements if e.interactive)
        for i, e in enumerate(page.elements):
            loc = f"{source}:pages[{url}].elements[{i}]"
            check_target(e.target, loc)
            check_target(e.fallback, loc)
            for idx, _ in e.requires:
                if not 0 <= idx < n_interactive:
                    raise FixtureError(f"requires unknown element {idx}", loc)
        for key, _ in page.facts:
            if key in seen_facts:
                raise FixtureError(f"fact {key!r} also defined on {seen_facts[key]}", f"{source}:pages[{url}]")
            seen_facts[key] = url
    if doc["start_url"] not in pages:
        raise FixtureError("start_url is not a page", source)
    index = []
    for key, urls in doc.get("search_index", {}).items():
        for u in urls:
            if u not in pages:
                raise FixtureError(f"search result {u!r} is not a page", f"{source}:search_index[{key}]")
        index.append((key, tuple(urls)))
    return SiteGraph(
        start_url=doc["start_url"],
        pages=pages,
        search_index=tuple(index),
        page_size=int(doc.get("page_size", 6)),
        external_dead=dead,
        name=str(doc.get("name", "site")),
    )


def load_site(path: str | Path) -> SiteGraph:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FixtureError(f"invalid JSON: {exc.msg} (line {exc.lineno})", str(path)) from exc
    except OSError as exc:
        raise FixtureError(str(exc), str(path)) from exc
    return site_from_json(doc, str(Path(path).name))


def save_site(site: SiteGraph, path: str | Path) -> None:
    Path(path).write_text(json.dumps(site.to_json(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def task_from_json(obj: dict[str, Any], loc: str = "task") -> TaskSpec:
    if obj.get("schema_version") != SCHEMA_VERSION:
        raise FixtureError(f"unsupported schema_version {obj.get('schema_version')!r}", loc)
    try:
        return TaskSpec(
            id=str(obj["id"]),
            instruction=str(obj["instruction"]),
            category=obj["category"],
            required_facts=tuple(obj.get("required_facts", ())),
            target_url=obj.get("target_url"),
            max_steps=int(obj.get("max_steps", 20)),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise FixtureError(str(exc), loc) from exc


def load_tasks(path: str | Path, site: SiteGraph | None = None) -> list[TaskSpec]:
    tasks = []
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise FixtureError(str(exc), str(path)) from exc
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        loc = f"{Path(path).name}:{lineno}"
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FixtureError(f"invalid JSON: {exc.msg}", loc) from exc
        task = task_from_json(obj, loc)
        if site is not None:
            for key in task.required_facts:
                try:
                    site.fact_value(key)
                except KeyError:
                    raise FixtureError(f"unknown fact {key!r}", loc) from None
        tasks.append(task)
    return tasks


def save_tasks(tasks: list[TaskSpec], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for t in tasks:
            fh.write(json.dumps(t.to_json(), ensure_ascii=False, separators=(",", ":")) + "\n")
