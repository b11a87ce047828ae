"""Simulated web environment: fixture sites, step semantics, judge and oracle."""

from .env import ActionOutcome, AlreadyTerminated, DoneRecord, EnvState, Environment, Tab, Verdict, judge
from .oracle import Unsolvable, candidate_actions, group_steps, oracle_episode, oracle_trajectory
from .site import FixtureError, Page, PageElement, SiteGraph, TaskSpec, load_site, load_tasks, save_site, save_tasks

__all__ = [
    "ActionOutcome",
    "AlreadyTerminated",
    "DoneRecord",
    "EnvState",
    "Environment",
    "FixtureError",
    "Page",
    "PageElement",
    "SiteGraph",
    "Tab",
    "TaskSpec",
    "Unsolvable",
    "Verdict",
    "candidate_actions",
    "group_steps",
    "judge",
    "load_site",
    "load_tasks",
    "oracle_episode",
    "oracle_trajectory",
    "save_site",
    "save_tasks",
]
