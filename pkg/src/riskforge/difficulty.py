"""Difficulty bands.

Two graders exist. The sampling grader asks an oracle for ``k`` attempts and
bands the number of correct ones; the rule grader bands the number of tools in
the gold action list.
"""

from __future__ import annotations

from typing import Sequence

DIFFICULTY_LEVELS = ("easy", "moderate", "difficult")


def band_from_correct(correct: int, k: int) -> str:
    """All ``k`` correct is easy, none is difficult, anything between is moderate."""
    if not 0 <= correct <= k or k < 1:
        raise ValueError(f"correct={correct} outside 0..{k}")
    if correct == k:
        return "easy"
    if correct == 0:
        return "difficult"
    return "moderate"


def band_from_tool_count(n_tools: int) -> str:
    if n_tools < 1:
        raise ValueError("a gold step has at least one tool")
    if n_tools == 1:
        return "easy"
    if n_tools == 2:
        return "moderate"
    return "difficult"


def grade_actions(actions: Sequence) -> str:
    return band_from_tool_count(len(actions))
