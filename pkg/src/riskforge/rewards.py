"""Reward components for one candidate response against a gold step.

The combined scalar is ``alpha * format + beta * process_weight * step_acc``.
Per-tool correctness is an F1 over ``(key, value)`` items with a strict
``> f1_threshold`` acceptance; string-valued items match on whitespace-token F1.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Any, Literal, Sequence

from .actions import NAME_KEY, Action, action_items
from .model import AgentResponse, StepRecord
from .parser import check_response

__all__ = [
    "RewardConfig",
    "RewardBreakdown",
    "token_f1",
    "tool_f1",
    "tool_match",
    "stepwise_accuracy",
    "process_weight",
    "combined_reward",
    "level_weight",
    "score_rollout",
    "score_response",
]

Stage = Literal["early", "later"]

DEFAULT_LEVEL_WEIGHTS = {"easy": 1.0, "moderate": 1.1, "difficult": 1.2}


@dataclass(frozen=True)
class RewardConfig:
    alpha: float = 0.1
    beta: float = 0.9
    gamma: float = 0.7
    delta: float = 4.0
    f1_threshold: float = 0.5
    stage: Stage = "early"
    level_weights: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_LEVEL_WEIGHTS))
    normalize_process_weight: bool = False
    allow_empty_think: bool = False

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be >= 0")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if self.delta <= 0:
            raise ValueError("delta must be > 0")
        if self.stage not in ("early", "later"):
            raise ValueError(f"unknown stage {self.stage!r}")
        if any(w <= 0 for w in self.level_weights.values()):
            raise ValueError("level weights must be > 0")

    def with_stage(self, stage: Stage) -> RewardConfig:
        return RewardConfig(**{**asdict(self), "stage": stage})


@dataclass(frozen=True)
class RewardBreakdown:
    format_r: int
    tool_f1s: tuple[float, ...]
    tool_matches: tuple[int, ...]
    step_acc: float
    process_weight: float
    combined: float
    level_weight: float

    def to_json(self) -> dict[str, Any]:
        d = asdict(self)
        d["tool_f1s"] = list(self.tool_f1s)
        d["tool_matches"] = list(self.tool_matches)
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_json(), separators=(",", ":"))


def token_f1(pred: str, gold: str) -> float:
    """Whitespace-token F1 with multiset overlap."""
    p, g = pred.split(), gold.split()
    if not p and not g:
        return 1.0
    if not p or not g:
        return 0.0
    common = sum((Counter(p) & Counter(g)).values())
    if common == 0:
        return 0.0
    precision = common / len(p)
    recall = common / len(g)
    return 2 * precision * recall / (precision + recall)


def _item_match(pred_item: tuple[str, Any], gold_item: tuple[str, Any], threshold: float) -> bool:
    if pred_item[0] != gold_item[0]:
        return False
    pv, gv = pred_item[1], gold_item[1]
    if pred_item[0] != NAME_KEY and isinstance(pv, str) and isinstance(gv, str):
        return token_f1(pv, gv) > threshold
    return type(pv) is type(gv) and pv == gv


def _max_matching(pred: list, gold: list, threshold: float) -> int:
    """Maximum bipartite matching between item lists (augmenting paths)."""
    adj = [[j for j, g in enumerate(gold) if _item_match(p, g, threshold)] for p in pred]
    owner = [-1] * len(gold)

    def augment(i: int, seen: list[bool]) -> bool:
        for j in adj[i]:
            if seen[j]:
                continue
            seen[j] = True
            if owner[j] < 0 or augment(owner[j], seen):
                owner[j] = i
                return True
        return False

    return sum(augment(i, [False] * len(gold)) for i in range(len(pred)))


def tool_f1(pred: Action, gt: Action, f1_threshold: float = 0.5) -> float:
    """F1 between the item multisets of two tool calls.

    Calls to different tools score 0: argument keys are only comparable
    within the same tool.
    """
    if pred.name != gt.name:
        return 0.0
    p = list(action_items(pred).elements())
    g = list(action_items(gt).elements())
    matched = _max_matching(p, g, f1_threshold)
    return 2 * matched / (len(p) + len(g))


def tool_match(pred: Action, gt: Action, config: RewardConfig | None = None) -> int:
    threshold = config.f1_threshold if config else 0.5
    return int(tool_f1(pred, gt, threshold) > threshold)


def _matches(pred: Sequence[Action], gt: Sequence[Action], threshold: float) -> list[int]:
    n = max(len(pred), len(gt))
    out = []
    for i in range(n):
        if i < len(pred) and i < len(gt):
            out.append(int(tool_f1(pred[i], gt[i], threshold) > threshold))
        else:
            out.append(0)
    return out


def stepwise_accuracy(
    pred: Sequence[Action],
    gt: Sequence[Action],
    stage: Stage = "early",
    f1_threshold: float = 0.5,
) -> float:
    """Early stage: mean of positional matches. Later stage: all-or-nothing."""
    if not gt:
        raise ValueError("gold tool list must be non-empty")
    m = _matches(pred, gt, f1_threshold)
    if stage == "early":
        return sum(m) / len(m)
    if stage == "later":
        return float(len(pred) == len(gt) and all(m))
    raise ValueError(f"unknown stage {stage!r}")


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


def process_weight(i: int, n: int, gamma: float = 0.7, delta: float = 4.0, normalize: bool = False) -> float:
    """Sigmoid step-position weight rising from about ``gamma`` to about 1.

    With ``normalize=True`` the sigmoid is rescaled so the endpoints are
    exactly ``gamma`` and 1. Single-step trajectories get weight 1.
    """
    if not 1 <= i <= n:
        raise ValueError(f"step {i} outside 1..{n}")
    if n == 1:
        return 1.0
    x = 2 * delta * (i - 1) / (n - 1) - delta
    s = _sigmoid(x)
    if normalize:
        lo, hi = _sigmoid(-delta), _sigmoid(delta)
        s = (s - lo) / (hi - lo)
    return gamma + (1 - gamma) * s


def combined_reward(format_r: float, step_acc: float, theta: float, config: RewardConfig | None = None) -> float:
    config = config or RewardConfig()
    return config.alpha * format_r + config.beta * theta * step_acc


def level_weight(difficulty: str, config: RewardConfig | None = None) -> float:
    weights = config.level_weights if config else DEFAULT_LEVEL_WEIGHTS
    return float(weights.get(difficulty, 1.0))


def score_response(
    gold: AgentResponse,
    response: AgentResponse | None,
    step_index: int,
    step_count: int,
    config: RewardConfig,
    difficulty: str = "ungraded",
) -> RewardBreakdown:
    theta = process_weight(step_index, step_count, config.gamma, config.delta, config.normalize_process_weight)
    w = level_weight(difficulty, config)
    if response is None:
        return RewardBreakdown(0, (), (), 0.0, theta, 0.0, w)
    f1s = []
    for i in range(max(len(response.action), len(gold.action))):
        if i < len(response.action) and i < len(gold.action):
            f1s.append(tool_f1(response.action[i], gold.action[i], config.f1_threshold))
        else:
            f1s.append(0.0)
    matches = tuple(int(f > config.f1_threshold) for f in f1s)
    acc = stepwise_accuracy(response.action, gold.action, config.stage, config.f1_threshold)
    return RewardBreakdown(1, tuple(f1s), matches, acc, theta, combined_reward(1, acc, theta, config), w)


def score_rollout(
    gold_step: StepRecord,
    candidate: str,
    config: RewardConfig | None = None,
    difficulty: str = "ungraded",
) -> RewardBreakdown:
    """Parse ``candidate`` and score it against ``gold_step``. Never raises on bad text."""
    config = config or RewardConfig()
    if gold_step.gold is None:
        raise ValueError("gold step has no gold response")
    response, _ = check_response(candidate, config.allow_empty_think)
    return score_response(gold_step.gold, response, gold_step.step_index, gold_step.step_count, config, difficulty)
