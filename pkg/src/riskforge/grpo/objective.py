"""Group advantages, the clipped KL-penalized surrogate, and its exact gradient.

For prompt ``p`` with group ``o_1..o_G``::

    J_p = w_p / G * sum_i 1/|o_i| * sum_t [ min(rho A_i, clip(rho, 1-eps, 1+eps) A_i) - kl_coef * k3 ]

with ``rho = exp(logp_theta - logp_old)`` per token and
``k3 = r - ln r - 1``, ``r = exp(logp_ref - logp_theta)``. ``J`` is the mean of
``J_p`` over prompts. The KL term sits outside the min.

Gradients are accumulated prompt by prompt, response by response, token by
token, in that order, so results do not depend on how rollouts were produced.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .policy import ToyPolicy

__all__ = [
    "GroupTooSmall",
    "ShapeMismatch",
    "GroupRollouts",
    "group_advantages",
    "kl_token",
    "surrogate",
    "grpo_objective",
    "grpo_gradient",
    "objective_and_gradient",
]

STD_FLOOR = 1e-8


class GroupTooSmall(ValueError):
    pass


class ShapeMismatch(ValueError):
    pass


def group_advantages(rewards: Sequence[float]) -> np.ndarray:
    r = np.asarray(rewards, dtype=float)
    if r.ndim != 1 or r.size < 2:
        raise GroupTooSmall(f"need at least 2 rewards per group, got {r.size}")
    std = r.std()
    if std < STD_FLOOR:
        return np.zeros_like(r)
    return (r - r.mean()) / std


def kl_token(logp_theta, logp_ref):
    """Per-token k3 estimate of KL(pi_theta || pi_ref); always >= 0."""
    d = np.asarray(logp_ref, dtype=float) - np.asarray(logp_theta, dtype=float)
    # r - ln r - 1 with r = e^d; expm1 keeps precision near d = 0
    out = np.expm1(d) - d
    return np.maximum(out, 0.0) if out.ndim else max(float(out), 0.0)


def surrogate(rho, adv: float, eps: float):
    """``min(rho*A, clip(rho)*A)`` and its derivative w.r.t. ``log rho``."""
    rho = np.asarray(rho, dtype=float)
    unclipped = rho * adv
    clipped = np.clip(rho, 1.0 - eps, 1.0 + eps) * adv
    value = np.minimum(unclipped, clipped)
    # the clipped branch is constant in rho; ties go to the unclipped branch
    grad = np.where(unclipped <= clipped, unclipped, 0.0)
    return value, grad


@dataclass
class GroupRollouts:
    prompt_id: str
    obs: int
    sequences: list[list[int]]
    logp_old: list[np.ndarray]
    logp_ref: list[np.ndarray]
    rewards: np.ndarray
    advantages: np.ndarray = field(default=None)  # type: ignore[assignment]
    level_weight: float = 1.0
    truncated: list[bool] = field(default_factory=list)

    def __post_init__(self):
        self.rewards = np.asarray(self.rewards, dtype=float)
        if self.advantages is None:
            self.advantages = group_advantages(self.rewards)
        self.advantages = np.asarray(self.advantages, dtype=float)
        G = len(self.sequences)
        if not (len(self.logp_old) == len(self.logp_ref) == self.rewards.size == self.advantages.size == G):
            raise ShapeMismatch(f"group {self.prompt_id}: inconsistent group sizes")
        for i, seq in enumerate(self.sequences):
            if not len(seq):
                raise ShapeMismatch(f"group {self.prompt_id}: response {i} is empty")
            if len(self.logp_old[i]) != len(seq) or len(self.logp_ref[i]) != len(seq):
                raise ShapeMismatch(f"group {self.prompt_id}: response {i} log-prob length mismatch")
        if not self.truncated:
            self.truncated = [False] * G

    @property
    def G(self) -> int:
        return len(self.sequences)


def _group_terms(policy: ToyPolicy, g: GroupRollouts, clip_eps: float, kl_coef: float, grad: np.ndarray | None):
    """Objective of one group (unweighted) and, if ``grad`` is given, add its weighted gradient."""
    total = 0.0
    scale = g.level_weight / g.G
    for i, seq in enumerate(g.sequences):
        n = len(seq)
        lp_theta = np.empty(n)
        cache = []
        for t in range(n):
            lp = policy.log_probs(g.obs, seq[:t])
            lp_theta[t] = lp[seq[t]]
            cache.append(lp)
        rho = np.exp(lp_theta - g.logp_old[i])
        s_val, s_grad = surrogate(rho, g.advantages[i], clip_eps)
        k3 = kl_token(lp_theta, g.logp_ref[i])
        total += float(np.sum(s_val - kl_coef * k3)) / n
        if grad is None:
            continue
        # d k3 / d logp_theta = 1 - r
        r = np.exp(g.logp_ref[i] - lp_theta)
        dlp = (s_grad - kl_coef * (1.0 - r)) * (scale / n)
        for t in range(n):
            if dlp[t] == 0.0:
                continue
            delta = -np.exp(cache[t])
            delta[seq[t]] += 1.0
            delta *= dlp[t]
            for col in policy.active(g.obs, seq[:t]):
                grad[:, col] += delta
    return total / g.G


def _weights(groups, level_weights):
    if level_weights is None:
        return [g.level_weight for g in groups]
    if len(level_weights) != len(groups):
        raise ShapeMismatch("one level weight per group required")
    return list(level_weights)


def objective_and_gradient(
    groups: Sequence[GroupRollouts],
    policy: ToyPolicy,
    clip_eps: float = 0.2,
    kl_coef: float = 0.04,
    level_weights: Sequence[float] | None = None,
    with_grad: bool = True,
) -> tuple[float, np.ndarray | None]:
    if not groups:
        raise ShapeMismatch("no groups")
    weights = _weights(groups, level_weights)
    grad = np.zeros_like(policy.W) if with_grad else None
    J = 0.0
    for g, w in zip(groups, weights):
        if w != g.level_weight:
            g = GroupRollouts(g.prompt_id, g.obs, g.sequences, g.logp_old, g.logp_ref, g.rewards, g.advantages, w, g.truncated)
        J += w * _group_terms(policy, g, clip_eps, kl_coef, grad)
    P = len(groups)
    if grad is not None:
        grad /= P
    return J / P, grad


def grpo_objective(groups, policy, clip_eps=0.2, kl_coef=0.04, level_weights=None) -> float:
    return objective_and_gradient(groups, policy, clip_eps, kl_coef, level_weights, with_grad=False)[0]


def grpo_gradient(groups, policy, clip_eps=0.2, kl_coef=0.04, level_weights=None) -> np.ndarray:
    return objective_and_gradient(groups, policy, clip_eps, kl_coef, level_weights)[1]
