"""Desk-scale GRPO training loop for :class:`ToyPolicy`.

Each iteration samples a group per prompt from the current policy (which is
also ``pi_old``), scores the decoded rollouts with the reward engine, forms
group advantages and takes ``inner_steps`` gradient-ascent steps. The reference
policy is frozen at the start of training.

Prompt ``p`` at global iteration ``it`` samples with seed ``(seed, it, p)``, so
a run is reproducible whatever the worker count.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from ..difficulty import grade_actions
from ..hashing import config_hash
from ..model import StepRecord, Trajectory
from ..rewards import RewardConfig, level_weight, score_rollout
from .objective import GroupRollouts, kl_token, objective_and_gradient
from .policy import ActionGrammar, ToyPolicy, build_vocab, decode, sample_group, slot_values_from, token_logprob

__all__ = [
    "GrpoConfig",
    "TrainingPrompt",
    "TrainingReport",
    "SGD",
    "prompts_from_trajectories",
    "make_policy",
    "train",
    "save_checkpoint",
    "load_checkpoint",
    "CheckpointError",
    "DISTRACTOR_TOOLS",
    "toy_config",
    "KL_PROBE_LEARNING_RATE",
]

CHECKPOINT_FORMAT = "riskforge-toy-policy"
CHECKPOINT_VERSION = 1

# tools the toy policy may pick although no gold step uses them
DISTRACTOR_TOOLS = ("go_back", "refresh", "scroll_to_text")



@dataclass(frozen=True)
class GrpoConfig:
    group_size: int = 8
    clip_eps: float = 0.2
    kl_coef: float = 0.04
    learning_rate: float = 1e-6
    epochs: int = 2
    iterations_per_epoch: int = 100
    stage_schedule: tuple[str, ...] | None = None
    seed: int = 0
    inner_steps: int = 1
    max_len: int = 24
    level_reweight: bool = True
    workers: int = 1

    def __post_init__(self):
        if self.group_size < 2:
            raise ValueError("group_size must be >= 2")
        if not 0 < self.clip_eps < 1:
            raise ValueError("clip_eps must lie in (0, 1)")
        if self.kl_coef < 0:
            raise ValueError("kl_coef must be >= 0")
        if self.epochs < 1 or self.iterations_per_epoch < 1 or self.inner_steps < 1:
            raise ValueError("epochs, iterations_per_epoch and inner_steps must be >= 1")
        if self.stage_schedule is not None:
            object.__setattr__(self, "stage_schedule", tuple(self.stage_schedule))
            bad = [s for s in self.stage_schedule if s not in ("early", "later")]
            if bad or not self.stage_schedule:
                raise ValueError(f"bad stage schedule {self.stage_schedule!r}")

    def stage_for(self, epoch: int) -> str:
        """Stage of 1-based ``epoch``; the last schedule entry repeats."""
        if self.stage_schedule is None:
            return "early" if epoch == 1 else "later"
        return self.stage_schedule[min(epoch, len(self.stage_schedule)) - 1]


def toy_config(**overrides) -> GrpoConfig:
    """Settings that train the tabular policy on the shipped fixture in 200 iterations.

    Four epochs of 50 iterations: the first uses the early stage, the rest the
    binary stage. The step size is far above the config default because the
    objective averages over prompts, groups and tokens.
    """
    base = dict(learning_rate=60.0, epochs=4, iterations_per_epoch=50)
    return GrpoConfig(**{**base, **overrides})


# small steps keep the policy in the slowly-deviating regime where the
# distance to the reference still grows with step size
KL_PROBE_LEARNING_RATE = 2.0


@dataclass(frozen=True)
class TrainingPrompt:
    key: str
    step: StepRecord
    difficulty: str = "ungraded"


def prompts_from_trajectories(trajectories: Sequence[Trajectory], grade: bool = True) -> list[TrainingPrompt]:
    """Every gold step becomes a single-step sample.

    With ``grade`` the difficulty comes from the tool count of the gold step,
    otherwise from the trajectory's own label.
    """
    out = []
    for traj in trajectories:
        for step in traj.steps:
            if step.gold is None:
                continue
            single = StepRecord(step.question, step.screenshot_ref, step.dom, step.gold, None, 1, 1)
            diff = grade_actions(step.gold.action) if grade else traj.difficulty
            out.append(TrainingPrompt(f"{traj.id}#{step.step_index}", single, diff))
    return out


def make_policy(prompts: Sequence[TrainingPrompt], max_len: int = 24, slots: bool = True) -> ToyPolicy:
    """Uniform policy over the gold vocabulary.

    With ``slots`` each string argument only offers the literals seen for that
    argument in the gold steps; integers and booleans stay unrestricted.
    """
    actions = [a for p in prompts for a in p.step.gold.action]
    vocab = build_vocab(actions, DISTRACTOR_TOOLS)
    grammar = ActionGrammar(vocab, slot_values=slot_values_from(actions) if slots else None)
    return ToyPolicy(vocab, n_obs=len(prompts), max_pos=max_len, grammar=grammar)


class SGD:
    """Plain gradient ascent: ``W += lr * grad``."""

    def __init__(self, learning_rate: float):
        self.learning_rate = learning_rate

    def step(self, W: np.ndarray, grad: np.ndarray) -> np.ndarray:
        return W + self.learning_rate * grad


@dataclass
class TrainingReport:
    config_hash: str
    epochs: list[int] = field(default_factory=list)
    stages: list[str] = field(default_factory=list)
    mean_reward: list[float] = field(default_factory=list)
    mean_reward_binary: list[float] = field(default_factory=list)
    mean_kl: list[float] = field(default_factory=list)
    objective: list[float] = field(default_factory=list)
    iterations: dict[str, list] = field(
        default_factory=lambda: {"mean_reward": [], "mean_reward_binary": [], "mean_kl": [], "objective": [], "stage": []}
    )
    truncated: int = 0

    @property
    def final_mean_reward(self) -> float:
        return self.iterations["mean_reward"][-1]

    def to_json(self) -> dict[str, Any]:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"


def _rollout_group(policy, ref, prompt, obs, cfg, rcfg, binary_cfg, seed, weight):
    samples = sample_group(policy, obs, cfg.group_size, seed, cfg.max_len)
    rewards, binary = [], []
    for s in samples:
        text = decode(s.tokens, policy.vocab)
        rewards.append(score_rollout(prompt.step, text, rcfg, prompt.difficulty).combined)
        binary.append(score_rollout(prompt.step, text, binary_cfg, prompt.difficulty).combined)
    seqs = [s.tokens for s in samples]
    group = GroupRollouts(
        prompt_id=prompt.key,
        obs=obs,
        sequences=seqs,
        logp_old=[np.array(s.logp) for s in samples],
        logp_ref=[token_logprob(ref, obs, q) for q in seqs],
        rewards=np.array(rewards),
        level_weight=weight,
        truncated=[s.truncated for s in samples],
    )
    return group, float(np.mean(binary))


def train(
    prompts: Sequence[TrainingPrompt],
    reward_config: RewardConfig | None = None,
    config: GrpoConfig | None = None,
    policy: ToyPolicy | None = None,
    reference: ToyPolicy | None = None,
    optimizer=None,
    start_epoch: int = 1,
    on_epoch: Callable[[int, ToyPolicy], None] | None = None,
) -> tuple[TrainingReport, ToyPolicy]:
    """Run ``config.epochs`` epochs starting at ``start_epoch``; returns the report and trained policy."""
    reward_config = reward_config or RewardConfig()
    config = config or GrpoConfig()
    if not prompts:
        raise ValueError("no training prompts")
    policy = policy.copy() if policy is not None else make_policy(prompts, config.max_len)
    if policy.n_obs != len(prompts):
        raise ValueError(f"policy has {policy.n_obs} observations for {len(prompts)} prompts")
    reference = reference.copy() if reference is not None else policy.copy()
    optimizer = optimizer or SGD(config.learning_rate)
    weights = [
        level_weight(p.difficulty, reward_config) if config.level_reweight else 1.0 for p in prompts
    ]
    report = TrainingReport(config_hash(reward_config, config))
    binary_cfg = reward_config.with_stage("later")
    pool = ThreadPoolExecutor(config.workers) if config.workers > 1 else None
    try:
        for epoch in range(start_epoch, start_epoch + config.epochs):
            stage = config.stage_for(epoch)
            rcfg = reward_config.with_stage(stage)
            ep = {"r": [], "b": [], "kl": [], "j": []}
            for local in range(config.iterations_per_epoch):
                it = (epoch - 1) * config.iterations_per_epoch + local
                jobs = [
                    (policy, reference, p, i, config, rcfg, binary_cfg, (config.seed, it, i), weights[i])
                    for i, p in enumerate(prompts)
                ]
                results = list(pool.map(lambda a: _rollout_group(*a), jobs)) if pool else [_rollout_group(*a) for a in jobs]
                groups = [g for g, _ in results]
                mean_r = float(np.mean([g.rewards.mean() for g in groups]))
                mean_b = float(np.mean([b for _, b in results]))
                mean_kl = float(
                    np.mean([np.mean([kl_token(lo, lr).mean() for lo, lr in zip(g.logp_old, g.logp_ref)]) for g in groups])
                )
                report.truncated += sum(sum(g.truncated) for g in groups)
                J0 = None
                for _ in range(config.inner_steps):
                    J, grad = objective_and_gradient(groups, policy, config.clip_eps, config.kl_coef)
                    J0 = J if J0 is None else J0
                    policy.W = optimizer.step(policy.W, grad)
                    if not np.all(np.isfinite(policy.W)):
                        raise FloatingPointError(f"parameters diverged at iteration {it}; lower the learning rate")
                for key, val in (("mean_reward", mean_r), ("mean_reward_binary", mean_b), ("mean_kl", mean_kl), ("objective", J0)):
                    report.iterations[key].append(val)
                report.iterations["stage"].append(stage)
                ep["r"].append(mean_r)
                ep["b"].append(mean_b)
                ep["kl"].append(mean_kl)
                ep["j"].append(J0)
            report.epochs.append(epoch)
            report.stages.append(stage)
            report.mean_reward.append(float(np.mean(ep["r"])))
            report.mean_reward_binary.append(float(np.mean(ep["b"])))
            report.mean_kl.append(float(np.mean(ep["kl"])))
            report.objective.append(float(np.mean(ep["j"])))
            if on_epoch is not None:
                on_epoch(epoch, policy)
    finally:
        if pool is not None:
            pool.shutdown()
    return report, policy


class CheckpointError(ValueError):
    pass


def save_checkpoint(
    path,
    policy: ToyPolicy,
    reference: ToyPolicy,
    cfg_hash: str,
    epoch: int,
    prompt_keys: Sequence[str],
    observations: Sequence[tuple[str, str]] | None = None,
) -> None:
    """Write a JSON checkpoint. ``observations`` maps each prompt to its (question, url)."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config_hash": cfg_hash,
        "epoch": epoch,
        "vocab": policy.vocab,
        "n_obs": policy.n_obs,
        "max_pos": policy.max_pos,
        "grammar": None
        if policy.grammar is None
        else {
            "type_mask": policy.grammar.type_mask,
            "max_actions": policy.grammar.max_actions,
            "slot_values": [[t, k, v] for (t, k), v in policy.grammar.slot_values.items()],
        },
        "prompt_keys": list(prompt_keys),
        "observations": None if observations is None else [list(o) for o in observations],
        "params": policy.W.ravel().tolist(),
        "ref_params": reference.W.ravel().tolist(),
    }
    Path(path).write_text(json.dumps(doc) + "\n", encoding="utf-8")


def load_checkpoint(path) -> tuple[ToyPolicy, ToyPolicy, dict[str, Any]]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: not a version {CHECKPOINT_VERSION} toy-policy checkpoint")
    vocab = doc["vocab"]
    g = doc.get("grammar")
    grammar = None
    if g is not None:
        slots = {(t, k): v for t, k, v in g["slot_values"]}
        grammar = ActionGrammar(vocab, g["max_actions"], g["type_mask"], slots)
    shape_pol = ToyPolicy(vocab, doc["n_obs"], doc["max_pos"], grammar=grammar)
    shape = shape_pol.W.shape
    W = np.array(doc["params"], dtype=float)
    R = np.array(doc["ref_params"], dtype=float)
    if W.size != shape[0] * shape[1] or R.size != W.size:
        raise CheckpointError(f"{path}: parameter count does not match vocabulary")
    pol = ToyPolicy(vocab, doc["n_obs"], doc["max_pos"], W.reshape(shape), grammar)
    ref = ToyPolicy(vocab, doc["n_obs"], doc["max_pos"], R.reshape(shape), grammar)
    return pol, ref, doc
