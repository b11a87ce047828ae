"""Curation of raw trajectories into training and evaluation samples.

Stages, in the order :func:`run_pipeline` applies them:

1. ``filter_trajectories``: drop incomplete or unsuccessful trajectories.
2. ``clean_steps``: drop failed attempts and repeated identical steps.
3. ``refine``: strip delimited one-shot exemplars from questions.
4. split into single-step samples; chain multi-step trajectories so that each
   prompt after the first is the previous gold response plus an observation.
5. ``augment``: template paraphrases and screenshot-free copies.
6. grading: by oracle sampling or by tool count.

Every stage is a pure function of its input and is idempotent.
"""

from __future__ import annotations

import json
import re
import zlib
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Protocol, Sequence

import numpy as np

from .actions import Action, canonicalize
from .difficulty import band_from_correct, grade_actions
from .hashing import config_hash
from .model import AgentResponse, StepRecord, Trajectory
from .parser import check_response, serialize_response
from .rewards import stepwise_accuracy

__all__ = [
    "STAGES",
    "PipelineConfig",
    "PipelineReport",
    "StageCount",
    "UnbalancedMarkers",
    "TooFewSteps",
    "ChainError",
    "OracleFailure",
    "GraderOracle",
    "ScriptedOracle",
    "PolicyOracle",
    "filter_trajectories",
    "clean_steps",
    "refine",
    "augment",
    "paraphrase",
    "chain_multistep",
    "unchain",
    "split_steps",
    "grade_difficulty",
    "grade_by_rule",
    "run_pipeline",
    "load_pipeline_config",
    "AUGMENT_OPS",
]

AUGMENT_OPS = ("template_paraphrase", "drop_screenshot")
STAGES = ("filter", "clean", "refine", "split", "augment", "grade")
_VARIANT_SUFFIX = {"template_paraphrase": "~para", "drop_screenshot": "~noshot"}
_PROVENANCE = {"template_paraphrase": "paraphrase", "drop_screenshot": "no_screenshot"}
# stand-in answer of the scripted oracle when it misses
_WRONG = Action.make("scroll_to_text", text="__scripted_miss__")

OBS_OPEN, OBS_CLOSE = "<observation>", "</observation>"


class UnbalancedMarkers(ValueError):
    pass


class TooFewSteps(ValueError):
    pass


class ChainError(ValueError):
    pass


class OracleFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    failure_markers: tuple[str, ...] = ("Failed", "Unknown")
    example_delimiters: tuple[str, str] = ("<example>", "</example>")
    augment_ops: tuple[str, ...] = AUGMENT_OPS
    paraphrase_templates: dict[str, Any] = field(default_factory=dict)
    grader: str = "rule"
    k: int = 5
    seed: int = 0
    oracle_p: float = 0.6

    def __post_init__(self):
        object.__setattr__(self, "failure_markers", tuple(self.failure_markers))
        object.__setattr__(self, "example_delimiters", tuple(self.example_delimiters))
        object.__setattr__(self, "augment_ops", tuple(self.augment_ops))
        if len(self.example_delimiters) != 2 or not all(self.example_delimiters):
            raise ValueError("example_delimiters needs an opening and a closing marker")
        bad = set(self.augment_ops) - set(AUGMENT_OPS)
        if bad:
            raise ValueError(f"unknown augment ops {sorted(bad)}")
        if self.grader not in ("rule", "oracle"):
            raise ValueError(f"grader must be 'rule' or 'oracle', not {self.grader!r}")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 0 <= self.oracle_p <= 1:
            raise ValueError("oracle_p must lie in [0, 1]")

    @classmethod
    def from_json(cls, doc: dict[str, Any]) -> PipelineConfig:
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown pipeline config keys {sorted(unknown)}")
        return cls(**doc)


def load_pipeline_config(path: str | Path) -> PipelineConfig:
    return PipelineConfig.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


# --- filtering ---------------------------------------------------------------


def _drop_reason(traj: Trajectory) -> str | None:
    if any(s.gold is None for s in traj.steps):
        return "incomplete"
    last = traj.steps[-1].gold.action
    if not last or last[-1].name != "done":
        return "incomplete"
    if last[-1]["success"] is not True:
        return "unsuccessful"
    return None


def filter_trajectories(raw: Sequence[Trajectory]) -> tuple[list[Trajectory], list[tuple[Trajectory, str]]]:
    """Keep trajectories whose every step has gold and whose last tool is a successful done."""
    kept, dropped = [], []
    for t in raw:
        reason = _drop_reason(t)
        if reason is None:
            kept.append(t)
        else:
            dropped.append((t, reason))
    return kept, dropped


# --- cleaning ----------------------------------------------------------------


def _repeat_key(step: StepRecord) -> tuple:
    # the same tools on a different page are progress, not a repeat
    return tuple(canonicalize(a) for a in step.gold.action), step.dom


def clean_steps(
    traj: Trajectory, markers: Sequence[str] = ("Failed", "Unknown"), dropped: Counter | None = None
) -> Trajectory:
    """Remove failed attempts, then repeats of an identical action list on an identical page.

    A step is a failed attempt when the next step's evaluation of the previous
    goal starts with one of ``markers``. The surviving successor takes over the
    dropped step's own evaluation, which describes the step now before it.
    """
    steps = list(traj.steps)
    out: list[StepRecord] = []
    inherited: str | None = None
    for i, s in enumerate(steps):
        nxt = steps[i + 1] if i + 1 < len(steps) else None
        if nxt is not None and nxt.gold.evaluation_previous_goal.startswith(tuple(markers)):
            if inherited is None:
                inherited = s.gold.evaluation_previous_goal
            if dropped is not None:
                dropped["failed"] += 1
            continue
        if inherited is not None:
            s = replace(s, gold=replace(s.gold, evaluation_previous_goal=inherited))
            inherited = None
        out.append(s)
    deduped: list[StepRecord] = []
    for s in out:
        if deduped and _repeat_key(deduped[-1]) == _repeat_key(s):
            if dropped is not None:
                dropped["duplicate"] += 1
            continue
        deduped.append(s)
    if len(deduped) == len(steps):
        return traj
    return Trajectory.build(
        traj.id, deduped, difficulty=traj.difficulty, source=traj.source, provenance=traj.provenance, tags=traj.tags
    )


# --- refinement --------------------------------------------------------------


def _strip_examples(text: str, open_m: str, close_m: str) -> str:
    if open_m not in text and close_m not in text:
        return text
    pieces, pos = [], 0
    while True:
        a = text.find(open_m, pos)
        stray = text.find(close_m, pos)
        if a < 0:
            if stray >= 0:
                raise UnbalancedMarkers(f"closing marker without opening at offset {stray}")
            pieces.append(text[pos:])
            break
        if 0 <= stray < a:
            raise UnbalancedMarkers(f"closing marker without opening at offset {stray}")
        b = text.find(close_m, a + len(open_m))
        if b < 0:
            raise UnbalancedMarkers(f"exemplar opened at offset {a} is never closed")
        pieces.append(text[pos:a])
        pos = b + len(close_m)
    return re.sub(r"\s{2,}", " ", " ".join(p.strip() for p in pieces if p.strip()))


def refine(traj: Trajectory, delimiters: Sequence[str] = ("<example>", "</example>")) -> Trajectory:
    """Strip exemplar spans from every question; raises UnbalancedMarkers without modifying."""
    open_m, close_m = delimiters
    new = [_strip_examples(s.question, open_m, close_m) for s in traj.steps]
    if all(q == s.question for q, s in zip(new, traj.steps)):
        return traj
    return replace(traj, steps=tuple(replace(s, question=q) for s, q in zip(traj.steps, new)))


# --- chaining ----------------------------------------------------------------


def _observation(step: StepRecord) -> str:
    ref = step.screenshot_ref if step.screenshot_ref is not None else step.dom.url
    return f"{OBS_OPEN}{ref}{OBS_CLOSE}"


def chain_multistep(steps: Sequence[StepRecord], traj_id: str = "chain", **kw: Any) -> Trajectory:
    """Replace every prompt after the first by the previous gold response and the new observation."""
    if len(steps) < 2:
        raise TooFewSteps(f"chaining needs at least 2 steps, got {len(steps)}")
    out = [steps[0]]
    for prev, s in zip(steps, steps[1:]):
        if prev.gold is None:
            raise ChainError("cannot chain after a step without gold")
        out.append(replace(s, question=serialize_response(prev.gold) + "\n" + _observation(s)))
    return Trajectory.build(traj_id, out, kind="multi-step", **kw)


def unchain(traj: Trajectory) -> list[StepRecord]:
    """Invert :func:`chain_multistep`, checking each prompt against the previous gold response."""
    steps = list(traj.steps)
    first_q = steps[0].question
    out = [steps[0]]
    for prev, s in zip(steps, steps[1:]):
        head, sep, tail = s.question.rpartition("\n")
        if not sep or tail != _observation(s):
            raise ChainError(f"step {s.step_index}: prompt is not chained")
        resp, verdict = check_response(head)
        if not verdict.ok or resp != prev.gold:
            raise ChainError(f"step {s.step_index}: prompt does not hold the previous gold response")
        out.append(replace(s, question=first_q))
    return out


def split_steps(traj: Trajectory) -> list[Trajectory]:
    """One single-step sample per step."""
    if traj.kind == "single-step":
        return [traj]
    return [
        Trajectory.build(
            f"{traj.id}/s{s.step_index}",
            [s],
            difficulty=traj.difficulty,
            source=traj.source,
            provenance=traj.provenance,
            tags=traj.tags,
        )
        for s in traj.steps
    ]


# --- augmentation ------------------------------------------------------------


def _stable_seed(*parts: Any) -> list[int]:
    return [zlib.crc32(str(p).encode("utf-8")) for p in parts]


def paraphrase(text: str, templates: dict[str, Any], seed: Any) -> str:
    """Substitute phrases from ``templates["synonyms"]`` in one left-to-right pass."""
    synonyms: dict[str, Sequence[str]] = (templates or {}).get("synonyms", {})
    synonyms = {k: v for k, v in synonyms.items() if v}
    if not synonyms:
        return text
    rng = np.random.default_rng(_stable_seed(seed, text))
    choice = {k: synonyms[k][int(rng.integers(len(synonyms[k])))] for k in sorted(synonyms)}
    pattern = re.compile("|".join(r"\b" + re.escape(k) + r"\b" for k in sorted(synonyms, key=lambda k: (-len(k), k))))
    return pattern.sub(lambda m: choice[m.group(0)], text)


def _variant(traj: Trajectory, op: str, templates: dict[str, Any], seed: int) -> Trajectory:
    if op == "template_paraphrase":
        steps = [replace(s, question=paraphrase(s.question, templates, (seed, traj.id))) for s in traj.steps]
    else:
        steps = [replace(s, screenshot_ref=None) for s in traj.steps]
    return replace(traj, id=traj.id + _VARIANT_SUFFIX[op], steps=tuple(steps), provenance=_PROVENANCE[op])


def augment(
    samples: Sequence[Trajectory], ops: Sequence[str] = AUGMENT_OPS, templates: dict[str, Any] | None = None, seed: int = 0
) -> list[Trajectory]:
    """Originals followed by one variant per op; variants already present are not recreated."""
    bad = set(ops) - set(AUGMENT_OPS)
    if bad:
        raise ValueError(f"unknown augment ops {sorted(bad)}")
    present = {s.id for s in samples}
    out = []
    for s in samples:
        out.append(s)
        if s.provenance != "original":
            continue
        for op in ops:
            if s.id + _VARIANT_SUFFIX[op] not in present:
                out.append(_variant(s, op, templates or {}, seed))
    return out


# --- grading -----------------------------------------------------------------


class GraderOracle(Protocol):
    def respond(self, step: StepRecord, attempt: int, seed: Any) -> AgentResponse | str | None: ...


@dataclass
class ScriptedOracle:
    """Answers with the gold response with probability ``p`` and a wrong one otherwise.

    ``p`` may be one number or a mapping from question text to probability.
    """

    p: float | dict[str, float] = 0.6

    def prob(self, step: StepRecord) -> float:
        return self.p.get(step.question, 0.0) if isinstance(self.p, dict) else self.p

    def respond(self, step: StepRecord, attempt: int, seed: Any) -> AgentResponse | None:
        if step.gold is None:
            raise OracleFailure("no gold response to script from")
        rng = np.random.default_rng(_stable_seed(seed, step.question, attempt))
        if rng.random() < self.prob(step):
            return step.gold
        return replace(step.gold, action=(_WRONG,))


@dataclass
class PolicyOracle:
    """Samples a toy policy; ``observations`` maps question text to an observation id."""

    policy: Any
    observations: dict[str, int]

    def respond(self, step: StepRecord, attempt: int, seed: Any) -> str:
        from .grpo.policy import decode, sample_group

        if step.question not in self.observations:
            raise OracleFailure(f"no observation for question {step.question[:40]!r}")
        obs = self.observations[step.question]
        (sample,) = sample_group(self.policy, obs, 1, _stable_seed(seed, step.question, attempt))
        return decode(sample.tokens, self.policy.vocab)


def _correct(step: StepRecord, answer: AgentResponse | str | None) -> bool:
    if isinstance(answer, str):
        answer, verdict = check_response(answer)
        if not verdict.ok:
            return False
    if answer is None:
        return False
    return stepwise_accuracy(answer.action, step.gold.action, "later") == 1.0


def grade_difficulty(step: StepRecord, oracle: GraderOracle, k: int = 5, seed: Any = 0) -> str:
    """Band the number of whole-list correct answers out of ``k`` oracle attempts."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if step.gold is None:
        raise OracleFailure("step has no gold response")
    correct = sum(_correct(step, oracle.respond(step, a, seed)) for a in range(k))
    return band_from_correct(correct, k)


def grade_by_rule(step: StepRecord) -> str:
    if step.gold is None or not step.gold.action:
        raise ValueError("grading by rule needs a gold action list")
    return grade_actions(step.gold.action)


# --- orchestration -----------------------------------------------------------


@dataclass
class StageCount:
    stage: str
    unit: str
    input: int
    kept: int
    dropped: int = 0
    output: int | None = None
    reasons: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.kept + self.dropped != self.input:
            raise AssertionError(f"{self.stage}: kept {self.kept} + dropped {self.dropped} != input {self.input}")
        if self.output is None:
            self.output = self.kept


@dataclass
class PipelineReport:
    config_hash: str
    stages: list[StageCount] = field(default_factory=list)
    levels: dict[str, int] = field(default_factory=dict)
    flagged: list[str] = field(default_factory=list)

    def stage(self, name: str) -> StageCount:
        return next(s for s in self.stages if s.stage == name)

    def to_json(self) -> dict[str, Any]:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"


def _map(fn: Callable, items: Sequence, workers: int) -> list:
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def run_pipeline(
    raw: Sequence[Trajectory],
    config: PipelineConfig | None = None,
    oracle: GraderOracle | None = None,
    workers: int = 1,
    stages: Sequence[str] = STAGES,
) -> tuple[list[Trajectory], PipelineReport]:
    """Curate ``raw``; returns single-step samples followed by chained multi-step trajectories.

    Stages left out of ``stages`` pass their input through unchanged. Without
    ``split`` the refined trajectories are emitted as they are.
    """
    config = config or PipelineConfig()
    unknown = set(stages) - set(STAGES)
    if unknown:
        raise ValueError(f"unknown pipeline stages {sorted(unknown)}; choose from {STAGES}")
    on = set(stages)
    report = PipelineReport(config_hash(config, sorted(on, key=STAGES.index)))

    kept, dropped = filter_trajectories(raw) if "filter" in on else (list(raw), [])
    report.stages.append(
        StageCount("filter", "trajectory", len(raw), len(kept), len(dropped), reasons=dict(Counter(r for _, r in dropped)))
    )

    step_drops = [Counter() for _ in kept]
    if "clean" in on:
        cleaned = _map(lambda a: clean_steps(a[0], config.failure_markers, a[1]), list(zip(kept, step_drops)), workers)
    else:
        cleaned = list(kept)
    n_in = sum(len(t.steps) for t in kept)
    n_out = sum(len(t.steps) for t in cleaned)
    reasons = sum(step_drops, Counter())
    report.stages.append(StageCount("clean", "step", n_in, n_out, n_in - n_out, reasons=dict(reasons)))

    def _refine(t: Trajectory) -> tuple[Trajectory, bool]:
        if "refine" not in on:
            return t, False
        try:
            return refine(t, config.example_delimiters), False
        except UnbalancedMarkers:
            return replace(t, tags=tuple(dict.fromkeys((*t.tags, "unbalanced_markers")))), True

    refined_flags = _map(_refine, cleaned, workers)
    refined = [t for t, _ in refined_flags]
    report.flagged = [t.id for t, f in refined_flags if f]
    n_changed = sum(1 for a, (b, _) in zip(cleaned, refined_flags) if a.steps != b.steps)
    report.stages.append(
        StageCount("refine", "trajectory", len(cleaned), len(cleaned), reasons={"stripped": n_changed, "flagged": len(report.flagged)})
    )

    if "split" in on:
        singles = [s for t in refined for s in split_steps(t)]
        chains = [
            chain_multistep(t.steps, f"{t.id}/chain", difficulty=t.difficulty, source=t.source, tags=t.tags)
            for t in refined
            if len(t.steps) >= 2
        ]
    else:
        singles = [t for t in refined if t.kind == "single-step"]
        chains = [t for t in refined if t.kind != "single-step"]
    report.stages.append(
        StageCount("split", "trajectory", len(refined), len(refined), output=len(singles) + len(chains))
    )

    augmented = augment(singles, config.augment_ops, config.paraphrase_templates, config.seed) if "augment" in on else singles
    report.stages.append(StageCount("augment", "sample", len(singles), len(singles), output=len(augmented)))

    if config.grader == "oracle":
        grader_oracle = oracle or ScriptedOracle(config.oracle_p)

        def grade_step(s: StepRecord) -> str:
            return grade_difficulty(s, grader_oracle, config.k, config.seed)
    else:
        grade_step = grade_by_rule

    def _grade(t: Trajectory) -> Trajectory:
        if "grade" not in on:
            return t
        levels = [grade_step(s) for s in t.steps]
        worst = max(levels, key=("easy", "moderate", "difficult").index)
        return replace(t, difficulty=worst, source="curated")

    graded = _map(_grade, augmented + chains, workers)
    report.stages.append(StageCount("grade", "sample", len(graded), len(graded)))
    counts = Counter(t.difficulty for t in graded if t.kind == "single-step")
    report.levels = {lvl: counts.get(lvl, 0) for lvl in ("easy", "moderate", "difficult")}
    return graded, report
