"""``riskforge`` command line.

Settings resolve as flags > ``RISKFORGE_*`` environment variables > ``--config``
JSON file > built-in defaults. Every artifact gets a ``<artifact>.meta.json``
sidecar holding the resolved settings and their hash; input files enter the
hash by content digest and output paths are left out, so identical inputs and
settings give identical artifacts.

Exit codes: 0 ok, 1 unknown agent, 2 bad input (schema, path, value), 3 bad
environment fixture.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from .fixtures import fixture_path
from .hashing import config_hash
from .model import SchemaError, read_trajectories, write_trajectories

log = logging.getLogger("riskforge")

ENV_PREFIX = "RISKFORGE_"
REFERENCE_CURVES = ((1.0, 4.0), (0.4, 4.0), (0.7, 4.0), (0.7, 1.0), (0.7, 7.0))


class UnknownAgent(ValueError):
    pass


class UnknownCurve(ValueError):
    pass


def _bool(text: str | bool) -> bool:
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class Opt:
    flag: str
    default: Any
    type: Callable = str
    help: str = ""
    role: str = "setting"  # setting | input | output
    choices: tuple | None = None

    @property
    def dest(self) -> str:
        return self.flag.lstrip("-").replace("-", "_")


def _shipped(name: str) -> str:
    return str(fixture_path(name))


SEED = Opt("--seed", 0, int, "random seed")
WORKERS = Opt("--workers", 1, int, "concurrent workers; output order does not depend on it")
SITE = Opt("--site", None, str, "site graph JSON (shipped fixture when omitted)", "input")
TASKS = Opt("--tasks", None, str, "task JSONL (shipped fixture when omitted)", "input")
REWARD = (
    Opt("--alpha", 0.1, float, "format reward coefficient"),
    Opt("--beta", 0.9, float, "accuracy reward coefficient"),
    Opt("--gamma", 0.7, float, "process weight of the first step"),
    Opt("--delta", 4.0, float, "process weight steepness"),
    Opt("--f1-threshold", 0.5, float, "a tool matches when its F1 exceeds this"),
)
SCORE = (
    Opt("--gold", None, str, "gold benchmark trajectories (JSONL)", "input"),
    Opt("--predictions", None, str, "prediction JSONL {id, step_index?, response_raw_text}", "input"),
    Opt("--out", None, str, "report path", "output"),
    Opt("--format", "markdown", str, "report format", choices=("json", "csv", "markdown")),
    Opt("--emit-breakdown", None, str, "also write one reward breakdown per step (JSONL)", "output"),
    WORKERS,
    *REWARD,
)

COMMANDS: dict[str, tuple[str, tuple[Opt, ...]]] = {
    "score-single": ("Score single-step predictions per difficulty level.", SCORE),
    "score-multi": ("Score multi-step predictions (all steps must match).", SCORE),
    "run-online": (
        "Run an agent on simulated tasks and report completion and success.",
        (
            SITE,
            TASKS,
            Opt("--agent", "oracle", str, "oracle | policy:<checkpoint> | replay:<online result json>"),
            Opt("--max-steps", 20, int, "step budget per task"),
            SEED,
            Opt("--out", None, str, "result path", "output"),
            Opt("--format", "json", str, "report format", choices=("json", "csv", "markdown")),
            WORKERS,
        ),
    ),
    "train": (
        "Train the tabular policy with GRPO on oracle episodes or a trajectory file.",
        (
            SITE,
            TASKS,
            Opt("--data", None, str, "training trajectories JSONL (overrides --site/--tasks)", "input"),
            Opt("--out-checkpoint", None, str, "checkpoint path", "output"),
            Opt("--out-report", None, str, "training report path", "output"),
            Opt("--resume", None, str, "continue from this checkpoint", "input"),
            *REWARD,
            Opt("--group-size", 8, int, "rollouts per prompt"),
            Opt("--clip-eps", 0.2, float, "ratio clipping range"),
            Opt("--kl-coef", 0.04, float, "KL penalty coefficient"),
            Opt("--learning-rate", 60.0, float, "SGD step size for the tabular policy"),
            Opt("--epochs", 4, int, "epochs to run"),
            Opt("--iterations-per-epoch", 50, int, "updates per epoch"),
            Opt("--stage", "schedule", str, "reward stages", choices=("schedule", "binary-only", "early-only")),
            Opt("--level-reweight", True, _bool, "weight prompts by difficulty level"),
            SEED,
            WORKERS,
        ),
    ),
    "pipeline": (
        "Curate raw trajectories into graded samples.",
        (
            Opt("--in", None, str, "raw trajectories JSONL (shipped fixture when omitted)", "input"),
            Opt("--out", None, str, "curated trajectories JSONL", "output"),
            Opt("--report", None, str, "pipeline report JSON", "output"),
            Opt("--pipeline-config", None, str, "pipeline config JSON (shipped fixture when omitted)", "input"),
            Opt("--stages", "filter,clean,refine,split,augment,grade", str, "comma-separated stages to run"),
            WORKERS,
        ),
    ),
    "grade": (
        "Assign difficulty levels to trajectories.",
        (
            Opt("--in", None, str, "trajectories JSONL", "input"),
            Opt("--out", None, str, "graded trajectories JSONL", "output"),
            Opt("--grader", "rule", str, "grading method", choices=("rule", "oracle")),
            Opt("--k", 5, int, "answers sampled per question by the oracle grader"),
            Opt("--oracle-p", 0.6, float, "per-answer success probability of the scripted oracle"),
            SEED,
        ),
    ),
    "curves": (
        "Write curve data as CSV.",
        (
            Opt("--what", "process-weight", str, "process-weight | training-report"),
            Opt("--n", 100, int, "steps per trajectory for process-weight curves"),
            Opt("--gamma", None, float, "single curve gamma (all five reference curves when omitted)"),
            Opt("--delta", None, float, "single curve delta"),
            Opt("--normalize", False, _bool, "rescale process weights to span [gamma, 1]"),
            Opt("--report", None, str, "training report JSON for --what training-report", "input"),
            Opt("--out", None, str, "CSV path", "output"),
        ),
    ),
    "simulate": (
        "Apply one action list to an environment state and print the resulting page.",
        (
            SITE,
            TASKS,
            Opt("--task", None, str, "task id used for the step budget and judging"),
            Opt("--state", None, str, "state JSON (fresh reset when omitted)", "input"),
            Opt("--actions", "[]", str, "JSON action list or a full agent response"),
            Opt("--out-state", None, str, "write the new state here", "output"),
            SEED,
        ),
    ),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="riskforge", description="Agent reward, training and evaluation toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, (doc, opts) in COMMANDS.items():
        p = sub.add_parser(name, help=doc, description=doc)
        p.add_argument("--config", default=None, help="JSON settings file (default: none)")
        for o in opts:
            p.add_argument(
                o.flag, dest=o.dest, type=o.type, default=None, choices=o.choices, help=f"{o.help} (default: {o.default})"
            )
    return parser


def resolve(command: str, args: argparse.Namespace, env: dict[str, str] | None = None) -> dict[str, Any]:
    """Merge flags, environment and config file over the defaults of ``command``."""
    env = os.environ if env is None else env
    file_cfg: dict[str, Any] = {}
    if getattr(args, "config", None):
        file_cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        if not isinstance(file_cfg, dict):
            raise SchemaError("config file must hold a JSON object", 0, args.config)
        file_cfg = {k.replace("-", "_"): v for k, v in file_cfg.items()}
    out = {}
    for o in COMMANDS[command][1]:
        val = getattr(args, o.dest)
        if val is None and ENV_PREFIX + o.dest.upper() in env:
            val = o.type(env[ENV_PREFIX + o.dest.upper()])
        if val is None and o.dest in file_cfg:
            val = file_cfg[o.dest]
            val = None if val is None else o.type(val)
        if val is None:
            val = o.default
        if o.choices and val is not None and val not in o.choices:
            raise ValueError(f"{o.flag}: {val!r} not in {o.choices}")
        out[o.dest] = val
    return out


def _digest(path: str) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def settings_hash(command: str, cfg: dict[str, Any]) -> str:
    roles = {o.dest: o.role for o in COMMANDS[command][1]}
    hashed = {}
    for k, v in cfg.items():
        if roles[k] == "output":
            continue
        if roles[k] == "input" and v is not None:
            v = "sha256:" + _digest(v)
        hashed[k] = v
    return config_hash(command, hashed)


class Run:
    def __init__(self, command: str, cfg: dict[str, Any]):
        self.command = command
        self.cfg = cfg
        self.hash = settings_hash(command, cfg)

    def meta(self) -> dict[str, Any]:
        roles = {o.dest: o.role for o in COMMANDS[self.command][1]}
        settings = {k: v for k, v in self.cfg.items() if roles[k] == "setting"}
        inputs = {k: None if v is None else "sha256:" + _digest(v) for k, v in self.cfg.items() if roles[k] == "input"}
        return {"command": self.command, "config_hash": self.hash, "settings": settings, "inputs": inputs}

    def write(self, path: str | None, text: str, **extra: Any) -> None:
        """Write ``text`` to ``path`` (stdout when None) plus a metadata sidecar."""
        if path is None:
            sys.stdout.write(text)
            return
        Path(path).write_text(text, encoding="utf-8")
        meta = {**self.meta(), **extra}
        Path(str(path) + ".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _site_tasks(cfg):
    from .webenv import load_site, load_tasks

    site = load_site(cfg["site"] or _shipped("site_acme.json"))
    tasks = load_tasks(cfg["tasks"] or _shipped("tasks_acme.jsonl"), site)
    return site, tasks


def _reward_config(cfg, stage="later"):
    from .rewards import RewardConfig

    return RewardConfig(
        alpha=cfg["alpha"], beta=cfg["beta"], gamma=cfg["gamma"], delta=cfg["delta"], f1_threshold=cfg["f1_threshold"], stage=stage
    )


def _require(cfg, *names):
    missing = [n for n in names if cfg[n] is None]
    if missing:
        raise ValueError("missing required option(s): " + ", ".join("--" + n.replace("_", "-") for n in missing))


# --- subcommands -------------------------------------------------------------


def cmd_score(run: Run) -> int:
    from .evaluate import emit_report, read_predictions, reward_breakdowns, score_offline_multi, score_offline_single

    cfg = run.cfg
    _require(cfg, "gold", "predictions")
    bench = read_trajectories(cfg["gold"])
    preds = read_predictions(cfg["predictions"])
    scorer = score_offline_single if run.command == "score-single" else score_offline_multi
    result = scorer(preds, bench, workers=cfg["workers"])
    result.config_hash = run.hash
    run.write(cfg["out"], emit_report(result, cfg["format"]))
    if cfg["emit_breakdown"]:
        rows = reward_breakdowns(preds, bench, _reward_config(cfg))
        text = "".join(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n" for r in rows)
        run.write(cfg["emit_breakdown"], text)
    return 0


def make_agent(spec: str, site, tasks):
    from .evaluate import OracleAgent, PolicyAgent, ReplayAgent
    from .grpo import load_checkpoint

    kind, _, arg = spec.partition(":")
    if kind == "oracle" and not arg:
        return OracleAgent(site, tasks)
    if kind == "replay" and arg:
        return ReplayAgent.from_file(arg)
    if kind == "policy" and arg:
        policy, _, doc = load_checkpoint(arg)
        if not doc.get("observations"):
            raise SchemaError("checkpoint has no observation table", 0, arg)
        table: dict[tuple[str, str], int] = {}
        for i, (question, url) in enumerate(doc["observations"]):
            table.setdefault((question, url), i)
        return PolicyAgent(policy, table)
    raise UnknownAgent(f"unknown agent {spec!r}; use oracle, policy:<checkpoint> or replay:<file>")


def cmd_run_online(run: Run) -> int:
    from .evaluate import emit_report, run_online

    cfg = run.cfg
    site, tasks = _site_tasks(cfg)
    agent = make_agent(cfg["agent"], site, tasks)
    result = run_online(agent, site, tasks, cfg["max_steps"], cfg["seed"], cfg["workers"])
    result.config_hash = run.hash
    run.write(cfg["out"], emit_report(result, cfg["format"]))
    return 0


def _training_data(cfg):
    from .grpo import prompts_from_trajectories
    from .webenv import oracle_episode

    if cfg["data"]:
        trajs = read_trajectories(cfg["data"])
    else:
        site, tasks = _site_tasks(cfg)
        trajs = [oracle_episode(site, t, traj_id=t.id) for t in tasks]
    return prompts_from_trajectories(trajs)


def cmd_train(run: Run) -> int:
    from .grpo import GrpoConfig, load_checkpoint, save_checkpoint, train

    cfg = run.cfg
    _require(cfg, "out_checkpoint", "out_report")
    prompts = _training_data(cfg)
    schedule = {"schedule": None, "binary-only": ("later",), "early-only": ("early",)}[cfg["stage"]]
    gcfg = GrpoConfig(
        group_size=cfg["group_size"],
        clip_eps=cfg["clip_eps"],
        kl_coef=cfg["kl_coef"],
        learning_rate=cfg["learning_rate"],
        epochs=cfg["epochs"],
        iterations_per_epoch=cfg["iterations_per_epoch"],
        stage_schedule=schedule,
        seed=cfg["seed"],
        level_reweight=cfg["level_reweight"],
        workers=cfg["workers"],
    )
    policy = reference = None
    start = 1
    keys = [p.key for p in prompts]
    if cfg["resume"]:
        policy, reference, doc = load_checkpoint(cfg["resume"])
        if doc["prompt_keys"] != keys:
            raise SchemaError("checkpoint was trained on different prompts", 0, cfg["resume"])
        start = doc["epoch"] + 1
    report, policy = train(prompts, _reward_config(cfg, "early"), gcfg, policy, reference, start_epoch=start)
    if reference is None:
        from .grpo import make_policy

        reference = make_policy(prompts, gcfg.max_len)
    report.config_hash = run.hash
    run.write(cfg["out_report"], report.dumps())
    save_checkpoint(
        cfg["out_checkpoint"],
        policy,
        reference,
        run.hash,
        report.epochs[-1],
        keys,
        [(p.step.question, p.step.dom.url) for p in prompts],
    )
    Path(cfg["out_checkpoint"] + ".meta.json").write_text(json.dumps(run.meta(), indent=2, sort_keys=True) + "\n")
    log.info("final mean reward %.4f", report.final_mean_reward)
    return 0


def cmd_pipeline(run: Run) -> int:
    from .pipeline import load_pipeline_config, run_pipeline

    cfg = run.cfg
    _require(cfg, "out", "report")
    raw = read_trajectories(cfg["in"] or _shipped("raw_trajectories.jsonl"))
    pcfg = load_pipeline_config(cfg["pipeline_config"] or _shipped("pipeline_config.json"))
    stages = tuple(s.strip() for s in cfg["stages"].split(",") if s.strip())
    out, report = run_pipeline(raw, pcfg, workers=cfg["workers"], stages=stages)
    report.config_hash = run.hash
    write_trajectories(out, cfg["out"])
    Path(cfg["out"] + ".meta.json").write_text(json.dumps(run.meta(), indent=2, sort_keys=True) + "\n")
    run.write(cfg["report"], report.dumps())
    return 0


def cmd_grade(run: Run) -> int:
    from collections import Counter
    from dataclasses import replace

    from .pipeline import ScriptedOracle, grade_by_rule, grade_difficulty

    cfg = run.cfg
    _require(cfg, "in", "out")
    trajs = read_trajectories(cfg["in"])
    if cfg["grader"] == "oracle":
        oracle = ScriptedOracle(cfg["oracle_p"])

        def grade_step(s):
            return grade_difficulty(s, oracle, cfg["k"], cfg["seed"])
    else:
        grade_step = grade_by_rule
    order = ("easy", "moderate", "difficult")
    graded = [replace(t, difficulty=max((grade_step(s) for s in t.steps), key=order.index)) for t in trajs]
    write_trajectories(graded, cfg["out"])
    counts = Counter(t.difficulty for t in graded)
    meta = {**run.meta(), "levels": {lv: counts.get(lv, 0) for lv in order}}
    Path(cfg["out"] + ".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return 0


def process_weight_csv(n: int, curves, normalize: bool = False) -> str:
    from .rewards import process_weight

    if n < 2:
        raise ValueError("--n must be >= 2")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["i_over_n"] + [f"gamma={g:g};delta={d:g}" for g, d in curves])
    for i in range(1, n + 1):
        w.writerow([repr((i - 1) / (n - 1))] + [repr(process_weight(i, n, g, d, normalize)) for g, d in curves])
    return buf.getvalue()


def training_report_csv(doc: dict[str, Any]) -> str:
    it = doc["iterations"]
    per_epoch = len(it["mean_reward"]) // max(len(doc["epochs"]), 1)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iteration", "epoch", "stage", "mean_reward", "mean_reward_binary", "mean_kl", "objective"])
    for k in range(len(it["mean_reward"])):
        epoch = doc["epochs"][k // per_epoch] if per_epoch else ""
        w.writerow(
            [k + 1, epoch, it["stage"][k]] + [repr(it[m][k]) for m in ("mean_reward", "mean_reward_binary", "mean_kl", "objective")]
        )
    return buf.getvalue()


def cmd_curves(run: Run) -> int:
    cfg = run.cfg
    if cfg["what"] == "process-weight":
        if cfg["gamma"] is None and cfg["delta"] is None:
            curves = REFERENCE_CURVES
        else:
            curves = ((cfg["gamma"] if cfg["gamma"] is not None else 0.7, cfg["delta"] if cfg["delta"] is not None else 4.0),)
        text = process_weight_csv(cfg["n"], curves, cfg["normalize"])
    elif cfg["what"] == "training-report":
        _require(cfg, "report")
        text = training_report_csv(json.loads(Path(cfg["report"]).read_text(encoding="utf-8")))
    else:
        raise UnknownCurve(f"unknown curve {cfg['what']!r}; use process-weight or training-report")
    run.write(cfg["out"], text)
    return 0


def cmd_simulate(run: Run) -> int:
    from .actions import actions_from_json
    from .parser import check_response
    from .webenv import EnvState, Environment, judge

    cfg = run.cfg
    site, tasks = _site_tasks(cfg)
    task = None
    if cfg["task"] is not None:
        by_id = {t.id: t for t in tasks}
        if cfg["task"] not in by_id:
            raise ValueError(f"unknown task {cfg['task']!r}")
        task = by_id[cfg["task"]]
    env = Environment(site, task)
    if cfg["state"]:
        state = EnvState.from_json(json.loads(Path(cfg["state"]).read_text(encoding="utf-8")))
    else:
        state, _ = env.reset(cfg["seed"])
    payload = json.loads(cfg["actions"])
    if isinstance(payload, dict):
        response, verdict = check_response(cfg["actions"])
        if not verdict.ok:
            raise SchemaError("invalid response: " + ",".join(verdict.codes()), 0, "actions")
        actions = response.action
    else:
        actions = actions_from_json(payload)
    state, snap, outcomes = env.step(state, actions)
    lines = [snap.render(), ""]
    lines += [f"{'ok ' if o.ok else 'err'} {o.action}: {o.message}" for o in outcomes]
    if task is not None:
        v = judge(task, state, site)
        lines.append(f"completed={v.completed} success={v.success}")
    sys.stdout.write("\n".join(lines) + "\n")
    if cfg["out_state"]:
        run.write(cfg["out_state"], json.dumps(state.to_json(), indent=2, sort_keys=True, ensure_ascii=False) + "\n")
    return 0


HANDLERS = {
    "score-single": cmd_score,
    "score-multi": cmd_score,
    "run-online": cmd_run_online,
    "train": cmd_train,
    "pipeline": cmd_pipeline,
    "grade": cmd_grade,
    "curves": cmd_curves,
    "simulate": cmd_simulate,
}


def main(argv: list[str] | None = None) -> int:
    from .grpo import CheckpointError
    from .pipeline import OracleFailure
    from .webenv import FixtureError

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        run = Run(args.command, resolve(args.command, args))
        return HANDLERS[args.command](run)
    except UnknownAgent as exc:
        print(f"riskforge: {exc}", file=sys.stderr)
        return 1
    except FixtureError as exc:
        print(f"riskforge: fixture error: {exc}", file=sys.stderr)
        return 3
    except (SchemaError, CheckpointError, OracleFailure, OSError, ValueError, KeyError) as exc:
        print(f"riskforge: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
