#!/usr/bin/env python3
"""Per-iteration training reward for the staged schedule and the binary-only schedule.

    python scripts/training_curves.py --seeds 5 --out curves.csv

Writes one row per (schedule, seed, iteration). Rewards are the training reward
under each run's own stage and the binary whole-list reward of the same rollouts.
"""

from __future__ import annotations

import argparse
import csv
import sys

from riskforge.fixtures import fixture_path
from riskforge.grpo import prompts_from_trajectories, toy_config, train
from riskforge.rewards import RewardConfig
from riskforge.webenv import load_site, load_tasks, oracle_episode


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=5, help="number of seeds (default: 5)")
    ap.add_argument("--epochs", type=int, default=4, help="epochs per run (default: 4)")
    ap.add_argument("--out", default="-", help="CSV path, - for stdout (default: -)")
    args = ap.parse_args(argv)

    site = load_site(fixture_path("site_acme.json"))
    tasks = load_tasks(fixture_path("tasks_acme.jsonl"), site)
    prompts = prompts_from_trajectories([oracle_episode(site, t) for t in tasks])
    schedules = {"staged": None, "binary-only": ("later",)}

    fh = sys.stdout if args.out == "-" else open(args.out, "w", newline="")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["schedule", "seed", "iteration", "stage", "mean_reward", "mean_reward_binary", "mean_kl"])
    for name, schedule in schedules.items():
        for seed in range(args.seeds):
            cfg = toy_config(seed=seed, epochs=args.epochs, stage_schedule=schedule)
            report, _ = train(prompts, RewardConfig(), cfg)
            it = report.iterations
            for k in range(len(it["mean_reward"])):
                w.writerow([name, seed, k + 1, it["stage"][k], it["mean_reward"][k], it["mean_reward_binary"][k], it["mean_kl"][k]])
            print(f"{name} seed={seed} final={report.final_mean_reward:.3f}", file=sys.stderr)
    if fh is not sys.stdout:
        fh.close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
