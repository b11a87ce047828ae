#!/usr/bin/env python3
"""Distance to the reference policy with and without difficulty-level weights.

    python scripts/kl_reweight.py --seeds 5 --epochs 2 --out kl.csv

Each seed runs a weighted (1.0/1.1/1.2) and an unweighted (all 1.0) training
with identical sampling seeds and prints the per-iteration sampled KL estimate.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import replace

from riskforge.fixtures import fixture_path
from riskforge.grpo import KL_PROBE_LEARNING_RATE, prompts_from_trajectories, toy_config, train
from riskforge.rewards import RewardConfig
from riskforge.webenv import load_site, load_tasks, oracle_episode


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=5, help="number of paired runs (default: 5)")
    ap.add_argument("--epochs", type=int, default=1, help="epochs per run (default: 1)")
    ap.add_argument("--learning-rate", type=float, default=KL_PROBE_LEARNING_RATE, help="SGD step (default: %(default)s)")
    ap.add_argument("--out", default="-", help="CSV path, - for stdout (default: -)")
    args = ap.parse_args(argv)

    site = load_site(fixture_path("site_acme.json"))
    tasks = load_tasks(fixture_path("tasks_acme.jsonl"), site)
    prompts = prompts_from_trajectories([oracle_episode(site, t) for t in tasks])

    fh = sys.stdout if args.out == "-" else open(args.out, "w", newline="")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["seed", "weighting", "iteration", "mean_kl", "mean_reward"])
    wins = 0
    for seed in range(args.seeds):
        cfg = toy_config(seed=seed, epochs=args.epochs, learning_rate=args.learning_rate)
        epoch_kl = {}
        for name, c in (("level", cfg), ("flat", replace(cfg, level_reweight=False))):
            report, _ = train(prompts, RewardConfig(), c)
            for k, (kl, r) in enumerate(zip(report.iterations["mean_kl"], report.iterations["mean_reward"])):
                w.writerow([seed, name, k + 1, kl, r])
            epoch_kl[name] = report.mean_kl[0]
        wins += epoch_kl["level"] > epoch_kl["flat"]
        print(f"seed={seed} epoch-1 KL level={epoch_kl['level']:.4e} flat={epoch_kl['flat']:.4e}", file=sys.stderr)
    print(f"weighted KL larger in {wins}/{args.seeds} seeds", file=sys.stderr)
    if fh is not sys.stdout:
        fh.close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
