#!/usr/bin/env python3
"""Desk-scale training run: the full-scale configuration with the episode
budget cut to 5000, then a greedy evaluation against a uniform-random
baseline on the same build.

Usage: python scripts/train_desk_scale.py [--scenario s1] [--seed 0]
       [--critic inneratt] [--variant td] [--episodes 5000] [--out runs/desk]
"""
import argparse
import math
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from inneratt.analysis import evaluate
from inneratt.config import ExperimentConfig
from inneratt.trainer import train


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--scenario", default="s1", choices=["s1", "s2", "s3"])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--critic", default="inneratt", choices=["inneratt", "baseline"])
    ap.add_argument("--variant", default="td", choices=["td", "ppo"])
    ap.add_argument("--episodes", type=int, default=5000)
    ap.add_argument("--out", default="runs/desk")
    args = ap.parse_args()

    cfg = ExperimentConfig(
        episodes=args.episodes, scenario=args.scenario, seed=args.seed,
        critic=args.critic, variant=args.variant, out_dir=args.out,
        metrics_interval=250,
    )
    result = train(cfg, progress=True)
    print(f"trained {result.episodes} episodes in {result.wall_time/60:.1f} min "
          f"(collect {result.timings['collect']:.0f}s, critic "
          f"{result.timings['critic']:.0f}s, actor {result.timings['actor']:.0f}s)")

    trained = evaluate(result.actor_params, cfg, seed=args.seed + 1000)
    random = evaluate(None, cfg, seed=args.seed + 2000, random_policy=True)
    gap = trained.mean_reward - random.mean_reward
    se = math.sqrt(trained.stderr**2 + random.stderr**2)
    print(f"greedy eval reward {trained.mean_reward:.2f} (se {trained.stderr:.2f}), "
          f"{len(trained.events)} rescues")
    print(f"random policy reward {random.mean_reward:.2f} (se {random.stderr:.2f}), "
          f"{len(random.events)} rescues")
    print(f"improvement {gap:.2f} = {gap / se:.1f} standard errors")


if __name__ == "__main__":
    main()
