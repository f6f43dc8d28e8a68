#!/usr/bin/env python3
"""Flexibility comparison: attention critic vs fixed-weight baseline over
several seeds on the mixed-task scenario. Reports each run's food delivery
participation split, its chi-square against uniform, and final attention
entropy.

Usage: python scripts/flexibility_study.py [--seeds 0 1 2 3 4]
       [--episodes 5000] [--processes 2] [--out runs/flex]
"""
import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from inneratt.study import desk_scale_config, run_flexibility_study


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--episodes", type=int, default=5000)
    ap.add_argument("--processes", type=int, default=2)
    ap.add_argument("--out", default="runs/flex")
    args = ap.parse_args()

    cfg = desk_scale_config(scenario="s3", episodes=args.episodes,
                            metrics_interval=500)
    start = time.time()
    result = run_flexibility_study(cfg, args.seeds, args.out,
                                   processes=args.processes)
    print(result.summary_text(args.seeds))
    print(f"total {(time.time() - start) / 60:.1f} min")


if __name__ == "__main__":
    main()
