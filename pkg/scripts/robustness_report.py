#!/usr/bin/env python3
"""Perturbation robustness report for a trained checkpoint: samples
embeddings from greedy rollouts, perturbs one robot's embedding per trial,
and verifies the single-term increment identity, the deterministic spectral
bound, and the Markov exceedance bound.

Usage: python scripts/robustness_report.py --checkpoint runs/desk/final.ckpt
       [--delta1 0.1] [--trials 1000] [--out robustness.csv]
"""
import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

import numpy as np

from inneratt.analysis import perturbation_experiment, sample_embeddings
from inneratt.checkpoint import load_checkpoint


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--checkpoint", required=True)
    ap.add_argument("--delta1", type=float, default=0.1)
    ap.add_argument("--trials", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()

    ckpt = load_checkpoint(args.checkpoint)
    critic = {k[len("param."):]: v for k, v in ckpt.arrays.items()
              if k.startswith("param.critic.")}
    actor = {k[len("param."):]: v for k, v in ckpt.arrays.items()
             if k.startswith("param.actor.")}
    embeddings = sample_embeddings(actor, critic, ckpt.config, seed=args.seed)
    report = perturbation_experiment(critic, embeddings, args.delta1, args.trials,
                                     rng=np.random.default_rng(args.seed))
    print(report.summary_text())
    if args.out:
        report.write_csv(args.out)
        print(f"eps table written to {args.out}")


if __name__ == "__main__":
    main()
