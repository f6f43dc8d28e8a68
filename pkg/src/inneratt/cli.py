"""Command line entry point.

Subcommands: train, eval, robustness, trace, gradcheck, plot. Every failure
exits nonzero with a single `error: ...` line on stderr; unknown commands or
flags exit 2 with usage text. `INNERATT_THREADS` overrides the worker count
for training.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from pathlib import Path

import numpy as np

from .config import parse_config
from .errors import CheckpointError, ConfigError, ContractError


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="inneratt",
        description="attention-critic training and analysis for the rescue world",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run a training experiment")
    p.add_argument("--config", help="JSON config file (defaults apply to omitted keys)")
    p.add_argument("--variant", choices=["td", "ppo"])
    p.add_argument("--critic", choices=["inneratt", "baseline"])
    p.add_argument("--scenario", choices=["s1", "s2", "s3"])
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="override the config's output directory")
    p.add_argument("--resume", help="checkpoint to continue from (ignores --config)")
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("eval", help="evaluate a checkpoint over greedy episodes")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int, default=80)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write the cooperation counts as CSV here")
    p.add_argument("--trajectories", help="dump per-step trajectory rows as CSV here")

    p = sub.add_parser("robustness", help="perturbation bound verification")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--delta1", type=float, default=0.1)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write the eps table as CSV here")

    p = sub.add_parser("trace", help="log one episode's attention weights")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--robot", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="trace.csv")
    p.add_argument("--scripted", action="store_true",
                   help="use the staged double-task handoff episode")

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=8,
                   help="element samples per parameter array")

    p = sub.add_parser("plot", help="render a metrics CSV as SVG")
    p.add_argument("--metrics", required=True)
    p.add_argument("--out", required=True)
    return parser


def _cmd_train(args):
    from .trainer import train

    if args.resume:
        result = train(resume=args.resume, progress=not args.quiet)
    else:
        if not args.config:
            raise ConfigError("--config", "train needs --config or --resume")
        cfg = parse_config(args.config)
        overrides = {}
        for name in ("variant", "critic", "scenario", "seed"):
            value = getattr(args, name)
            if value is not None:
                overrides[name] = value
        if args.out:
            overrides["out_dir"] = args.out
        threads = os.environ.get("INNERATT_THREADS")
        if threads:
            overrides["workers"] = int(threads)
        if overrides:
            cfg = dataclasses.replace(cfg, **overrides)
        out_dir = Path(cfg.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "resolved_config.json").write_text(cfg.resolved_json() + "\n")
        result = train(cfg, progress=not args.quiet)
    print(f"trained {result.episodes} episodes in {result.wall_time:.1f}s; "
          f"metrics: {result.metrics_path}; checkpoint: {result.checkpoint_path}")
    return 0


def _load_params(path):
    from .checkpoint import load_checkpoint

    ckpt = load_checkpoint(path)
    critic = {k[len("param."):]: v for k, v in ckpt.arrays.items()
              if k.startswith("param.critic.")}
    actor = {k[len("param."):]: v for k, v in ckpt.arrays.items()
             if k.startswith("param.actor.")}
    return ckpt.config, critic, actor


def _cmd_eval(args):
    from .analysis import (CooperationTable, chi_square_uniform, cooperation_rates,
                           evaluate, food_participation_split)

    cfg, _, actor = _load_params(args.checkpoint)
    result = evaluate(actor, cfg, episodes=args.episodes, seed=args.seed,
                      trajectory_path=args.trajectories)
    print(f"evaluated {args.episodes} episodes on {cfg.scenario}: "
          f"mean reward {result.mean_reward:.3f} +/- {result.stderr:.3f} (se), "
          f"{len(result.events)} rescues")
    split = food_participation_split(result.events)
    if sum(split) > 0:
        chi = chi_square_uniform(split)
        verdict = "uniform at 5%" if chi.passes else "not uniform at 5%"
        print(f"food delivery participation split {split[0]}/{split[1]}: "
              f"chi2 {chi.statistic:.2f} ({verdict})")
    for i in (0, 1):
        rates = cooperation_rates(result.events, i)
        if rates is not None:
            pretty = ", ".join(f"{j}: {r:.2f}" for j, r in rates.items())
            print(f"cooperation rates of food robot {i}: {pretty}")
    if args.out:
        table = CooperationTable.from_events(result.events)
        np.savetxt(args.out, table.counts, fmt="%d", delimiter=",",
                   header="pairwise rescue counts", comments="# ")
        print(f"cooperation counts written to {args.out}")
    return 0


def _cmd_robustness(args):
    from .analysis import perturbation_experiment, sample_embeddings

    cfg, critic, actor = _load_params(args.checkpoint)
    embeddings = sample_embeddings(actor, critic, cfg, seed=args.seed)
    report = perturbation_experiment(
        critic, embeddings, args.delta1, args.trials,
        rng=np.random.default_rng(args.seed),
    )
    print(report.summary_text())
    if args.out:
        report.write_csv(args.out)
        print(f"eps table written to {args.out}")
    if not (report.bound_holds and report.markov_satisfied()
            and report.max_identity_error < 1e-10):
        print("error: robustness bounds violated", file=sys.stderr)
        return 1
    return 0


def _cmd_trace(args):
    from .analysis import scripted_handoff_trace, trace_episode

    cfg, critic, actor = _load_params(args.checkpoint)
    if args.scripted:
        import dataclasses as dc

        monitored = args.robot if args.robot in (0, 1) else 1
        trace, switch = scripted_handoff_trace(critic, dc.replace(cfg, scenario="s2"),
                                               monitored=monitored, seed=args.seed)
        print(f"scripted handoff trace (stage switch at step {switch}, "
              f"rescues {trace.captures})")
    else:
        trace = trace_episode(actor, critic, cfg, args.robot, seed=args.seed)
    trace.write_csv(args.out)
    mean = trace.head_mean()
    first, last = mean[0], mean[-1]
    print(f"robot {trace.robot} attention over teammates {trace.teammates}")
    print(f"  first step head-mean: {np.array2string(first, precision=3)}")
    print(f"  last step head-mean:  {np.array2string(last, precision=3)}")
    print(f"trace written to {args.out}")
    return 0


def _cmd_gradcheck(args):
    from .gradcheck import REL_TOLERANCE, run_full_gradcheck

    worst, results = run_full_gradcheck(seed=args.seed, samples_per_array=args.samples)
    for r in results:
        state = "ok" if r.ok else "FAIL"
        print(f"{r.label:<10} max rel error {r.max_rel_error:.3e} "
              f"({r.elapsed:.1f}s) {state}")
    print(f"max relative error: {worst:.3e} (tolerance {REL_TOLERANCE:.0e})")
    return 0 if worst < REL_TOLERANCE else 1


def _cmd_plot(args):
    from .svgplot import plot_metrics

    plot_metrics(args.metrics, args.out)
    print(f"plot written to {args.out}")
    return 0


_HANDLERS = {
    "train": _cmd_train,
    "eval": _cmd_eval,
    "robustness": _cmd_robustness,
    "trace": _cmd_trace,
    "gradcheck": _cmd_gradcheck,
    "plot": _cmd_plot,
}


def cli(argv=None):
    """Run one command; returns the process exit status."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else 2
    try:
        return _HANDLERS[args.command](args)
    except (ConfigError, CheckpointError, ContractError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(cli())


if __name__ == "__main__":
    main()
