"""Command-line entry point: ``upt <subcommand>`` or ``python -m upt``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .answers import extract
from .metrics import BinomialVoteModel, binomial_terms, majority_success_prob
from .policy import load_checkpoint, make_policy
from .runner import evaluate, load_config, build_policy, run_experiment_suite, train, SUITES
from .tasks import FAMILIES, TaskSet, generate_tasks, load_tasks, save_tasks, synthesize_direct, synthesize_in_context


def cmd_extract(args) -> int:
    src = sys.stdin if args.inp == "-" else open(args.inp)
    with src:
        for line in src:
            a = extract(line.rstrip("\n"))
            print(f"{a.kind}\t{a.canonical}")
    return 0


def cmd_analyze_binomial(args) -> int:
    model = BinomialVoteModel(args.n, args.p)
    strict = majority_success_prob(model)
    inclusive = majority_success_prob(model, inclusive=True)
    print(f"n = {args.n}  p = {args.p}")
    print(f"P(E) strict    P(X > n/2)       = {strict:.6f}")
    print(f"P(E) inclusive P(X >= ceil(n/2)) = {inclusive:.6f}")
    print(f"P(E) [{'inclusive' if args.inclusive else 'strict'}] = {inclusive if args.inclusive else strict:.6f}")
    print("i\tC(n,i) p^i (1-p)^(n-i)")
    for i, term in binomial_terms(model):
        print(f"{i}\t{term:.10g}")
    return 0


def cmd_gen_tasks(args) -> int:
    save_tasks(args.out, generate_tasks(args.family, args.count, args.seed))
    return 0


def cmd_train(args) -> int:
    config = load_config(args.config)
    tasks = load_tasks(args.tasks)
    out = Path(args.out) if args.out else Path("runs") / Path(args.config).stem
    res = train(config, tasks, out_dir=out)
    last = res.log[-1] if res.log else None
    print(f"run directory: {out}")
    if last is not None:
        print(f"steps: {last.step}  final majority reward: {last.mean_majority_reward:.4f}")
    return 0


def cmd_eval(args) -> int:
    kind, params = load_checkpoint(args.ckpt)
    tasks = load_tasks(args.tasks)
    if args.config:
        policy = build_policy(load_config(args.config), tasks)
    else:
        policy = make_policy(kind, tasks)
    if policy.kind != kind or policy.dim != params.dim:
        print(f"checkpoint ({kind}, {params.dim} params) does not match the policy built "
              f"for these tasks ({policy.kind}, {policy.dim} params)", file=sys.stderr)
        return 2
    res = evaluate(policy, params, tasks, args.mode, report_path=args.report)
    print(f"accuracy ({args.mode}): {res.accuracy:.4f} over {len(tasks)} tasks")
    return 0


def cmd_suite(args) -> int:
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else list(range(5))
    report = run_experiment_suite(args.name, seeds, out_dir=args.out)
    print(json.dumps({k: report[k] for k in ("suite", "summary", "checks", "passed")}, indent=1))
    return 0 if report["passed"] else 1


def cmd_synth(args) -> int:
    seed_tasks = load_tasks(args.seed_tasks)
    rng = np.random.default_rng(args.seed)
    out = []
    for t in seed_tasks:
        for _ in range(args.count):
            if args.strategy == "in_context":
                out.append(synthesize_in_context(t, rng))
            else:
                out.append(synthesize_direct(t.features, rng))
    synth = TaskSet(tuple(out), args.seed)
    if args.out:
        save_tasks(args.out, synth)
    else:
        save_tasks("/dev/stdout", synth)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="upt", description="Majority-vote GRPO on toy policies")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run training from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--tasks", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--tasks", required=True)
    p.add_argument("--mode", default="greedy", help="greedy | expected | sampled:K")
    p.add_argument("--config", help="training config (needed for non-default seq policy options)")
    p.add_argument("--report", help="write the per-task breakdown here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("suite", help="run a built-in experiment suite")
    p.add_argument("--name", required=True, choices=sorted(SUITES))
    p.add_argument("--seeds", help="comma-separated seeds (default 0,1,2,3,4)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_suite)

    p = sub.add_parser("synth", help="synthesize new tasks from seed tasks")
    p.add_argument("--strategy", required=True, choices=["in_context", "direct"])
    p.add_argument("--seed-tasks", required=True)
    p.add_argument("--count", type=int, default=1, help="tasks per seed task")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", help="extract canonical answers, one response per line")
    p.add_argument("--in", dest="inp", required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("analyze-binomial", help="majority-vote success probability")
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--inclusive", action="store_true")
    p.set_defaults(func=cmd_analyze_binomial)

    p = sub.add_parser("gen-tasks", help="write a synthetic task file")
    p.add_argument("--family", required=True, choices=FAMILIES)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_tasks)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
