"""Command-line entry point: ``safepd {train,eval,oracle,ablate}``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .errors import CheckpointError, ConfigError, EnumerationBudgetError, NonFiniteError, SafePDError

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_ABORT = 0, 1, 2, 3


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _nonneg_float(text: str) -> float:
    v = float(text)
    if not v >= 0:
        raise argparse.ArgumentTypeError("must be a nonnegative number")
    return v


def _load_run_config(args):
    from .config import apply_overrides, load_config, parse_config
    cfg = load_config(args.config) if args.config else parse_config("{}", "<defaults>")
    return apply_overrides(cfg, seed=args.seed, algorithm=args.algorithm,
                           fixed_lambda=args.fixed_lambda, h_eval=args.h_eval,
                           rollouts=args.rollouts, threads=args.threads,
                           iterations=getattr(args, "iterations", None),
                           scenario=str(Path(args.scenario).resolve()) if getattr(args, "scenario", None) else None)


def cmd_train(args) -> int:
    from .experiment import run_to_directory
    cfg = _load_run_config(args)
    res = run_to_directory(cfg, args.out)
    print(f"out={args.out}")
    for label, lam in zip(res.labels, res.lam):
        print(f"lambda_{label}={float(lam)!r}")
    if res.final_report is not None:
        for label, p in zip(res.labels, res.final_report.safety):
            print(f"safety_{label}={float(p)!r}")
        print(f"mean_reward={res.final_report.mean_reward!r}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .evaluation import estimate_joint_safety
    from .experiment import build_scenario, evaluation_scenario, write_json
    from .nav_env import NavEnv
    from .policy import load_checkpoint
    cfg = _load_run_config(args)
    policy = load_checkpoint(args.checkpoint)
    scenario = evaluation_scenario(cfg, build_scenario(cfg))
    if policy.grid.centers.shape[1] != len(scenario.low):
        raise CheckpointError("checkpoint state dimension does not match the scenario")
    e = cfg.evaluation
    report = estimate_joint_safety(NavEnv(scenario), policy, e.h_eval, e.rollouts,
                                   cfg.training.seed, 11, threads=e.threads, labels=scenario.labels)
    doc = report.to_dict()
    doc["checkpoint"] = str(args.checkpoint)
    doc["seed"] = cfg.training.seed
    if args.out:
        write_json(args.out, doc)
    else:
        print(json.dumps(doc, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_oracle(args) -> int:
    from .tabular import duality_gap, load_tabular, verification_cmdp
    mdp = load_tabular(args.instance) if args.instance else verification_cmdp()
    rep = duality_gap(mdp, resolution=args.resolution, restarts=args.restarts, step=args.step,
                      iters=args.iters, rel_tol=args.tolerance, seed=args.seed or 0)
    print("\n".join(rep.lines()))
    return EXIT_FAIL if rep.status == "FAIL" else EXIT_OK


def cmd_ablate(args) -> int:
    from .experiment import build_scenario, drop_obstacle, train_run, write_json
    cfg = _load_run_config(args)
    labels = build_scenario(cfg).labels
    indices = args.index if args.index else list(range(len(labels)))
    for i in indices:
        if not 0 <= i < len(labels):
            raise ConfigError(f"--index {i} outside 0..{len(labels) - 1}")
    seeds = args.seeds or [cfg.training.seed]
    base = {s: train_run(cfg, seed=s) for s in seeds}
    result = {"format": "safepd-ablation", "format_version": 1, "seeds": seeds,
              "base": {str(s): {"mean_reward": base[s].final_report.mean_reward,
                                "lambda": dict(zip(labels, map(float, base[s].lam)))}
                       for s in seeds},
              "improvement": {}}
    for i in indices:
        gains = []
        for s in seeds:
            run = train_run(drop_obstacle(cfg, i), seed=s)
            gains.append(run.final_report.mean_reward - base[s].final_report.mean_reward)
        result["improvement"][labels[i]] = {"mean": float(np.mean(gains)),
                                            "per_seed": [float(g) for g in gains]}
        print(f"improvement_{labels[i]}={float(np.mean(gains))!r}")
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        write_json(Path(args.out) / "ablation.json", result)
    return EXIT_OK


def _run_flags(p, out_required=False):
    p.add_argument("--config", metavar="PATH", help="run configuration (YAML)")
    p.add_argument("--seed", type=_u64, metavar="U64", help="override training.seed")
    p.add_argument("--out", metavar="DIR", required=out_required, help="output location")
    p.add_argument("--threads", type=_positive, metavar="N", help="cap on evaluation threads")
    p.add_argument("--algorithm", choices=["stochastic-primal-dual", "dual-descent", "fixed-weight"])
    p.add_argument("--fixed-lambda", type=_nonneg_float, metavar="X",
                   help="multiplier value for the fixed-weight algorithm")
    p.add_argument("--h-eval", type=_positive, metavar="N", help="evaluation horizon")
    p.add_argument("--rollouts", type=_positive, metavar="N", help="evaluation rollouts")
    p.add_argument("--scenario", metavar="PATH", help="scenario file (overrides the config)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="safepd", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a policy and write trace, checkpoints and manifest")
    _run_flags(p, out_required=True)
    p.add_argument("--iterations", type=int, metavar="K", help="override training.iterations")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="estimate joint safety and reward of a checkpoint")
    _run_flags(p)
    p.add_argument("--checkpoint", required=True, metavar="PATH")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("oracle", help="verify strong duality on a tabular CMDP")
    p.add_argument("instance", nargs="?", help="tabular instance (default: shipped verification CMDP)")
    p.add_argument("--resolution", type=_positive, default=200)
    p.add_argument("--restarts", type=_positive, default=10)
    p.add_argument("--step", type=float, default=0.01)
    p.add_argument("--iters", type=_positive, default=10_000)
    p.add_argument("--tolerance", type=float, default=0.05, help="relative gap tolerance")
    p.add_argument("--seed", type=_u64)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("ablate", help="retrain with each obstacle removed and report reward gains")
    _run_flags(p)
    p.add_argument("--index", type=int, action="append", help="obstacle index (repeatable)")
    p.add_argument("--seeds", type=_u64, nargs="+", metavar="U64")
    p.set_defaults(func=cmd_ablate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CheckpointError, EnumerationBudgetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NonFiniteError as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except SafePDError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
