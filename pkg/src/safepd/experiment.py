"""Turn a run configuration into a trained policy, a trace file and a run manifest."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import __version__
from .algorithms import TrainConfig, TraceRecord, run_dual_descent, run_stochastic_primal_dual
from .config import CONFIG_VERSION, RunConfig
from .errors import ConfigError
from .evaluation import SafetyReport, estimate_joint_safety
from .mdp_core import Mode
from .nav_env import (SCENARIO_VERSION, NavEnv, NavScenario, Obstacle, default_scenario,
                      initial_from_spec, load_scenario)
from .policy import CHECKPOINT_VERSION, RbfGaussianPolicy, RbfGrid, save_checkpoint

TRACE_VERSION = 1
MANIFEST_VERSION = 1
EVAL_STREAM = 7  # stream key separating evaluation draws from training draws


def build_scenario(cfg: RunConfig) -> NavScenario:
    sc = default_scenario() if cfg.scenario == "default" else load_scenario(cfg.scenario)
    ov = cfg.scenario_override
    unknown = [l for l in ov.drop if l not in sc.labels]
    if unknown:
        raise ConfigError(f"scenario_override.drop: unknown obstacle labels {unknown}")
    obstacles = []
    for ob in sc.obstacles:
        if ob.label in ov.drop:
            continue
        pc = cfg.constraints.per_obstacle.get(ob.label)
        delta = cfg.constraints.delta if cfg.constraints.delta is not None else ob.delta
        t_safe = cfg.constraints.t_safe if cfg.constraints.t_safe is not None else ob.t_safe
        c = ob.c
        if pc is not None:
            delta = pc.delta if pc.delta is not None else delta
            t_safe = pc.t_safe if pc.t_safe is not None else t_safe
            c = pc.c if pc.c is not None else c
        obstacles.append(Obstacle(ob.label, ob.geometry, delta, t_safe, c))
    extra = set(cfg.constraints.per_obstacle) - set(sc.labels)
    if extra:
        raise ConfigError(f"constraints.per_obstacle: unknown obstacle labels {sorted(extra)}")
    kw = {"obstacles": tuple(obstacles)}
    if ov.goal is not None:
        kw["goal"] = tuple(ov.goal)
    if ov.initial_distribution is not None:
        i = ov.initial_distribution
        kw["initial"] = initial_from_spec(i.kind, i.point, i.points)
    try:
        return NavScenario(low=sc.low, high=sc.high, goal=kw.get("goal", sc.goal),
                           obstacles=kw["obstacles"], initial=kw.get("initial", sc.initial))
    except ConfigError as exc:
        raise ConfigError(f"scenario_override: {exc}") from None


def evaluation_scenario(cfg: RunConfig, scenario: NavScenario) -> NavScenario:
    if cfg.evaluation.initial == "figure":
        return scenario.with_initial(initial_from_spec("figure"))
    return scenario


def train_config(cfg: RunConfig, seed: Optional[int] = None) -> TrainConfig:
    t = cfg.training
    fixed = cfg.fixed_lambda if cfg.algorithm == "fixed-weight" else None
    return TrainConfig(mode=Mode(t.mode), gamma=t.gamma, eta_theta=t.eta_theta,
                       eta_lambda=t.eta_lambda, iterations=t.iterations,
                       inner_iterations=t.inner_iterations, seed=t.seed if seed is None else seed,
                       estimator=t.estimator, eval_every=cfg.evaluation.every,
                       batch_size=t.batch_size, horizon=t.horizon, horizon_cap=t.horizon_cap,
                       step_decay=t.step_decay, baseline=t.baseline, grad_clip=t.grad_clip,
                       dual_threshold=t.dual_threshold, fixed_lambda=fixed)


def initial_policy(cfg: RunConfig, scenario: NavScenario) -> RbfGaussianPolicy:
    p = cfg.policy
    grid = RbfGrid.lattice(scenario.low, scenario.high, p.rbf_spacing, p.rbf_sigma, p.feature_cutoff)
    return RbfGaussianPolicy.zeros(grid, len(scenario.low), list(p.covariance))


def constraint_specs(cfg: RunConfig, scenario: NavScenario):
    t = cfg.training
    return scenario.constraint_specs(Mode(t.mode), t.gamma, t.horizon)


def drop_obstacle(cfg: RunConfig, index: int) -> RunConfig:
    """Configuration with obstacle ``index`` (of the configured scenario) removed."""
    labels = build_scenario(cfg).labels
    if not 0 <= index < len(labels):
        raise ConfigError(f"obstacle index {index} outside 0..{len(labels) - 1}")
    ov = cfg.scenario_override.model_copy(update={"drop": cfg.scenario_override.drop + [labels[index]]})
    return cfg.model_copy(update={"scenario_override": ov})


def with_fixed_lambda(cfg: RunConfig, value: float) -> RunConfig:
    return RunConfig.model_validate({**cfg.model_dump(), "algorithm": "fixed-weight",
                                     "fixed_lambda": float(value)})


# -- trace file ----------------------------------------------------------------------

def _num(x) -> str:
    return "" if x is None else repr(float(x))


class TraceWriter:
    """Comma-separated trace: one row per iteration plus one per evaluation block."""

    def __init__(self, path, labels):
        self.labels = list(labels)
        self.path = Path(path)
        self.fh = open(self.path, "w", newline="\n")
        self.fh.write(f"# safepd-trace format_version={TRACE_VERSION}\n")
        self.fh.write(",".join(self.columns()) + "\n")
        self.rows = 0

    def columns(self) -> list[str]:
        L = self.labels
        return (["record", "iteration"] + [f"lambda_{l}" for l in L] + [f"u_{l}" for l in L]
                + ["lagrangian_return", "plain_return", "horizon"]
                + [f"safety_{l}" for l in L] + [f"safety_std_{l}" for l in L]
                + ["mean_reward", "mean_reward_std"])

    def __call__(self, rec: TraceRecord) -> None:
        if np.any(rec.lam < 0):
            raise AssertionError(f"negative multiplier at iteration {rec.iteration}")
        m = len(self.labels)
        row = [rec.kind, str(rec.iteration)] + [_num(x) for x in rec.lam]
        if rec.kind == "iter":
            row += [_num(x) for x in rec.u_hat]
            row += [_num(rec.lagrangian_return), _num(rec.plain_return), _num(rec.horizon)]
            row += [""] * (2 * m + 2)
        else:
            r: SafetyReport = rec.evaluation
            row += [""] * (m + 3)
            row += [_num(x) for x in r.safety] + [_num(x) for x in r.safety_std]
            row += [_num(r.mean_reward), _num(r.mean_reward_std)]
        self.fh.write(",".join(row) + "\n")
        self.rows += 1

    def close(self):
        self.fh.flush()
        self.fh.close()


def read_trace(path) -> tuple[int, list[dict]]:
    """Parse a trace file into ``(format_version, rows)``; numeric cells become floats or None."""
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("# safepd-trace format_version="):
        raise ConfigError(f"{path}: not a trace file")
    version = int(lines[0].split("=", 1)[1])
    header = lines[1].split(",")
    rows = []
    for line in lines[2:]:
        cells = line.split(",")
        row = {"record": cells[0], "iteration": int(cells[1])}
        for k, v in zip(header[2:], cells[2:]):
            row[k] = float(v) if v else None
        rows.append(row)
    return version, rows


# -- runs ----------------------------------------------------------------------------

@dataclass
class RunResult:
    policy: RbfGaussianPolicy
    lam: np.ndarray
    trace: list
    final_report: Optional[SafetyReport]
    labels: list
    truncations: int
    horizon_draws: int


def _evaluator(cfg: RunConfig, scenario: NavScenario, seed: int):
    env = NavEnv(evaluation_scenario(cfg, scenario))
    e = cfg.evaluation

    def evaluate(policy, iteration):
        return estimate_joint_safety(env, policy, e.h_eval, e.rollouts, seed, EVAL_STREAM,
                                     iteration, threads=e.threads, labels=scenario.labels)
    return evaluate


def train_run(cfg: RunConfig, seed: Optional[int] = None, sink: Optional[Callable] = None,
              on_iteration: Optional[Callable] = None) -> RunResult:
    """Train as configured; ``sink`` receives every trace record as it is produced."""
    scenario = build_scenario(cfg)
    tc = train_config(cfg, seed)
    env = NavEnv(scenario)
    policy = initial_policy(cfg, scenario)
    specs = constraint_specs(cfg, scenario)
    evaluate = _evaluator(cfg, scenario, tc.seed)

    def forward(rec):
        if sink is not None:
            sink(rec)
        if on_iteration is not None and rec.kind == "iter":
            on_iteration(rec.iteration + 1, policy)

    algo = run_dual_descent if cfg.algorithm == "dual-descent" else run_stochastic_primal_dual
    res = algo(env, policy, specs, tc, evaluate=evaluate, sink=forward)
    evals = [r for r in res.trace if r.kind == "eval"]
    final = evals[-1].evaluation if evals else None
    return RunResult(res.policy, res.lam, res.trace, final, scenario.labels, res.truncations,
                     res.horizon_draws)


def manifest(cfg: RunConfig, seed: int, status: str, extra: Optional[dict] = None) -> dict:
    scenario = build_scenario(cfg)
    resolved = cfg.model_dump(mode="json")
    resolved["training"]["seed"] = seed
    doc = {"format": "safepd-run-manifest", "format_version": MANIFEST_VERSION,
           "artifact_version": __version__, "status": status, "seed": seed,
           "formats": {"config": CONFIG_VERSION, "trace": TRACE_VERSION,
                       "checkpoint": CHECKPOINT_VERSION, "scenario": SCENARIO_VERSION},
           "config": resolved, "scenario": scenario.to_dict(),
           "constraints": [s.to_dict() for s in constraint_specs(cfg, scenario)]}
    if extra:
        doc.update(extra)
    return doc


def write_json(path, doc) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)


def run_to_directory(cfg: RunConfig, out, seed: Optional[int] = None) -> RunResult:
    """Train and persist ``manifest.json``, ``trace.csv`` and policy checkpoints under ``out``.

    With zero iterations only the manifest and the initial checkpoint are
    written. A non-finite abort keeps the partial trace and marks the manifest.
    """
    from .errors import NonFiniteError
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg.training.seed if seed is None else seed
    cfg = cfg.model_copy(update={"training": cfg.training.model_copy(update={"seed": seed})})
    write_json(out / "manifest.json", manifest(cfg, seed, "running"))
    scenario = build_scenario(cfg)
    if cfg.training.iterations == 0:
        save_checkpoint(initial_policy(cfg, scenario), out / "checkpoint_final.json")
        write_json(out / "manifest.json", manifest(cfg, seed, "complete", {"trace_rows": 0}))
        return RunResult(initial_policy(cfg, scenario), np.zeros(len(scenario.labels)), [], None,
                         scenario.labels, 0, 0)
    writer = TraceWriter(out / "trace.csv", scenario.labels)
    every = cfg.output.checkpoint_every

    def checkpoint(done, policy):
        if done % every == 0:
            save_checkpoint(policy, out / f"checkpoint_{done:08d}.json")

    try:
        res = train_run(cfg, seed, sink=writer, on_iteration=checkpoint)
    except NonFiniteError as exc:
        writer.close()
        write_json(out / "manifest.json",
                   manifest(cfg, seed, "aborted", {"error": str(exc), "trace_rows": writer.rows}))
        raise
    writer.close()
    save_checkpoint(res.policy, out / "checkpoint_final.json")
    extra = {"trace_rows": writer.rows, "horizon_truncations": res.truncations,
             "horizon_draws": res.horizon_draws,
             "final_lambda": {l: float(x) for l, x in zip(res.labels, res.lam)}}
    if res.final_report is not None:
        extra["final_evaluation"] = res.final_report.to_dict()
    write_json(out / "manifest.json", manifest(cfg, seed, "complete", extra))
    return res
