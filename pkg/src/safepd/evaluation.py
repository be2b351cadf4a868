"""Monte Carlo safety and reward diagnostics, ablations and fixed-multiplier baselines."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidParameterError
from .mdp_core import Streams, simulate

EVAL_CHUNK = 250


@dataclass
class SafetyReport:
    """Joint safety over steps ``0..h_eval`` and per-step reward, over independent rollouts.

    Standard deviations are taken across rollouts (population, ddof = 0), so a
    single rollout yields zeros.
    """

    safety: np.ndarray          # per constraint: fraction of rollouts safe at every step
    safety_std: np.ndarray
    mean_reward: float          # per-step reward, averaged over rollouts
    mean_reward_std: float
    mean_total_reward: float
    n_rollouts: int
    h_eval: int
    labels: Optional[list] = None

    @property
    def steps(self) -> int:
        return self.h_eval + 1

    def to_dict(self) -> dict:
        labels = self.labels or [str(i) for i in range(len(self.safety))]
        return {"format": "safepd-safety-report", "format_version": 1,
                "n_rollouts": self.n_rollouts, "h_eval": self.h_eval, "steps": self.steps,
                "constraints": [{"label": l, "joint_safety": float(p), "std": float(s)}
                                for l, p, s in zip(labels, self.safety, self.safety_std)],
                "mean_reward_per_step": self.mean_reward,
                "mean_reward_per_step_std": self.mean_reward_std,
                "mean_total_reward": self.mean_total_reward}


def _chunk(env, policy, h_eval, n, seed, key):
    st = Streams.from_seed(seed, *key)
    _, _, R, I = simulate(env, policy, h_eval, n, st.policy, init_rng=st.initial, env_rng=st.env)
    return I.all(axis=1), R.sum(axis=1)


def estimate_joint_safety(env, policy, h_eval: int, n_rollouts: int, seed: int, *key: int,
                          threads: int = 1, labels=None) -> SafetyReport:
    """Estimate ``P(s_t in S_i for all t <= h_eval)`` per constraint under stochastic actions.

    Rollouts are split into fixed chunks with their own random streams derived
    from ``(seed, *key, chunk index)``, so the result does not depend on
    ``threads``. The same seed gives nested prefixes for different ``h_eval``,
    which makes the estimate non-increasing in ``h_eval``.
    """
    if h_eval < 1 or n_rollouts < 1:
        raise InvalidParameterError("h_eval and n_rollouts must be at least 1")
    sizes = [min(EVAL_CHUNK, n_rollouts - i) for i in range(0, n_rollouts, EVAL_CHUNK)]
    jobs = [(env, policy, h_eval, n, seed, key + (j,)) for j, n in enumerate(sizes)]
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda a: _chunk(*a), jobs))
    else:
        parts = [_chunk(*a) for a in jobs]
    safe = np.concatenate([p[0] for p in parts]).astype(float)
    totals = np.concatenate([p[1] for p in parts])
    per_step = totals / (h_eval + 1)
    return SafetyReport(safety=safe.mean(axis=0), safety_std=safe.std(axis=0),
                        mean_reward=float(per_step.mean()), mean_reward_std=float(per_step.std()),
                        mean_total_reward=float(totals.mean()), n_rollouts=n_rollouts,
                        h_eval=h_eval, labels=labels)


def ablation_remove_constraint(config, index: int, seeds: Sequence[int], base_runs=None,
                               progress=None) -> float:
    """Mean per-step reward gained by deleting obstacle ``index`` and retraining.

    ``config`` is a run configuration; each seed trains the base problem (unless
    ``base_runs`` supplies finished runs keyed by seed) and the reduced problem,
    and the final evaluations are compared.
    """
    from .experiment import drop_obstacle, train_run
    gains = []
    for seed in seeds:
        base = base_runs[seed] if base_runs and seed in base_runs else train_run(config, seed=seed)
        reduced = train_run(drop_obstacle(config, index), seed=seed)
        gains.append(reduced.final_report.mean_reward - base.final_report.mean_reward)
        if progress:
            progress(seed, gains[-1])
    return float(np.mean(gains))


def fixed_weight_baseline(config, value: float, seed: Optional[int] = None):
    """Train with every multiplier frozen at ``value``; returns ``(trace, final SafetyReport)``."""
    from .experiment import train_run, with_fixed_lambda
    if value < 0:
        raise InvalidParameterError("fixed multiplier value must be nonnegative")
    run = train_run(with_fixed_lambda(config, value), seed=seed)
    return run.trace, run.final_report
