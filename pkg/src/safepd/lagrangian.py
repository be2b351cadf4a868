"""Penalized rewards, Lagrangian returns and single-trajectory gradient estimates.

The penalized reward is ``r + sum_i lambda_i (1[s in S_i] - c_i')`` where the
per-step threshold ``c_i'`` is ``c_i`` for episodic constraints and
``c_i (1 - gamma)`` for discounted ones. With the latter, the geometric-horizon
sum of per-step penalties has expectation ``lambda_i (U_i - c_i)``, so the
sampled Lagrangian return is unbiased for ``L(theta, lambda)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .constraints import ConstraintSpec, per_step_thresholds, thresholds
from .errors import ConfigError, InvalidInputError, InvalidParameterError
from .mdp_core import Mode, Trajectory

ESTIMATORS = ("paper", "full-reinforce")
DUAL_THRESHOLDS = ("fixed", "horizon-matched")


def penalized_reward(r, indicators, lam, c_per_step):
    """``r + sum_i lam_i (indicators_i - c_per_step_i)``; broadcasts over leading axes."""
    lam = np.asarray(lam, dtype=float)
    c = np.asarray(c_per_step, dtype=float)
    ind = np.asarray(indicators, dtype=float)
    if lam.shape != c.shape or ind.shape[-1:] != lam.shape:
        raise InvalidInputError(
            f"dimension mismatch: lambda {lam.shape}, c {c.shape}, indicators {ind.shape}")
    if np.any(lam < 0):
        raise InvalidParameterError("multipliers must be nonnegative")
    if lam.size == 0:
        return np.asarray(r, dtype=float) + 0.0
    return r + (ind - c) @ lam


@dataclass
class LagrangianReturn:
    total: float
    plain: float
    per_constraint_indicator_sums: np.ndarray
    horizon_used: int


def _check_mode(traj: Trajectory, mode) -> Mode:
    mode = Mode(mode)
    if traj.mode is not None and traj.mode is not mode:
        raise InvalidInputError(f"trajectory was generated in {traj.mode.value} mode, not {mode.value}")
    return mode


def _check_specs(traj: Trajectory, specs: Sequence[ConstraintSpec]) -> None:
    if traj.n_constraints != len(specs):
        raise InvalidInputError(
            f"trajectory carries {traj.n_constraints} indicators but {len(specs)} constraints were given")


def step_penalized_rewards(traj: Trajectory, lam, specs: Sequence[ConstraintSpec]) -> np.ndarray:
    _check_specs(traj, specs)
    return penalized_reward(traj.rewards, traj.indicators, lam, per_step_thresholds(specs))


def lagrangian_return(traj: Trajectory, lam, specs: Sequence[ConstraintSpec], mode) -> LagrangianReturn:
    """Undiscounted sum of penalized rewards over the trajectory.

    Episodic rollouts use a fixed horizon (gamma = 1); continuing rollouts use a
    geometric horizon, which makes the plain sum unbiased for the discounted one.
    """
    _check_mode(traj, mode)
    rl = step_penalized_rewards(traj, lam, specs)
    return LagrangianReturn(total=float(np.sum(rl)), plain=float(np.sum(traj.rewards)),
                            per_constraint_indicator_sums=traj.indicators.sum(axis=0).astype(float),
                            horizon_used=traj.horizon)


def estimate_constraint(traj: Trajectory, mode) -> np.ndarray:
    """Single-trajectory estimate of ``U_i``: indicator average (episodic) or sum (continuing)."""
    mode = _check_mode(traj, mode)
    sums = traj.indicators.sum(axis=0).astype(float)
    if mode is Mode.EPISODIC:
        return sums / (traj.horizon + 1)
    return sums


def estimate_dual_gradient(traj: Trajectory, specs: Sequence[ConstraintSpec], mode,
                           threshold: str = "fixed") -> np.ndarray:
    """Estimate of ``U - c`` from one trajectory.

    ``"fixed"`` returns ``U_hat - c``. ``"horizon-matched"`` (continuing mode
    only) subtracts ``(T + 1) c (1 - gamma)`` instead of ``c``: the expectation
    over the geometric horizon is the same, but the variance contributed by the
    random horizon itself cancels.
    """
    mode = _check_mode(traj, mode)
    _check_specs(traj, specs)
    u_hat = estimate_constraint(traj, mode)
    if threshold == "fixed" or mode is Mode.EPISODIC:
        if threshold not in DUAL_THRESHOLDS:
            raise ConfigError(f"unknown dual threshold {threshold!r}")
        return u_hat - thresholds(specs)
    if threshold == "horizon-matched":
        return u_hat - (traj.horizon + 1) * per_step_thresholds(specs)
    raise ConfigError(f"unknown dual threshold {threshold!r}")


def estimate_primal_gradient(traj: Trajectory, policy, lam, specs: Sequence[ConstraintSpec],
                             mode, variant: str = "paper",
                             baseline: Optional[float] = None) -> np.ndarray:
    """Score-function estimate of ``grad_theta L(theta, lambda)``.

    ``"paper"`` weights the score at the first step by the whole Lagrangian
    return. ``"full-reinforce"`` sums the score at every step weighted by the
    Lagrangian return-to-go, which is unbiased for the full policy gradient
    under a geometric horizon. An optional constant ``baseline`` is subtracted
    from the returns.
    """
    _check_mode(traj, mode)
    rl = step_penalized_rewards(traj, lam, specs)
    b = 0.0 if baseline is None else float(baseline)
    if variant == "paper":
        w = np.zeros(1)
        w[0] = np.sum(rl) - b
        return policy.weighted_score_sum(traj.states[:1], traj.actions[:1], w)
    if variant == "full-reinforce":
        to_go = np.cumsum(rl[::-1])[::-1] - b
        return policy.weighted_score_sum(traj.states, traj.actions, to_go)
    raise ConfigError(f"unknown estimator variant {variant!r}; expected one of {ESTIMATORS}")
